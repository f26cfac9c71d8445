"""Focus plus trap on the two opposed boards, then map the mid-plane.

Writes the hologram, its loss trace and an xz slice (CSV + PPM) to OUTDIR.
"""
import argparse
from pathlib import Path

import numpy as np

from sonoholo.analysis import GridSpec, force, gorkov, sample_grid, write_field_csv, write_ppm
from sonoholo.core import MediumConfig
from sonoholo.geometry import board_midplane, preset_board
from sonoholo.propagators import PistonModel
from sonoholo.solvers import ObjectiveSpec, gradient_descent_solve, save_hologram, save_loss_trace, split_roles


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("outdir", nargs="?", default="twin_trap")
    ap.add_argument("--lambda", dest="coupling", type=float, default=1.32e10)
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--iters", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sep", type=float, default=0.04, help="focus-trap separation in metres")
    args = ap.parse_args()

    cfg = MediumConfig()
    mid = board_midplane()
    model = PistonModel(preset_board("two-opposed"), cfg)
    focus = np.array([-args.sep / 2, 0.0, mid])
    trap = np.array([args.sep / 2, 0.0, mid])
    A, G = model.evaluate([focus, trap], 1)
    spec = ObjectiveSpec("pressure-plus-trap", roles=("focus", "trap"), coupling=args.coupling,
                         learning_rate=args.lr, iterations=args.iters, seed=args.seed)
    x = gradient_descent_solve(spec, *split_roles(spec.roles, A, G))

    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    save_hologram(out / "hologram.json", x, cfg.frequency)
    save_loss_trace(out / "loss.csv", x.loss_trace)
    grid = sample_grid(x, model, GridSpec.plane("xz", (0.0, 0.0, mid), (0.08, 0.04), (160, 80)),
                       ("pressure", "gorkov"))
    write_field_csv(grid, out / "slice.csv")
    write_ppm(grid, "pressure", out / "pressure.ppm")
    write_ppm(grid, "gorkov", out / "gorkov.ppm")

    probes = cfg.wavelength / 10 * np.vstack([np.eye(3), -np.eye(3)])
    u0, u_probe = gorkov(x, [trap], model)[0], gorkov(x, trap + probes, model)
    print(f"final loss {x.loss_trace[-1]:.4e}")
    print(f"|p| focus {abs(A.entries[0] @ x.activations):.1f} Pa, trap {abs(A.entries[1] @ x.activations):.1f} Pa")
    print(f"U trap {u0:.4e} J, lowest probe {u_probe.min():.4e} J, strict minimum: {bool(np.all(u_probe > u0))}")
    print(f"force at trap {np.linalg.norm(force(x, [trap], model)[0]):.3e} N")


if __name__ == "__main__":
    main()
