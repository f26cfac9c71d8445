"""Compare the BEM field above a rigid plate with the array-plus-mirror construction."""
import argparse
import time
import warnings

import numpy as np

from sonoholo.core import MediumConfig
from sonoholo.geometry import board_midplane, plate_mesh, preset_board
from sonoholo.propagators import bem_build, bem_propagator, piston_transfer


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cells", type=int, default=50, help="cells per side (two triangles each)")
    ap.add_argument("--size", type=float, default=20.0, help="plate side in wavelengths")
    ap.add_argument("--probes", type=int, default=50)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()

    cfg = MediumConfig()
    lam, mid = cfg.wavelength, board_midplane()
    top = preset_board("top")
    mesh = plate_mesh(args.size * lam, args.size * lam, args.cells, args.cells, z=mid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t0 = time.perf_counter()
        op = bem_build(mesh, top, cfg)
    print(f"{len(mesh)} triangles, edge {mesh.max_edge() / lam:.2f} lambda, "
          f"build {time.perf_counter() - t0:.1f} s, rcond {op.rcond:.2e}")

    rng = np.random.default_rng(args.seed)
    n = args.probes
    probes = np.column_stack([rng.uniform(-lam, lam, n), rng.uniform(-lam, lam, n),
                              rng.uniform(mid + 2 * lam, mid + 0.08, n)])
    E = bem_propagator(probes, op).entries
    R = piston_transfer(probes, top, cfg).entries + piston_transfer(probes, top.mirrored_z(mid), cfg).entries
    a = piston_transfer([[0.0, 0.0, mid + 0.05]], top, cfg).entries[0]
    for name, x in (("uniform", np.ones(top.count)), ("focus", np.exp(-1j * np.angle(a)))):
        pe, pr = np.abs(E @ x), np.abs(R @ x)
        err = np.abs(pe - pr) / pr
        print(f"{name:8s} max {100 * err.max():.2f}%  median {100 * np.median(err):.2f}%")


if __name__ == "__main__":
    main()
