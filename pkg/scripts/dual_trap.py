"""Two traps over a flat reflector, one pinned to a target potential."""
import argparse
import warnings

import numpy as np

from sonoholo.analysis import gorkov
from sonoholo.core import MediumConfig
from sonoholo.geometry import board_midplane, plate_mesh, preset_board
from sonoholo.propagators import BemModel, PistonModel, bem_build
from sonoholo.solvers import ObjectiveSpec, gradient_descent_solve, save_loss_trace, split_roles


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--utarget", type=float, default=-1e-7)
    ap.add_argument("--lambda", dest="coupling", type=float, default=7e8)
    ap.add_argument("--lr", type=float, default=1.0)
    ap.add_argument("--iters", type=int, default=1000)
    ap.add_argument("--height", type=float, default=0.03, help="trap height above the plate")
    ap.add_argument("--loss-trace", default=None)
    ap.add_argument("--free-field", action="store_true", help="ignore the reflector")
    args = ap.parse_args()

    cfg = MediumConfig()
    mid = board_midplane()
    top = preset_board("top")
    if args.free_field:
        model = PistonModel(top, cfg)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = BemModel(bem_build(plate_mesh(0.16, 0.16, 32, 32, z=mid), top, cfg))
    pts = np.array([[-0.02, 0.0, mid + args.height], [0.02, 0.0, mid + args.height]])
    A, G = model.evaluate(pts, 1)
    spec = ObjectiveSpec("dual-trap-target", roles=("trap", "target"), coupling=args.coupling,
                         u_target=args.utarget, learning_rate=args.lr, iterations=args.iters)
    x = gradient_descent_solve(spec, *split_roles(spec.roles, A, G))
    u = gorkov(x, pts, model)
    print(f"free trap   U = {u[0]:.4e} J")
    print(f"target trap U = {u[1]:.4e} J ({100 * u[1] / args.utarget:.2f}% of target)")
    if args.loss_trace:
        save_loss_trace(args.loss_trace, x.loss_trace)


if __name__ == "__main__":
    main()
