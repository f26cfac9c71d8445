"""Time analytic against finite-difference Gor'kov evaluation at random points."""
import argparse
import json

from sonoholo.analysis import bench_gorkov
from sonoholo.core import MediumConfig
from sonoholo.geometry import preset_board
from sonoholo.propagators import PistonModel
from sonoholo.solvers import naive


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-points", type=int, default=3000)
    ap.add_argument("--repetitions", type=int, default=5)
    ap.add_argument("--board", default="bottom")
    args = ap.parse_args()
    model = PistonModel(preset_board(args.board), MediumConfig())
    x = naive(model.transfer([[0.0, 0.0, 0.1]]))
    report = bench_gorkov(model, x, n_points=args.n_points, repetitions=args.repetitions)
    print(json.dumps(report.as_dict(), indent=1))


if __name__ == "__main__":
    main()
