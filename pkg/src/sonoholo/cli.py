"""Command-line driver.

Exit status is 0 on success, 1 for usage errors and 2 for runtime failures. Runtime
failures print exactly one line to stderr of the form
``sonoholo-error: <category>: <message>``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import re
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    METRICS,
    AnalysisError,
    GridSpec,
    bench_gorkov,
    force,
    gorkov,
    propagate,
    sample_grid,
    stiffness,
    write_field_csv,
    write_ppm,
)
from .core import CONFIG_ENV_VAR, ConfigError, load_settings
from .devicelink import DeviceLinkError, frame_size, parse_sink, quantize, stream
from .geometry import BOARD_KINDS, PointSet, StlParseError, load_mesh, mesh_to_board, preset_board
from .propagators import BemError, BemModel, PistonModel, PropagationError, bem_build
from .solvers import (
    OBJECTIVE_ROLES,
    OPTIMIZERS,
    ObjectiveSpec,
    SolverError,
    gradient_descent_solve,
    gspat,
    iterative_backpropagation,
    load_hologram,
    naive,
    save_hologram,
    save_loss_trace,
    split_roles,
    wgs,
)

log = logging.getLogger(__name__)

PROG = "sonoholo"
SOLVERS = ("naive", "ib", "gspat", "wgs", "gd")
ROLES = ("focus", "trap", "target")
PROJECTIVE = {"naive": None, "ib": iterative_backpropagation, "gspat": gspat, "wgs": wgs}


class UsageError(Exception):
    pass


class PointsFileError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # accept -1e-7 and -0.02,0,0.1 as values rather than option names
    _negative_number_matcher = re.compile(r"^-\.?\d")

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._negative_number_matcher = _Parser._negative_number_matcher

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -------------------------------------------------------------------- parsing


def _triple(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number in {text!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise argparse.ArgumentTypeError(f"non-finite coordinate in {text!r}")
    return vals


def _point(text: str) -> tuple[str | None, tuple[float, float, float]]:
    role, sep, rest = text.partition(":")
    if sep:
        if role not in ROLES:
            raise argparse.ArgumentTypeError(f"unknown point role {role!r}; expected one of {ROLES}")
        return role, _triple(rest)
    return None, _triple(text)


def _pair(text: str) -> tuple[float, float]:
    parts = text.split(",")
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number in {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected w,h or a single size, got {text!r}")
    return vals


def _res(text: str) -> tuple[int, int]:
    try:
        vals = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer in {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected n or nx,ny, got {text!r}")
    return vals


def _metrics(text: str) -> tuple[str, ...]:
    names = tuple(t for t in text.split(",") if t)
    bad = [n for n in names if n not in METRICS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown metric(s) {bad}; expected from {METRICS}")
    return names


def _add_config(p):
    p.add_argument("--config", metavar="PATH",
                   help=f"medium/particle settings (JSON or key=value); default ${CONFIG_ENV_VAR}")


def _add_board(p, *, defaulted: bool):
    g = p.add_argument_group("board")
    g.add_argument("--board", choices=BOARD_KINDS, default=None,
                   help="preset 16x16 board" + (" (default: bottom)" if defaulted else " (default: from hologram)"))
    g.add_argument("--board-mesh", metavar="STL", help="one transducer per triangle of this mesh")
    g.add_argument("--inward", action="store_true", help="flip mesh normals so transducers face inward")


def _add_propagator(p):
    g = p.add_argument_group("propagator")
    g.add_argument("--propagator", choices=("piston", "bem"), default=None,
                   help="free-field piston or piston plus rigid scatterer (default: bem when --bem is given)")
    g.add_argument("--bem", metavar="STL", help="rigid scatterer mesh for the bem propagator")
    g.add_argument("--bem-cache", metavar="DIR", help="directory for cached BEM operators")


def _add_points(p, required_hint: str):
    g = p.add_argument_group("points")
    g.add_argument("--points", action="append", type=_point, default=[], metavar="[ROLE:]X,Y,Z",
                   help=f"target point, repeatable; ROLE is focus, trap or target ({required_hint})")
    g.add_argument("--points-file", metavar="CSV", help="CSV of x,y,z[,role] rows; a header row is optional")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="Acoustic hologram solver, field sampler and device streamer.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("solve", help="compute a hologram for target points",
                       description="Compute a hologram for target points and write it as JSON.")
    _add_board(p, defaulted=True)
    _add_propagator(p)
    _add_points(p, "at least one point is required")
    g = p.add_argument_group("solver")
    g.add_argument("--solver", choices=SOLVERS, default=None, help="default: gd with --objective, else ib")
    g.add_argument("--objective", choices=tuple(OBJECTIVE_ROLES), default=None,
                   help="gradient-descent objective (default: focus-pressure)")
    g.add_argument("--lambda", dest="coupling", type=float, default=0.0, metavar="W",
                   help="coupling weight of the second objective term")
    g.add_argument("--utarget", type=float, default=None, metavar="J", help="Gor'kov target for dual-trap-target")
    g.add_argument("--lr", type=float, default=0.01, help="gradient-descent learning rate (default: 0.01)")
    g.add_argument("--iters", type=int, default=None,
                   help="iterations (default: 100 projective, 1000 gradient descent)")
    g.add_argument("--optimizer", choices=OPTIMIZERS, default="adaptive-moments",
                   help="gradient-descent step rule (default: adaptive-moments)")
    g.add_argument("--seed", type=int, default=0, help="seed for the random initial phases (default: 0)")
    g.add_argument("--constraint", choices=("unit", "cap"), default="unit",
                   help="transducer amplitude constraint (default: unit)")
    o = p.add_argument_group("output")
    o.add_argument("--out", required=True, metavar="JSON", help="hologram file to write")
    o.add_argument("--loss-trace", metavar="CSV", help="write the per-iteration loss (gd only)")
    _add_config(p)

    p = sub.add_parser("field", help="sample a field plane to CSV and PPM",
                       description="Sample metrics over a plane for a saved hologram.")
    p.add_argument("--holo", required=True, metavar="JSON", help="hologram written by solve")
    _add_board(p, defaulted=False)
    _add_propagator(p)
    g = p.add_argument_group("grid")
    g.add_argument("--plane", choices=("xy", "xz", "yz"), default="xz", help="sampling plane (default: xz)")
    g.add_argument("--center", type=_triple, default=(0.0, 0.0, 0.1), metavar="X,Y,Z",
                   help="plane centre in metres (default: 0,0,0.1)")
    g.add_argument("--size", type=_pair, default=(0.1, 0.1), metavar="W,H", help="extent in metres (default: 0.1,0.1)")
    g.add_argument("--res", type=_res, default=(128, 128), metavar="N[,M]",
                   help="samples per side, or along each side (default: 128)")
    g.add_argument("--metric", type=_metrics, default=("pressure",), metavar="NAMES",
                   help=f"comma-separated subset of {','.join(METRICS)}; the first is imaged (default: pressure)")
    g.add_argument("--step", type=float, default=1e-4, help="finite-difference step in metres (default: 1e-4)")
    o = p.add_argument_group("output")
    o.add_argument("--out", required=True, metavar="CSV", help="field samples, one row per cell")
    o.add_argument("--img", metavar="PPM", help="P6 image of the first metric")
    _add_config(p)

    p = sub.add_parser("analyze", help="report pressure, Gor'kov, force and stiffness at points",
                       description="Evaluate every metric at the given points for a saved hologram.")
    p.add_argument("--holo", required=True, metavar="JSON", help="hologram written by solve")
    _add_board(p, defaulted=False)
    _add_propagator(p)
    _add_points(p, "default: the hologram's own points")
    p.add_argument("--mode", choices=("analytic", "finite-difference"), default="analytic",
                   help="derivative evaluation (default: analytic)")
    p.add_argument("--step", type=float, default=1e-4, help="finite-difference step in metres (default: 1e-4)")
    p.add_argument("--out", metavar="CSV", help="write here instead of stdout")
    _add_config(p)

    p = sub.add_parser("stream", help="quantize holograms and stream device frames",
                       description="Quantize holograms into device frames and send them at a fixed rate.")
    p.add_argument("--holo", required=True, action="append", metavar="JSON",
                   help="hologram to send, repeatable; frames cycle through them")
    p.add_argument("--sink", default="loopback", help="loopback, udp:HOST:PORT or file:PATH (default: loopback)")
    p.add_argument("--rate", type=float, default=1000.0, help="frames per second, 1..10000 (default: 1000)")
    p.add_argument("--frames", type=int, default=1000, help="number of frames to send (default: 1000)")
    p.add_argument("--retries", type=int, default=3, help="sink retries before failing (default: 3)")
    p.add_argument("--report", metavar="JSON", help="write the stream report here as well as to stdout")

    p = sub.add_parser("bench", help="time analytic against finite-difference Gor'kov",
                       description="Time analytic and finite-difference Gor'kov evaluation, one point at a time.")
    p.add_argument("--holo", metavar="JSON", help="hologram to evaluate (default: naive focus at 0,0,0.1)")
    _add_board(p, defaulted=True)
    p.add_argument("--n-points", type=int, default=3000, help="random points per repetition (default: 3000)")
    p.add_argument("--repetitions", type=int, default=3, help="timed repetitions (default: 3)")
    p.add_argument("--seed", type=int, default=0, help="seed for the random points (default: 0)")
    p.add_argument("--out", metavar="JSON", help="write the report here as well as to stdout")
    _add_config(p)

    p = sub.add_parser("mesh-info", help="summarise an STL mesh",
                       description="Load an STL mesh and print its size, bounds and element statistics as JSON.")
    p.add_argument("mesh", metavar="STL", help="mesh file, binary or ASCII")
    p.add_argument("--scale", type=float, default=1.0, help="uniform scale applied first (default: 1)")
    p.add_argument("--center", action="store_true", help="move the bounding-box centre to the origin")
    p.add_argument("--fit-x", type=float, default=None, metavar="M", help="rescale so max |x| equals M")
    p.add_argument("--translate", type=_triple, default=(0.0, 0.0, 0.0), metavar="X,Y,Z",
                   help="offset applied last (default: 0,0,0)")
    _add_config(p)
    return parser


# ------------------------------------------------------------------- helpers


def _read_points_file(path) -> list[tuple[str | None, tuple[float, float, float]]]:
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            row = [c.strip() for c in row]
            if not row or not any(row) or row[0].startswith("#"):
                continue
            try:
                xyz = tuple(float(c) for c in row[:3])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise PointsFileError(f"{path}:{lineno}: malformed point row {row!r}") from None
            if len(xyz) != 3:
                raise PointsFileError(f"{path}:{lineno}: expected x,y,z")
            role = row[3] if len(row) > 3 and row[3] else None
            if role is not None and role not in ROLES:
                raise PointsFileError(f"{path}:{lineno}: unknown role {role!r}")
            out.append((role, xyz))
    return out


def _gather_points(args):
    pts = list(args.points)
    if args.points_file:
        pts += _read_points_file(args.points_file)
    return pts


def _assign_roles(points, objective: str) -> tuple[str, ...]:
    """Explicit roles win; otherwise points take the objective's roles in order."""
    default = OBJECTIVE_ROLES[objective]
    given = [r for r, _ in points]
    if all(r is not None for r in given):
        roles = tuple(given)
    elif all(r is None for r in given):
        if len(default) == 1:
            roles = default * len(points)
        elif len(points) == len(default):
            roles = default
        else:
            raise UsageError(f"objective {objective} needs roles for its points; prefix each with one of {default}")
    else:
        raise UsageError("either every point carries a role prefix or none does")
    missing = set(default) - set(roles)
    extra = set(roles) - set(default)
    if missing or extra:
        raise UsageError(f"objective {objective} uses roles {default}; got {sorted(set(roles))}")
    return roles


def _resolve(path: str, base: Path | None) -> Path:
    p = Path(path)
    if p.exists() or p.is_absolute() or base is None:
        return p
    alt = base / p
    return alt if alt.exists() else p


def _board_spec(args, doc: dict | None) -> dict:
    if args.board and args.board_mesh:
        raise UsageError("--board and --board-mesh are mutually exclusive")
    if args.board:
        return {"preset": args.board}
    if args.board_mesh:
        return {"mesh": args.board_mesh, "inward": bool(args.inward)}
    if doc is not None and isinstance(doc.get("board"), dict):
        return doc["board"]
    return {"preset": "bottom"}


def _build_board(spec: dict, settings, base: Path | None):
    if "preset" in spec:
        return preset_board(spec["preset"], p_ref=settings.p_ref, element_radius=settings.element_radius)
    mesh = load_mesh(_resolve(spec["mesh"], base))
    return mesh_to_board(mesh, bool(spec.get("inward")), p_ref=settings.p_ref, element_radius=settings.element_radius)


def _propagator_spec(args, doc: dict | None) -> dict:
    kind = getattr(args, "propagator", None)
    bem = getattr(args, "bem", None)
    if kind is None and bem is None and doc is not None and isinstance(doc.get("propagator"), dict):
        return doc["propagator"]
    kind = kind or ("bem" if bem else "piston")
    if kind == "bem":
        if not bem:
            if doc is not None and doc.get("propagator", {}).get("kind") == "bem":
                bem = doc["propagator"]["mesh"]
            else:
                raise UsageError("--propagator bem needs --bem MESH.stl")
        return {"kind": "bem", "mesh": bem}
    if bem:
        # kept so that swapping propagators is a one-flag change
        log.info("--propagator piston ignores the scatterer mesh %s", bem)
    return {"kind": "piston"}


def _build_model(spec: dict, array, settings, base: Path | None, cache_dir=None):
    if spec.get("kind") == "bem":
        mesh = load_mesh(_resolve(spec["mesh"], base))
        return BemModel(bem_build(mesh, array, settings.medium, cache_dir=cache_dir))
    return PistonModel(array, settings.medium)


def _load_holo(path: str, args, settings):
    holo_path = Path(path)
    with open(holo_path) as fh:
        doc = json.load(fh)
    base = holo_path.parent
    board_spec = _board_spec(args, doc)
    array = _build_board(board_spec, settings, base)
    h, doc = load_hologram(holo_path, array)
    return h, doc, array, base


def _json_float(v: float) -> float | str:
    return float(v) if math.isfinite(v) else repr(float(v))


def _emit(text: str):
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


# ------------------------------------------------------------------ commands


def cmd_solve(args) -> int:
    settings = load_settings(args.config)
    points = _gather_points(args)
    if not points:
        raise UsageError("solve needs at least one --points or a --points-file")
    solver = args.solver or ("gd" if args.objective else "ib")
    if args.objective and solver != "gd":
        raise UsageError(f"--objective applies to --solver gd, not {solver}")
    objective = args.objective or "focus-pressure"
    iters = args.iters if args.iters is not None else (1000 if solver == "gd" else 100)
    if iters < 1:
        raise UsageError("--iters must be at least 1")
    if args.loss_trace and solver != "gd":
        raise UsageError("--loss-trace needs --solver gd")

    board_spec = _board_spec(args, None)
    prop_spec = _propagator_spec(args, None)
    array = _build_board(board_spec, settings, None)
    model = _build_model(prop_spec, array, settings, None, args.bem_cache)
    coords = PointSet([xyz for _, xyz in points])

    extra = {
        "board": board_spec,
        "propagator": prop_spec,
        "solver": solver,
        "iterations": iters,
        "points": [list(map(float, p)) for p in coords.positions],
    }
    if solver == "gd":
        roles = _assign_roles(points, objective)
        spec = ObjectiveSpec(
            objective,
            roles=roles,
            coupling=args.coupling,
            u_target=args.utarget,
            optimizer=args.optimizer,
            learning_rate=args.lr,
            iterations=iters,
            seed=args.seed,
        )
        needs_grads = objective != "focus-pressure"
        if needs_grads:
            A, G = model.evaluate(coords, order=1)
        else:
            A, G = model.transfer(coords), None
        props, grads = split_roles(roles, A, G)
        h = gradient_descent_solve(spec, props, grads, medium=settings.medium, particle=settings.particle,
                                   constraint=args.constraint)
        extra.update(objective=objective, roles=list(roles), seed=args.seed, optimizer=args.optimizer,
                     learning_rate=args.lr, coupling=args.coupling, final_loss=_json_float(h.loss_trace[-1]))
        if args.utarget is not None:
            extra["u_target"] = args.utarget
    else:
        A = model.transfer(coords)
        fn = PROJECTIVE[solver]
        h = naive(A, constraint=args.constraint) if fn is None else fn(A, iters=iters, constraint=args.constraint)

    amp = np.abs(propagate(h, model.transfer(coords)))
    U = gorkov(h, coords, model, particle=settings.particle)
    extra["achieved"] = {"amplitude": [float(a) for a in amp], "gorkov": [float(u) for u in U]}
    save_hologram(args.out, h, settings.medium.frequency, array.digest(), **extra)
    if args.loss_trace:
        save_loss_trace(args.loss_trace, h.loss_trace)
    for (x, y, z), a, u in zip(coords.positions, amp, U):
        _emit(f"point {x:.6g},{y:.6g},{z:.6g} amplitude={a:.6g} Pa gorkov={u:.6g} J")
    return 0


def cmd_field(args) -> int:
    settings = load_settings(args.config)
    if min(args.res) < 2:
        raise UsageError("--res must be at least 2")
    h, doc, array, base = _load_holo(args.holo, args, settings)
    model = _build_model(_propagator_spec(args, doc), array, settings, base, args.bem_cache)
    spec = GridSpec.plane(args.plane, args.center, args.size, args.res)
    grid = sample_grid(h, model, spec, args.metric, particle=settings.particle, step=args.step)
    write_field_csv(grid, args.out)
    if args.img:
        write_ppm(grid, args.metric[0], args.img)
    _emit(f"wrote {len(grid.positions)} samples to {args.out}" + (f" and {args.img}" if args.img else ""))
    return 0


def cmd_analyze(args) -> int:
    settings = load_settings(args.config)
    h, doc, array, base = _load_holo(args.holo, args, settings)
    model = _build_model(_propagator_spec(args, doc), array, settings, base, args.bem_cache)
    points = _gather_points(args)
    coords = [xyz for _, xyz in points] or doc.get("points")
    if not coords:
        raise UsageError("no points given and the hologram records none")
    pts = PointSet(coords)
    kw = dict(particle=settings.particle, step=args.step)
    p = propagate(h, model.transfer(pts))
    U = gorkov(h, pts, model, args.mode, **kw)
    F = force(h, pts, model, args.mode, **kw)
    L = stiffness(h, pts, model, args.mode, **kw)
    lines = ["x,y,z,pressure,phase,gorkov,fx,fy,fz,stiffness"]
    for i, pos in enumerate(pts.positions):
        vals = [*pos, abs(p[i]), np.angle(p[i]), U[i], *F[i], L[i]]
        lines.append(",".join(repr(float(v)) for v in vals))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_stream(args) -> int:
    if args.frames < 1:
        raise UsageError("--frames must be at least 1")
    if not 1.0 <= args.rate <= 10_000.0:
        raise UsageError("--rate must be within 1..10000 Hz")
    if args.retries < 0:
        raise UsageError("--retries must be non-negative")
    try:
        sink = parse_sink(args.sink)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    holos = []
    counts = set()
    for path in args.holo:
        with open(path) as fh:
            doc = json.load(fh)
        acts = np.asarray(doc.get("activations", []), dtype=float)
        if acts.ndim != 2 or acts.shape[1] != 2:
            raise SolverError(f"{path}: malformed activations")
        holos.append(acts[:, 0] + 1j * acts[:, 1])
        counts.add(len(acts))
    if len(counts) != 1:
        raise DeviceLinkError("holograms differ in transducer count")
    base_frames = [quantize(x) for x in holos]

    def frames():
        for i in range(args.frames):
            f = base_frames[i % len(base_frames)]
            yield type(f)(f.phase, f.amplitude, i)

    report, _ = stream(frames(), sink, args.rate, retries=args.retries, expected_count=counts.pop())
    out = report.as_dict()
    out["frame_bytes"] = frame_size(base_frames[0].count)
    text = json.dumps(out, indent=1)
    if args.report:
        Path(args.report).write_text(text + "\n")
    _emit(text)
    return 0


def cmd_bench(args) -> int:
    settings = load_settings(args.config)
    if args.n_points < 1 or args.repetitions < 1:
        raise UsageError("--n-points and --repetitions must be positive")
    if args.holo:
        h, doc, array, base = _load_holo(args.holo, args, settings)
    else:
        array = _build_board(_board_spec(args, None), settings, None)
        h = naive(PistonModel(array, settings.medium).transfer([(0.0, 0.0, 0.1)]))
    model = PistonModel(array, settings.medium)
    report = bench_gorkov(model, h, args.n_points, args.repetitions, seed=args.seed, particle=settings.particle)
    text = json.dumps(report.as_dict(), indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    _emit(text)
    return 0


def cmd_mesh_info(args) -> int:
    settings = load_settings(args.config)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        mesh = load_mesh(args.mesh, scale=args.scale, center=args.center, fit_x=args.fit_x, translate=args.translate)
    lam = settings.medium.wavelength
    lo, hi = mesh.bounds()
    info = {
        "triangles": len(mesh),
        "dropped_degenerate": int(mesh.dropped),
        "total_area_m2": float(mesh.total_area),
        "bounds_min": [float(v) for v in lo],
        "bounds_max": [float(v) for v in hi],
        "max_edge_m": float(mesh.max_edge()),
        "max_edge_over_wavelength": float(mesh.max_edge() / lam),
        "meets_quarter_wavelength": bool(mesh.max_edge() <= lam / 4.0),
        "digest": mesh.digest(),
    }
    _emit(json.dumps(info, indent=1))
    return 0


def help_text(command: str | None = None) -> str:
    """Formatted ``--help`` output for the top level or one subcommand."""
    parser = build_parser()
    if command is None:
        return parser.format_help()
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command].format_help()
    raise KeyError(command)


COMMANDS = {
    "solve": cmd_solve,
    "field": cmd_field,
    "analyze": cmd_analyze,
    "stream": cmd_stream,
    "bench": cmd_bench,
    "mesh-info": cmd_mesh_info,
}


def _category(exc: BaseException) -> str:
    if isinstance(exc, FileNotFoundError):
        return "file-not-found"
    if isinstance(exc, (StlParseError, PointsFileError, json.JSONDecodeError, csv.Error)):
        return "parse"
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, BemError):
        return "bem"
    if isinstance(exc, SolverError):
        return "solver"
    if isinstance(exc, (PropagationError, AnalysisError)):
        return "field"
    if isinstance(exc, DeviceLinkError):
        return "device-link"
    if isinstance(exc, OSError):
        return "io"
    return "runtime"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"{exc}", file=sys.stderr)
        print(f"run '{PROG} --help' for usage", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures get one parseable line
        message = " ".join(str(exc).split()) or type(exc).__name__
        print(f"sonoholo-error: {_category(exc)}: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
