"""Field metrics for a solved hologram.

All metric functions take a *field model* (``PistonModel`` or ``BemModel``) that
builds propagators for arbitrary points, so the same call works with and
without scatterers.
"""
from __future__ import annotations

import contextlib
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .core import ParticleConfig, gorkov_constants
from .geometry import PointSet, as_point_set
from .propagators import as_matrix

DEFAULT_STEP = 1e-4
MIN_STEP = 1e-9
# differencing an analytic potential, no FD noise underneath
ANALYTIC_FORCE_STEP = 1e-6
METRICS = ("pressure", "phase", "gorkov", "force", "stiffness")
SIGNED_METRICS = ("gorkov", "stiffness", "phase")


class AnalysisError(ValueError):
    pass


def _vec(x) -> np.ndarray:
    return np.asarray(getattr(x, "activations", x), dtype=complex).reshape(-1)


def _check_step(step: float):
    if not step >= MIN_STEP:
        raise AnalysisError(f"finite-difference step {step!r} m is below the {MIN_STEP} m floor")


def propagate(x, A) -> np.ndarray:
    """Complex pressure ``A @ x``."""
    M = as_matrix(A)
    x = _vec(x)
    if M.shape[1] != x.shape[0]:
        raise AnalysisError(f"propagator has {M.shape[1]} columns but hologram has {x.shape[0]} entries")
    return M @ x


def _constants(model, particle):
    return gorkov_constants(model.medium, particle or ParticleConfig())


def gorkov_from_fields(p: np.ndarray, dp: np.ndarray, k1: float, k2: float) -> np.ndarray:
    """``U = K1 |p|^2 - K2 sum_a |dp/da|^2`` with ``dp`` shaped ``(3, N)``."""
    return k1 * np.abs(p) ** 2 - k2 * np.sum(np.abs(dp) ** 2, axis=0)


def pressure_and_gradient(x, points, model, mode: str = "analytic", step: float = DEFAULT_STEP):
    """Complex pressure ``(N,)`` and its spatial gradient ``(3, N)``."""
    x = _vec(x)
    points = as_point_set(points)
    if mode == "analytic":
        A, grads = model.evaluate(points, order=1)
        return A.entries @ x, grads.stacked() @ x
    if mode == "finite-difference":
        _check_step(step)
        p = propagate(x, model.transfer(points))
        dp = np.empty((3, len(points)), dtype=complex)
        for a in range(3):
            e = np.zeros(3)
            e[a] = step
            plus = propagate(x, model.transfer(points.offset(e)))
            minus = propagate(x, model.transfer(points.offset(-e)))
            dp[a] = (plus - minus) / (2.0 * step)
        return p, dp
    raise AnalysisError(f"unknown mode {mode!r}; expected 'analytic' or 'finite-difference'")


def gorkov(x, points, model, mode: str = "analytic", *, particle: ParticleConfig | None = None, step: float = DEFAULT_STEP) -> np.ndarray:
    """Gor'kov potential in joules at each point."""
    if mode == "finite-difference":
        _check_step(step)
    k1, k2 = _constants(model, particle)
    p, dp = pressure_and_gradient(x, points, model, mode, step)
    return gorkov_from_fields(p, dp, k1, k2)


def _central_gradient(func: Callable[[PointSet], np.ndarray], points: PointSet, step: float) -> np.ndarray:
    out = np.empty((len(points), 3))
    for a in range(3):
        e = np.zeros(3)
        e[a] = step
        out[:, a] = (func(points.offset(e)) - func(points.offset(-e))) / (2.0 * step)
    return out


def laplacian_fd(func: Callable[[PointSet], np.ndarray], points, step: float = DEFAULT_STEP) -> np.ndarray:
    """Sum of central second differences of a scalar field along x, y and z."""
    _check_step(step)
    points = as_point_set(points)
    centre = func(points)
    total = np.zeros(len(points))
    for a in range(3):
        e = np.zeros(3)
        e[a] = step
        total += (func(points.offset(e)) - 2.0 * centre + func(points.offset(-e))) / step**2
    return total


def force(x, points, model, mode: str = "analytic", *, particle: ParticleConfig | None = None, step: float = DEFAULT_STEP) -> np.ndarray:
    """Radiation force ``-grad U`` in newtons, shaped ``(N, 3)``.

    Analytic mode uses second propagator derivatives when the model has them and
    otherwise central-differences the analytic potential with a fixed 1e-6 m step,
    which the smooth analytic potential tolerates well.
    """
    _check_step(step)
    points = as_point_set(points)
    if mode == "analytic" and getattr(model, "max_order", 1) >= 2:
        x = _vec(x)
        k1, k2 = _constants(model, particle)
        A, grads, hess = model.evaluate(points, order=2)
        p = A.entries @ x
        dp = grads.stacked() @ x
        out = np.empty((len(points), 3))
        for b in range(3):
            acc = 2.0 * k1 * np.real(np.conj(p) * dp[b])
            for a in range(3):
                acc -= 2.0 * k2 * np.real(np.conj(dp[a]) * (hess.component(a, b) @ x))
            out[:, b] = -acc
        return out
    if mode not in ("analytic", "finite-difference"):
        raise AnalysisError(f"unknown mode {mode!r}")
    h = ANALYTIC_FORCE_STEP if mode == "analytic" else step
    return -_central_gradient(lambda pts: gorkov(x, pts, model, mode, particle=particle, step=step), points, h)


def stiffness(x, points, model, mode: str = "analytic", *, particle: ParticleConfig | None = None, step: float = DEFAULT_STEP) -> np.ndarray:
    """Laplacian of the Gor'kov potential (J/m^2).

    Analytic mode central-differences the analytic force; finite-difference mode
    takes second differences of the finite-difference potential.
    """
    _check_step(step)
    points = as_point_set(points)
    if mode == "finite-difference":
        return laplacian_fd(lambda pts: gorkov(x, pts, model, mode, particle=particle, step=step), points, step)
    if mode != "analytic":
        raise AnalysisError(f"unknown mode {mode!r}")
    total = np.zeros(len(points))
    for a in range(3):
        e = np.zeros(3)
        e[a] = step
        fp = force(x, points.offset(e), model, particle=particle, step=step)[:, a]
        fm = force(x, points.offset(-e), model, particle=particle, step=step)[:, a]
        total -= (fp - fm) / (2.0 * step)
    return total


# ----------------------------------------------------------------------- grids

_PLANES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}


@dataclass(frozen=True)
class GridSpec:
    """Rectangular sampling window: ``center`` plus ``size`` along two orthonormal axes.

    Cell ``(i, j)`` sits at ``center + (j + 0.5 - nu/2) * du * axis_u +
    (i + 0.5 - nv/2) * dv * axis_v``; rows (index ``i``) run along ``axis_v``.
    """

    center: tuple[float, float, float]
    axis_u: tuple[float, float, float]
    axis_v: tuple[float, float, float]
    size: tuple[float, float]
    resolution: tuple[int, int]

    def __post_init__(self):
        u = np.asarray(self.axis_u, dtype=float)
        v = np.asarray(self.axis_v, dtype=float)
        if min(self.resolution) < 2:
            raise AnalysisError("grid resolution must be at least 2 per axis")
        if not (abs(np.linalg.norm(u) - 1) < 1e-9 and abs(np.linalg.norm(v) - 1) < 1e-9 and abs(u @ v) < 1e-9):
            raise AnalysisError("grid axes must be orthonormal")
        if min(self.size) <= 0:
            raise AnalysisError("grid size must be positive")

    @classmethod
    def plane(cls, name: str, center, size, resolution) -> "GridSpec":
        if name not in _PLANES:
            raise AnalysisError(f"unknown plane {name!r}; expected one of {sorted(_PLANES)}")
        iu, iv = _PLANES[name]
        eye = np.eye(3)
        size = (float(size[0]), float(size[1])) if np.ndim(size) else (float(size), float(size))
        res = (int(resolution[0]), int(resolution[1])) if np.ndim(resolution) else (int(resolution),) * 2
        return cls(tuple(map(float, center)), tuple(eye[iu]), tuple(eye[iv]), size, res)

    def positions(self) -> np.ndarray:
        nu, nv = self.resolution
        su, sv = self.size
        cu = (np.arange(nu) + 0.5 - nu / 2) * (su / nu)
        cv = (np.arange(nv) + 0.5 - nv / 2) * (sv / nv)
        V, U = np.meshgrid(cv, cu, indexing="ij")
        return (
            np.asarray(self.center)
            + U.ravel()[:, None] * np.asarray(self.axis_u)
            + V.ravel()[:, None] * np.asarray(self.axis_v)
        )


@dataclass(frozen=True)
class FieldSample:
    position: np.ndarray
    pressure: complex
    amplitude: float | None = None
    gorkov: float | None = None
    force: np.ndarray | None = None
    stiffness: float | None = None


@dataclass
class FieldGrid:
    spec: GridSpec
    positions: np.ndarray
    pressure: np.ndarray
    metrics: dict = field(default_factory=dict)

    def columns(self) -> list[tuple[str, np.ndarray]]:
        cols = []
        for name, values in self.metrics.items():
            if name == "force":
                cols += [("fx", values[:, 0]), ("fy", values[:, 1]), ("fz", values[:, 2])]
            else:
                cols.append((name, values))
        return cols

    def image_values(self, metric: str) -> np.ndarray:
        values = self.metrics[metric]
        if metric == "force":
            values = np.linalg.norm(values, axis=1)
        nu, nv = self.spec.resolution
        return values.reshape(nv, nu)

    def samples(self) -> Iterator[FieldSample]:
        m = self.metrics
        for i, pos in enumerate(self.positions):
            yield FieldSample(
                pos,
                complex(self.pressure[i]),
                float(np.abs(self.pressure[i])),
                float(m["gorkov"][i]) if "gorkov" in m else None,
                m["force"][i] if "force" in m else None,
                float(m["stiffness"][i]) if "stiffness" in m else None,
            )


def sample_grid(
    x,
    model,
    spec: GridSpec,
    metrics: Sequence[str] = ("pressure",),
    *,
    particle: ParticleConfig | None = None,
    step: float = DEFAULT_STEP,
    block: int = 4096,
) -> FieldGrid:
    """Evaluate ``metrics`` at every cell centre, row-major, in row blocks."""
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise AnalysisError(f"unknown metric(s) {sorted(unknown)}; expected from {METRICS}")
    x = _vec(x)
    pos = spec.positions()
    n = len(pos)
    pressure = np.empty(n, dtype=complex)
    out = {m: (np.empty((n, 3)) if m == "force" else np.empty(n)) for m in metrics}
    for start in range(0, n, block):
        pts = PointSet(pos[start : start + block])
        sl = slice(start, start + len(pts))
        pressure[sl] = propagate(x, model.transfer(pts))
        for m in metrics:
            if m == "pressure":
                out[m][sl] = np.abs(pressure[sl])
            elif m == "phase":
                out[m][sl] = np.angle(pressure[sl])
            elif m == "gorkov":
                out[m][sl] = gorkov(x, pts, model, particle=particle, step=step)
            elif m == "force":
                out[m][sl] = force(x, pts, model, particle=particle, step=step)
            elif m == "stiffness":
                out[m][sl] = stiffness(x, pts, model, particle=particle, step=step)
    return FieldGrid(spec, pos, pressure, out)


# ---------------------------------------------------------------------- output


def write_field_csv(grid: FieldGrid, path) -> None:
    cols = grid.columns()
    header = ",".join(["x", "y", "z"] + [name for name, _ in cols])
    data = np.column_stack([grid.positions] + [v for _, v in cols])
    lines = [header]
    lines += [",".join(repr(float(v)) for v in row) for row in data]
    Path(path).write_text("\n".join(lines) + "\n")


# sequential ramp (dark purple -> orange -> pale yellow) and blue-white-red
_SEQUENTIAL = np.array([[0, 0, 4], [87, 16, 110], [188, 55, 84], [249, 142, 9], [252, 255, 164]], dtype=float)
_DIVERGING = np.array([[5, 48, 97], [67, 147, 195], [247, 247, 247], [214, 96, 77], [103, 0, 31]], dtype=float)


def _ramp(t: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0) * (len(anchors) - 1)
    lo = np.minimum(t.astype(int), len(anchors) - 2)
    frac = (t - lo)[..., None]
    return anchors[lo] * (1 - frac) + anchors[lo + 1] * frac


def colorize(values: np.ndarray, signed: bool) -> np.ndarray:
    """Map a 2-D array to RGB bytes.

    Signed data uses the diverging ramp centred on zero and scaled by max |v|;
    otherwise the sequential ramp spans [min, max].
    """
    finite = values[np.isfinite(values)]
    if signed:
        scale = np.max(np.abs(finite)) if finite.size else 0.0
        t = 0.5 + 0.5 * values / scale if scale > 0 else np.full(values.shape, 0.5)
        rgb = _ramp(t, _DIVERGING)
    else:
        lo = finite.min() if finite.size else 0.0
        hi = finite.max() if finite.size else 0.0
        t = (values - lo) / (hi - lo) if hi > lo else np.zeros(values.shape)
        rgb = _ramp(t, _SEQUENTIAL)
    return np.round(rgb).astype(np.uint8)


def write_ppm(grid: FieldGrid, metric: str, path) -> None:
    """Binary P6 image of one metric plus a ``.txt`` sidecar with its range.

    The top image row is the largest ``axis_v`` coordinate.
    """
    values = grid.image_values(metric)
    rgb = colorize(values, signed=metric in SIGNED_METRICS)[::-1]
    h, w = values.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes())
    side = Path(str(path) + ".txt")
    cmap = "diverging blue-white-red, zero at white" if metric in SIGNED_METRICS else "sequential dark-to-light"
    side.write_text(
        f"metric={metric}\nmin={float(np.nanmin(values))!r}\nmax={float(np.nanmax(values))!r}\n"
        f"colormap={cmap}\nwidth={w}\nheight={h}\n"
    )


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise AnalysisError(f"{path}: not a P6 image")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)


# ------------------------------------------------------------------ benchmark


@dataclass(frozen=True)
class BenchReport:
    n_points: int
    repetitions: int
    analytic_times: tuple[float, ...]
    fd_times: tuple[float, ...]
    propagate_times: tuple[float, ...]

    def _rate(self, times):
        return self.n_points / min(times)

    @property
    def analytic_rate(self) -> float:
        return self._rate(self.analytic_times)

    @property
    def fd_rate(self) -> float:
        return self._rate(self.fd_times)

    @property
    def speedup(self) -> float:
        return self.analytic_rate / self.fd_rate

    @property
    def fd_cost_ratio(self) -> float:
        """Finite-difference time over plain propagate time (ideal: 7)."""
        return min(self.fd_times) / min(self.propagate_times)

    def as_dict(self) -> dict:
        return {
            "n_points": self.n_points,
            "repetitions": self.repetitions,
            "analytic_solutions_per_s": {"best": self.analytic_rate, "median": self.n_points / statistics.median(self.analytic_times)},
            "fd_solutions_per_s": {"best": self.fd_rate, "median": self.n_points / statistics.median(self.fd_times)},
            "analytic_min_s": min(self.analytic_times),
            "analytic_median_s": statistics.median(self.analytic_times),
            "fd_min_s": min(self.fd_times),
            "fd_median_s": statistics.median(self.fd_times),
            "speedup": self.speedup,
            "fd_over_propagate": self.fd_cost_ratio,
        }


@contextlib.contextmanager
def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional
        yield
        return
    with threadpool_limits(limits=1):
        yield


def bench_gorkov(model, x, n_points: int = 3000, repetitions: int = 3, *, seed: int = 0, bounds: float = 0.05, particle=None) -> BenchReport:
    """Time analytic and finite-difference Gor'kov one point at a time."""
    if n_points < 1 or repetitions < 1:
        raise AnalysisError("n_points and repetitions must be positive")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-bounds, bounds, (n_points, 3))
    singles = [PointSet(p) for p in pts]
    timings = {"analytic": [], "finite-difference": [], "propagate": []}
    with _single_thread():
        for _ in range(repetitions):
            for mode in ("analytic", "finite-difference"):
                t0 = time.perf_counter()
                for p in singles:
                    gorkov(x, p, model, mode, particle=particle)
                timings[mode].append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            for p in singles:
                propagate(x, model.transfer(p))
            timings["propagate"].append(time.perf_counter() - t0)
    return BenchReport(
        n_points,
        repetitions,
        tuple(timings["analytic"]),
        tuple(timings["finite-difference"]),
        tuple(timings["propagate"]),
    )


def nearest_cell_distance(grid: FieldGrid, metric: str, target) -> float:
    """Distance from ``target`` to the cell holding the metric's maximum."""
    values = grid.metrics[metric]
    if values.ndim > 1:
        values = np.linalg.norm(values, axis=1)
    return float(np.linalg.norm(grid.positions[int(np.argmax(values))] - np.asarray(target, dtype=float)))


__all__ = [
    "AnalysisError",
    "BenchReport",
    "FieldGrid",
    "FieldSample",
    "GridSpec",
    "bench_gorkov",
    "force",
    "gorkov",
    "laplacian_fd",
    "propagate",
    "sample_grid",
    "stiffness",
    "write_field_csv",
    "write_ppm",
]
