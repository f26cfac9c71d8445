"""Hologram solvers: projections, naive, IB, GS-PAT, WGS and projected gradient descent.

Every solver takes a propagator ``A`` (a :class:`PropagatorMatrix` or plain
``(N, T)`` array) and never inspects where it came from, so piston and BEM
propagators are interchangeable.

Complex gradients follow the convention ``grad = dL/dRe(x) + 1j * dL/dIm(x)``,
the steepest-ascent direction of a real loss in the complex plane.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .core import MediumConfig, ParticleConfig, gorkov_constants
from .geometry import TransducerArray
from .propagators import PropagatorGradients, PropagatorMatrix, as_matrix

HOLOGRAM_VERSION = 1
DEFAULT_ITERATIONS = 100
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

OBJECTIVES = ("focus-pressure", "trap-gorkov", "pressure-plus-trap", "dual-trap-target", "custom")
OPTIMIZERS = ("fixed-step", "adaptive-moments")
# roles each built-in objective reads
OBJECTIVE_ROLES = {
    "focus-pressure": ("focus",),
    "trap-gorkov": ("trap",),
    "pressure-plus-trap": ("focus", "trap"),
    "dual-trap-target": ("trap", "target"),
}


class SolverError(ValueError):
    """Raised when a solver cannot produce a hologram."""


class ProjectionError(SolverError):
    """A projection was asked to normalise a zero entry."""


@dataclass(frozen=True, eq=False)
class Hologram:
    """Complex drive ``A_t * exp(i phi_t)`` for every transducer."""

    activations: np.ndarray
    array: TransducerArray | None = None
    loss_trace: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        x = np.array(self.activations, dtype=complex).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise SolverError("hologram contains non-finite activations")
        if self.array is not None and len(x) != len(self.array):
            raise SolverError(f"hologram has {len(x)} activations for {len(self.array)} transducers")
        x.setflags(write=False)
        object.__setattr__(self, "activations", x)

    def __len__(self):
        return len(self.activations)

    def __array__(self, dtype=None, copy=None):
        return self.activations if dtype is None else self.activations.astype(dtype)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.abs(self.activations)

    @property
    def phases(self) -> np.ndarray:
        return np.angle(self.activations)


def _vector(x) -> np.ndarray:
    if isinstance(x, Hologram):
        return x.activations
    return np.asarray(x, dtype=complex).reshape(-1)


def _unit(x: np.ndarray, what: str = "transducer") -> np.ndarray:
    mag = np.abs(x)
    if np.any(mag == 0):
        raise ProjectionError(f"{what} entry {int(np.argmin(mag))} is zero; its phase is undefined")
    return x / mag


def _cap(x: np.ndarray) -> np.ndarray:
    mag = np.abs(x)
    return np.where(mag > 1.0, x / np.where(mag > 1.0, mag, 1.0), x)


def _project(x: np.ndarray, mode: str) -> np.ndarray:
    if mode == "unit":
        return _unit(x)
    if mode == "cap":
        return _cap(x)
    raise SolverError(f"unknown constraint mode {mode!r}; expected 'unit' or 'cap'")


def project_transducer(x, mode: str = "unit") -> Hologram:
    """Enforce the hardware constraint: ``x/|x|`` (unit) or ``|x| <= 1`` (cap)."""
    return Hologram(_project(_vector(x), mode))


def project_points(p, y) -> np.ndarray:
    """Keep the phase of each point pressure and impose amplitude ``y``."""
    p = np.asarray(p, dtype=complex).reshape(-1)
    return _unit(p, "point") * _targets(y, len(p))


def _targets(y, n: int) -> np.ndarray:
    if y is None:
        return np.ones(n)
    out = np.broadcast_to(np.asarray(y, dtype=float), (n,)).copy()
    if not np.all(out > 0) or not np.all(np.isfinite(out)):
        raise SolverError("target amplitudes must be positive and finite")
    return out


def _check_iters(iters: int):
    if iters < 1:
        raise SolverError(f"iteration count must be at least 1, got {iters}")


def naive(A, y=None, *, constraint: str = "unit") -> Hologram:
    """Phase conjugation: back-propagate the targets once and project."""
    M = as_matrix(A)
    y = _targets(y, M.shape[0])
    return Hologram(_project(M.conj().T @ y, constraint), _board(A))


def _board(A):
    return A.array if isinstance(A, PropagatorMatrix) else None


def _alternating(M: np.ndarray, y: np.ndarray, iters: int, constraint: str, weighted: bool) -> np.ndarray:
    x = _project(M.conj().T @ y, constraint)
    MH = M.conj().T
    w = np.ones_like(y)
    target = y
    y_mean = y.mean()
    for _ in range(iters):
        p = M @ x
        if weighted:
            amp = np.abs(p)
            if np.any(amp == 0):
                raise ProjectionError("a target point has zero pressure; WGS weights are undefined")
            w = w * (amp.mean() / amp)
            target = y * w
            target = target * (y_mean / target.mean())
        x = _project(MH @ (_unit(p, "point") * target), constraint)
    return x


def iterative_backpropagation(A, y=None, iters: int = DEFAULT_ITERATIONS, *, constraint: str = "unit") -> Hologram:
    """Alternate point and transducer projections, starting from the naive hologram."""
    _check_iters(iters)
    M = as_matrix(A)
    return Hologram(_alternating(M, _targets(y, M.shape[0]), iters, constraint, False), _board(A))


def wgs(A, y=None, iters: int = DEFAULT_ITERATIONS, *, constraint: str = "unit") -> Hologram:
    """Weighted Gerchberg-Saxton.

    Like IB, but each iteration multiplies per-point weights by
    ``mean|p| / |p_n|`` and renormalises the weighted targets to the mean of ``y``,
    pushing weak points up and strong points down.
    """
    _check_iters(iters)
    M = as_matrix(A)
    return Hologram(_alternating(M, _targets(y, M.shape[0]), iters, constraint, True), _board(A))


def gspat(A, y=None, iters: int = DEFAULT_ITERATIONS, *, constraint: str = "unit") -> Hologram:
    """Point-space iteration through ``R = A @ B``.

    ``B`` is ``A^H`` with column ``n`` divided by ``||A[n]||^2`` so ``R`` has unit
    diagonal. The loop only touches ``N``-vectors; the final target is corrected
    by ``y / |p|`` before a single back-propagation.
    """
    _check_iters(iters)
    M = as_matrix(A)
    y = _targets(y, M.shape[0])
    row_norm2 = np.einsum("nt,nt->n", M, M.conj()).real
    if np.any(row_norm2 == 0):
        raise SolverError("propagator has an all-zero row")
    B = M.conj().T / row_norm2
    R = M @ B
    field_ = y.astype(complex)
    for _ in range(iters):
        field_ = R @ (_unit(field_, "point") * y)
    amp = np.abs(field_)
    if np.any(amp == 0):
        raise ProjectionError("a target point has zero pressure after GS-PAT iterations")
    corrected = y * y * field_ / (amp * amp)
    return Hologram(_project(B @ corrected, constraint), _board(A))


# --------------------------------------------------------------- objectives


@dataclass(frozen=True)
class ObjectiveSpec:
    """What to optimise and how.

    ``roles`` assigns each point of a combined propagator to a role (see
    :func:`split_roles`); ``coupling`` weighs the second term of the two-term
    objectives; ``u_target`` is the Gor'kov value sought by ``dual-trap-target``.
    """

    objective: str = "focus-pressure"
    roles: tuple[str, ...] = ()
    coupling: float = 0.0
    u_target: float | None = None
    optimizer: str = "adaptive-moments"
    learning_rate: float = 0.01
    iterations: int = 1000
    seed: int = 0
    custom: Callable | None = None
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise SolverError(f"unknown objective {self.objective!r}; expected one of {OBJECTIVES}")
        if self.optimizer not in OPTIMIZERS:
            raise SolverError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")
        if not self.coupling >= 0:
            raise SolverError("coupling weight must be non-negative")
        if self.iterations < 1:
            raise SolverError("iteration count must be at least 1")
        if self.objective == "custom" and self.custom is None:
            raise SolverError("objective 'custom' needs a callable")
        if self.objective == "dual-trap-target" and self.u_target is None:
            raise SolverError("objective 'dual-trap-target' needs u_target")


def split_roles(roles, A, gradients: PropagatorGradients | None = None):
    """Split a combined propagator into per-role row blocks."""
    roles = tuple(roles)
    M = as_matrix(A)
    if len(roles) != M.shape[0]:
        raise SolverError(f"{len(roles)} role(s) given for {M.shape[0]} point(s)")
    props, grads = {}, {}
    for role in dict.fromkeys(roles):
        idx = np.array([i for i, r in enumerate(roles) if r == role])
        props[role] = A.rows(idx) if isinstance(A, PropagatorMatrix) else M[idx]
        if gradients is not None:
            grads[role] = gradients.rows(idx)
    return props, grads


def pressure_terms(x: np.ndarray, A) -> tuple[float, np.ndarray]:
    """Summed amplitude ``sum |A x|`` and its complex gradient."""
    M = as_matrix(A)
    p = M @ x
    amp = np.abs(p)
    safe = np.where(amp > 0, amp, 1.0)
    return float(amp.sum()), M.conj().T @ np.where(amp > 0, p / safe, 0.0)


def gorkov_terms(x: np.ndarray, A, grads: PropagatorGradients, k1: float, k2: float):
    """Per-point Gor'kov values and the per-point complex gradients ``(N, T)``."""
    M = as_matrix(A)
    p = M @ x
    dA = grads.stacked()
    dp = dA @ x  # (3, N)
    U = k1 * np.abs(p) ** 2 - k2 * np.sum(np.abs(dp) ** 2, axis=0)
    g = 2.0 * k1 * M.conj() * p[:, None] - 2.0 * k2 * np.einsum("ant,an->nt", dA.conj(), dp)
    return U, g


def evaluate_objective(spec: ObjectiveSpec, x, propagators: Mapping, gradients: Mapping, constants):
    """Return ``(loss, complex gradient)`` for a built-in objective."""
    x = _vector(x)
    k1, k2 = constants
    name = spec.objective

    def need(role, with_grads=False):
        if role not in propagators:
            raise SolverError(f"objective {name!r} needs a propagator for role {role!r}")
        if with_grads and role not in gradients:
            raise SolverError(f"objective {name!r} needs propagator gradients for role {role!r}")
        return propagators[role]

    if name == "focus-pressure":
        amp, g = pressure_terms(x, need("focus"))
        return -amp, -g
    if name == "trap-gorkov":
        U, gU = gorkov_terms(x, need("trap", True), gradients["trap"], k1, k2)
        return float(U.sum()), gU.sum(axis=0)
    if name == "pressure-plus-trap":
        amp, ga = pressure_terms(x, need("focus"))
        U, gU = gorkov_terms(x, need("trap", True), gradients["trap"], k1, k2)
        lam = spec.coupling
        return -amp + lam * float(U.sum()), -ga + lam * gU.sum(axis=0)
    if name == "dual-trap-target":
        U1, g1 = gorkov_terms(x, need("trap", True), gradients["trap"], k1, k2)
        U2, g2 = gorkov_terms(x, need("target", True), gradients["target"], k1, k2)
        lam = spec.coupling
        err = U2 - spec.u_target
        loss = float(U1.sum()) + lam * float(np.sum(err**2))
        return loss, g1.sum(axis=0) + 2.0 * lam * (err[:, None] * g2).sum(axis=0)
    raise SolverError(f"objective {name!r} has no closed-form gradient")


def finite_difference_gradient(func: Callable[[np.ndarray], float], x, step: float = 1e-6) -> np.ndarray:
    """Central differences over the real and imaginary part of every entry."""
    x = np.array(_vector(x), dtype=complex)
    g = np.empty_like(x)
    for t in range(len(x)):
        parts = []
        for direction in (1.0, 1j):
            orig = x[t]
            x[t] = orig + step * direction
            fp = func(x)
            x[t] = orig - step * direction
            fm = func(x)
            x[t] = orig
            parts.append((fp - fm) / (2.0 * step))
        g[t] = parts[0] + 1j * parts[1]
    return g


def phase_gradient(grad: np.ndarray, x) -> np.ndarray:
    """Convert a complex gradient into ``dL/dphi_t`` for ``x_t = A_t exp(i phi_t)``."""
    return np.real(np.conj(grad) * 1j * _vector(x))


def random_phases(count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.exp(1j * rng.uniform(-math.pi, math.pi, count))


def gradient_descent_solve(
    spec: ObjectiveSpec,
    propagators: Mapping[str, object],
    gradients: Mapping[str, PropagatorGradients] | None = None,
    *,
    medium: MediumConfig | None = None,
    particle: ParticleConfig | None = None,
    x0=None,
    constraint: str = "unit",
) -> Hologram:
    """Projected gradient descent ``x <- P(x - lr * step(grad L(x)))``.

    ``step`` is the raw gradient (``fixed-step``) or the Adam moment ratio
    (``adaptive-moments``), applied to the real and imaginary parts independently.
    The returned hologram carries the loss of every iterate in ``loss_trace``.
    """
    gradients = dict(gradients or {})
    constants = gorkov_constants(medium or MediumConfig(), particle or ParticleConfig())
    any_prop = next(iter(propagators.values()))
    T = as_matrix(any_prop).shape[1]

    if spec.objective == "custom":
        params = dict(spec.params)

        def loss_fn(v):
            return float(spec.custom(v, propagators, gradients, **params))

        def value_and_grad(v):
            return loss_fn(v), finite_difference_gradient(loss_fn, v)
    else:
        def value_and_grad(v):
            return evaluate_objective(spec, v, propagators, gradients, constants)

    x = _project(_vector(x0), constraint) if x0 is not None else random_phases(T, spec.seed)
    lr = spec.learning_rate
    b1, b2 = ADAM_BETAS
    m = np.zeros(2 * T)
    v = np.zeros(2 * T)
    trace = np.empty(spec.iterations + 1)
    for it in range(spec.iterations):
        loss, g = value_and_grad(x)
        if not (math.isfinite(loss) and np.all(np.isfinite(g))):
            raise SolverError(f"non-finite loss or gradient at iteration {it}")
        trace[it] = loss
        if spec.optimizer == "fixed-step":
            step = g
        else:
            gr = np.concatenate([g.real, g.imag])
            m = b1 * m + (1 - b1) * gr
            v = b2 * v + (1 - b2) * gr * gr
            mhat = m / (1 - b1 ** (it + 1))
            vhat = v / (1 - b2 ** (it + 1))
            s = mhat / (np.sqrt(vhat) + ADAM_EPS)
            step = s[:T] + 1j * s[T:]
        x = _project(x - lr * step, constraint)
    final, _ = value_and_grad(x)
    if not math.isfinite(final):
        raise SolverError(f"non-finite loss at iteration {spec.iterations}")
    trace[-1] = final
    return Hologram(x, _board(any_prop), trace)


# --------------------------------------------------------------------- files


def hologram_to_dict(h: Hologram, frequency: float, board_hash: str | None = None, **extra) -> dict:
    if board_hash is None:
        board_hash = h.array.digest() if h.array is not None else ""
    doc = {
        "version": HOLOGRAM_VERSION,
        "board_hash": board_hash,
        "frequency": float(frequency),
        "activations": [[float(z.real), float(z.imag)] for z in h.activations],
    }
    doc.update(extra)
    return doc


def save_hologram(path, h: Hologram, frequency: float, board_hash: str | None = None, **extra) -> None:
    Path(path).write_text(json.dumps(hologram_to_dict(h, frequency, board_hash, **extra), indent=1) + "\n")


def load_hologram(path, array: TransducerArray | None = None) -> tuple[Hologram, dict]:
    """Read a hologram file; when ``array`` is given its hash must match."""
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != HOLOGRAM_VERSION:
        raise SolverError(f"{path}: unsupported hologram version {doc.get('version')!r}")
    try:
        acts = np.array(doc["activations"], dtype=float)
    except (KeyError, ValueError) as exc:
        raise SolverError(f"{path}: malformed activations ({exc})") from None
    if acts.ndim != 2 or acts.shape[1] != 2:
        raise SolverError(f"{path}: activations must be [re, im] pairs")
    if array is not None and doc.get("board_hash") and doc["board_hash"] != array.digest():
        raise SolverError(f"{path}: hologram was solved for board {doc['board_hash']}, not {array.digest()}")
    return Hologram(acts[:, 0] + 1j * acts[:, 1], array), doc


def save_loss_trace(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        for i, value in enumerate(trace):
            w.writerow([i, repr(float(value))])
