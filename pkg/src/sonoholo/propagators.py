"""Transfer matrices from transducer activations to complex pressure.

Rows are field points, columns are transducers. Two models are provided:

* the free-field circular piston, ``F[n, t] = p_ref * D(k r sin(theta)) * exp(ikd) / d``
  with directivity ``D(u) = 2 J1(u) / u``;
* a boundary-element extension for rigid scatterers, ``E = F + G @ H``, using
  centroid collocation of the exterior sound-hard (Neumann) problem.

The directivity is evaluated as a function of ``s = u**2``, which is analytic in
the point coordinates and removes the on-axis 0/0 from every derivative.
"""
from __future__ import annotations

import logging
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy import special

from .core import MediumConfig
from .geometry import PointSet, SurfaceMesh, TransducerArray, as_point_set

log = logging.getLogger(__name__)

COINCIDENT_TOLERANCE = 1e-9
ROW_BLOCK = 1024
# index pairs of the six unique second derivatives
HESSIAN_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


class PropagationError(ValueError):
    """Raised for geometries the propagators cannot evaluate."""


class BemError(RuntimeError):
    """Raised when the boundary-element system cannot be built or solved."""


@dataclass(frozen=True, eq=False)
class PropagatorMatrix:
    entries: np.ndarray
    points: PointSet | None = None
    array: TransducerArray | None = None

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=complex)
        if e.ndim != 2:
            raise ValueError(f"propagator must be 2-D, got shape {e.shape}")
        if self.points is not None and e.shape[0] != len(self.points):
            raise ValueError("row count does not match the point set")
        if self.array is not None and e.shape[1] != len(self.array):
            raise ValueError("column count does not match the transducer array")
        object.__setattr__(self, "entries", e)

    @property
    def shape(self):
        return self.entries.shape

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __matmul__(self, x):
        return self.entries @ x

    def rows(self, index) -> "PropagatorMatrix":
        idx = np.atleast_1d(index)
        pts = None if self.points is None else PointSet(self.points.positions[idx])
        return PropagatorMatrix(self.entries[idx], pts, self.array)


@dataclass(frozen=True, eq=False)
class PropagatorGradients:
    """Spatial derivatives of a propagator with respect to the field-point coordinates."""

    dx: np.ndarray
    dy: np.ndarray
    dz: np.ndarray

    def __post_init__(self):
        if not (self.dx.shape == self.dy.shape == self.dz.shape):
            raise ValueError("gradient components differ in shape")

    def stacked(self) -> np.ndarray:
        return np.stack([self.dx, self.dy, self.dz])

    @property
    def shape(self):
        return self.dx.shape

    def rows(self, index) -> "PropagatorGradients":
        idx = np.atleast_1d(index)
        return PropagatorGradients(self.dx[idx], self.dy[idx], self.dz[idx])


@dataclass(frozen=True, eq=False)
class PropagatorHessians:
    """Second spatial derivatives stacked as ``(6, N, T)`` in order xx, yy, zz, xy, xz, yz."""

    entries: np.ndarray

    def component(self, i: int, j: int) -> np.ndarray:
        pair = (min(i, j), max(i, j))
        return self.entries[HESSIAN_PAIRS.index(pair)]


def as_matrix(A) -> np.ndarray:
    return A.entries if isinstance(A, PropagatorMatrix) else np.asarray(A, dtype=complex)


# ----------------------------------------------------------------- directivity


def directivity_terms(u: np.ndarray, order: int = 0):
    """Return ``D(s)`` and, up to ``order``, ``dD/ds`` and ``d2D/ds2`` with ``s = u**2``.

    ``D = 2 J1(u)/u``, ``dD/ds = -J2(u)/u**2``, ``d2D/ds2 = J3(u)/(2 u**3)``.
    """
    u = np.asarray(u, dtype=float)
    small = u < 1e-2
    us = np.where(small, 1.0, u)
    u2 = u * u
    d0 = np.where(small, 1.0 - u2 / 8.0 + u2 * u2 / 192.0, 2.0 * special.j1(us) / us)
    if order == 0:
        return (d0,)
    d1 = np.where(
        small, -(1.0 - u2 / 12.0 + u2 * u2 / 384.0) / 8.0, -special.jv(2, us) / us**2
    )
    if order == 1:
        return d0, d1
    d2 = np.where(
        small, (1.0 - u2 / 16.0 + u2 * u2 / 640.0) / 96.0, special.jv(3, us) / (2.0 * us**3)
    )
    return d0, d1, d2


# --------------------------------------------------------------- piston model


def _check_coincident(d: np.ndarray, row_offset: int):
    bad = d < COINCIDENT_TOLERANCE
    if np.any(bad):
        n, t = np.argwhere(bad)[0]
        raise PropagationError(
            f"point {n + row_offset} coincides with transducer {t} (distance {d[n, t]:.3g} m)"
        )


def _piston_block(pts: np.ndarray, array: TransducerArray, k: float, order: int, row_offset: int = 0):
    """Piston transfer and derivatives for one block of rows.

    Returns ``(F, grad, hess)`` with ``grad`` shaped ``(3, N, T)`` and ``hess``
    ``(6, N, T)``; entries beyond ``order`` are ``None``.
    """
    delta = pts[:, None, :] - array.positions[None, :, :]  # (N, T, 3)
    d = np.sqrt(np.einsum("ntk,ntk->nt", delta, delta))
    _check_coincident(d, row_offset)
    nrm = array.normals[None, :, :]
    c = np.einsum("ntk,ntk->nt", delta, nrm)
    perp = delta - c[..., None] * nrm
    rho2 = np.einsum("ntk,ntk->nt", perp, perp)
    kr2 = (k * array.element_radius) ** 2
    inv_d = 1.0 / d
    s = kr2 * rho2 * inv_d * inv_d
    terms = directivity_terms(np.sqrt(s), order)
    h = np.exp(1j * k * d) * inv_d
    p_ref = array.p_ref
    F = p_ref * terms[0] * h
    if order == 0:
        return F, None, None

    D0, D1 = terms[0], terms[1]
    inv_d2 = inv_d * inv_d
    c_d2 = c * inv_d2
    # grad s = -kr^2 grad(c^2/d^2) = -kr^2 (2c n/d^2 - 2c^2 delta/d^4)
    grad_s = -kr2 * (2.0 * c_d2[..., None] * nrm - 2.0 * (c_d2 * c_d2)[..., None] * delta)
    h1 = h * (1j * k - inv_d)  # dh/dd
    unit = delta * inv_d[..., None]
    grad_h = h1[..., None] * unit
    grad = p_ref * (D1[..., None] * h[..., None] * grad_s + D0[..., None] * grad_h)
    grad = np.moveaxis(grad, -1, 0)
    if order == 1:
        return F, grad, None

    D2 = terms[2]
    h2 = h * ((1j * k - inv_d) ** 2 + inv_d2)
    inv_d4 = inv_d2 * inv_d2
    hess = np.empty((6,) + F.shape, dtype=complex)
    for idx, (i, j) in enumerate(HESSIAN_PAIRS):
        ni, nj = array.normals[None, :, i], array.normals[None, :, j]
        di, dj = delta[..., i], delta[..., j]
        kron = 1.0 if i == j else 0.0
        hq = (
            2.0 * ni * nj * inv_d2
            - 4.0 * c * (ni * dj + di * nj) * inv_d4
            - 2.0 * c * c * kron * inv_d4
            + 8.0 * c * c * di * dj * inv_d4 * inv_d2
        )
        hs = -kr2 * hq
        uij = unit[..., i] * unit[..., j]
        hh = h2 * uij + h1 * (kron - uij) * inv_d
        gsi, gsj = grad_s[..., i], grad_s[..., j]
        ghi, ghj = grad_h[..., i], grad_h[..., j]
        hess[idx] = p_ref * (
            D2 * h * gsi * gsj + D1 * h * hs + D1 * (gsi * ghj + ghi * gsj) + D0 * hh
        )
    return F, grad, hess


def _blocked(points, array, cfg, order):
    pts = as_point_set(points).positions
    k = cfg.wavenumber
    n = len(pts)
    T = len(array)
    F = np.empty((n, T), dtype=complex)
    grad = np.empty((3, n, T), dtype=complex) if order >= 1 else None
    hess = np.empty((6, n, T), dtype=complex) if order >= 2 else None
    for start in range(0, n, ROW_BLOCK):
        stop = min(start + ROW_BLOCK, n)
        f, g, hh = _piston_block(pts[start:stop], array, k, order, start)
        F[start:stop] = f
        if grad is not None:
            grad[:, start:stop] = g
        if hess is not None:
            hess[:, start:stop] = hh
    return F, grad, hess


def piston_transfer(points, array: TransducerArray, cfg: MediumConfig) -> PropagatorMatrix:
    """Free-field piston propagator, shape ``(N, T)``."""
    points = as_point_set(points)
    F, _, _ = _blocked(points, array, cfg, 0)
    return PropagatorMatrix(F, points, array)


def piston_gradients(points, array: TransducerArray, cfg: MediumConfig) -> PropagatorGradients:
    _, g, _ = _blocked(points, array, cfg, 1)
    return PropagatorGradients(g[0], g[1], g[2])


def piston_hessians(points, array: TransducerArray, cfg: MediumConfig) -> PropagatorHessians:
    _, _, h = _blocked(points, array, cfg, 2)
    return PropagatorHessians(h)


def piston_all(points, array: TransducerArray, cfg: MediumConfig, order: int = 1):
    """Transfer plus derivatives up to ``order`` from one shared evaluation."""
    points = as_point_set(points)
    F, g, h = _blocked(points, array, cfg, order)
    out = [PropagatorMatrix(F, points, array)]
    if order >= 1:
        out.append(PropagatorGradients(g[0], g[1], g[2]))
    if order >= 2:
        out.append(PropagatorHessians(h))
    return tuple(out)


# --------------------------------------------------------------------- Green's


def green(r: np.ndarray, k: float) -> np.ndarray:
    """Free-space Helmholtz Green's function ``exp(ikr) / (4 pi r)``."""
    return np.exp(1j * k * r) / (4.0 * math.pi * r)


def green_normal_derivative(x: np.ndarray, y: np.ndarray, ny: np.ndarray, k: float) -> np.ndarray:
    """``dG(x, y)/dn_y`` for field points ``x`` (N,3) and sources ``y`` with normals ``ny`` (M,3)."""
    delta = x[:, None, :] - y[None, :, :]
    r = np.sqrt(np.einsum("nmk,nmk->nm", delta, delta))
    proj = np.einsum("nmk,mk->nm", delta, ny)
    return -proj * _phi(r, k)


def _phi(r, k):
    # exp(ikr)(ikr - 1) / (4 pi r^3)
    return np.exp(1j * k * r) * (1j * k * r - 1.0) / (4.0 * math.pi * r**3)


def _double_layer_block(x: np.ndarray, mesh: SurfaceMesh, k: float, with_gradient: bool):
    delta = x[:, None, :] - mesh.centroids[None, :, :]
    r = np.sqrt(np.einsum("nmk,nmk->nm", delta, delta))
    if np.any(r < COINCIDENT_TOLERANCE):
        n, m = np.argwhere(r < COINCIDENT_TOLERANCE)[0]
        raise PropagationError(f"field point {n} coincides with mesh element {m}")
    proj = np.einsum("nmk,mk->nm", delta, mesh.normals)
    phi = _phi(r, k)
    G = -proj * phi * mesh.areas
    if not with_gradient:
        return G, None
    dphi = -(k * k) * np.exp(1j * k * r) / (4.0 * math.pi * r * r) - 3.0 * phi / r
    coef = -(proj * dphi / r)
    grad = np.empty((3,) + G.shape, dtype=complex)
    for a in range(3):
        grad[a] = (-mesh.normals[None, :, a] * phi + coef * delta[..., a]) * mesh.areas
    return G, grad


# ------------------------------------------------------------------------ BEM


@dataclass(frozen=True, eq=False)
class BemOperator:
    """Cached surface response ``H = (I/2 - D)^-1 F_surface`` for one mesh and array."""

    mesh: SurfaceMesh
    array: TransducerArray
    medium: MediumConfig
    H: np.ndarray
    rcond: float = float("nan")

    @property
    def key(self) -> tuple[str, str, float]:
        return (self.mesh.digest(), self.array.digest(), float(self.medium.frequency))


def assemble_surface_operator(mesh: SurfaceMesh, cfg: MediumConfig) -> np.ndarray:
    """Return ``D`` with ``D[i, j] = dG(c_i, c_j)/dn_j * area_j`` and zero diagonal."""
    k = cfg.wavenumber
    M = len(mesh)
    D = np.empty((M, M), dtype=complex)
    c = mesh.centroids
    for start in range(0, M, ROW_BLOCK):
        stop = min(start + ROW_BLOCK, M)
        delta = c[start:stop, None, :] - c[None, :, :]
        r = np.sqrt(np.einsum("nmk,nmk->nm", delta, delta))
        rows = np.arange(stop - start)
        r[rows, rows + start] = 1.0  # self term, zeroed below
        proj = np.einsum("nmk,mk->nm", delta, mesh.normals)
        block = -proj * _phi(r, k) * mesh.areas
        block[rows, rows + start] = 0.0
        D[start:stop] = block
    return D


def bem_build(
    mesh: SurfaceMesh,
    array: TransducerArray,
    cfg: MediumConfig,
    *,
    cache_dir=None,
    rcond_floor: float = 1e-12,
) -> BemOperator:
    """Assemble and factorise the surface system, caching ``H`` when ``cache_dir`` is set."""
    if len(mesh) == 0:
        raise BemError("cannot build a BEM operator for an empty mesh")
    if cache_dir is not None:
        path = Path(cache_dir) / cache_filename(mesh, array, cfg)
        if path.exists():
            try:
                return load_h_cache(path, mesh, array, cfg)
            except (BemError, OSError) as exc:
                log.warning("ignoring unreadable BEM cache %s: %s", path, exc)
    limit = cfg.wavelength / 4.0
    if mesh.max_edge() > limit * (1 + 1e-9):
        warnings.warn(
            f"mesh edge {mesh.max_edge():.4g} m exceeds lambda/4 = {limit:.4g} m; BEM accuracy will suffer",
            stacklevel=2,
        )
    D = assemble_surface_operator(mesh, cfg)
    system = -D
    system[np.diag_indices_from(system)] += 0.5
    del D
    anorm = np.max(np.sum(np.abs(system), axis=0))
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            lu, piv = scipy.linalg.lu_factor(system, overwrite_a=True, check_finite=False)
        except (scipy.linalg.LinAlgWarning, np.linalg.LinAlgError) as exc:
            raise BemError(f"BEM surface system is singular: {exc}") from None
    rcond = float(scipy.linalg.lapack.zgecon(lu, anorm, norm="1")[0])
    if not rcond > rcond_floor:
        raise BemError(f"BEM surface system is ill-conditioned (condition estimate {1 / max(rcond, 1e-300):.3g})")
    F_surface = piston_transfer(mesh.centroids, array, cfg).entries
    H = scipy.linalg.lu_solve((lu, piv), F_surface, check_finite=False)
    H.setflags(write=False)
    op = BemOperator(mesh, array, cfg, H, rcond)
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        save_h_cache(path, op)
    return op


def _scatter_terms(points: PointSet, op: BemOperator, with_gradient: bool):
    k = op.medium.wavenumber
    pts = points.positions
    M = len(op.mesh)
    n = len(pts)
    G = np.empty((n, M), dtype=complex)
    dG = np.empty((3, n, M), dtype=complex) if with_gradient else None
    for start in range(0, n, ROW_BLOCK):
        stop = min(start + ROW_BLOCK, n)
        g, dg = _double_layer_block(pts[start:stop], op.mesh, k, with_gradient)
        G[start:stop] = g
        if dg is not None:
            dG[:, start:stop] = dg
    _warn_inside(pts, op.mesh)
    return G, dG


def _warn_inside(pts: np.ndarray, mesh: SurfaceMesh):
    # nearest-centroid sign test; only meaningful for closed meshes
    for start in range(0, len(pts), ROW_BLOCK):
        block = pts[start : start + ROW_BLOCK]
        delta = block[:, None, :] - mesh.centroids[None, :, :]
        nearest = np.argmin(np.einsum("nmk,nmk->nm", delta, delta), axis=1)
        side = np.einsum("nk,nk->n", delta[np.arange(len(block)), nearest], mesh.normals[nearest])
        if np.any(side < 0):
            warnings.warn(
                f"{int(np.count_nonzero(side < 0))} field point(s) appear to lie inside the scatterer",
                stacklevel=3,
            )
            return


def bem_propagator(points, op: BemOperator) -> PropagatorMatrix:
    """Direct plus scattered propagator ``E = F + G @ H``."""
    points = as_point_set(points)
    F = piston_transfer(points, op.array, op.medium).entries
    G, _ = _scatter_terms(points, op, False)
    return PropagatorMatrix(F + G @ op.H, points, op.array)


def bem_gradients(points, op: BemOperator) -> PropagatorGradients:
    points = as_point_set(points)
    _, dF, _ = _blocked(points, op.array, op.medium, 1)
    _, dG = _scatter_terms(points, op, True)
    g = dF + dG @ op.H
    return PropagatorGradients(g[0], g[1], g[2])


def bem_all(points, op: BemOperator, order: int = 1):
    if order > 1:
        raise NotImplementedError("second derivatives are not available for the BEM propagator")
    points = as_point_set(points)
    F, dF, _ = _blocked(points, op.array, op.medium, order)
    G, dG = _scatter_terms(points, op, order >= 1)
    out = [PropagatorMatrix(F + G @ op.H, points, op.array)]
    if order >= 1:
        g = dF + dG @ op.H
        out.append(PropagatorGradients(g[0], g[1], g[2]))
    return tuple(out)


# --------------------------------------------------------------- field models


class PistonModel:
    """Free-field propagator factory bound to one array and medium."""

    kind = "piston"
    max_order = 2

    def __init__(self, array: TransducerArray, medium: MediumConfig):
        self.array = array
        self.medium = medium

    def transfer(self, points) -> PropagatorMatrix:
        return piston_transfer(points, self.array, self.medium)

    def gradients(self, points) -> PropagatorGradients:
        return piston_gradients(points, self.array, self.medium)

    def evaluate(self, points, order: int = 1):
        return piston_all(points, self.array, self.medium, order)


class BemModel:
    """Scattering propagator factory bound to a built :class:`BemOperator`."""

    kind = "bem"
    max_order = 1

    def __init__(self, op: BemOperator):
        self.op = op
        self.array = op.array
        self.medium = op.medium

    def transfer(self, points) -> PropagatorMatrix:
        return bem_propagator(points, self.op)

    def gradients(self, points) -> PropagatorGradients:
        return bem_gradients(points, self.op)

    def evaluate(self, points, order: int = 1):
        return bem_all(points, self.op, order)


# ------------------------------------------------------------------ H cache

_CACHE_MAGIC = b"SHBEMH\x00\x01"
_CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<8sH16s16sdII")


def cache_filename(mesh: SurfaceMesh, array: TransducerArray, cfg: MediumConfig) -> str:
    return f"H_{mesh.digest()}_{array.digest()}_{cfg.frequency:.6g}.bin"


def save_h_cache(path, op: BemOperator) -> None:
    """Write ``H`` as little-endian (re, im) float64 pairs after a versioned header."""
    mesh_key, array_key, freq = op.key
    M, T = op.H.shape
    header = _CACHE_HEADER.pack(
        _CACHE_MAGIC, _CACHE_VERSION, mesh_key.encode(), array_key.encode(), freq, M, T
    )
    body = np.ascontiguousarray(op.H).view("<f8").astype("<f8", copy=False).tobytes()
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(header + struct.pack("<d", op.rcond) + body)
    tmp.replace(path)


def load_h_cache(path, mesh: SurfaceMesh, array: TransducerArray, cfg: MediumConfig) -> BemOperator:
    data = Path(path).read_bytes()
    if len(data) < _CACHE_HEADER.size + 8:
        raise BemError(f"{path}: truncated cache header")
    magic, version, mesh_key, array_key, freq, M, T = _CACHE_HEADER.unpack_from(data)
    if magic != _CACHE_MAGIC or version != _CACHE_VERSION:
        raise BemError(f"{path}: not a version-{_CACHE_VERSION} H cache")
    if (mesh_key.decode(), array_key.decode(), freq) != (mesh.digest(), array.digest(), float(cfg.frequency)):
        raise BemError(f"{path}: cache key does not match mesh/array/frequency")
    (rcond,) = struct.unpack_from("<d", data, _CACHE_HEADER.size)
    body = data[_CACHE_HEADER.size + 8 :]
    if len(body) != 16 * M * T:
        raise BemError(f"{path}: expected {16 * M * T} payload bytes, found {len(body)}")
    H = np.frombuffer(body, dtype="<f8").view(complex).reshape(M, T).copy()
    H.setflags(write=False)
    return BemOperator(mesh, array, cfg, H, rcond)
