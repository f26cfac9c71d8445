"""Target points, transducer arrays and triangle meshes.

STL files are read and written in both encodings. Binary layout: 80-byte header,
little-endian u32 triangle count, then one 50-byte record per triangle (12 f32:
normal, v1, v2, v3; u16 attribute).
"""
from __future__ import annotations

import hashlib
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DEFAULT_ELEMENT_RADIUS, DEFAULT_P_REF

GRID_PITCH = 0.0105
GRID_SIZE = 16
BOARD_SEPARATION = 0.24
BOARD_KINDS = ("top", "bottom", "two-opposed")

_STL_RECORD = np.dtype(
    [("normal", "<f4", (3,)), ("vertices", "<f4", (3, 3)), ("attr", "<u2")]
)


class StlParseError(ValueError):
    """Malformed STL data; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def _as_points(values) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array of positions, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class PointSet:
    """``N`` positions in metres, one per row."""

    positions: np.ndarray

    def __post_init__(self):
        pos = _as_points(self.positions)
        if len(pos) < 1:
            raise ValueError("a PointSet needs at least one point")
        if not np.all(np.isfinite(pos)):
            raise ValueError("point coordinates must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    def __len__(self):
        return len(self.positions)

    @property
    def count(self) -> int:
        return len(self.positions)

    def offset(self, delta) -> "PointSet":
        return PointSet(self.positions + np.asarray(delta, dtype=float))


def as_point_set(points) -> PointSet:
    return points if isinstance(points, PointSet) else PointSet(points)


def create_points(
    n: int,
    x=None,
    y=None,
    z=None,
    *,
    min_pos: float | Sequence[float] = -0.06,
    max_pos: float | Sequence[float] = 0.06,
    seed: int | None = None,
) -> PointSet:
    """Create ``n`` points, pinning any axis given explicitly.

    Axes left as ``None`` are drawn uniformly from ``[min_pos, max_pos]`` (a scalar
    or a per-axis triple) using a generator seeded with ``seed``.
    """
    if n < 1:
        raise ValueError(f"need at least one point, got n={n}")
    lo = np.broadcast_to(np.asarray(min_pos, dtype=float), (3,))
    hi = np.broadcast_to(np.asarray(max_pos, dtype=float), (3,))
    rng = np.random.default_rng(seed)
    out = np.empty((n, 3))
    for axis, given in enumerate((x, y, z)):
        if given is None:
            if not lo[axis] < hi[axis]:
                raise ValueError(f"inverted bounds on axis {'xyz'[axis]}: {lo[axis]} >= {hi[axis]}")
            out[:, axis] = rng.uniform(lo[axis], hi[axis], size=n)
        else:
            out[:, axis] = np.broadcast_to(np.asarray(given, dtype=float), (n,))
    return PointSet(out)


@dataclass(frozen=True, eq=False)
class TransducerArray:
    """Positions and unit normals of every emitter plus its emission parameters."""

    positions: np.ndarray
    normals: np.ndarray
    p_ref: float = DEFAULT_P_REF
    element_radius: float = DEFAULT_ELEMENT_RADIUS

    def __post_init__(self):
        pos = _as_points(self.positions)
        nrm = _as_points(self.normals)
        if len(pos) < 1:
            raise ValueError("a TransducerArray needs at least one transducer")
        if nrm.shape != pos.shape:
            raise ValueError(f"positions {pos.shape} and normals {nrm.shape} differ in shape")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(nrm))):
            raise ValueError("transducer geometry must be finite")
        lengths = np.linalg.norm(nrm, axis=1)
        if np.any(np.abs(lengths - 1.0) > 1e-9):
            bad = int(np.argmax(np.abs(lengths - 1.0)))
            raise ValueError(f"normal {bad} is not unit length (|n| = {lengths[bad]!r})")
        if not (self.p_ref > 0 and self.element_radius > 0):
            raise ValueError("p_ref and element_radius must be positive")
        pos.setflags(write=False)
        nrm.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "normals", nrm)

    def __len__(self):
        return len(self.positions)

    @property
    def count(self) -> int:
        return len(self.positions)

    def digest(self) -> str:
        """Stable content hash used to key holograms and cached BEM operators."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.positions, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.normals, dtype="<f8").tobytes())
        h.update(np.array([self.p_ref, self.element_radius], dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def translated(self, delta) -> "TransducerArray":
        return TransducerArray(
            self.positions + np.asarray(delta, dtype=float), self.normals, self.p_ref, self.element_radius
        )

    def mirrored_z(self, plane_z: float = 0.0) -> "TransducerArray":
        """Mirror image through the horizontal plane ``z = plane_z``."""
        pos = self.positions.copy()
        pos[:, 2] = 2.0 * plane_z - pos[:, 2]
        nrm = self.normals.copy()
        nrm[:, 2] *= -1.0
        return TransducerArray(pos, nrm, self.p_ref, self.element_radius)

    @staticmethod
    def concat(*arrays: "TransducerArray") -> "TransducerArray":
        first = arrays[0]
        return TransducerArray(
            np.concatenate([a.positions for a in arrays]),
            np.concatenate([a.normals for a in arrays]),
            first.p_ref,
            first.element_radius,
        )


def grid_positions(n: int = GRID_SIZE, pitch: float = GRID_PITCH, z: float = 0.0) -> np.ndarray:
    coords = (np.arange(n) - (n - 1) / 2.0) * pitch
    gx, gy = np.meshgrid(coords, coords, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), np.full(n * n, z)])


def preset_board(
    kind: str = "bottom",
    *,
    n: int = GRID_SIZE,
    pitch: float = GRID_PITCH,
    separation: float = BOARD_SEPARATION,
    base_z: float = 0.0,
    p_ref: float = DEFAULT_P_REF,
    element_radius: float = DEFAULT_ELEMENT_RADIUS,
) -> TransducerArray:
    """Flat ``n x n`` grid(s) centred on the z axis.

    ``bottom`` lies in the plane ``z = base_z`` facing +z and ``top`` in
    ``z = base_z + separation`` facing -z, so the two are mirror images through
    the mid-plane. ``two-opposed`` stacks top then bottom.
    """
    if kind not in BOARD_KINDS:
        raise ValueError(f"unknown board kind {kind!r}; expected one of {BOARD_KINDS}")
    count = n * n
    bottom = TransducerArray(
        grid_positions(n, pitch, base_z),
        np.tile([0.0, 0.0, 1.0], (count, 1)),
        p_ref,
        element_radius,
    )
    if kind == "bottom":
        return bottom
    top = bottom.mirrored_z(base_z + separation / 2.0)
    if kind == "top":
        return top
    return TransducerArray.concat(top, bottom)


def board_midplane(separation: float = BOARD_SEPARATION, base_z: float = 0.0) -> float:
    """Height of the plane halfway between the preset boards."""
    return base_z + separation / 2.0


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Triangle soup with per-element centroid, outward normal and area.

    Normals follow the right-hand rule on the vertex order. ``dropped`` counts the
    degenerate triangles removed at construction.
    """

    triangles: np.ndarray
    dropped: int = 0
    centroids: np.ndarray = field(init=False, repr=False)
    normals: np.ndarray = field(init=False, repr=False)
    areas: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        tri = np.array(self.triangles, dtype=float, copy=True).reshape(-1, 3, 3)
        if not np.all(np.isfinite(tri)):
            raise ValueError("mesh vertices must be finite")
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        twice_area = np.linalg.norm(cross, axis=1)
        edge = np.max(np.linalg.norm(tri - np.roll(tri, 1, axis=1), axis=2), axis=1)
        good = twice_area > 1e-12 * np.maximum(edge, 1e-300) ** 2
        dropped = int(np.count_nonzero(~good)) + self.dropped
        tri, cross, twice_area = tri[good], cross[good], twice_area[good]
        for name, value in (
            ("triangles", tri),
            ("dropped", dropped),
            ("centroids", tri.mean(axis=1)),
            ("normals", cross / twice_area[:, None]),
            ("areas", 0.5 * twice_area),
        ):
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    def __len__(self):
        return len(self.triangles)

    @property
    def count(self) -> int:
        return len(self.triangles)

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @property
    def vertices(self) -> np.ndarray:
        return self.triangles.reshape(-1, 3)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.vertices
        return v.min(axis=0), v.max(axis=0)

    def max_edge(self) -> float:
        t = self.triangles
        return float(np.max(np.linalg.norm(t - np.roll(t, 1, axis=1), axis=2)))

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.triangles, dtype="<f8").tobytes()).hexdigest()[:16]

    def transformed(self, scale: float = 1.0, translate=(0.0, 0.0, 0.0)) -> "SurfaceMesh":
        return SurfaceMesh(self.triangles * scale + np.asarray(translate, dtype=float), self.dropped)

    def flipped(self) -> "SurfaceMesh":
        """Reverse the winding of every triangle, inverting all normals."""
        return SurfaceMesh(self.triangles[:, ::-1], self.dropped)


# --------------------------------------------------------------------------- STL


def _parse_binary_stl(data: bytes) -> np.ndarray:
    if len(data) < 84:
        raise StlParseError("binary STL shorter than its 84-byte header", len(data))
    count = int.from_bytes(data[80:84], "little")
    expected = 84 + 50 * count
    if len(data) < expected:
        full = (len(data) - 84) // 50
        raise StlParseError(
            f"binary STL declares {count} triangles but record {full} is truncated", 84 + 50 * full
        )
    records = np.frombuffer(data, dtype=_STL_RECORD, count=count, offset=84)
    return records["vertices"].astype(float)


_TOKEN = re.compile(rb"\S+")


def _parse_ascii_stl(data: bytes) -> np.ndarray:
    tokens = [(m.group(), m.start()) for m in _TOKEN.finditer(data)]
    pos = 0

    def take(expected: bytes | None = None):
        nonlocal pos
        if pos >= len(tokens):
            raise StlParseError(f"unexpected end of file, expected {expected!r}", len(data))
        tok, off = tokens[pos]
        if expected is not None and tok.lower() != expected:
            raise StlParseError(f"expected {expected.decode()!r}, found {tok[:32]!r}", off)
        pos += 1
        return tok, off

    def number():
        tok, off = take()
        try:
            return float(tok)
        except ValueError:
            raise StlParseError(f"expected a number, found {tok[:32]!r}", off) from None

    take(b"solid")
    # optional solid name: everything up to the first 'facet' or 'endsolid'
    while pos < len(tokens) and tokens[pos][0].lower() not in (b"facet", b"endsolid"):
        pos += 1
    tris = []
    while True:
        if pos >= len(tokens):
            raise StlParseError("missing 'endsolid'", len(data))
        tok, off = tokens[pos]
        low = tok.lower()
        if low == b"endsolid":
            break
        if low != b"facet":
            raise StlParseError(f"expected 'facet' or 'endsolid', found {tok[:32]!r}", off)
        take(b"facet")
        take(b"normal")
        for _ in range(3):
            number()
        take(b"outer")
        take(b"loop")
        tri = []
        for _ in range(3):
            take(b"vertex")
            tri.append([number(), number(), number()])
        take(b"endloop")
        take(b"endfacet")
        tris.append(tri)
    return np.array(tris, dtype=float).reshape(-1, 3, 3)


def parse_stl(data: bytes) -> np.ndarray:
    """Decode STL bytes (either encoding) into an ``(M, 3, 3)`` vertex array."""
    if len(data) >= 84:
        count = int.from_bytes(data[80:84], "little")
        if len(data) == 84 + 50 * count:
            return _parse_binary_stl(data)
    if data.lstrip()[:5].lower() == b"solid":
        return _parse_ascii_stl(data)
    return _parse_binary_stl(data)


def load_mesh(
    path,
    *,
    scale: float = 1.0,
    center: bool = False,
    fit_x: float | None = None,
    translate=(0.0, 0.0, 0.0),
) -> SurfaceMesh:
    """Read an STL file (metres assumed) and apply optional transforms.

    Transforms run in order: uniform ``scale``; ``center`` moves the bounding-box
    centre to the origin; ``fit_x`` rescales about the origin so that max |x| over
    all vertices equals ``fit_x``; finally ``translate``.
    """
    tri = parse_stl(Path(path).read_bytes()) * float(scale)
    if center and len(tri):
        v = tri.reshape(-1, 3)
        tri = tri - 0.5 * (v.min(axis=0) + v.max(axis=0))
    if fit_x is not None:
        extent = np.max(np.abs(tri[..., 0])) if len(tri) else 0.0
        if extent <= 0:
            raise ValueError("cannot fit x-extent of a mesh with no x spread")
        tri = tri * (fit_x / extent)
    tri = tri + np.asarray(translate, dtype=float)
    mesh = SurfaceMesh(tri)
    if mesh.dropped:
        warnings.warn(f"{path}: dropped {mesh.dropped} zero-area triangle(s)", stacklevel=2)
    return mesh


def stl_bytes(mesh: SurfaceMesh, binary: bool = True, name: str = "sonoholo") -> bytes:
    if binary:
        rec = np.zeros(len(mesh), dtype=_STL_RECORD)
        rec["normal"] = mesh.normals
        rec["vertices"] = mesh.triangles
        header = name.encode()[:80].ljust(80, b" ")
        return header + len(mesh).to_bytes(4, "little") + rec.tobytes()
    lines = [f"solid {name}"]
    for n, tri in zip(mesh.normals, mesh.triangles):
        lines.append(f"  facet normal {n[0]:.9e} {n[1]:.9e} {n[2]:.9e}")
        lines.append("    outer loop")
        for v in tri:
            lines.append(f"      vertex {v[0]:.9e} {v[1]:.9e} {v[2]:.9e}")
        lines.append("    endloop")
        lines.append("  endfacet")
    lines.append(f"endsolid {name}")
    return ("\n".join(lines) + "\n").encode()


def write_stl(path, mesh: SurfaceMesh, binary: bool = True) -> None:
    Path(path).write_bytes(stl_bytes(mesh, binary=binary))


def mesh_to_board(
    mesh: SurfaceMesh,
    inward: bool = False,
    *,
    p_ref: float = DEFAULT_P_REF,
    element_radius: float = DEFAULT_ELEMENT_RADIUS,
) -> TransducerArray:
    """Place one transducer at each triangle centroid, facing along its normal."""
    if len(mesh) == 0:
        raise ValueError("cannot build a board from an empty mesh")
    normals = -mesh.normals if inward else mesh.normals
    return TransducerArray(mesh.centroids, normals, p_ref, element_radius)


# ------------------------------------------------------------------ mesh builders


def plate_mesh(size_x: float, size_y: float, nx: int, ny: int, z: float = 0.0, facing_up: bool = True) -> SurfaceMesh:
    """Flat rectangle centred on the z axis, two triangles per cell."""
    xs = np.linspace(-size_x / 2, size_x / 2, nx + 1)
    ys = np.linspace(-size_y / 2, size_y / 2, ny + 1)
    x0, y0 = np.meshgrid(xs[:-1], ys[:-1], indexing="ij")
    x1, y1 = np.meshgrid(xs[1:], ys[1:], indexing="ij")
    x0, y0, x1, y1 = (a.ravel() for a in (x0, y0, x1, y1))
    zz = np.full_like(x0, z)
    a = np.stack([x0, y0, zz], axis=1)
    b = np.stack([x1, y0, zz], axis=1)
    c = np.stack([x1, y1, zz], axis=1)
    d = np.stack([x0, y1, zz], axis=1)
    tri = np.concatenate([np.stack([a, b, c], axis=1), np.stack([a, c, d], axis=1)])
    mesh = SurfaceMesh(tri)
    return mesh if facing_up else mesh.flipped()


def box_mesh(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> SurfaceMesh:
    """Axis-aligned box as 12 outward-facing triangles."""
    half = np.asarray(size, dtype=float) / 2.0
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
    v = corners * half + np.asarray(center, dtype=float)
    # corner index = 4*ix + 2*iy + iz
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    tri = []
    for a, b, c, d in quads:
        tri.append([v[a], v[b], v[c]])
        tri.append([v[a], v[c], v[d]])
    return SurfaceMesh(np.array(tri))


def sphere_mesh(radius: float = 1.0, subdivisions: int = 2, center=(0.0, 0.0, 0.0)) -> SurfaceMesh:
    """Icosphere with outward normals."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    v = np.array(verts, dtype=float)
    tri = v[np.array(faces)]
    for _ in range(subdivisions):
        a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
        ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
        tri = np.concatenate(
            [np.stack(s, axis=1) for s in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))]
        )
    tri = tri / np.linalg.norm(tri, axis=2, keepdims=True)
    return SurfaceMesh(tri * radius + np.asarray(center, dtype=float))
