"""Triangle meshes, surface point sets and occupancy grids.

Everything here is a pure function of its inputs. Meshes are stored as
float64 ``(K, 3)`` vertex arrays and int64 ``(F, 3)`` face arrays; both are
made read-only on construction so a mesh can be shared freely between
threads and pipeline stages.
"""

from __future__ import annotations

import io
import struct
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import (
    DegenerateError,
    MeshStructureError,
    ObjParseError,
    SamplingError,
)

# Ray direction for the parity inside test; off-axis to avoid grazing edges.
RAY_DIRECTION = (1.0, 1e-3, 1e-4)


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh ``(V, F)`` with optional per-vertex normals."""

    vertices: np.ndarray
    faces: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        v = _frozen(np.reshape(self.vertices, (-1, 3)), np.float64)
        f = _frozen(np.reshape(self.faces, (-1, 3)), np.int64)
        if not np.all(np.isfinite(v)):
            raise MeshStructureError("vertex coordinates must be finite")
        if len(f):
            if f.min() < 0 or f.max() >= len(v):
                raise MeshStructureError(
                    f"face index out of range for {len(v)} vertices"
                )
            repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if repeated.any():
                raise MeshStructureError(
                    f"face {int(np.argmax(repeated))} repeats a vertex index"
                )
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.normals is not None:
            n = _frozen(np.reshape(self.normals, (-1, 3)), np.float64)
            if len(n) != len(v):
                raise MeshStructureError("normals must match vertex count")
            object.__setattr__(self, "normals", n)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices) -> "Mesh":
        """Same connectivity, new positions (normals are dropped)."""
        return Mesh(vertices, self.faces)

    def transformed(self, matrix) -> "Mesh":
        """Apply a 3x3 linear map to every vertex."""
        m = np.asarray(matrix, dtype=np.float64)
        return Mesh(self.vertices @ m.T, self.faces)

    def translated(self, offset) -> "Mesh":
        return Mesh(self.vertices + np.asarray(offset, dtype=np.float64), self.faces)

    def scaled(self, factor: float) -> "Mesh":
        return Mesh(self.vertices * float(factor), self.faces)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def equals(self, other: "Mesh") -> bool:
        return (
            self.vertices.shape == other.vertices.shape
            and self.faces.shape == other.faces.shape
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.faces, other.faces)
        )


@dataclass(frozen=True, eq=False)
class PointSet:
    """Surface samples with unit normals."""

    points: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        p = _frozen(np.reshape(self.points, (-1, 3)), np.float64)
        n = _frozen(np.reshape(self.normals, (-1, 3)), np.float64)
        if len(p) != len(n):
            raise ValueError("points and normals must have the same length")
        if len(n) and np.max(np.abs(np.linalg.norm(n, axis=1) - 1.0)) > 1e-6:
            raise ValueError("normals must have unit length")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "normals", n)

    def __len__(self):
        return len(self.points)


class SurfaceSample(NamedTuple):
    """A point sample plus the bookkeeping needed to differentiate it.

    ``face_index`` and ``bary`` are constants of the draw; positions and
    normals are functions of the mesh vertices.
    """

    face_index: np.ndarray
    bary: np.ndarray
    points: np.ndarray
    normals: np.ndarray

    def point_set(self) -> PointSet:
        return PointSet(self.points, self.normals)


# ---------------------------------------------------------------------------
# Geometry helpers


def face_cross(vertices, faces):
    v = np.asarray(vertices)
    f = np.asarray(faces)
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    return np.cross(b - a, c - a)


def face_areas(mesh: Mesh) -> np.ndarray:
    return 0.5 * np.linalg.norm(face_cross(mesh.vertices, mesh.faces), axis=1)


def face_normals(mesh: Mesh) -> np.ndarray:
    cr = face_cross(mesh.vertices, mesh.faces)
    norm = np.linalg.norm(cr, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(norm > 0, cr / norm, 0.0)


def unique_edges(faces) -> np.ndarray:
    """Sorted ``(E, 2)`` array of undirected edges, each listed once."""
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(f) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def boundary_edges(faces) -> np.ndarray:
    """Edges used by exactly one face."""
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq[counts == 1]


def adjacency_matrix(n_vertices: int, faces) -> sp.csr_matrix:
    """Symmetric 0/1 vertex adjacency built from mesh edges."""
    e = unique_edges(faces)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    data = np.ones(len(rows))
    return sp.csr_matrix((data, (rows, cols)), shape=(n_vertices, n_vertices))


def signed_volume(mesh: Mesh) -> float:
    v = mesh.vertices
    f = mesh.faces
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    return float(np.sum(np.einsum("ij,ij->i", a, np.cross(b, c))) / 6.0)


# ---------------------------------------------------------------------------
# OBJ


def _parse_index(token, n, lineno):
    head = token.split("/")[0]
    try:
        idx = int(head)
    except ValueError:
        raise ObjParseError(lineno, f"bad face index {token!r}") from None
    if idx == 0:
        raise ObjParseError(lineno, "face index 0 is invalid in OBJ")
    return idx - 1 if idx > 0 else n + idx


def load_obj(data) -> Mesh:
    """Parse an ASCII Wavefront OBJ (``v``, ``vn`` and ``f`` records).

    Polygons are fan-triangulated: ``f 1 2 3 4`` becomes ``(1,2,3), (1,3,4)``.
    Vertex normals are attached only when every vertex has one and faces
    reference them with the same index as the position.
    """
    if isinstance(data, (bytes, bytearray)):
        text = data.decode("ascii")
    else:
        text = str(data)
    verts, normals, faces = [], [], []
    normal_refs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag in ("v", "vn"):
            if len(parts) < 4:
                raise ObjParseError(lineno, f"'{tag}' needs 3 coordinates")
            try:
                xyz = [float(x) for x in parts[1:4]]
            except ValueError:
                raise ObjParseError(lineno, f"non-numeric coordinate in {raw!r}") from None
            (verts if tag == "v" else normals).append(xyz)
        elif tag == "f":
            if len(parts) < 4:
                raise ObjParseError(lineno, "face needs at least 3 vertices")
            idx = [_parse_index(t, len(verts), lineno) for t in parts[1:]]
            for t, i in zip(parts[1:], idx):
                sub = t.split("/")
                if len(sub) == 3 and sub[2]:
                    normal_refs[i] = _parse_index(sub[2], len(normals), lineno)
            for k in range(1, len(idx) - 1):
                faces.append((idx[0], idx[k], idx[k + 1]))
        # vt, o, g, s, usemtl, mtllib: not part of the supported subset; skipped
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if len(f) and (f.min() < 0 or f.max() >= len(v)):
        bad = int(np.argmax((f < 0).any(axis=1) | (f >= len(v)).any(axis=1)))
        raise MeshStructureError(
            f"face {bad} references a vertex outside 1..{len(v)}"
        )
    n = None
    if normals and len(normal_refs) == len(v) and all(
        normal_refs[i] == i for i in range(len(v))
    ):
        n = np.array(normals, dtype=np.float64)
    return Mesh(v, f, n)


def save_obj(mesh: Mesh) -> bytes:
    buf = io.StringIO()
    for x, y, z in mesh.vertices.tolist():
        buf.write(f"v {x!r} {y!r} {z!r}\n")
    if mesh.normals is not None:
        for x, y, z in mesh.normals.tolist():
            buf.write(f"vn {x!r} {y!r} {z!r}\n")
        for a, b, c in mesh.faces + 1:
            buf.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")
    else:
        for a, b, c in mesh.faces + 1:
            buf.write(f"f {a} {b} {c}\n")
    return buf.getvalue().encode("ascii")


# ---------------------------------------------------------------------------
# Sampling


def sample_surface(mesh: Mesh, n: int, seed: int) -> SurfaceSample:
    """Area-weighted uniform surface sampling with fixed per-draw constants."""
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = face_areas(mesh)
    total = areas.sum()
    if len(areas) == 0 or not total > 0:
        raise SamplingError("mesh has no face with positive area")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas / total)
    cdf[-1] = 1.0
    face_index = np.searchsorted(cdf, rng.random(n), side="right")
    # zero-area faces have an empty cdf interval so are never drawn
    face_index = np.minimum(face_index, len(areas) - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    tri = mesh.vertices[mesh.faces[face_index]]
    points = np.einsum("nk,nkd->nd", bary, tri)
    normals = face_normals(mesh)[face_index]
    return SurfaceSample(face_index, bary, points, normals)


def sample_points(mesh: Mesh, n: int, seed: int) -> PointSet:
    return sample_surface(mesh, n, seed).point_set()


# ---------------------------------------------------------------------------
# Occupancy


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Scalar field on a regular grid; cell ``(i, j, k)`` is centred at
    ``origin + (idx + 0.5) * cell_size``."""

    values: np.ndarray
    origin: np.ndarray
    cell_size: np.ndarray
    watertight: bool = field(default=True)

    def __post_init__(self):
        v = _frozen(self.values, np.float64)
        if v.ndim != 3 or min(v.shape) < 2:
            raise ValueError("occupancy grid needs resolution >= 2 on every axis")
        if v.size and (v.min() < 0 or v.max() > 1):
            raise ValueError("occupancy values must lie in [0, 1]")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "origin", _frozen(self.origin, np.float64))
        object.__setattr__(self, "cell_size", _frozen(self.cell_size, np.float64))

    @property
    def resolution(self) -> Tuple[int, int, int]:
        return tuple(int(r) for r in self.values.shape)

    def cell_centers(self) -> np.ndarray:
        axes = [
            self.origin[d] + (np.arange(self.values.shape[d]) + 0.5) * self.cell_size[d]
            for d in range(3)
        ]
        g = np.meshgrid(*axes, indexing="ij")
        return np.stack(g, axis=-1)

    def to_bytes(self) -> bytes:
        header = struct.pack(
            "<4sI3I3d3d", b"OCCG", 1, *self.resolution, *self.origin, *self.cell_size
        )
        return header + np.ascontiguousarray(self.values, dtype="<f4").tobytes(order="C")

    @classmethod
    def from_bytes(cls, blob: bytes) -> "OccupancyGrid":
        fmt = "<4sI3I3d3d"
        size = struct.calcsize(fmt)
        magic, version, rx, ry, rz, *rest = struct.unpack(fmt, blob[:size])
        if magic != b"OCCG" or version != 1:
            raise ValueError("not an occupancy grid blob")
        origin, cell = rest[:3], rest[3:]
        values = np.frombuffer(blob[size:], dtype="<f4").astype(np.float64)
        return cls(values.reshape(rx, ry, rz), np.array(origin), np.array(cell))


def _parity_inside(mesh: Mesh, points: np.ndarray, chunk: int = 1 << 18) -> np.ndarray:
    """Ray-crossing parity along RAY_DIRECTION for each query point.

    A shear maps the ray direction onto +x, turning the 3D ray cast into a
    2D point-in-triangle test in the (y, z) plane plus a depth comparison.
    """
    d = np.asarray(RAY_DIRECTION)
    shear = np.array([[1.0, 0.0, 0.0], [-d[1] / d[0], 1.0, 0.0], [-d[2] / d[0], 0.0, 1.0]])
    v = mesh.vertices @ shear.T
    q = np.asarray(points, dtype=np.float64).reshape(-1, 3) @ shear.T
    tri = v[mesh.faces]
    cross = np.zeros(len(q), dtype=np.int64)
    if len(q) == 0 or len(tri) == 0:
        return cross.astype(bool)

    # 2D bin hash on (y, z): each triangle only tests points in bins its box covers
    tmin = tri[:, :, 1:].min(axis=1)
    tmax = tri[:, :, 1:].max(axis=1)
    lo = np.minimum(q[:, 1:].min(axis=0), tmin.min(axis=0))
    hi = np.maximum(q[:, 1:].max(axis=0), tmax.max(axis=0))
    span = np.maximum(hi - lo, 1e-12)
    nb = int(np.clip(np.sqrt(len(q)) / 2, 1, 256))
    size = span / nb
    qb = np.clip(((q[:, 1:] - lo) / size).astype(np.int64), 0, nb - 1)
    key = qb[:, 0] * nb + qb[:, 1]
    order = np.argsort(key, kind="stable")
    starts = np.searchsorted(key[order], np.arange(nb * nb + 1), side="left")

    b0 = np.clip(((tmin - lo) / size).astype(np.int64), 0, nb - 1)
    b1 = np.clip(((tmax - lo) / size).astype(np.int64), 0, nb - 1)
    nrows = b1[:, 0] - b0[:, 0] + 1
    t_rows = np.repeat(np.arange(len(tri)), nrows)
    row = b0[t_rows, 0] + (np.arange(nrows.sum()) - np.repeat(np.cumsum(nrows) - nrows, nrows))
    r_lo = starts[row * nb + b0[t_rows, 1]]
    r_hi = starts[row * nb + b1[t_rows, 1] + 1]
    counts = r_hi - r_lo
    keep = counts > 0
    t_rows, r_lo, counts = t_rows[keep], r_lo[keep], counts[keep]

    start = 0
    while start < len(counts):
        csum = np.cumsum(counts[start:])
        stop = start + max(1, int(np.searchsorted(csum, chunk, side="right")))
        reps = counts[start:stop]
        t_idx = np.repeat(t_rows[start:stop], reps)
        offs = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
        p_idx = order[np.repeat(r_lo[start:stop], reps) + offs]
        start = stop
        a = tri[t_idx, 0]
        b = tri[t_idx, 1]
        c = tri[t_idx, 2]
        py = q[p_idx, 1]
        pz = q[p_idx, 2]

        def edge(u, w):
            return (w[:, 1] - u[:, 1]) * (pz - u[:, 2]) - (w[:, 2] - u[:, 2]) * (py - u[:, 1])

        e0, e1, e2 = edge(a, b), edge(b, c), edge(c, a)
        inside2d = ((e0 > 0) & (e1 > 0) & (e2 > 0)) | ((e0 < 0) & (e1 < 0) & (e2 < 0))
        if not inside2d.any():
            continue
        t_idx, p_idx = t_idx[inside2d], p_idx[inside2d]
        e0, e1, e2 = e0[inside2d], e1[inside2d], e2[inside2d]
        s = e0 + e1 + e2
        # barycentric weights: e1 -> a, e2 -> b, e0 -> c
        x_hit = (e1 * tri[t_idx, 0, 0] + e2 * tri[t_idx, 1, 0] + e0 * tri[t_idx, 2, 0]) / s
        hit = x_hit > q[p_idx, 0]
        np.add.at(cross, p_idx[hit], 1)
    return (cross % 2) == 1


def points_inside(mesh: Mesh, points) -> np.ndarray:
    """Boolean inside test by ray-crossing parity (meaningful for closed meshes)."""
    return _parity_inside(mesh, points)


def voxelize(mesh: Mesh, resolution: int, bounds=None) -> OccupancyGrid:
    """Binary occupancy of cell centres.

    The grid spans ``bounds`` (a ``(lo, hi)`` pair) or, by default, the mesh's
    axis-aligned bounding box. Open meshes still get the parity test, but a
    warning is emitted and ``watertight`` is False on the result.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    if bounds is None:
        lo, hi = mesh.bounds()
    else:
        lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    extent = hi - lo
    if np.any(extent <= 0):
        raise DegenerateError("mesh bounding box has zero extent")
    cell = extent / resolution
    watertight = len(boundary_edges(mesh.faces)) == 0
    if not watertight:
        warnings.warn("voxelize: mesh has boundary edges; parity test may be unreliable")
    grid = OccupancyGrid(np.zeros((resolution,) * 3), lo, cell, watertight)
    centers = grid.cell_centers().reshape(-1, 3)
    inside = _parity_inside(mesh, centers).reshape((resolution,) * 3)
    return OccupancyGrid(inside.astype(np.float64), lo, cell, watertight)


# ---------------------------------------------------------------------------
# Evaluation scale


def rescale_to_gt(pred: Mesh, gt: Mesh, target: float = 5.0) -> Tuple[Mesh, Mesh]:
    """Scale both meshes so the longest bounding-box edge of ``gt`` equals ``target``."""
    lo, hi = gt.bounds()
    longest = float(np.max(hi - lo)) if gt.n_vertices else 0.0
    if not longest > 0:
        raise DegenerateError("ground-truth bounding box has zero extent")
    s = target / longest
    return pred.scaled(s), gt.scaled(s)


def merge_meshes(meshes: Sequence[Mesh]) -> Mesh:
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += m.n_vertices
    return Mesh(np.concatenate(verts), np.concatenate(faces))


def radial_remesh(template: Mesh, target: Mesh, center=None) -> Mesh:
    """Move every template vertex onto ``target`` along the ray from ``center``.

    The result keeps the template's faces, so a dense template can stand in
    for a coarse target with a different vertex count. Each vertex lands on
    the farthest surface hit of its ray (the only hit for targets that are
    star-shaped around ``center``); rays that miss keep the vertex where it
    is. ``center`` defaults to the target's bounding-box centre, and the
    template is read relative to its own bounding-box centre.
    """
    lo, hi = target.bounds()
    c = 0.5 * (lo + hi) if center is None else np.asarray(center, dtype=np.float64)
    tlo, thi = template.bounds()
    d = template.vertices - 0.5 * (tlo + thi)
    tri = target.vertices[target.faces]
    a = tri[:, 0]
    e1 = tri[:, 1] - a
    e2 = tri[:, 2] - a
    out = template.vertices - 0.5 * (tlo + thi) + c
    for start in range(0, len(d), 1024):
        dd = d[start:start + 1024]
        # Moller-Trumbore against every face at once
        p = np.cross(dd[:, None, :], e2[None])
        det = np.einsum("fk,vfk->vf", e1, p)
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = c - a
        u = np.einsum("fk,vfk->vf", s, p) * inv
        q = np.cross(s, e1)
        v = np.einsum("vk,fk->vf", dd, q) * inv
        t = np.einsum("fk,fk->f", e2, q)[None] * inv
        hit = ok & (u >= -1e-9) & (v >= -1e-9) & (u + v <= 1 + 1e-9) & (t > 0)
        tmax = np.where(hit, t, -np.inf).max(axis=1)
        found = np.isfinite(tmax)
        out[start:start + 1024][found] = c + tmax[found, None] * dd[found]
    return Mesh(out, template.faces)
