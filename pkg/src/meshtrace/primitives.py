"""Closed, outward-oriented primitive meshes used by fixtures and tests."""

import numpy as np

from .mesh import Mesh


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0), subdivisions: int = 1) -> Mesh:
    """Axis-aligned box with each face split into ``subdivisions**2`` quads."""
    n = int(subdivisions)
    size = np.asarray(size, dtype=np.float64)
    t = np.linspace(-0.5, 0.5, n + 1)
    verts, faces = [], []
    index = {}

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_ax, v_ax = [a for a in range(3) if a != axis]
            grid = np.empty((n + 1, n + 1), dtype=np.int64)
            for i, u in enumerate(t):
                for j, v in enumerate(t):
                    p = np.zeros(3)
                    p[axis] = 0.5 * sign
                    p[u_ax] = u
                    p[v_ax] = v
                    grid[i, j] = vid(p)
            for i in range(n):
                for j in range(n):
                    a, b, c, d = grid[i, j], grid[i + 1, j], grid[i + 1, j + 1], grid[i, j + 1]
                    pa, pb, pc = verts[a], verts[b], verts[c]
                    if np.cross(pb - pa, pc - pa)[axis] * sign > 0:
                        faces += [(a, b, c), (a, c, d)]
                    else:
                        faces += [(a, c, b), (a, d, c)]
    v = np.array(verts) * size + np.asarray(center, dtype=np.float64)
    f = np.array(faces, dtype=np.int64)
    return _orient_outward(v, f)


def icosphere(radius: float = 1.0, subdivisions: int = 2, center=(0.0, 0.0, 0.0)) -> Mesh:
    phi = (1 + 5 ** 0.5) / 2
    v = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    f = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    faces = list(f)
    for _ in range(int(subdivisions)):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = nf
    vv = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return _orient_outward(vv, np.array(faces, dtype=np.int64))


def cylinder(radius: float = 0.5, height: float = 1.0, segments: int = 24, rings: int = 4) -> Mesh:
    """Capped cylinder along the y axis, centred at the origin."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ys = np.linspace(-height / 2, height / 2, rings + 1)
    verts = []
    for y in ys:
        for a in ang:
            verts.append((radius * np.cos(a), y, radius * np.sin(a)))
    faces = []
    for r in range(rings):
        for s in range(segments):
            a = r * segments + s
            b = r * segments + (s + 1) % segments
            c = (r + 1) * segments + (s + 1) % segments
            d = (r + 1) * segments + s
            faces += [(a, b, c), (a, c, d)]
    bottom = len(verts)
    verts.append((0.0, -height / 2, 0.0))
    top = len(verts)
    verts.append((0.0, height / 2, 0.0))
    last = rings * segments
    for s in range(segments):
        faces.append((bottom, (s + 1) % segments, s))
        faces.append((top, last + s, last + (s + 1) % segments))
    return _orient_outward(np.array(verts), np.array(faces, dtype=np.int64))


def _orient_outward(v, f) -> Mesh:
    """Flip every face if the mesh encloses negative volume.

    Assumes consistent winding, which every builder above produces.
    """
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    c0 = v.mean(axis=0)
    vol = np.sum(np.einsum("ij,ij->i", a - c0, np.cross(b - c0, c - c0)))
    if vol < 0:
        f = f[:, ::-1].copy()
    return Mesh(v, f)
