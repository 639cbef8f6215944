"""Quadric-error edge-collapse simplification (Garland & Heckbert style).

Boundary edges get an extra quadric of the plane through the edge and
perpendicular to its face, scaled by ``boundary_penalty``, so open borders
are preserved. Collapses that would break the edge link condition or flip a
neighbouring face are rejected.
"""

import heapq

import numpy as np

from .mesh import Mesh


def _plane_quadrics(v, f):
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    cr = np.cross(b - a, c - a)
    area2 = np.linalg.norm(cr, axis=1)
    ok = area2 > 0
    n = np.zeros_like(cr)
    n[ok] = cr[ok] / area2[ok, None]
    d = -np.einsum("ij,ij->i", n, a)
    p = np.concatenate([n, d[:, None]], axis=1)
    # area weighting keeps slivers from dominating
    return 0.5 * area2[:, None, None] * np.einsum("ni,nj->nij", p, p)


def _cross(a, b):
    return np.stack(
        [
            a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1],
            a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2],
            a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0],
        ],
        axis=1,
    )


def simplify(mesh: Mesh, target_faces: int, boundary_penalty: float = 1e3) -> Mesh:
    """Collapse edges in order of quadric error until ``n_faces <= target_faces``."""
    v = np.array(mesh.vertices, dtype=np.float64)
    faces = np.array(mesh.faces, dtype=np.int64)
    n_faces = len(faces)
    if n_faces <= target_faces:
        return mesh

    fq = _plane_quadrics(v, faces)
    Q = np.zeros((len(v), 4, 4))
    for k in range(3):
        np.add.at(Q, faces[:, k], fq)

    # boundary edges: perpendicular constraint planes
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    owner = np.tile(np.arange(n_faces), 3)
    es = np.sort(e, axis=1)
    uniq, inv, counts = np.unique(es, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    for idx in np.nonzero(counts[inv] == 1)[0]:
        i, j = e[idx]
        fa = faces[owner[idx]]
        fn = np.cross(v[fa[1]] - v[fa[0]], v[fa[2]] - v[fa[0]])
        direction = v[j] - v[i]
        n = np.cross(direction, fn)
        norm = np.linalg.norm(n)
        if norm == 0:
            continue
        n /= norm
        p = np.append(n, -n @ v[i])
        K = boundary_penalty * np.outer(p, p) * (direction @ direction)
        Q[i] += K
        Q[j] += K

    alive = np.ones(n_faces, dtype=bool)
    vert_faces = [set() for _ in range(len(v))]
    for fi, (a, b, c) in enumerate(faces):
        vert_faces[a].add(fi)
        vert_faces[b].add(fi)
        vert_faces[c].add(fi)
    version = np.zeros(len(v), dtype=np.int64)
    removed = np.zeros(len(v), dtype=bool)

    def neighbours(i):
        out = set()
        for fi in vert_faces[i]:
            out.update(faces[fi])
        out.discard(i)
        return out

    def costs(I, J):
        q = Q[I] + Q[J]
        vi, vj = v[I], v[J]
        mid = 0.5 * (vi + vj)
        A = q[:, :3, :3]
        bvec = -q[:, :3, 3]
        det = np.linalg.det(A)
        ok = np.abs(det) > 1e-10
        x = np.repeat(mid[:, None, :], 3, axis=1)
        x[:, 0], x[:, 1] = vi, vj
        if ok.any():
            sol = np.linalg.solve(A[ok], bvec[ok][:, :, None])[:, :, 0]
            span = np.linalg.norm(vi[ok] - vj[ok], axis=1)
            # reject far-flung optima from near-singular systems
            near = np.linalg.norm(sol - mid[ok], axis=1) <= 2.0 * span + 1e-12
            idx = np.nonzero(ok)[0][near]
            x[idx, :] = sol[near][:, None, :]
        h = np.concatenate([x, np.ones(x.shape[:2] + (1,))], axis=2)
        err = np.einsum("nci,nij,ncj->nc", h, q, h)
        best = np.argmin(err, axis=1)
        rows = np.arange(len(I))
        return np.maximum(err[rows, best], 0.0), x[rows, best]

    heap = []
    c0, x0 = costs(uniq[:, 0], uniq[:, 1])
    for (i, j), c, x in zip(uniq.tolist(), c0.tolist(), x0):
        heap.append((c, i, j, 0, 0, x))
    heapq.heapify(heap)

    def flips(i, j, x):
        around = [fi for fi in (vert_faces[i] | vert_faces[j])
                  if not (i in faces[fi] and j in faces[fi])]
        if not around:
            return False
        f = faces[around]
        p = v[f]
        old = _cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        moved = (f == i) | (f == j)
        p[moved] = x
        new = _cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        nn = np.sqrt(np.einsum("ij,ij->i", new, new))
        no = np.sqrt(np.einsum("ij,ij->i", old, old))
        bad = (nn <= 1e-14 * np.maximum(no, 1e-300)) | (
            np.einsum("ij,ij->i", new, old) <= 0.2 * nn * no
        )
        return bool(bad.any())

    while n_faces > target_faces and heap:
        c, i, j, vi, vj, x = heapq.heappop(heap)
        if removed[i] or removed[j] or version[i] != vi or version[j] != vj:
            continue
        shared = vert_faces[i] & vert_faces[j]
        if not shared:
            continue
        if len(neighbours(i) & neighbours(j)) != len(shared):
            continue
        if flips(i, j, x):
            continue
        # collapse j into i
        v[i] = x
        Q[i] = Q[i] + Q[j]
        for fi in shared:
            alive[fi] = False
            for k in faces[fi]:
                vert_faces[k].discard(fi)
            n_faces -= 1
        for fi in vert_faces[j]:
            f = faces[fi]
            f[f == j] = i
            vert_faces[i].add(fi)
        vert_faces[j] = set()
        removed[j] = True
        # only edges touching i changed cost; stale heap entries fail the version check
        version[i] += 1
        nb = sorted(neighbours(i))
        if nb:
            I = np.minimum(i, nb)
            J = np.maximum(i, nb)
            c2, x2 = costs(I, J)
            for a_, b_, cc, xx in zip(I.tolist(), J.tolist(), c2.tolist(), x2):
                heapq.heappush(heap, (cc, a_, b_, int(version[a_]), int(version[b_]), xx))

    keep = faces[alive]
    used = np.unique(keep)
    remap = -np.ones(len(v), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return Mesh(v[used], remap[keep])
