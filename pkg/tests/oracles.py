"""Independent reference implementations used as test oracles.

Nothing here imports the code under test except plain data containers, so
agreement between an oracle and the library is evidence, not tautology.
"""

import itertools

import numpy as np
from scipy.spatial import ConvexHull


# ---------------------------------------------------------------------------
# Assignment


def brute_assignment(scores):
    """Best total over every injective partial map rows -> columns.

    Each row either takes an unused real column or stays unmatched (score 0).
    All ``(m + 1) ** n`` choices are laid out as one integer array and the
    non-injective ones masked out, so only use it on small matrices.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n, m = scores.shape
    if n == 0:
        return 0.0
    # column m stands for "unmatched" and scores 0
    padded = np.concatenate([scores, np.zeros((n, 1))], axis=1)
    choice = np.stack(np.meshgrid(*[np.arange(m + 1)] * n, indexing="ij"), axis=-1).reshape(-1, n)
    ok = np.ones(len(choice), dtype=bool)
    for i, j in itertools.combinations(range(n), 2):
        ok &= (choice[:, i] != choice[:, j]) | (choice[:, i] == m)
    totals = np.zeros(int(ok.sum()))
    for i in range(n):
        totals = totals + padded[i, choice[ok, i]]
    return float(totals.max())


# ---------------------------------------------------------------------------
# AP


def _iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area = lambda r: (r[2] - r[0]) * (r[3] - r[1])
    union = area(a) + area(b) - inter
    return inter / union if union > 0 else 0.0


def brute_ap(preds, gts, iou_threshold=0.5):
    """Mean 101-point COCO AP over categories, box criterion, single split.

    ``preds`` are ``(frame, cls, score, box)``; ``gts`` are ``(frame, cls, box)``.
    Greedy matching visits predictions by descending score (input order on
    ties); each picks the unused same-frame same-class gt of highest IoU
    (first one on ties) provided IoU >= threshold. Categories without
    ground truth contribute nothing to the mean.
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i][2])
    used = set()
    tp = {}
    for i in order:
        f, c, _, b = preds[i]
        best, best_j = -1.0, None
        for j, (gf, gc, gb) in enumerate(gts):
            if j in used or gf != f or gc != c:
                continue
            v = _iou(b, gb)
            if v >= iou_threshold and v > best:
                best, best_j = v, j
        if best_j is not None:
            used.add(best_j)
        tp[i] = best_j is not None

    aps = []
    for c in sorted({g[1] for g in gts}):
        n_gt = sum(1 for g in gts if g[1] == c)
        mine = [i for i in order if preds[i][1] == c]
        precisions, recalls = [], []
        hits = 0
        for k, i in enumerate(mine, start=1):
            hits += tp[i]
            precisions.append(hits / k)
            recalls.append(hits / n_gt)
        total = 0.0
        for r in np.linspace(0.0, 1.0, 101):
            cands = [p for p, rc in zip(precisions, recalls) if rc >= r]
            total += max(cands) if cands else 0.0
        aps.append(total / 101)
    return float(np.mean(aps)) if aps else float("nan")


# ---------------------------------------------------------------------------
# Graph convolution


def dense_graph_conv(x, faces, w0, w1, bias):
    """``x_i W0 + (sum_{j in N(i)} x_j) W1 + b`` with explicit neighbour loops (no activation)."""
    n = len(x)
    nbrs = [set() for _ in range(n)]
    for f in faces:
        for a in f:
            for b in f:
                if a != b:
                    nbrs[a].add(b)
    out = np.zeros((n, w0.shape[1]))
    for i in range(n):
        agg = np.zeros(x.shape[1])
        for j in nbrs[i]:
            agg += x[j]
        out[i] = x[i] @ w0 + agg @ w1 + bias
    return out


# ---------------------------------------------------------------------------
# Finite differences


def central_difference(f, x, index, h=1e-4):
    """Central difference of scalar ``f`` w.r.t. entry ``index`` of array ``x`` (restored afterwards)."""
    old = x[index]
    x[index] = old + h
    fp = f()
    x[index] = old - h
    fm = f()
    x[index] = old
    return (fp - fm) / (2.0 * h)


def max_relative_error(analytic, numeric, floor_frac=1e-3):
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over entries.

    ``floor`` is ``floor_frac`` times the largest gradient magnitude in the
    check, so entries that are zero up to rounding do not blow up the ratio.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-12)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor_frac * scale)
    return float(np.max(np.abs(a - n) / denom))


# ---------------------------------------------------------------------------
# Fixtures


def random_hull(n_vertices, seed, jitter=0.15):
    """Closed outward-oriented triangle mesh on ``n_vertices`` perturbed sphere points.

    Returns ``(vertices, faces)``. Points start from a randomly rotated
    Fibonacci sphere, so the angular spacing is even and small jitter keeps
    every point a hull vertex; draws that lose a vertex are retried.
    """
    rng = np.random.default_rng(seed)
    k = np.arange(n_vertices) + 0.5
    z = 1.0 - 2.0 * k / n_vertices
    phi = np.pi * (1.0 + 5 ** 0.5) * k
    r = np.sqrt(1.0 - z * z)
    base = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    while True:
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        d = base @ q.T + 0.1 * rng.normal(size=base.shape) / np.sqrt(n_vertices)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        v = d * (1.0 + jitter * rng.uniform(-1, 1, (n_vertices, 1)))
        hull = ConvexHull(v)
        if len(hull.vertices) == n_vertices:
            break
    faces = hull.simplices.copy()
    tri = v[faces]
    outward = np.einsum("ij,ij->i", np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), tri[:, 0] - v.mean(axis=0))
    faces[outward < 0] = faces[outward < 0][:, [0, 2, 1]]
    return v, faces
