"""Checks shared by the unit tests and the acceptance suite."""

import hashlib
from pathlib import Path

import numpy as np

from meshtrace.cli import main
from meshtrace.losses import LossWeights, freeze, make_target, mesh_loss_target, point_terms, resample
from meshtrace.mesh import Mesh, unique_edges
from meshtrace.metrics import Detection, EvalConfig, GroundTruthObject, evaluate
from meshtrace.refine import RefineStageParams, refine_backward, refine_forward

from conftest import smooth_feature, toy_camera
from oracles import central_difference, max_relative_error, random_hull

H = 1e-4
TERMS = ("chamfer", "normal", "edge")


def random_stages(rng, n=3, offset_scale=0.05):
    """Stages with nonzero offset heads, so every parameter reaches the loss."""
    stages = [RefineStageParams.init(rng, 3) for _ in range(n)]
    for s in stages:
        s.out_w[...] = rng.normal(0, offset_scale, s.out_w.shape)
        s.out_b[...] = rng.normal(0, 0.01, 3)
    return stages


def frozen_terms(vertices, faces, target, frozen, edges):
    """Chamfer, normal and edge values on pinned samples, without any gradient work."""
    sample = resample(vertices, faces, frozen.face_index, frozen.bary)
    cham, norm, *_ = point_terms(sample, target, (frozen.nn_pq, frozen.nn_qp),
                                 (frozen.sign_pq, frozen.sign_qp))
    d = vertices[edges[:, 0]] - vertices[edges[:, 1]]
    return np.array([cham, norm, np.mean(np.einsum("ij,ij->i", d, d))])


def loss_check(seed, n_vertices=20):
    """Max relative error of each loss term's vertex gradient on a random hull."""
    v, f = random_hull(n_vertices, seed)
    target = make_target(Mesh(*random_hull(30, 1000 + seed)), 200, seed)
    fr = freeze(v, f, target, 150, seed)
    grads = {name: mesh_loss_target(v, f, target, 150, LossWeights(*w), frozen=fr).grad
             for name, w in zip(TERMS, np.eye(3))}
    x = v.copy()
    edges = unique_edges(f)
    num = {name: np.zeros_like(v) for name in TERMS}
    for idx in np.ndindex(v.shape):
        old = x[idx]
        vals = []
        for step in (H, -H):
            x[idx] = old + step
            vals.append(frozen_terms(x, f, target, fr, edges))
        x[idx] = old
        d = (vals[0] - vals[1]) / (2 * H)
        for name, g in zip(TERMS, d):
            num[name][idx] = g
    return {name: max_relative_error(grads[name], num[name]) for name in TERMS}


def pipeline_check(seed, n_param_entries=2, n_vertex_entries=None):
    """Analytic vs central-difference gradient of a 3-stage refined mesh loss.

    Returns the max relative error over reference-vertex coordinates (all of
    them, or ``n_vertex_entries`` random ones) and ``n_param_entries`` random
    entries of every parameter array. Nearest neighbours, normal-pair signs,
    ReLU masks, interpolation cells and border clamps are pinned at the base
    point so the differences stay on one smooth piece.
    """
    rng = np.random.default_rng(seed)
    cam = toy_camera()
    v, f = random_hull(20, seed)
    v = 0.5 * v
    feat = smooth_feature(seed)
    stages = random_stages(rng)
    target = make_target(Mesh(*random_hull(30, 500 + seed)), 300, seed)
    verts, caches, adj = refine_forward(feat, Mesh(v, f), cam, stages)
    loss_frozen = [freeze(vl, f, target, 200, seed + l) for l, vl in enumerate(verts[1:])]
    stage_frozen = [c.frozen() for c in caches]
    g_out = [mesh_loss_target(vl, f, target, 200, frozen=fr).grad for vl, fr in zip(verts[1:], loss_frozen)]
    g_v0, grads = refine_backward(g_out, caches, stages, adj)
    x = v.copy()
    edges = unique_edges(f)
    w = np.array([1.0, 0.1, 0.1])
    assert LossWeights() == LossWeights(*w)

    def loss():
        vs, _, _ = refine_forward(feat, Mesh(x, f), cam, stages, stage_frozen)
        return sum(w @ frozen_terms(vl, f, target, fr, edges) for vl, fr in zip(vs[1:], loss_frozen))

    idxs = list(np.ndindex(x.shape))
    if n_vertex_entries is not None:
        idxs = [idxs[i] for i in rng.choice(len(idxs), n_vertex_entries, replace=False)]
    ana, num = [], []
    for idx in idxs:
        ana.append(g_v0[idx])
        num.append(central_difference(loss, x, idx, H))
    for s, g in zip(stages, grads):
        arrs, garrs = s.arrays(), g.arrays()
        for name in arrs:
            for _ in range(n_param_entries):
                idx = tuple(rng.integers(d) for d in arrs[name].shape)
                ana.append(garrs[name][idx])
                num.append(central_difference(loss, arrs[name], idx, H))
    return max_relative_error(ana, num)


def random_detection_set(rng):
    """Up to 10 gts and 20 predictions over <= 3 frames and 3 classes, as plain tuples."""
    n_frames = int(rng.integers(1, 4))
    gts, preds = [], []
    for _ in range(int(rng.integers(1, 11))):
        x, y = rng.uniform(0, 50, 2)
        w, h = rng.uniform(5, 30, 2)
        gts.append((int(rng.integers(n_frames)), int(rng.integers(3)), (x, y, x + w, y + h)))
    for _ in range(int(rng.integers(0, 21))):
        if gts and rng.random() < 0.6:
            f, c, (x0, y0, x1, y1) = gts[int(rng.integers(len(gts)))]
            j = rng.normal(0, 3, 4)
            b = (x0 + j[0], y0 + j[1], max(x1 + j[2], x0 + j[0] + 1), max(y1 + j[3], y0 + j[1] + 1))
        else:
            f, c = int(rng.integers(n_frames)), int(rng.integers(3))
            x, y = rng.uniform(0, 50, 2)
            b = (x, y, x + rng.uniform(5, 30), y + rng.uniform(5, 30))
        # coarse scores so ties occur
        preds.append((f, c, float(np.round(rng.uniform(0.05, 1.0), 1)), b))
    return preds, gts


def library_ap(preds, gts):
    """Box AP of the tuple sets from :func:`random_detection_set` via ``evaluate``."""
    dets = [Detection(b, c, s, frame_id=f) for f, c, s, b in preds]
    objs = [GroundTruthObject(b, c, f) for f, c, b in gts]
    cfg = EvalConfig(kinds=("box",), splits=("all",))
    return evaluate(dets, objs, cfg).mean("all", "box")


def run(*argv):
    """Run the CLI in-process and return its exit code."""
    return main([str(a) for a in argv])


def cli_chain(root: Path, threads: int, seed: int = 0, stage1_steps: int = 3, stage2_steps: int = 2):
    """Every subcommand once, on a small drifting-cube clip.

    Returns ``{relative path: sha256}`` for every file written under ``root``.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    spec = root / "spec.json"
    spec.write_text('{"suite": "drifting", "length": 4}')
    data = root / "data"
    t = ("--threads", threads, "--seed", seed)
    steps = [
        ("gen", spec, "--out", data, *t),
        ("track", data / "clips" / "drift" / "detections.jsonl", "--out", root / "tracked.jsonl", *t),
        ("meanshape", data, "--class", 0, "--resolution", 16, "--faces", 300, "--out", root / "mean.obj", *t),
        ("train", data, "--stage1-steps", stage1_steps, "--stage2-steps", stage2_steps, "--n-samples", 200,
         "--resolution", 16, "--mean-faces", 300, "--log", root / "train.csv", "--out", root / "model.mtck", *t),
        ("infer", data, "--checkpoint", root / "model.mtck", "--out", root / "preds", *t),
        ("eval", root / "preds", data, "--samples", 2000, "--out", root / "report.json", *t),
    ]
    for argv in steps:
        code = run(*argv)
        if code != 0:
            raise AssertionError(f"{argv[0]} exited with {code}")
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}
