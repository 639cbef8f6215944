"""Detection-style evaluation: box/mask IoU, F1@tau between meshes,
greedy matching, 101-point AP and the subset splits."""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .mesh import Mesh, rescale_to_gt, sample_points

KINDS = ("box", "mask", "mesh")
SPLITS = ("all", "small", "medium", "large", "slightly_occluded", "heavily_occluded", "short", "long")
SMALL_AREA = 32.0**2
LARGE_AREA = 96.0**2
HEAVY_OCCLUSION = 0.25
LONG_CLIP = 30
RECALL_LEVELS = np.linspace(0.0, 1.0, 101)


@dataclass
class Detection:
    box: Tuple[float, float, float, float]
    class_id: int
    score: float = 1.0
    mask: Optional[np.ndarray] = None
    mesh: Optional[Mesh] = None
    frame_id: Hashable = 0
    instance_id: Optional[Hashable] = None
    track_id: Optional[int] = None

    def __post_init__(self):
        x0, y0, x1, y1 = (float(b) for b in self.box)
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"invalid box {self.box}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        self.box = (x0, y0, x1, y1)


@dataclass
class GroundTruthObject:
    box: Tuple[float, float, float, float]
    class_id: int
    frame_id: Hashable
    clip_id: Hashable = 0
    instance_id: Optional[Hashable] = None
    mask: Optional[np.ndarray] = None
    mesh: Optional[Mesh] = None
    occlusion_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.occlusion_rate <= 1.0:
            raise ValueError("occlusion_rate must lie in [0, 1]")
        self.box = tuple(float(b) for b in self.box)


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    f1_threshold: float = 0.5
    tau: float = 0.3
    rescale_target: float = 5.0
    n_samples: int = 10000
    seed: int = 0
    splits: Tuple[str, ...] = SPLITS
    kinds: Tuple[str, ...] = KINDS
    clip_lengths: Optional[Dict[Hashable, int]] = None
    threads: int = 1


# ---------------------------------------------------------------------------
# Pairwise criteria


def box_area(b) -> float:
    return max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1])


def box_iou(a, b) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return float(inter / (box_area(a) + box_area(b) - inter))


def mask_iou(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def f1_at(pred: Mesh, gt: Mesh, tau: float = 0.3, n_samples: int = 10000, seed: int = 0):
    """Precision, recall and F-score of point samples within ``tau`` of the other mesh.

    Distances are point-to-point against the other mesh's samples; both meshes
    are sampled with the same seed. Inputs should already be rescaled.
    """
    p = sample_points(pred, n_samples, seed).points
    g = sample_points(gt, n_samples, seed).points
    d_p, _ = cKDTree(g).query(p, k=1)
    d_g, _ = cKDTree(p).query(g, k=1)
    precision = float(np.mean(d_p < tau))
    recall = float(np.mean(d_g < tau))
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


# ---------------------------------------------------------------------------
# Matching and AP


class _Criterion:
    """Caches pairwise criterion values (F1 in particular is expensive)."""

    def __init__(self, kind, config: EvalConfig):
        self.kind = kind
        self.config = config
        self.cache = {}

    def __call__(self, pi, pred, gi, gt) -> float:
        key = (pi, gi)
        if key in self.cache:
            return self.cache[key]
        if self.kind == "box":
            v = box_iou(pred.box, gt.box)
        elif self.kind == "mask":
            v = -1.0 if pred.mask is None or gt.mask is None else mask_iou(pred.mask, gt.mask)
        else:
            if pred.mesh is None or gt.mesh is None:
                v = -1.0
            else:
                c = self.config
                p, g = rescale_to_gt(pred.mesh, gt.mesh, c.rescale_target)
                v = f1_at(p, g, c.tau, c.n_samples, c.seed)[2]
        self.cache[key] = v
        return v

    @property
    def threshold(self):
        return self.config.f1_threshold if self.kind == "mesh" else self.config.iou_threshold


def match_predictions(preds: Sequence[Detection], gts: Sequence[GroundTruthObject], kind="box",
                      threshold=None, config: EvalConfig = EvalConfig(), criterion=None):
    """Greedy score-ordered matching within each (frame, category).

    Returns ``(pred_index, gt_index or None)`` for every prediction, ordered by
    descending score (ties keep input order). A prediction is a true positive
    when the criterion against the best still-unmatched gt of its class in its
    frame reaches ``threshold``; every gt is used at most once.
    """
    crit = criterion or _Criterion(kind, config)
    thr = crit.threshold if threshold is None else threshold
    by_key: Dict[tuple, List[int]] = {}
    for gi, g in enumerate(gts):
        by_key.setdefault((g.frame_id, g.class_id), []).append(gi)
    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    used = set()
    out = []
    for pi in order:
        p = preds[pi]
        best, best_gi = -np.inf, None
        for gi in by_key.get((p.frame_id, p.class_id), ()):
            if gi in used:
                continue
            v = crit(pi, p, gi, gts[gi])
            if v >= thr and v > best:
                best, best_gi = v, gi
        if best_gi is not None:
            used.add(best_gi)
        out.append((pi, best_gi))
    return out


def average_precision(matches: Sequence[Tuple[float, bool]], n_gt: int) -> float:
    """101-point interpolated AP over ``(score, is_tp)`` pairs; NaN when ``n_gt == 0``."""
    if n_gt == 0:
        return float("nan")
    return float(np.mean(pr_curve(matches, n_gt)[1]))


def pr_curve(matches, n_gt):
    """Recall levels and interpolated precision (max precision at recall >= level)."""
    if n_gt == 0 or not matches:
        return RECALL_LEVELS.tolist(), [0.0] * len(RECALL_LEVELS)
    scores = np.array([m[0] for m in matches], dtype=np.float64)
    tp = np.array([bool(m[1]) for m in matches])[np.argsort(-scores, kind="stable")]
    ctp, cfp = np.cumsum(tp), np.cumsum(~tp)
    recall, precision = ctp / n_gt, ctp / (ctp + cfp)
    # right-to-left running max gives the interpolated envelope
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_LEVELS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return RECALL_LEVELS.tolist(), sampled.tolist()


# ---------------------------------------------------------------------------
# Splits


def size_bucket(box) -> str:
    a = box_area(box)
    if a < SMALL_AREA:
        return "small"
    if a > LARGE_AREA:
        return "large"
    return "medium"


def occlusion_bucket(rate: float) -> str:
    return "heavily_occluded" if rate > HEAVY_OCCLUSION else "slightly_occluded"


def clip_bucket(length: int) -> str:
    return "long" if length > LONG_CLIP else "short"


def gt_buckets(gt: GroundTruthObject, clip_lengths) -> set:
    return {
        "all",
        size_bucket(gt.box),
        occlusion_bucket(gt.occlusion_rate),
        clip_bucket(clip_lengths.get(gt.clip_id, 0)),
    }


def unmatched_pred_buckets(pred: Detection, frame_clip, clip_lengths) -> set:
    """Splits an unmatched prediction counts against as a false positive.

    Size follows the predicted box and clip length follows the frame's clip.
    Occlusion is a ground-truth property, so an unmatched prediction is a
    false positive in both occlusion splits.
    """
    out = {"all", size_bucket(pred.box), "slightly_occluded", "heavily_occluded"}
    clip = frame_clip.get(pred.frame_id)
    if clip is not None:
        out.add(clip_bucket(clip_lengths.get(clip, 0)))
    else:
        out.update({"short", "long"})
    return out


# ---------------------------------------------------------------------------
# Report


@dataclass
class EvalReport:
    """AP values in [0, 1]; ``ap[split][kind]`` holds ``per_category`` and ``mean``.

    ``pr_curves[kind][category]`` is the interpolated precision at the 101
    recall levels 0, 0.01, ..., 1 on the ``all`` split.
    """

    ap: Dict[str, Dict[str, Dict]] = field(default_factory=dict)
    pr_curves: Dict[str, Dict[str, List[float]]] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    def mean(self, split="all", kind="box") -> float:
        return self.ap[split][kind]["mean"]

    def to_dict(self):
        def clean(x):
            if isinstance(x, float) and np.isnan(x):
                return None
            if isinstance(x, dict):
                return {str(k): clean(v) for k, v in x.items()}
            if isinstance(x, list):
                return [clean(v) for v in x]
            return x

        return clean({
            "ap": self.ap,
            "pr_curves": self.pr_curves,
            "recall_levels": RECALL_LEVELS.tolist(),
            "warnings": self.warnings,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self, name="meshtrace") -> str:
        """Two blocks of split x {box, mask, mesh} AP columns, in percent."""
        blocks = [
            ("all", "small", "medium", "large"),
            ("slightly_occluded", "heavily_occluded", "short", "long"),
        ]
        titles = {
            "all": "All", "small": "Small", "medium": "Medium", "large": "Large",
            "slightly_occluded": "Slightly Occ.", "heavily_occluded": "Heavily Occ.",
            "short": "Short Clips", "long": "Long Clips",
        }
        lines = []
        width = max(10, len(name))
        for block in blocks:
            block = [s for s in block if s in self.ap]
            if not block:
                continue
            head1 = " " * width + "".join(f" | {titles[s]:^26}" for s in block)
            head2 = f"{'%':<{width}}" + "".join(
                " | " + " ".join(f"{k:>8}" for k in ("AP^box", "AP^mask", "AP^mesh")) for _ in block
            )
            row = f"{name:<{width}}"
            for s in block:
                cells = []
                for k in KINDS:
                    v = self.ap[s].get(k, {}).get("mean", float("nan"))
                    cells.append(f"{'-':>8}" if v is None or np.isnan(v) else f"{100 * v:8.2f}")
                row += " | " + " ".join(cells)
            lines += [head1, head2, "-" * len(head2), row, ""]
        return "\n".join(lines).rstrip() + "\n"


def _nanmean(values):
    vals = [v for v in values if not np.isnan(v)]
    return float(np.mean(vals)) if vals else float("nan")


def evaluate(preds: Sequence[Detection], gts: Sequence[GroundTruthObject],
             config: EvalConfig = EvalConfig()) -> EvalReport:
    """AP^box / AP^mask / AP^mesh per category and split.

    Matching runs once per kind over all ground truths. In a split, ground
    truths outside it are dropped, predictions matched to them are ignored,
    and unmatched predictions count as false positives where
    :func:`unmatched_pred_buckets` places them.
    """
    report = EvalReport()
    categories = sorted({g.class_id for g in gts})
    known = set(categories)
    unknown = sorted({p.class_id for p in preds} - known)
    if unknown:
        msg = f"predictions use unknown categories {unknown}; counted as false positives"
        warnings.warn(msg)
        report.warnings.append(msg)

    frame_clip = {g.frame_id: g.clip_id for g in gts}
    if config.clip_lengths is not None:
        clip_lengths = dict(config.clip_lengths)
    else:
        frames_per_clip: Dict[Hashable, set] = {}
        for g in gts:
            frames_per_clip.setdefault(g.clip_id, set()).add(g.frame_id)
        clip_lengths = {c: len(f) for c, f in frames_per_clip.items()}
    gt_sets = [gt_buckets(g, clip_lengths) for g in gts]

    def run_kind(kind):
        # per-(frame, category) groups are independent; each is matched sequentially
        groups: Dict[tuple, List[int]] = {}
        for i, p in enumerate(preds):
            groups.setdefault((p.frame_id, p.class_id), []).append(i)
        gts_by_key: Dict[tuple, List[int]] = {}
        for gi, g in enumerate(gts):
            gts_by_key.setdefault((g.frame_id, g.class_id), []).append(gi)

        def match_group(key):
            idx = groups[key]
            sub_p = [preds[i] for i in idx]
            g_idx = gts_by_key.get(key, [])
            sub_g = [gts[i] for i in g_idx]
            local = _Criterion(kind, config)
            res = match_predictions(sub_p, sub_g, kind, config=config, criterion=local)
            return [(idx[pi], None if gi is None else g_idx[gi]) for pi, gi in res]

        keys = sorted(groups, key=lambda k: (str(k[0]), k[1]))
        if config.threads > 1:
            with ThreadPoolExecutor(config.threads) as ex:
                parts = list(ex.map(match_group, keys))
        else:
            parts = [match_group(k) for k in keys]
        match = {}
        for part in parts:
            match.update(dict(part))
        return match

    for kind in config.kinds:
        match = run_kind(kind)
        for split in config.splits:
            per_cat = {}
            for c in categories + unknown:
                entries = []
                for pi, p in enumerate(preds):
                    if p.class_id != c:
                        continue
                    gi = match[pi]
                    if gi is not None:
                        if split in gt_sets[gi]:
                            entries.append((p.score, True))
                    elif split in unmatched_pred_buckets(p, frame_clip, clip_lengths):
                        entries.append((p.score, False))
                n_gt = sum(1 for gi, g in enumerate(gts) if g.class_id == c and split in gt_sets[gi])
                per_cat[c] = average_precision(entries, n_gt)
                if split == "all":
                    report.pr_curves.setdefault(kind, {})[str(c)] = pr_curve(entries, n_gt)[1]
            report.ap.setdefault(split, {})[kind] = {
                "per_category": per_cat,
                "mean": _nanmean(per_cat.values()),
            }
    return report
