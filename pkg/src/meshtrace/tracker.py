"""Frame-to-frame association: IoU-minus-class-loss scores, an exact
assignment with a no-match option, an IoU gate, and stable track ids."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, List, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .metrics import Detection, box_iou

IOU_GATE = 0.5


class _NoMatch:
    """Token standing in for 'no object in the previous frame'."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NO_MATCH"

    def __bool__(self):
        return False


NO_MATCH = _NoMatch()


@dataclass(frozen=True)
class AssignmentMatrix:
    """``cols[i]`` is the previous-frame index for current object ``i``, or -1
    when ``i`` takes a dummy (no-match) column."""

    cols: tuple
    n_prev: int
    total: float

    @property
    def n_curr(self) -> int:
        return len(self.cols)

    @property
    def matrix(self) -> np.ndarray:
        """Binary ``n_curr x n_prev`` matrix over the real columns only."""
        m = np.zeros((self.n_curr, self.n_prev), dtype=np.int64)
        for i, j in enumerate(self.cols):
            if j >= 0:
                m[i, j] = 1
        return m


def score_matrix(curr: Sequence[Detection], prev: Sequence[Detection]) -> np.ndarray:
    """``IoU(b_i, b_j) - [c_i != c_j]`` for every current/previous pair."""
    s = np.zeros((len(curr), len(prev)))
    for i, a in enumerate(curr):
        for j, b in enumerate(prev):
            s[i, j] = box_iou(a.box, b.box) - (0.0 if a.class_id == b.class_id else 1.0)
    return s


def _best_total(scores: np.ndarray) -> float:
    """Optimal total with a zero-score dummy column available to every row."""
    n, m = scores.shape
    if n == 0:
        return 0.0
    aug = np.concatenate([scores, np.zeros((n, n))], axis=1)
    r, c = linear_sum_assignment(aug, maximize=True)
    return float(sum(aug[i, j] for i, j in zip(r, c)))


def solve_assignment(scores, tol: float = 1e-12) -> AssignmentMatrix:
    """Globally optimal assignment maximizing the summed score.

    Every row must take exactly one column; real columns are used at most
    once and ``n_curr`` dummy columns of score 0 provide the no-match option.
    Among optimal assignments the lexicographically smallest one (row by row,
    real columns before the dummy) is returned.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("scores must be a 2D matrix")
    n, m = scores.shape
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    best = _best_total(scores)
    free_rows = list(range(n))
    free_cols = list(range(m))
    fixed = 0.0
    cols = []
    for i in range(n):
        free_rows.remove(i)
        chosen = -1
        for j in free_cols + [-1]:
            gain = scores[i, j] if j >= 0 else 0.0
            rest_cols = [c for c in free_cols if c != j]
            rest = _best_total(scores[np.ix_(free_rows, rest_cols)]) if free_rows else 0.0
            if fixed + gain + rest >= best - tol * max(1.0, abs(best)):
                chosen = j
                break
        if chosen >= 0:
            free_cols.remove(chosen)
            fixed += scores[i, chosen]
        cols.append(chosen)
    total = 0.0
    for i, j in enumerate(cols):
        if j >= 0:
            total += scores[i, j]
    return AssignmentMatrix(tuple(cols), m, float(total))


def gate_and_align(assignment: AssignmentMatrix, curr: Sequence[Detection],
                   prev: Sequence, gate: float = IOU_GATE) -> list:
    """Previous object per current object, or ``NO_MATCH`` when unassigned or IoU <= gate."""
    out = []
    for i, j in enumerate(assignment.cols):
        if j >= 0 and box_iou(curr[i].box, prev[j].box) > gate:
            out.append(prev[j])
        else:
            out.append(NO_MATCH)
    return out


def associate(curr: Sequence[Detection], prev: Sequence[Detection], gate: float = IOU_GATE) -> list:
    """Score, solve and gate in one call."""
    if not curr:
        return []
    a = solve_assignment(score_matrix(curr, prev))
    return gate_and_align(a, curr, prev, gate)


def track_clip(frames: Sequence[Sequence[Detection]], shot_transitions: Iterable[int] = (),
               gate: float = IOU_GATE) -> List[List[Detection]]:
    """Annotate each frame's detections with ``track_id``.

    Gated matches inherit the previous frame's id, everything else starts a
    fresh id. At a shot-transition frame index no matching is attempted.
    Memory is one frame deep.
    """
    shots = set(int(s) for s in shot_transitions)
    next_id = 0
    out: List[List[Detection]] = []
    prev: List[Detection] = []
    for t, dets in enumerate(frames):
        dets = list(dets)
        links = associate(dets, prev, gate) if (t > 0 and t not in shots and prev) else [NO_MATCH] * len(dets)
        tracked = []
        for d, link in zip(dets, links):
            if link is NO_MATCH:
                tid = next_id
                next_id += 1
            else:
                tid = link.track_id
            tracked.append(replace(d, track_id=tid))
        out.append(tracked)
        prev = tracked
    return out
