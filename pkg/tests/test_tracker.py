import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from meshtrace.metrics import Detection
from meshtrace.tracker import NO_MATCH, associate, score_matrix, solve_assignment, track_clip

from oracles import brute_assignment


def det(x, cls=0, y=0.0, w=10.0):
    return Detection((x, y, x + w, y + w), cls)


def test_score_matrix_penalizes_class_mismatch():
    s = score_matrix([det(0), det(0, cls=1)], [det(0)])
    np.testing.assert_allclose(s, [[1.0], [0.0]])


def test_no_match_token():
    assert not NO_MATCH
    assert repr(NO_MATCH) == "NO_MATCH"


def test_negative_scores_prefer_dummy():
    a = solve_assignment([[-0.5, -0.2]])
    assert a.cols == (-1,) and a.total == 0.0


def test_rectangular_and_empty():
    a = solve_assignment(np.zeros((0, 3)))
    assert a.cols == () and a.total == 0.0
    a = solve_assignment([[0.9], [0.8], [0.7]])
    assert sorted(a.cols) == [-1, -1, 0] and a.cols[0] == 0
    assert a.matrix.sum() == 1


def test_lexicographic_tie_break():
    # both permutations give 1.0; the smallest column goes to row 0
    assert solve_assignment([[0.5, 0.5], [0.5, 0.5]]).cols == (0, 1)
    # zero score ties between a real column and the dummy: real column wins
    assert solve_assignment([[0.0]]).cols == (0,)


def test_invalid_scores():
    with pytest.raises(ValueError):
        solve_assignment([[np.nan]])
    with pytest.raises(ValueError):
        solve_assignment([1.0, 2.0])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 5), st.integers(0, 5)),
              elements=st.floats(-1.0, 1.0, allow_nan=False, width=32)))
def test_total_matches_enumeration(scores):
    a = solve_assignment(scores)
    assert a.total == pytest.approx(brute_assignment(scores), abs=1e-12)
    real = [c for c in a.cols if c >= 0]
    assert len(real) == len(set(real))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 4).map(lambda n: (n, n)),
              elements=st.floats(0.125, 1.0, width=32)),
       st.floats(0.0, 3.0))
def test_constant_shift_on_square_positive_scores(scores, c):
    # with strictly positive scores every row takes a real column, so adding c >= 0
    # shifts every feasible total by n * c and cannot change the optimum
    a = solve_assignment(scores)
    b = solve_assignment(scores + c)
    assert a.total + len(scores) * c == pytest.approx(b.total, abs=1e-9)
    assert brute_assignment(scores + c) == pytest.approx(b.total, abs=1e-9)


def test_gate_is_strict():
    prev = [det(0)]
    prev[0].track_id = 3
    # IoU exactly 0.5 with equal-size boxes: overlap 2/3 of the width
    shifted = det(10 / 3)
    links = associate([shifted], prev, gate=0.5)
    iou = score_matrix([shifted], prev)[0, 0]
    assert (links[0] is NO_MATCH) == (iou <= 0.5)
    assert associate([det(1)], prev)[0] is prev[0]


def test_track_clip_ids_and_shot_reset():
    frames = [[det(0), det(50)], [det(51), det(1)], [det(2), det(52)], [det(3), det(53)]]
    out = track_clip(frames)
    assert [d.track_id for d in out[0]] == [0, 1]
    assert [d.track_id for d in out[1]] == [1, 0]
    assert [d.track_id for d in out[3]] == [0, 1]
    out = track_clip(frames, shot_transitions=[2])
    assert [d.track_id for d in out[2]] == [2, 3]
    assert [d.track_id for d in out[3]] == [2, 3]


def test_track_clip_new_objects_and_disappearance():
    frames = [[det(0)], [], [det(0)], [det(0), det(70)]]
    out = track_clip(frames)
    # memory is one frame deep: after an empty frame the object gets a new id
    assert out[0][0].track_id == 0
    assert out[2][0].track_id == 1
    assert [d.track_id for d in out[3]] == [1, 2]
