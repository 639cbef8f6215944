import json
import math

import numpy as np
import numpy.testing as npt
import pytest

from meshtrace.mesh import Mesh
from meshtrace.metrics import (
    RECALL_LEVELS, Detection, EvalConfig, GroundTruthObject, average_precision, box_iou, evaluate,
    f1_at, mask_iou, match_predictions, pr_curve,
)
from meshtrace.primitives import box, icosphere

from helpers import library_ap, random_detection_set
from oracles import brute_ap


def test_box_iou_values():
    assert box_iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert box_iou((0, 0, 2, 2), (2, 0, 4, 2)) == 0.0
    npt.assert_allclose(box_iou((0, 0, 2, 2), (1, 0, 3, 2)), 1 / 3)


def test_mask_iou():
    a = np.zeros((4, 4), bool)
    b = np.zeros((4, 4), bool)
    a[:2] = True
    b[1:3] = True
    npt.assert_allclose(mask_iou(a, b), 1 / 3)
    assert mask_iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0
    with pytest.raises(ValueError):
        mask_iou(a, np.zeros((3, 3)))


def test_detection_validation():
    with pytest.raises(ValueError):
        Detection((0, 0, 0, 1), 0)
    with pytest.raises(ValueError):
        Detection((0, 0, 1, 1), 0, score=1.5)
    with pytest.raises(ValueError):
        GroundTruthObject((0, 0, 1, 1), 0, 0, occlusion_rate=1.3)


def test_average_precision_simple_cases():
    assert average_precision([(0.9, True), (0.8, True)], 2) == 1.0
    assert math.isnan(average_precision([(0.9, False)], 0))
    # one hit at rank 2 of 2 gts: precision 1/2 up to recall 1/2, then nothing
    npt.assert_allclose(average_precision([(0.9, False), (0.8, True)], 2), 0.5 * 51 / 101)
    levels, prec = pr_curve([], 3)
    assert len(levels) == 101 and max(prec) == 0.0


def test_f1_identical_and_far():
    m = icosphere(1.0, 2)
    assert f1_at(m, m, 0.3, 2000, 0) == (1.0, 1.0, 1.0)
    assert f1_at(m, m.translated((10, 0, 0)), 0.3, 2000, 0)[2] == 0.0


def test_f1_threshold_sides():
    # same-seed samples of two parallel squares pair up at distance 0.25
    sq = Mesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])
    lifted = sq.translated((0, 0, 0.25))
    assert f1_at(sq, lifted, 0.25 * (1 - 1e-6), 500, 0) == (0.0, 0.0, 0.0)
    assert f1_at(sq, lifted, 0.25 * (1 + 1e-6), 500, 0) == (1.0, 1.0, 1.0)


def test_match_greedy_by_score():
    gts = [GroundTruthObject((0, 0, 10, 10), 0, "f")]
    preds = [Detection((0, 0, 10, 9), 0, 0.5, frame_id="f"), Detection((0, 0, 10, 8), 0, 0.9, frame_id="f")]
    m = match_predictions(preds, gts, "box")
    # higher-score prediction (index 1) comes first and takes the only gt
    assert m == [(1, 0), (0, None)]


def test_match_respects_class_and_frame():
    gts = [GroundTruthObject((0, 0, 10, 10), 0, "f")]
    preds = [Detection((0, 0, 10, 10), 1, 0.9, frame_id="f"), Detection((0, 0, 10, 10), 0, 0.8, frame_id="g")]
    assert match_predictions(preds, gts, "box") == [(0, None), (1, None)]


@pytest.mark.filterwarnings("ignore:predictions use unknown categories")
def test_evaluate_matches_brute_force_sample():
    rng = np.random.default_rng(42)
    for _ in range(30):
        preds, gts = random_detection_set(rng)
        assert abs(library_ap(preds, gts) - brute_ap(preds, gts)) < 1e-9


def test_unknown_category_warns():
    gts = [GroundTruthObject((0, 0, 10, 10), 0, "f")]
    preds = [Detection((0, 0, 10, 10), 0, 0.9, frame_id="f"), Detection((0, 0, 10, 10), 7, 0.8, frame_id="f")]
    with pytest.warns(UserWarning):
        rep = evaluate(preds, gts, EvalConfig(kinds=("box",)))
    assert rep.mean("all", "box") == 1.0
    assert rep.warnings


def test_splits_route_ground_truth():
    small = GroundTruthObject((0, 0, 10, 10), 0, "f", clip_id="c", occlusion_rate=0.5)
    large = GroundTruthObject((0, 0, 100, 100), 0, "f", clip_id="c", occlusion_rate=0.0)
    preds = [Detection((0, 0, 100, 100), 0, 0.9, frame_id="f")]
    rep = evaluate(preds, [small, large], EvalConfig(kinds=("box",)))
    assert rep.mean("large", "box") == 1.0
    assert rep.mean("small", "box") == 0.0
    assert rep.mean("slightly_occluded", "box") == 1.0
    assert rep.mean("heavily_occluded", "box") == 0.0
    assert math.isnan(rep.mean("medium", "box"))
    assert math.isnan(rep.mean("long", "box"))


def test_mesh_ap_uses_rescaled_f1():
    # a 0.1-unit cube and its 2x copy are within 0.3 everywhere at the raw
    # scale, but not once the ground truth is rescaled to a 5-unit box
    gt_mesh = box((0.1, 0.1, 0.1))
    pred_mesh = gt_mesh.scaled(2.0)
    assert f1_at(pred_mesh, gt_mesh, 0.3, 2000, 0)[2] == 1.0
    gts = [GroundTruthObject((0, 0, 10, 10), 0, "f", mesh=gt_mesh)]
    cfg = EvalConfig(kinds=("mesh",), splits=("all",), n_samples=2000)
    rep = evaluate([Detection((0, 0, 10, 10), 0, 0.9, frame_id="f", mesh=pred_mesh)], gts, cfg)
    assert rep.mean("all", "mesh") == 0.0
    rep = evaluate([Detection((0, 0, 10, 10), 0, 0.9, frame_id="f", mesh=gt_mesh)], gts, cfg)
    assert rep.mean("all", "mesh") == 1.0


def test_report_json_and_table():
    gts = [GroundTruthObject((0, 0, 10, 10), 0, "f")]
    rep = evaluate([Detection((0, 0, 10, 10), 0, 0.9, frame_id="f")], gts, EvalConfig(kinds=("box", "mask")))
    d = json.loads(rep.to_json())
    assert d["recall_levels"] == RECALL_LEVELS.tolist()
    assert d["ap"]["all"]["box"]["mean"] == 1.0
    assert d["ap"]["medium"]["box"]["mean"] is None
    assert "AP^box" in rep.table()


def test_threads_do_not_change_report():
    rng = np.random.default_rng(7)
    preds, gts = random_detection_set(rng)
    dets = [Detection(b, c, s, frame_id=f) for f, c, s, b in preds]
    objs = [GroundTruthObject(b, c, f) for f, c, b in gts]
    a = evaluate(dets, objs, EvalConfig(kinds=("box",), threads=1)).to_json()
    b = evaluate(dets, objs, EvalConfig(kinds=("box",), threads=4)).to_json()
    assert a == b


def test_recall_of_half_sphere_matches_band_oracle():
    # gt points on the removed half still hit when they lie within tau of the
    # kept half: a band of polar half-angle 2 asin(tau / 2R) below the cut,
    # covering sin(angle) / 2 of the sphere
    R, tau = 2.5, 0.3
    m = icosphere(R, 4)
    centroids = m.vertices[m.faces].mean(axis=1)
    half = Mesh(m.vertices, m.faces[centroids[:, 2] > 0])
    p, r, _ = f1_at(half, m, tau, 10000, 0)
    assert p == 1.0
    assert r == pytest.approx(0.5 + np.sin(2 * np.arcsin(tau / (2 * R))) / 2, abs=0.015)
