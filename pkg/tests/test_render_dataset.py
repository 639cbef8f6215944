import json

import numpy as np
import numpy.testing as npt
import pytest

from meshtrace.camera import project_to_pixels, translation
from meshtrace.dataset import (
    FixtureSpec, ObjectSpec, OccluderSpec, canonical_json, canonical_meshes, crossing_spec,
    generate_fixtures, generate_suite, load_samples, parse_manifest, read_feature, read_manifest,
    read_pbm, rotating_suite, write_feature, write_pbm,
)
from meshtrace.errors import GenerationError, ManifestError
from meshtrace.primitives import box
from meshtrace.refine import RoiFeature
from meshtrace.render import amodal_mask, boundary, render, roi_feature, tight_box

from conftest import toy_camera


class TestRender:
    def test_cube_box_at_depth_four(self):
        m = amodal_mask(box(), toy_camera(4.0))
        # front face at z = 3.5 spans +-0.5 / 3.5 * f * 64 pixels around the centre
        f = 1 / np.tan(np.deg2rad(25))
        half = 0.5 / 3.5 * f * 64
        x0, y0, x1, y1 = tight_box(m)
        assert abs((x1 - x0) - 2 * half) <= 2 and abs((y1 - y0) - 2 * half) <= 2
        assert tight_box(m) == (44.0, 44.0, 84.0, 84.0)

    def test_nearer_object_wins(self):
        cam = toy_camera(4.0)
        near = cam.with_world(translation((0, 0, 3.0)))
        frame = render([box(), box((0.5, 0.5, 0.5))], [cam, near])
        assert frame.ids[64, 64] == 1
        npt.assert_allclose(frame.depth[64, 64], 2.75, atol=1e-9)
        frame = render([box((0.5, 0.5, 0.5)), box()], [near, cam])
        assert frame.ids[64, 64] == 0

    def test_pixel_centres_match_projection(self):
        cam = toy_camera(4.0)
        px, w = project_to_pixels(box().vertices, cam)
        m = amodal_mask(box(), cam)
        lo, hi = px.min(axis=0), px.max(axis=0)
        rows, cols = np.nonzero(m)
        assert cols.min() + 0.5 >= lo[0] and cols.max() + 0.5 <= hi[0]
        assert rows.min() + 0.5 >= lo[1] and rows.max() + 0.5 <= hi[1]

    def test_boundary_and_empty_box(self):
        m = np.zeros((5, 5), bool)
        m[1:4, 1:4] = True
        b = boundary(m)
        assert b.sum() == 8 and not b[2, 2]
        assert tight_box(np.zeros((4, 4), bool)) is None

    def test_roi_feature_channels(self):
        cam = toy_camera(4.0)
        frame = render([box()], [cam])
        modal = frame.ids == 0
        bx = tight_box(modal)
        feat = roi_feature(modal, frame.depth, bx, 4.0, cam.focal_px, 28)
        assert feat.data.shape == (3, 28, 28)
        # silhouette fills the tight box; the front face sits 0.5 in front of z_c
        npt.assert_allclose(feat.data[0], 1.0)
        expected = (3.5 - 4.0) / 4.0 * cam.focal_px / (bx[3] - bx[1])
        npt.assert_allclose(feat.data[1, 14, 14], expected, rtol=1e-9)
        assert feat.data[2, 14, 14] == 0.0 and feat.data[2, 0, 0] > 0.9

    def test_roi_margin_shows_background(self):
        cam = toy_camera(4.0)
        frame = render([box()], [cam])
        modal = frame.ids == 0
        bx = tight_box(modal)
        tight = roi_feature(modal, frame.depth, bx, 4.0, cam.focal_px, 28)
        wide = roi_feature(modal, frame.depth, bx, 4.0, cam.focal_px, 28, margin=0.25)
        w = bx[2] - bx[0]
        assert wide.box == (bx[0] - w / 4, bx[1] - w / 4, bx[2] + w / 4, bx[3] + w / 4)
        assert wide.data[0, 0, 0] == 0.0 and wide.data[0, 14, 14] == 1.0
        # depth normalization uses the detection box, not the grown one
        npt.assert_allclose(wide.data[1, 14, 14], tight.data[1, 14, 14], rtol=1e-9)


def test_pbm_and_feature_round_trip():
    rng = np.random.default_rng(0)
    mask = rng.random((13, 21)) > 0.5
    npt.assert_array_equal(read_pbm(write_pbm(mask)), mask)
    npt.assert_array_equal(read_pbm(b"P4\n# note\n3 1\n" + bytes([0b10100000])), [[True, False, True]])
    with pytest.raises(ValueError):
        read_pbm(b"P1\n1 1\n1")
    feat = RoiFeature(rng.normal(size=(3, 5, 4)).astype(np.float32), (1.5, 2, 9, 10))
    again = read_feature(write_feature(feat))
    npt.assert_array_equal(again.data, feat.data)
    assert again.box == feat.box


@pytest.fixture(scope="module")
def occluded(tmp_path_factory):
    # a thin slab in front of the left half of a cube
    spec = FixtureSpec("occ", 2, (ObjectSpec("cube", (1, 1, 1), (0, 0, 4.0)),),
                       occluders=(OccluderSpec((0.6, 2.0, 0.1), (-0.3, 0, 3.0)),))
    root = tmp_path_factory.mktemp("occ")
    return generate_fixtures(spec, root), root


class TestFixtures:
    def test_occlusion_rate_oracle(self, occluded):
        clip, _ = occluded
        inst = clip.frames[0].instances[0]
        sample = load_samples(clip)[0][0]
        # independent count from the stored masks
        oracle = 1.0 - sample.modal_mask.sum() / sample.amodal_mask.sum()
        assert inst.occlusion_rate == pytest.approx(oracle, abs=1e-12)
        assert 0.45 < inst.occlusion_rate < 0.55

    def test_amodal_contains_modal(self, occluded):
        clip, _ = occluded
        for row in load_samples(clip):
            for s in row:
                assert not (s.modal_mask & ~s.amodal_mask).any()
                assert tuple(s.box) == tight_box(s.amodal_mask)

    def test_manifest_round_trip(self, occluded):
        clip, root = occluded
        text = (clip.root / "manifest.jsonl").read_text()
        again = parse_manifest(text, clip.root)
        assert again.to_jsonl().decode() == text
        assert read_manifest(root)[0].to_jsonl() == clip.to_jsonl()

    def test_generation_is_deterministic(self, occluded, tmp_path):
        clip, _ = occluded
        spec = FixtureSpec.from_dict(clip.extra["spec"])
        other = generate_fixtures(spec, tmp_path)
        for rel in ("manifest.jsonl", "detections.jsonl", "meshes/00001_0.obj",
                    "masks/00001_0_modal.pbm", "features/00001_0.bin"):
            assert (other.root / rel).read_bytes() == (clip.root / rel).read_bytes()

    def test_canonical_meshes(self, occluded):
        clip, _ = occluded
        (cid, mesh), = canonical_meshes(clip).values()
        assert cid == 0
        npt.assert_allclose(mesh.bounds()[1] - mesh.bounds()[0], [1, 1, 1])

    def test_never_visible(self, tmp_path):
        spec = FixtureSpec("gone", 2, (ObjectSpec("sphere", position=(0, 0, -5.0)),))
        with pytest.raises(GenerationError):
            generate_fixtures(spec, tmp_path)


def test_suite_threads_match(tmp_path):
    specs = rotating_suite(3, 2, seed=5)
    a = generate_suite(specs, tmp_path / "a", threads=1)
    b = generate_suite(specs, tmp_path / "b", threads=3)
    assert [c.to_jsonl() for c in a] == [c.to_jsonl() for c in b]


def test_shot_transition_moves_camera(tmp_path):
    clip = generate_fixtures(crossing_spec(6, shot_at=(3,)), tmp_path)
    assert clip.shot_transitions == (3,)
    assert [f.shot_transition for f in clip.frames] == [False, False, False, True, False, False]
    assert clip.frames[3].camera["view"] != clip.frames[2].camera["view"]
    dets = [json.loads(ln) for ln in (clip.root / "detections.jsonl").read_text().splitlines()]
    assert all(d.get("shot_transition", False) == d["frame_id"].endswith(":00003") for d in dets)


class TestManifestErrors:
    @pytest.fixture
    def text(self, drift_clip):
        return (drift_clip.root / "manifest.jsonl").read_text()

    def edit(self, text, line, fn):
        lines = text.splitlines()
        d = json.loads(lines[line])
        fn(d)
        lines[line] = canonical_json(d)
        return "\n".join(lines) + "\n"

    def test_occlusion_out_of_range(self, text):
        bad = self.edit(text, 1, lambda d: d["instances"][0].update(occlusion_rate=1.3))
        with pytest.raises(ManifestError) as e:
            parse_manifest(bad)
        assert e.value.field == "occlusion_rate" and e.value.lineno == 2

    def test_schema_and_version(self, text):
        with pytest.raises(ManifestError):
            parse_manifest(self.edit(text, 0, lambda d: d.update(schema="other")))
        with pytest.raises(ManifestError):
            parse_manifest(self.edit(text, 0, lambda d: d.update(version=2)))

    def test_frame_count_and_order(self, text):
        with pytest.raises(ManifestError):
            parse_manifest(self.edit(text, 0, lambda d: d.update(n_frames=99)))
        with pytest.raises(ManifestError) as e:
            parse_manifest(self.edit(text, 2, lambda d: d.update(index=0)))
        assert e.value.field == "index"

    def test_types(self, text):
        with pytest.raises(ManifestError):
            parse_manifest(self.edit(text, 1, lambda d: d["instances"][0].update(class_id=True)))
        with pytest.raises(ManifestError):
            parse_manifest(self.edit(text, 1, lambda d: d["instances"][0].update(box=[5, 5, 1, 1])))
        with pytest.raises(ManifestError):
            parse_manifest(self.edit(text, 1, lambda d: d["instances"][0].pop("mesh")))
        with pytest.raises(ManifestError):
            parse_manifest("not json\n")

    def test_unknown_fields_survive(self, text):
        edited = self.edit(text, 1, lambda d: d.update(note="kept"))
        clip = parse_manifest(edited)
        assert clip.frames[0].extra == {"note": "kept"}
        assert clip.to_jsonl().decode() == edited


def test_spec_validation():
    with pytest.raises(ValueError):
        ObjectSpec("torus")
    with pytest.raises(ValueError):
        ObjectSpec("cube", dims=(1, 0, 1))
    with pytest.raises(ValueError):
        FixtureSpec("x", 0, (ObjectSpec("cube"),))
    spec = crossing_spec(5)
    assert FixtureSpec.from_dict(spec.to_dict()) == spec
