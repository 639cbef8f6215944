"""Clip manifests, fixture generation and loaders.

Directory layout of a dataset root::

    clips/<clip_id>/manifest.jsonl     header line + one record per frame
    clips/<clip_id>/detections.jsonl   ground-truth boxes as detections
    clips/<clip_id>/meshes/*.obj       per-frame object-centred meshes
    clips/<clip_id>/masks/*.pbm        modal and amodal masks (binary PBM)
    clips/<clip_id>/features/*.bin     ROI feature grids

Asset paths inside a manifest are relative to the clip directory.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .camera import CameraRig, look_at, perspective, translation
from .errors import GenerationError, ManifestError
from .mesh import Mesh, load_obj, save_obj
from .primitives import box as box_mesh
from .primitives import cylinder, icosphere
from .refine import RoiFeature, depth_extent, euler_zyx
from .render import IMAGE_SIZE, ROI_SIZE, render, roi_feature, tight_box

SCHEMA = "meshtrace.manifest"
SCHEMA_VERSION = 1
CLASS_NAMES = {0: "cube", 1: "sphere", 2: "cylinder"}
PRIMITIVE_CLASS = {"cube": 0, "sphere": 1, "cylinder": 2}
FEATURE_MAGIC = b"RFEA"
FIXTURE_BOX_DIVISIONS = 8
FIXTURE_SPHERE_LEVEL = 3
FIXTURE_CYLINDER_SEGMENTS = 32
FIXTURE_CYLINDER_RINGS = 8


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def atomic_write(path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Binary assets


def write_pbm(mask: np.ndarray) -> bytes:
    """Raw (P4) PBM; 1 bits are mask pixels."""
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    return f"P4\n{w} {h}\n".encode("ascii") + np.packbits(m, axis=1).tobytes()


def read_pbm(blob: bytes) -> np.ndarray:
    tokens, pos = [], 0
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    pos += 1
    if tokens[0] != b"P4":
        raise ValueError("not a raw PBM (P4) file")
    w, h = int(tokens[1]), int(tokens[2])
    row = (w + 7) // 8
    data = np.frombuffer(blob[pos:pos + row * h], dtype=np.uint8)
    if data.size != row * h:
        raise ValueError("truncated PBM payload")
    return np.unpackbits(data.reshape(h, row), axis=1)[:, :w].astype(bool)


def write_feature(feat: RoiFeature) -> bytes:
    c, h, w = feat.data.shape
    head = FEATURE_MAGIC + struct.pack("<I3I4d", 1, c, h, w, *feat.box)
    return head + feat.data.astype("<f4").tobytes()


def read_feature(blob: bytes) -> RoiFeature:
    if blob[:4] != FEATURE_MAGIC:
        raise ValueError("bad feature magic")
    version, c, h, w, *box = struct.unpack_from("<I3I4d", blob, 4)
    if version != 1:
        raise ValueError(f"unsupported feature version {version}")
    off = 4 + struct.calcsize("<I3I4d")
    data = np.frombuffer(blob, dtype="<f4", count=c * h * w, offset=off)
    return RoiFeature(data.reshape(c, h, w).astype(np.float64), tuple(box))


# ---------------------------------------------------------------------------
# Manifest types

_INSTANCE_KEYS = ("instance_id", "class_id", "box", "modal_mask", "amodal_mask", "mesh",
                  "feature", "occlusion_rate", "visible", "world", "z_c")
_FRAME_KEYS = ("frame_id", "index", "camera", "shot_transition", "instances")
_HEADER_KEYS = ("schema", "version", "clip_id", "n_frames", "image_size", "shot_transitions")


@dataclass
class InstanceRecord:
    instance_id: int
    class_id: int
    box: Optional[Tuple[float, float, float, float]]
    modal_mask: Optional[str]
    amodal_mask: Optional[str]
    mesh: str
    feature: Optional[str]
    occlusion_rate: float
    visible: bool
    world: Tuple[float, ...]
    z_c: float
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dict(self.extra)
        for k in _INSTANCE_KEYS:
            v = getattr(self, k)
            d[k] = list(v) if isinstance(v, tuple) else v
        return d


@dataclass
class FrameRecord:
    frame_id: str
    index: int
    camera: Dict[str, Any]          # view, projection, viewport
    shot_transition: bool
    instances: List[InstanceRecord]
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dict(self.extra)
        d.update(frame_id=self.frame_id, index=self.index, camera=self.camera,
                 shot_transition=self.shot_transition,
                 instances=[i.to_dict() for i in self.instances])
        return d

    def rig(self, inst: InstanceRecord) -> CameraRig:
        return CameraRig(np.reshape(inst.world, (4, 4)), np.reshape(self.camera["view"], (4, 4)),
                         np.reshape(self.camera["projection"], (4, 4)), self.camera["viewport"])


@dataclass
class ClipManifest:
    clip_id: str
    frames: List[FrameRecord]
    image_size: Tuple[int, int] = (IMAGE_SIZE, IMAGE_SIZE)
    shot_transitions: Tuple[int, ...] = ()
    extra: Dict[str, Any] = field(default_factory=dict)
    root: Optional[Path] = None     # clip directory, set when read from disk

    def header(self) -> dict:
        d = dict(self.extra)
        d.update(schema=SCHEMA, version=SCHEMA_VERSION, clip_id=self.clip_id,
                 n_frames=len(self.frames), image_size=list(self.image_size),
                 shot_transitions=list(self.shot_transitions))
        return d

    def to_jsonl(self) -> bytes:
        lines = [canonical_json(self.header())] + [canonical_json(f.to_dict()) for f in self.frames]
        return ("\n".join(lines) + "\n").encode("utf-8")


def _need(d, key, types, lineno):
    if key not in d:
        raise ManifestError("missing required field", field=key, lineno=lineno)
    v = d[key]
    types = _tuple(types)
    if (isinstance(v, bool) and bool not in types) or not isinstance(v, types):
        raise ManifestError(f"wrong type {type(v).__name__}", field=key, lineno=lineno)
    return v


def _tuple(t):
    return t if isinstance(t, tuple) else (t,)


def _numbers(v, n, key, lineno):
    if not isinstance(v, list) or len(v) != n or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ManifestError(f"expected a list of {n} numbers", field=key, lineno=lineno)
    if not all(np.isfinite(v)):
        raise ManifestError("non-finite value", field=key, lineno=lineno)
    return v


def _parse_instance(d, lineno) -> InstanceRecord:
    if not isinstance(d, dict):
        raise ManifestError("instance must be an object", field="instances", lineno=lineno)
    iid = _need(d, "instance_id", int, lineno)
    cid = _need(d, "class_id", int, lineno)
    visible = _need(d, "visible", bool, lineno)
    occ = _need(d, "occlusion_rate", (int, float), lineno)
    if not 0.0 <= occ <= 1.0:
        raise ManifestError(f"occlusion rate {occ} outside [0, 1]", field="occlusion_rate", lineno=lineno)
    box = d.get("box")
    if box is not None:
        box = _numbers(box, 4, "box", lineno)
        if not (box[0] < box[2] and box[1] < box[3]):
            raise ManifestError("box must satisfy x0 < x1 and y0 < y1", field="box", lineno=lineno)
        box = tuple(box)
    elif visible:
        raise ManifestError("visible instance needs a box", field="box", lineno=lineno)
    mesh = _need(d, "mesh", str, lineno)
    world = tuple(_numbers(_need(d, "world", list, lineno), 16, "world", lineno))
    z_c = _need(d, "z_c", (int, float), lineno)
    for k in ("modal_mask", "amodal_mask", "feature"):
        if d.get(k) is not None and not isinstance(d[k], str):
            raise ManifestError("expected a path string or null", field=k, lineno=lineno)
    extra = {k: v for k, v in d.items() if k not in _INSTANCE_KEYS}
    return InstanceRecord(iid, cid, box, d.get("modal_mask"), d.get("amodal_mask"), mesh,
                          d.get("feature"), occ, visible, world, z_c, extra)


def _parse_frame(d, lineno) -> FrameRecord:
    if not isinstance(d, dict):
        raise ManifestError("frame record must be a JSON object", lineno=lineno)
    fid = _need(d, "frame_id", str, lineno)
    idx = _need(d, "index", int, lineno)
    cam = _need(d, "camera", dict, lineno)
    _numbers(cam.get("view"), 16, "camera.view", lineno)
    _numbers(cam.get("projection"), 16, "camera.projection", lineno)
    vp = _numbers(cam.get("viewport"), 4, "camera.viewport", lineno)
    if vp[2] <= 0 or vp[3] <= 0:
        raise ManifestError("viewport needs positive size", field="camera.viewport", lineno=lineno)
    shot = _need(d, "shot_transition", bool, lineno)
    insts = [_parse_instance(i, lineno) for i in _need(d, "instances", list, lineno)]
    ids = [i.instance_id for i in insts]
    if len(set(ids)) != len(ids):
        raise ManifestError("duplicate instance id in frame", field="instance_id", lineno=lineno)
    extra = {k: v for k, v in d.items() if k not in _FRAME_KEYS}
    return FrameRecord(fid, idx, cam, shot, insts, extra)


def parse_manifest(text: str, root=None) -> ClipManifest:
    lines = [ln for ln in text.splitlines()]
    if not lines or not lines[0].strip():
        raise ManifestError("empty manifest", lineno=1)
    records = []
    for n, ln in enumerate(lines, start=1):
        if not ln.strip():
            continue
        try:
            records.append((n, json.loads(ln)))
        except json.JSONDecodeError as exc:
            raise ManifestError(f"invalid JSON ({exc.msg})", lineno=n) from None
    n0, head = records[0]
    if not isinstance(head, dict):
        raise ManifestError("header must be a JSON object", lineno=n0)
    if head.get("schema") != SCHEMA:
        raise ManifestError(f"expected schema '{SCHEMA}'", field="schema", lineno=n0)
    if head.get("version") != SCHEMA_VERSION:
        raise ManifestError(f"unsupported version {head.get('version')!r}", field="version", lineno=n0)
    clip_id = _need(head, "clip_id", str, n0)
    size = _numbers(_need(head, "image_size", list, n0), 2, "image_size", n0)
    shots = _need(head, "shot_transitions", list, n0)
    frames = [_parse_frame(d, n) for n, d in records[1:]]
    if _need(head, "n_frames", int, n0) != len(frames):
        raise ManifestError("n_frames does not match the number of frame records", field="n_frames", lineno=n0)
    for (n, _), a, b in zip(records[2:], frames, frames[1:]):
        if b.index <= a.index:
            raise ManifestError("frames must be strictly ordered by index", field="index", lineno=n)
    extra = {k: v for k, v in head.items() if k not in _HEADER_KEYS}
    return ClipManifest(clip_id, frames, tuple(int(s) for s in size), tuple(int(s) for s in shots),
                        extra, Path(root) if root is not None else None)


def find_manifests(path) -> List[Path]:
    """A manifest file itself, or every ``clips/*/manifest.jsonl`` under a root."""
    p = Path(path)
    if p.is_file():
        return [p]
    if not p.exists():
        raise FileNotFoundError(str(p))
    found = sorted(p.glob("clips/*/manifest.jsonl"))
    if not found:
        found = sorted(p.glob("*/manifest.jsonl")) or sorted(p.glob("manifest.jsonl"))
    if not found:
        raise ManifestError(f"no manifest.jsonl under {p}")
    return found


def read_manifest(path) -> List[ClipManifest]:
    out = []
    for m in find_manifests(path):
        out.append(parse_manifest(m.read_text("utf-8"), root=m.parent))
    return out


def write_manifest(clip: ClipManifest, path) -> None:
    atomic_write(path, clip.to_jsonl())


# ---------------------------------------------------------------------------
# Fixture specs


@dataclass(frozen=True)
class ObjectSpec:
    primitive: str
    dims: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    position: Tuple[float, float, float] = (0.0, 0.0, 4.0)
    velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)        # per frame
    rotation: Tuple[float, float, float] = (0.0, 0.0, 0.0)        # Z-Y-X Euler angles (rad)
    angular_velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.primitive not in PRIMITIVE_CLASS:
            raise ValueError(f"unknown primitive {self.primitive!r}")
        for name in ("dims", "position", "velocity", "rotation", "angular_velocity"):
            v = getattr(self, name)
            if len(v) != 3 or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be three finite numbers")
            object.__setattr__(self, name, tuple(float(x) for x in v))
        if min(self.dims) <= 0:
            raise ValueError("dims must be positive")

    @property
    def class_id(self) -> int:
        return PRIMITIVE_CLASS[self.primitive]


@dataclass(frozen=True)
class OccluderSpec:
    size: Tuple[float, float, float]
    position: Tuple[float, float, float]
    velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class FixtureSpec:
    clip_id: str
    length: int
    objects: Tuple[ObjectSpec, ...]
    occluders: Tuple[OccluderSpec, ...] = ()
    camera_eye: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    camera_velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    shot_transitions: Tuple[int, ...] = ()
    shot_offset: Tuple[float, float, float] = (0.6, 0.3, 0.0)
    image_size: int = IMAGE_SIZE
    roi_size: int = ROI_SIZE
    roi_margin: float = 0.0
    fov_deg: float = 50.0
    seed: int = 0

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("clip length must be >= 1")
        if not self.objects:
            raise ValueError("a fixture needs at least one object")
        object.__setattr__(self, "objects", tuple(
            o if isinstance(o, ObjectSpec) else ObjectSpec(**o) for o in self.objects))
        object.__setattr__(self, "occluders", tuple(
            o if isinstance(o, OccluderSpec) else OccluderSpec(**o) for o in self.occluders))
        for name in ("camera_eye", "camera_velocity", "shot_offset"):
            v = getattr(self, name)
            if len(v) != 3 or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be three finite numbers")

    def to_dict(self) -> dict:
        d = asdict(self)
        return json.loads(json.dumps(d))     # tuples -> lists

    @classmethod
    def from_dict(cls, d: dict) -> "FixtureSpec":
        d = dict(d)
        d["objects"] = tuple(ObjectSpec(**o) for o in d.get("objects", ()))
        d["occluders"] = tuple(OccluderSpec(**o) for o in d.get("occluders", ()))
        for k in ("camera_eye", "camera_velocity", "shot_offset", "shot_transitions"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def canonical_mesh(obj: ObjectSpec) -> Mesh:
    """Object-centred instance mesh before any per-frame rotation.

    Tessellated finely enough (edges around a tenth of the object size) that
    the edge regularizer of the mesh itself stays small next to the other
    loss terms, so a ground-truth mesh is close to a loss minimizer.
    """
    if obj.primitive == "cube":
        return box_mesh(obj.dims, (0.0, 0.0, 0.0), FIXTURE_BOX_DIVISIONS)
    if obj.primitive == "sphere":
        return icosphere(0.5, FIXTURE_SPHERE_LEVEL).transformed(np.diag(obj.dims))
    return cylinder(0.5, 1.0, FIXTURE_CYLINDER_SEGMENTS, FIXTURE_CYLINDER_RINGS).transformed(np.diag(obj.dims))


def _camera_eye(spec: FixtureSpec, t: int) -> np.ndarray:
    jumps = sum(1 for s in spec.shot_transitions if s <= t)
    return (np.asarray(spec.camera_eye) + t * np.asarray(spec.camera_velocity)
            + jumps * np.asarray(spec.shot_offset))


def generate_fixtures(spec: FixtureSpec, root) -> ClipManifest:
    """Render a clip to ``root/clips/<clip_id>`` and return its manifest."""
    clip_dir = Path(root) / "clips" / spec.clip_id
    size = spec.image_size
    proj = perspective(np.deg2rad(spec.fov_deg), 1.0, 0.1, 100.0)
    viewport = (0.0, 0.0, float(size), float(size))
    canon = [canonical_mesh(o) for o in spec.objects]
    occ_meshes = [box_mesh(o.size, (0, 0, 0), 1) for o in spec.occluders]
    ever_visible = [False] * len(spec.objects)
    frames = []
    det_lines = []
    for t in range(spec.length):
        eye = _camera_eye(spec, t)
        view = look_at(eye, eye + np.array([0.0, 0.0, 1.0]))
        base = CameraRig(np.eye(4), view, proj, viewport)
        meshes, rigs = [], []
        for o, m in zip(spec.objects, canon):
            R = euler_zyx(np.asarray(o.rotation) + t * np.asarray(o.angular_velocity))
            meshes.append(m.transformed(R))
            rigs.append(base.with_world(translation(np.asarray(o.position) + t * np.asarray(o.velocity))))
        occ_rigs = [base.with_world(translation(np.asarray(o.position) + t * np.asarray(o.velocity)))
                    for o in spec.occluders]
        scene = render(meshes + occ_meshes, rigs + occ_rigs, (size, size))
        frame_id = f"{spec.clip_id}:{t:05d}"
        insts = []
        for k, (o, mesh, rig) in enumerate(zip(spec.objects, meshes, rigs)):
            stem = f"{t:05d}_{k}"
            mesh_rel = f"meshes/{stem}.obj"
            atomic_write(clip_dir / mesh_rel, save_obj(mesh))
            amodal = render([mesh], [rig], (size, size)).ids == 0
            modal = scene.ids == k
            a_area = int(amodal.sum())
            ext = depth_extent(mesh, rig)
            rec = InstanceRecord(k, o.class_id, None, None, None, mesh_rel, None, 0.0, False,
                                 tuple(rig.world.reshape(-1).tolist()), ext.z_c)
            if a_area > 0 and ext.z_c > 0:
                ever_visible[k] = True
                rec.box = tight_box(amodal)
                rec.occlusion_rate = float(1.0 - modal.sum() / a_area)
                rec.visible = bool(modal.any())
                rec.modal_mask = f"masks/{stem}_modal.pbm"
                rec.amodal_mask = f"masks/{stem}_amodal.pbm"
                atomic_write(clip_dir / rec.modal_mask, write_pbm(modal))
                atomic_write(clip_dir / rec.amodal_mask, write_pbm(amodal))
                depth = np.where(modal, scene.depth, np.inf)
                feat = roi_feature(modal, depth, rec.box, ext.z_c, rig.focal_px, spec.roi_size, spec.roi_margin)
                rec.feature = f"features/{stem}.bin"
                atomic_write(clip_dir / rec.feature, write_feature(feat))
                if rec.visible:
                    det = {"frame_id": frame_id, "box": list(rec.box), "class": o.class_id, "score": 1.0}
                    if t in spec.shot_transitions:
                        det["shot_transition"] = True
                    det_lines.append(canonical_json(det))
            insts.append(rec)
        cam = {"view": view.reshape(-1).tolist(), "projection": proj.reshape(-1).tolist(),
               "viewport": list(viewport)}
        frames.append(FrameRecord(frame_id, t, cam, t in spec.shot_transitions, insts))
    for k, seen in enumerate(ever_visible):
        if not seen:
            raise GenerationError(f"object {k} of clip {spec.clip_id} is never in front of the camera")
    clip = ClipManifest(spec.clip_id, frames, (size, size), tuple(spec.shot_transitions),
                        {"spec": spec.to_dict(), "classes": {str(k): v for k, v in CLASS_NAMES.items()}},
                        clip_dir)
    atomic_write(clip_dir / "detections.jsonl", ("\n".join(det_lines) + "\n").encode() if det_lines else b"")
    write_manifest(clip, clip_dir / "manifest.jsonl")
    return clip


def generate_suite(specs: Sequence[FixtureSpec], root, threads: int = 1) -> List[ClipManifest]:
    """Generate several clips; output order follows ``specs`` for any thread count."""
    if threads <= 1:
        return [generate_fixtures(s, root) for s in specs]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda s: generate_fixtures(s, root), specs))


# ---------------------------------------------------------------------------
# Fixture suites


def rotating_suite(n_clips: int = 10, length: int = 10, seed: int = 0, prefix: str = "rot",
                   primitives: Sequence[str] = ("cube", "sphere", "cylinder")) -> List[FixtureSpec]:
    """Single slowly rotating primitive per clip with randomized proportions."""
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n_clips):
        prim = primitives[i % len(primitives)]
        dims = rng.uniform(0.7, 1.3, 3)
        if prim == "cylinder":
            dims[2] = dims[0]
        rot = rng.uniform(-0.6, 0.6, 3)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        omega = axis * rng.uniform(0.04, 0.08)
        pos = (rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(3.6, 4.4))
        specs.append(FixtureSpec(f"{prefix}{i:03d}", length, (
            ObjectSpec(prim, tuple(dims), pos, (0, 0, 0), tuple(rot), tuple(omega)),), seed=seed))
    return specs


def crossing_spec(length: int = 20, clip_id: str = "crossing", shot_at: Sequence[int] = ()) -> FixtureSpec:
    """Two cubes sliding past each other horizontally at different depths."""
    step = 1.6 / max(1, length - 1)
    a = ObjectSpec("cube", (0.8, 0.8, 0.8), (-0.8, 0.0, 4.0), (step, 0.0, 0.0))
    b = ObjectSpec("cube", (0.8, 0.8, 0.8), (0.8, 0.05, 5.0), (-step, 0.0, 0.0))
    return FixtureSpec(clip_id, length, (a, b), shot_transitions=tuple(shot_at))


def drifting_cube_spec(length: int = 8, clip_id: str = "drift") -> FixtureSpec:
    return FixtureSpec(clip_id, length, (ObjectSpec("cube", (1, 1, 1), (-0.2, 0, 4.0), (0.04, 0.0, 0.0)),))


# ---------------------------------------------------------------------------
# Loading samples


class Sample(NamedTuple):
    clip_id: str
    frame_index: int
    frame_id: str
    instance_id: int
    class_id: int
    box: Tuple[float, float, float, float]
    camera: CameraRig
    feature: RoiFeature
    mesh: Mesh
    z_c: float
    occlusion_rate: float
    shot_transition: bool
    modal_mask: np.ndarray
    amodal_mask: np.ndarray


def load_mesh(clip: ClipManifest, rel: str) -> Mesh:
    return load_obj((clip.root / rel).read_bytes())


def load_samples(clip: ClipManifest) -> List[List[Sample]]:
    """Per frame, every instance that has a box and a feature (amodally in view)."""
    if clip.root is None:
        raise ManifestError("clip has no root directory to resolve assets")
    out = []
    for fr in clip.frames:
        row = []
        for inst in fr.instances:
            if inst.box is None or inst.feature is None or not inst.visible:
                continue
            row.append(Sample(
                clip.clip_id, fr.index, fr.frame_id, inst.instance_id, inst.class_id, inst.box,
                fr.rig(inst), read_feature((clip.root / inst.feature).read_bytes()),
                load_mesh(clip, inst.mesh), inst.z_c, inst.occlusion_rate, fr.shot_transition,
                read_pbm((clip.root / inst.modal_mask).read_bytes()),
                read_pbm((clip.root / inst.amodal_mask).read_bytes()),
            ))
        out.append(row)
    return out


def canonical_meshes(clip: ClipManifest) -> Dict[int, Tuple[int, Mesh]]:
    """instance id -> (class id, unrotated instance mesh) from the embedded spec."""
    spec = clip.extra.get("spec")
    if spec is None:
        raise ManifestError("manifest has no embedded fixture spec", field="spec")
    fs = FixtureSpec.from_dict(spec)
    return {k: (o.class_id, canonical_mesh(o)) for k, o in enumerate(fs.objects)}
