"""Two-stage SGD training of the rotation head and refinement stack.

Stage 1 refines rotated class means. Stage 2 continues from perturbed
ground-truth references (a stand-in for the previous frame's prediction),
mixed with a share of rotated means so the first-frame case is not forgotten.
The rotation head is trained by its own mesh loss between the rotated mean
and the ground truth; the rotated mean then enters refinement as a constant.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, TrainingError
from .losses import LossWeights, Target, make_target, mesh_loss_target
from .mesh import Mesh, radial_remesh, unique_edges
from .refine import (
    FEATURE_DIM, GCN_LAYERS, HIDDEN_DIM, N_STAGES, POOL_GRID, ROT_HIDDEN,
    RefineStageParams, RoiFeature, RotationHeadParams, augment_reference,
    refine_backward, refine_forward, rotation_backward, rotation_forward,
    rotation_grad_from_vertices,
)

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MTCK"
CHECKPOINT_VERSION = 1
LOG_HEADER = ("step", "stage", "L_cham", "L_norm", "L_edge", "total")


@dataclass(frozen=True)
class TrainConfig:
    stage1_steps: int = 2000
    stage2_steps: int = 500
    lr: float = 0.02
    momentum: float = 0.9
    n_samples: int = 2000
    weights: LossWeights = LossWeights()
    n_stages: int = N_STAGES
    feature_dim: int = FEATURE_DIM
    hidden: int = HIDDEN_DIM
    gcn_layers: int = GCN_LAYERS
    rot_hidden: int = ROT_HIDDEN
    pool_grid: int = POOL_GRID
    rot_range_deg: float = 15.0
    sigma_frac: float = 0.02
    stage2_mean_fraction: float = 0.25
    stage2_template: str = "gt"
    clip_norm: Optional[float] = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.stage1_steps < 0 or self.stage2_steps < 0:
            raise ConfigurationError("step counts must be >= 0")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ConfigurationError("need lr >= 0 and 0 <= momentum < 1")
        if self.n_stages < 1:
            raise ConfigurationError("need at least one refinement stage")
        if self.n_samples < 1:
            raise ConfigurationError("n_samples must be positive")
        if self.stage2_template not in ("mean", "gt"):
            raise ConfigurationError("stage2_template must be 'mean' or 'gt'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("weights"), Mapping):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


@dataclass
class Model:
    stages: List[RefineStageParams]
    rotation: RotationHeadParams
    mean_shapes: Dict[int, Mesh]
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, mean_shapes: Mapping[int, Mesh], channels: int = 3, config: TrainConfig = TrainConfig()):
        rng = np.random.default_rng(config.seed)
        stages = [RefineStageParams.init(rng, channels, config.feature_dim, config.hidden, config.gcn_layers)
                  for _ in range(config.n_stages)]
        rot = RotationHeadParams.init(rng, channels, config.pool_grid, config.rot_hidden)
        return cls(stages, rot, dict(mean_shapes), {"channels": channels, "seed": config.seed})

    def param_arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for i, s in enumerate(self.stages):
            for k, v in s.arrays().items():
                out[f"stage{i}.{k}"] = v
        for k, v in self.rotation.arrays().items():
            out[f"rot.{k}"] = v
        return out

    @classmethod
    def from_param_arrays(cls, arrays: Mapping[str, np.ndarray], mean_shapes, meta=None) -> "Model":
        n = 1 + max(int(k.split(".")[0][5:]) for k in arrays if k.startswith("stage"))
        stages = [RefineStageParams.from_arrays(
            {k.split(".", 1)[1]: v for k, v in arrays.items() if k.startswith(f"stage{i}.")}) for i in range(n)]
        rot = RotationHeadParams.from_arrays({k[4:]: v for k, v in arrays.items() if k.startswith("rot.")})
        return cls(stages, rot, dict(mean_shapes), dict(meta or {}))

    def rotated_mean(self, feat: RoiFeature, class_id: int) -> Mesh:
        if class_id not in self.mean_shapes:
            raise ConfigurationError(f"no mean shape for class {class_id}")
        R = rotation_forward(feat, self.rotation).matrix
        return self.mean_shapes[class_id].transformed(R)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(model: Model, extra: Optional[dict] = None) -> bytes:
    """MTCK blob: magic, version, header length, JSON header, float64/int64 payload."""
    arrays = dict(model.param_arrays())
    for c, m in sorted(model.mean_shapes.items()):
        arrays[f"mean{c}.vertices"] = m.vertices
        arrays[f"mean{c}.faces"] = m.faces
    entries, payload, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        dtype = "<i8" if np.issubdtype(a.dtype, np.integer) else "<f8"
        raw = a.astype(dtype).tobytes()
        entries.append({"name": name, "shape": list(a.shape), "dtype": dtype, "offset": offset})
        payload.append(raw)
        offset += len(raw)
    header = {
        "arrays": entries,
        "n_stages": len(model.stages),
        "classes": sorted(int(c) for c in model.mean_shapes),
        "meta": model.meta,
        "extra": extra or {},
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(hb)) + hb + b"".join(payload)


def load_checkpoint(blob: bytes) -> Model:
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ConfigurationError("not a meshtrace checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    base = 12 + hlen
    arrays = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        a = np.frombuffer(blob, dtype=e["dtype"], count=count, offset=base + e["offset"])
        arrays[e["name"]] = a.reshape(e["shape"]).copy()
    means = {}
    for c in header["classes"]:
        means[int(c)] = Mesh(arrays.pop(f"mean{c}.vertices"), arrays.pop(f"mean{c}.faces"))
    model = Model.from_param_arrays(arrays, means, header.get("meta"))
    return model


# ---------------------------------------------------------------------------
# Training data and per-sample loss


class TrainItem(NamedTuple):
    feature: RoiFeature
    camera: object
    class_id: int
    gt: Mesh
    target: Target


def make_items(samples: Sequence, n_samples: int, seed: int = 0) -> List[TrainItem]:
    """Wrap loaded samples with precomputed ground-truth point targets."""
    return [TrainItem(s.feature, s.camera, s.class_id, s.mesh, make_target(s.mesh, n_samples, seed + i))
            for i, s in enumerate(samples)]


class StepResult(NamedTuple):
    total: float
    terms: np.ndarray            # (n_stages, 3): chamfer, normal, edge per refinement stage
    stage_grads: List[RefineStageParams]
    rot_loss: float
    rot_grads: RotationHeadParams
    outputs: List[np.ndarray]


def _check_finite(value, term, step):
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {term} loss at step {step}")


def sample_step(model: Model, item: TrainItem, reference: Optional[Mesh], config: TrainConfig,
                seed: int, step: int = 0) -> StepResult:
    """Loss and gradients for one sample.

    ``reference=None`` uses the rotated class mean (and trains the rotation
    head on it); otherwise the given reference is refined and the rotation
    head receives no gradient.
    """
    w = config.weights
    rot_grads = model.rotation.zeros_like()
    rot_loss = 0.0
    if reference is None:
        fwd = rotation_forward(item.feature, model.rotation)
        base = model.mean_shapes[item.class_id]
        ref = base.transformed(fwd.matrix)
        rw = LossWeights(w.cham, w.norm, 0.0) if (w.cham > 0 or w.norm > 0) else w
        rl = mesh_loss_target(ref.vertices, ref.faces, item.target, config.n_samples, rw, seed + 7919)
        _check_finite(rl.total, "rotation", step)
        rot_loss = rl.total
        rot_grads = rotation_backward(fwd, model.rotation,
                                      rotation_grad_from_vertices(base.vertices, rl.grad))
    else:
        ref = reference
    verts, caches, adj = refine_forward(item.feature, ref, item.camera, model.stages)
    edges = unique_edges(ref.faces)
    grads_out, terms, total = [], [], 0.0
    for l, v in enumerate(verts[1:]):
        if not np.all(np.isfinite(v)):
            raise TrainingError(f"non-finite vertices after refinement stage {l} at step {step}")
        lv = mesh_loss_target(v, ref.faces, item.target, config.n_samples, w, seed + l, edges=edges)
        for name, val in (("chamfer", lv.chamfer), ("normal", lv.normal), ("edge", lv.edge)):
            _check_finite(val, name, step)
        grads_out.append(lv.grad)
        terms.append((lv.chamfer, lv.normal, lv.edge))
        total += lv.total
    _, stage_grads = refine_backward(grads_out, caches, model.stages, adj)
    return StepResult(total, np.array(terms), stage_grads, rot_loss, rot_grads, verts)


def evaluate_loss(model: Model, items: Sequence[TrainItem], config: TrainConfig, seed: int = 12345):
    """Mean final-stage mesh loss over items with rotated-mean references.

    Returns ``(mean total, mean per-term array)``.
    """
    totals, terms = [], []
    w = config.weights
    for i, it in enumerate(items):
        ref = model.rotated_mean(it.feature, it.class_id)
        verts, _, _ = refine_forward(it.feature, ref, it.camera, model.stages)
        lv = mesh_loss_target(verts[-1], ref.faces, it.target, config.n_samples, w, seed + i)
        totals.append(lv.total)
        terms.append((lv.chamfer, lv.normal, lv.edge))
    return float(np.mean(totals)), np.mean(np.array(terms), axis=0)


# ---------------------------------------------------------------------------
# Optimizer


class SGD:
    """Heavy-ball SGD: ``v = mu v + g; p -= lr v``."""

    def __init__(self, lr: float, momentum: float):
        self.lr = lr
        self.momentum = momentum
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            v = self.velocity.get(k)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[k] = v
            params[k] -= self.lr * v


def _grad_arrays(stage_grads, rot_grads) -> Dict[str, np.ndarray]:
    out = {}
    for i, s in enumerate(stage_grads):
        for k, v in s.arrays().items():
            out[f"stage{i}.{k}"] = v
    for k, v in rot_grads.arrays().items():
        out[f"rot.{k}"] = v
    return out


def train(model: Model, items: Sequence[TrainItem], config: TrainConfig = TrainConfig(),
          log_rows: Optional[list] = None) -> Model:
    """Run both training stages in place on ``model`` and return it.

    Each step draws one item uniformly. ``log_rows`` (if given) receives
    one ``(step, stage, L_cham, L_norm, L_edge, total)`` tuple per step, the
    terms summed over refinement stages.
    """
    if not items:
        raise TrainingError("no training items")
    missing = {it.class_id for it in items} - set(model.mean_shapes)
    if missing:
        raise ConfigurationError(f"no mean shape for classes {sorted(missing)}")
    rng = np.random.default_rng(config.seed)
    opt = SGD(config.lr, config.momentum)
    params = model.param_arrays()   # views into the model's arrays, updated in place
    for a in params.values():
        if not a.flags.writeable:
            raise TrainingError("model parameters must be writeable")
    schedule = [1] * config.stage1_steps + [2] * config.stage2_steps
    rot_range = np.deg2rad(config.rot_range_deg)
    templates: Dict[int, Mesh] = {}
    for step, stage in enumerate(schedule):
        k = int(rng.integers(len(items)))
        it = items[k]
        seed = int(rng.integers(2**31))
        reference = None
        if stage == 2 and rng.random() >= config.stage2_mean_fraction:
            base = it.gt
            if config.stage2_template == "mean":
                if k not in templates:
                    templates[k] = radial_remesh(model.mean_shapes[it.class_id], it.gt)
                base = templates[k]
            lo, hi = it.gt.bounds()
            reference = augment_reference(base, rot_range, config.sigma_frac * float(np.linalg.norm(hi - lo)),
                                          seed=seed)
        res = sample_step(model, it, reference, config, seed, step)
        grads = _grad_arrays(res.stage_grads, res.rot_grads)
        if config.clip_norm is not None:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > config.clip_norm:
                grads = {k: g * (config.clip_norm / norm) for k, g in grads.items()}
        opt.step(params, grads)
        summed = res.terms.sum(axis=0)
        if log_rows is not None:
            log_rows.append((step, stage, float(summed[0]), float(summed[1]), float(summed[2]), float(res.total)))
        if step % 100 == 0:
            log.info("step %d stage %d loss %.6f rot %.6f", step, stage, res.total, res.rot_loss)
    return model


def log_csv(rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_HEADER)
    for r in rows:
        w.writerow([r[0], r[1]] + [repr(float(x)) for x in r[2:]])
    return buf.getvalue().encode("ascii")
