"""Temporal mesh refinement: reference selection, rotation head, VertAlign,
graph convolutions and the L-stage refinement stack, with hand-written
backward passes so training needs nothing beyond numpy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .camera import CameraRig, project_vertices, to_view
from .errors import ConfigurationError
from .mesh import Mesh, adjacency_matrix

N_STAGES = 3
FEATURE_DIM = 64
HIDDEN_DIM = 64
GCN_LAYERS = 3
POOL_GRID = 7
ROT_HIDDEN = 32


@dataclass(frozen=True, eq=False)
class RoiFeature:
    """``(C, H, W)`` feature grid extracted over ``box`` (pixel coordinates)."""

    data: np.ndarray
    box: tuple

    def __post_init__(self):
        d = np.array(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[1] < 2 or d.shape[2] < 2:
            raise ValueError("ROI feature must be (C, H, W) with H, W >= 2")
        if not np.all(np.isfinite(d)):
            raise ValueError("ROI feature must be finite")
        d.flags.writeable = False
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "box", tuple(float(b) for b in self.box))

    @property
    def channels(self) -> int:
        return self.data.shape[0]


# ---------------------------------------------------------------------------
# Rotations


def euler_zyx(angles) -> np.ndarray:
    """``Rz(a) @ Ry(b) @ Rx(c)`` for angles ``(a, b, c)``."""
    a, b, c = angles
    ca, sa, cb, sb, cc, sc = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(c), np.sin(c)
    rz = np.array([[ca, -sa, 0], [sa, ca, 0], [0, 0, 1]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rx = np.array([[1, 0, 0], [0, cc, -sc], [0, sc, cc]])
    return rz @ ry @ rx


def euler_zyx_grad(angles) -> np.ndarray:
    """``(3, 3, 3)`` array: derivative of the rotation w.r.t. each angle."""
    a, b, c = angles
    ca, sa, cb, sb, cc, sc = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(c), np.sin(c)
    rz = np.array([[ca, -sa, 0], [sa, ca, 0], [0, 0, 1]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rx = np.array([[1, 0, 0], [0, cc, -sc], [0, sc, cc]])
    drz = np.array([[-sa, -ca, 0], [ca, -sa, 0], [0, 0, 0]])
    dry = np.array([[-sb, 0, cb], [0, 0, 0], [-cb, 0, -sb]])
    drx = np.array([[0, 0, 0], [0, -sc, -cc], [0, cc, -sc]])
    return np.stack([drz @ ry @ rx, rz @ dry @ rx, rz @ ry @ drx])


# ---------------------------------------------------------------------------
# VertAlign and graph convolution


def _cells(shape, coords):
    """Lower-left interpolation cell ``(x0, y0)`` of each coordinate, plus
    whether it lies strictly between the outer centres along x and y."""
    _, H, W = shape
    x = coords[:, 0] * W - 0.5
    y = coords[:, 1] * H - 0.5
    xc = np.clip(x, 0.0, W - 1.0)
    yc = np.clip(y, 0.0, H - 1.0)
    return (np.minimum(np.floor(xc).astype(np.int64), W - 2),
            np.minimum(np.floor(yc).astype(np.int64), H - 2),
            (x > 0.0) & (x < W - 1.0), (y > 0.0) & (y < H - 1.0))


def _bilinear(data, coords, cells=None):
    """Bilinear samples plus derivatives along u (x) and v (y).

    Cell ``(i, j)`` has its centre at ``((j + .5) / W, (i + .5) / H)``;
    coordinates beyond the outer centres are clamped to the border value.
    ``cells`` pins the interpolation cells and the border clamping (the
    patch is then extended linearly past its edges); by default both follow
    the coordinates.
    """
    C, H, W = data.shape
    x = coords[:, 0] * W - 0.5
    y = coords[:, 1] * H - 0.5
    x0, y0, in_x, in_y = _cells(data.shape, coords) if cells is None else cells
    xc = np.where(in_x, x, np.clip(x, 0.0, W - 1.0))
    yc = np.where(in_y, y, np.clip(y, 0.0, H - 1.0))
    fx = xc - x0
    fy = yc - y0
    f00 = data[:, y0, x0].T
    f01 = data[:, y0, x0 + 1].T
    f10 = data[:, y0 + 1, x0].T
    f11 = data[:, y0 + 1, x0 + 1].T
    fx_, fy_ = fx[:, None], fy[:, None]
    top = f00 + (f01 - f00) * fx_
    bot = f10 + (f11 - f10) * fx_
    val = top + (bot - top) * fy_
    d_x = ((f01 - f00) * (1 - fy_) + (f11 - f10) * fy_) * W * in_x[:, None]
    d_y = (bot - top) * H * in_y[:, None]
    return val, d_x, d_y


def vert_align(feat: RoiFeature, coords) -> np.ndarray:
    """Bilinearly sample every channel at each ``(u, v)`` in [0, 1]^2."""
    return _bilinear(feat.data, np.asarray(coords, dtype=np.float64))[0]


def graph_conv(features, adjacency, w0, w1, bias) -> np.ndarray:
    """``f_i W0 + (sum_{j in N(i)} f_j) W1 + b`` for every vertex."""
    f = np.asarray(features, dtype=np.float64)
    w0 = np.asarray(w0)
    w1 = np.asarray(w1)
    if f.shape[1] != w0.shape[0] or f.shape[1] != w1.shape[0] or w0.shape[1] != w1.shape[1]:
        raise ValueError(
            f"graph_conv dimension mismatch: features {f.shape}, W0 {w0.shape}, W1 {w1.shape}"
        )
    if np.shape(bias) != (w0.shape[1],):
        raise ValueError("bias must match the output width")
    return f @ w0 + adjacency @ (f @ w1) + bias


# ---------------------------------------------------------------------------
# Parameters


@dataclass
class RefineStageParams:
    conv_w: np.ndarray                 # (C, E)
    conv_b: np.ndarray                 # (E,)
    w0: List[np.ndarray]               # per GraphConv layer, (in, out)
    w1: List[np.ndarray]
    b: List[np.ndarray]
    out_w: np.ndarray                  # (hidden, 3)
    out_b: np.ndarray                  # (3,)

    @classmethod
    def init(cls, rng, channels: int, feature_dim: int = FEATURE_DIM,
             hidden: int = HIDDEN_DIM, layers: int = GCN_LAYERS, mean_degree: float = 6.0,
             gain: float = 0.7):
        """Random init that keeps hidden activations O(gain); the offset head starts at zero.

        Neighbouring vertices carry strongly correlated features, so the
        neighbour sum grows with the degree rather than its square root and
        W1 is scaled by ``1 / degree`` accordingly.
        """
        conv_w = rng.normal(0, 1 / np.sqrt(channels), (channels, feature_dim))
        dims = [feature_dim + 3] + [hidden] * layers
        w0, w1, b = [], [], []
        for i in range(layers):
            fan_in = dims[i]
            std = gain / np.sqrt(fan_in)
            w0.append(rng.normal(0, std, (fan_in, dims[i + 1])))
            w1.append(rng.normal(0, std / mean_degree, (fan_in, dims[i + 1])))
            b.append(np.zeros(dims[i + 1]))
        return cls(conv_w, np.zeros(feature_dim), w0, w1, b, np.zeros((hidden, 3)), np.zeros(3))

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {"conv_w": self.conv_w, "conv_b": self.conv_b, "out_w": self.out_w, "out_b": self.out_b}
        for i in range(len(self.w0)):
            out[f"w0_{i}"] = self.w0[i]
            out[f"w1_{i}"] = self.w1[i]
            out[f"b_{i}"] = self.b[i]
        return out

    @classmethod
    def from_arrays(cls, a: Mapping[str, np.ndarray]):
        n = sum(1 for k in a if k.startswith("w0_"))
        return cls(
            np.asarray(a["conv_w"]), np.asarray(a["conv_b"]),
            [np.asarray(a[f"w0_{i}"]) for i in range(n)],
            [np.asarray(a[f"w1_{i}"]) for i in range(n)],
            [np.asarray(a[f"b_{i}"]) for i in range(n)],
            np.asarray(a["out_w"]), np.asarray(a["out_b"]),
        )

    def zeros_like(self) -> "RefineStageParams":
        return RefineStageParams.from_arrays({k: np.zeros_like(v) for k, v in self.arrays().items()})


@dataclass
class RotationHeadParams:
    w1: np.ndarray      # (C * grid * grid, hidden)
    b1: np.ndarray
    w2: np.ndarray      # (hidden, 3)
    b2: np.ndarray

    @classmethod
    def init(cls, rng, channels: int, grid: int = POOL_GRID, hidden: int = ROT_HIDDEN):
        n_in = channels * grid * grid
        return cls(
            rng.normal(0, np.sqrt(2.0 / n_in), (n_in, hidden)),
            np.zeros(hidden),
            np.zeros((hidden, 3)),
            np.zeros(3),
        )

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    @classmethod
    def from_arrays(cls, a):
        return cls(np.asarray(a["w1"]), np.asarray(a["b1"]), np.asarray(a["w2"]), np.asarray(a["b2"]))

    def zeros_like(self):
        return RotationHeadParams.from_arrays({k: np.zeros_like(v) for k, v in self.arrays().items()})


# ---------------------------------------------------------------------------
# Rotation head


def pool_feature(feat: RoiFeature, grid: int = POOL_GRID) -> np.ndarray:
    """Average-pool every channel onto a ``grid x grid`` layout and flatten."""
    C, H, W = feat.data.shape
    ys = np.linspace(0, H, grid + 1).round().astype(int)
    xs = np.linspace(0, W, grid + 1).round().astype(int)
    out = np.empty((C, grid, grid))
    for i in range(grid):
        for j in range(grid):
            out[:, i, j] = feat.data[:, ys[i]:max(ys[i + 1], ys[i] + 1), xs[j]:max(xs[j + 1], xs[j] + 1)].mean(axis=(1, 2))
    return out.reshape(-1)


class RotationForward(NamedTuple):
    matrix: np.ndarray
    angles: np.ndarray
    pooled: np.ndarray
    hidden_pre: np.ndarray


def rotation_forward(feat: RoiFeature, params: RotationHeadParams) -> RotationForward:
    grid = int(round(np.sqrt(params.w1.shape[0] / feat.channels)))
    x = pool_feature(feat, grid)
    z = x @ params.w1 + params.b1
    h = np.maximum(z, 0.0)
    angles = h @ params.w2 + params.b2
    return RotationForward(euler_zyx(angles), angles, x, z)


def rotation_head(feat: RoiFeature, params: RotationHeadParams) -> np.ndarray:
    """ROI feature -> three Euler angles -> proper rotation matrix."""
    return rotation_forward(feat, params).matrix


def rotation_backward(fwd: RotationForward, params: RotationHeadParams, g_matrix) -> RotationHeadParams:
    """Parameter gradients given dL/dR."""
    dR = euler_zyx_grad(fwd.angles)
    g_angles = np.einsum("kij,ij->k", dR, g_matrix)
    h = np.maximum(fwd.hidden_pre, 0.0)
    g = params.zeros_like()
    g.w2 = np.outer(h, g_angles)
    g.b2 = g_angles
    g_z = (params.w2 @ g_angles) * (fwd.hidden_pre > 0)
    g.w1 = np.outer(fwd.pooled, g_z)
    g.b1 = g_z
    return g


def rotation_grad_from_vertices(base_vertices, g_rotated) -> np.ndarray:
    """dL/dR when rotated vertices are ``base @ R.T``."""
    return np.asarray(g_rotated).T @ np.asarray(base_vertices)


# ---------------------------------------------------------------------------
# Refinement stage


class StageFrozen(NamedTuple):
    """ReLU masks, interpolation cells and border clamps pinned at one point.

    Evaluating a stage with these fixed stays on the smooth piece that
    contains the pinned point, which is what the analytic gradient
    differentiates; finite-difference checks use it to step over kinks.
    """

    masks: list
    cells: tuple


class StageCache(NamedTuple):
    vertices: np.ndarray
    frame: np.ndarray  # L: model coordinates -> view-aligned GCN coordinates
    sampled: np.ndarray
    d_u: np.ndarray
    d_v: np.ndarray
    jac: np.ndarray
    valid: np.ndarray
    inputs: list       # x_l for each GraphConv layer
    agg: list          # A @ x_l
    pre: list          # pre-activations z_l
    last: np.ndarray   # final hidden activations
    masks: list        # ReLU masks used for each layer
    cells: tuple       # interpolation cells and clamps used by VertAlign

    def frozen(self) -> StageFrozen:
        return StageFrozen(self.masks, self.cells)


def project(vertices, camera: CameraRig, roi_box):
    return project_vertices(vertices, camera, roi_box)


def view_frame(camera: CameraRig, roi_box) -> np.ndarray:
    """Linear map ``L`` taking model offsets to view-aligned, image-scaled ones.

    ``L v`` is the view-space displacement of ``v`` multiplied by
    ``f / (|z_o| h)``, with ``z_o`` the depth of the model origin and ``h``
    the ROI height in pixels. Depth differences then read in the same units as
    the normalized depth channel, and x/y in ROI heights. The GCN sees
    vertex positions ``L v`` and predicts offsets in this frame, so what it
    learns does not depend on the object's pose.
    """
    mv = camera.model_view
    z_o = abs(float(mv[2, 3]))
    h = float(roi_box[3] - roi_box[1])
    if not z_o > 0:
        raise ValueError("model origin lies in the camera plane")
    return mv[:3, :3] * (camera.focal_px / (z_o * h))


def stage_forward(feat: RoiFeature, vertices, camera: CameraRig, params: RefineStageParams,
                  adjacency: sp.spmatrix, frozen: Optional[StageFrozen] = None):
    """One refinement stage; returns refined vertices and a backward cache."""
    V = np.asarray(vertices, dtype=np.float64)
    proj = project_vertices(V, camera, feat.box)
    cells = _cells(feat.data.shape, proj.coords) if frozen is None else frozen.cells
    S, d_u, d_v = _bilinear(feat.data, proj.coords, cells)
    phi = S @ params.conv_w + params.conv_b
    phi[~proj.valid] = 0.0
    L = view_frame(camera, feat.box)
    x = np.concatenate([phi, V @ L.T], axis=1)
    inputs, agg, pre, masks = [], [], [], []
    for l, (w0, w1, b) in enumerate(zip(params.w0, params.w1, params.b)):
        ax = adjacency @ x
        z = x @ w0 + ax @ w1 + b
        m = z > 0 if frozen is None else frozen.masks[l]
        inputs.append(x)
        agg.append(ax)
        pre.append(z)
        masks.append(m)
        x = z * m
    delta = np.linalg.solve(L, (x @ params.out_w + params.out_b).T).T
    cache = StageCache(V, L, S, d_u, d_v, proj.jacobian, proj.valid, inputs, agg, pre, x, masks, cells)
    return V + delta, cache


def stage_backward(g_out, cache: StageCache, params: RefineStageParams, adjacency: sp.spmatrix):
    """Gradients w.r.t. the stage's input vertices and its parameters."""
    g = params.zeros_like()
    g_V = np.array(g_out, dtype=np.float64)
    # delta = q L^-T for view-frame offsets q, so dq = g L^-1
    g_q = np.linalg.solve(cache.frame.T, np.asarray(g_out, dtype=np.float64).T).T
    g.out_w = cache.last.T @ g_q
    g.out_b = g_q.sum(axis=0)
    g_x = g_q @ params.out_w.T
    for l in reversed(range(len(params.w0))):
        g_z = g_x * cache.masks[l]
        g.w0[l] = cache.inputs[l].T @ g_z
        g.w1[l] = cache.agg[l].T @ g_z
        g.b[l] = g_z.sum(axis=0)
        # adjacency is symmetric, so A^T = A
        g_x = g_z @ params.w0[l].T + adjacency @ (g_z @ params.w1[l].T)
    E = params.conv_w.shape[1]
    g_phi = g_x[:, :E].copy()
    g_V += g_x[:, E:] @ cache.frame
    g_phi[~cache.valid] = 0.0
    g.conv_w = cache.sampled.T @ g_phi
    g.conv_b = g_phi.sum(axis=0)
    g_S = g_phi @ params.conv_w.T
    g_coords = np.stack([np.sum(g_S * cache.d_u, axis=1), np.sum(g_S * cache.d_v, axis=1)], axis=1)
    g_V += np.einsum("kj,kjd->kd", g_coords, cache.jac)
    return g_V, g


def mesh_refine_stage(feat: RoiFeature, ref_vertices, camera: CameraRig,
                      params: RefineStageParams, faces) -> np.ndarray:
    adj = adjacency_matrix(len(ref_vertices), faces)
    return stage_forward(feat, ref_vertices, camera, params, adj)[0]


def refine_forward(feat: RoiFeature, reference: Mesh, camera: CameraRig,
                   stages: Sequence[RefineStageParams], frozen: Optional[Sequence[StageFrozen]] = None):
    """All stages; returns per-stage vertices (``[V0, V1, ..., VL]``) and caches.

    ``frozen`` (one entry per stage, e.g. ``[c.frozen() for c in caches]``)
    pins every stage's kinks at a previous evaluation point.
    """
    if len(stages) < 1:
        raise ValueError("need at least one refinement stage")
    adj = adjacency_matrix(reference.n_vertices, reference.faces)
    verts = [np.array(reference.vertices)]
    caches = []
    for l, p in enumerate(stages):
        v, c = stage_forward(feat, verts[-1], camera, p, adj, None if frozen is None else frozen[l])
        verts.append(v)
        caches.append(c)
    return verts, caches, adj


def refine_backward(stage_grads: Sequence[np.ndarray], caches, stages, adjacency):
    """Backprop per-stage output gradients through the whole stack.

    ``stage_grads[l]`` is dLoss/dV^(l+1) from the loss attached to stage l.
    Returns (dLoss/dV^(0), list of parameter gradients).
    """
    g_next = np.zeros_like(stage_grads[-1])
    grads: List[Optional[RefineStageParams]] = [None] * len(stages)
    for l in reversed(range(len(stages))):
        g_out = stage_grads[l] + g_next
        g_next, grads[l] = stage_backward(g_out, caches[l], stages[l], adjacency)
    return g_next, grads


def refine_pipeline(feat: RoiFeature, reference: Mesh, camera: CameraRig,
                    stages: Sequence[RefineStageParams]) -> Mesh:
    """Chain the stages; the output keeps the reference's faces."""
    verts, _, _ = refine_forward(feat, reference, camera, stages)
    return Mesh(verts[-1], reference.faces)


# ---------------------------------------------------------------------------
# Reference selection


def select_reference(detection, prev_match, mean_shapes: Mapping[int, Mesh],
                     rotation: Union[np.ndarray, Callable, None] = None) -> Mesh:
    """Rotated class mean when untracked, else the previous frame's prediction.

    ``prev_match`` is the aligned previous-frame object (carrying its
    predicted ``mesh``) or the no-match token. ``rotation`` is a 3x3 matrix
    or a callable mapping the detection to one.
    """
    if prev_match and getattr(prev_match, "mesh", None) is not None:
        return prev_match.mesh
    if detection.class_id not in mean_shapes:
        raise ConfigurationError(f"no mean shape for class {detection.class_id}")
    mean = mean_shapes[detection.class_id]
    if rotation is None:
        return mean
    R = rotation(detection) if callable(rotation) else np.asarray(rotation)
    return mean.transformed(R)


# ---------------------------------------------------------------------------
# Depth extent


@dataclass(frozen=True)
class DepthExtent:
    z_near: float
    z_far: float

    @property
    def dz(self) -> float:
        return self.z_far - self.z_near

    @property
    def z_c(self) -> float:
        return 0.5 * (self.z_far + self.z_near)

    def normalized(self, focal: float, box_height: float) -> float:
        return normalize_extent(self.dz, self.z_c, focal, box_height)


def depth_extent(mesh: Mesh, camera: Optional[CameraRig] = None) -> DepthExtent:
    """z range of the vertices (in camera coordinates if a rig is given)."""
    v = mesh.vertices if camera is None else to_view(mesh.vertices, camera)
    return DepthExtent(float(v[:, 2].min()), float(v[:, 2].max()))


def normalize_extent(dz: float, z_c: float, focal: float, box_height: float) -> float:
    if z_c <= 0:
        raise ValueError("z_c must be positive")
    if box_height <= 0:
        raise ValueError("box height must be positive")
    return dz / z_c * focal / box_height


def denormalize_extent(dz_bar: float, z_c: float, focal: float, box_height: float) -> float:
    if z_c <= 0:
        raise ValueError("z_c must be positive")
    return dz_bar * z_c * box_height / focal


# ---------------------------------------------------------------------------
# Augmentation


def augment_reference(gt: Mesh, rot_range: float = np.deg2rad(15.0), sigma: Optional[float] = None,
                      seed: int = 0) -> Mesh:
    """Random rotation (Euler angles uniform in +-rot_range) then Gaussian vertex noise.

    ``sigma`` defaults to 2% of the mesh's bounding-box diagonal.
    """
    rng = np.random.default_rng(seed)
    if sigma is None:
        lo, hi = gt.bounds()
        sigma = 0.02 * float(np.linalg.norm(hi - lo))
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    angles = rng.uniform(-rot_range, rot_range, 3)
    v = gt.vertices @ euler_zyx(angles).T
    if sigma > 0:
        v = v + rng.normal(0.0, sigma, v.shape)
    return Mesh(v, gt.faces)
