"""Camera rig (world / view / projection / viewport) and vertex projection.

Matrices act on column vectors: ``clip = P @ V @ W @ [x, y, z, 1]``. View
space is left-handed with the camera looking down +z and y up, so depth is
the (positive) view-space z. Viewport pixels grow right and down.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


def _mat(m):
    a = np.array(m, dtype=np.float64).reshape(4, 4)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class CameraRig:
    world: np.ndarray
    view: np.ndarray
    projection: np.ndarray
    viewport: tuple  # (x, y, width, height) in pixels

    def __post_init__(self):
        object.__setattr__(self, "world", _mat(self.world))
        object.__setattr__(self, "view", _mat(self.view))
        object.__setattr__(self, "projection", _mat(self.projection))
        vp = tuple(float(x) for x in self.viewport)
        if len(vp) != 4 or vp[2] <= 0 or vp[3] <= 0:
            raise ValueError("viewport needs positive width and height")
        object.__setattr__(self, "viewport", vp)

    @property
    def model_view(self) -> np.ndarray:
        return self.view @ self.world

    @property
    def full(self) -> np.ndarray:
        return self.projection @ self.view @ self.world

    @property
    def focal_px(self) -> float:
        """Vertical focal length in pixels."""
        return float(self.projection[1, 1] * self.viewport[3] / 2.0)

    def with_world(self, world) -> "CameraRig":
        return CameraRig(world, self.view, self.projection, self.viewport)

    def to_dict(self) -> dict:
        return {
            "world": self.world.reshape(-1).tolist(),
            "view": self.view.reshape(-1).tolist(),
            "projection": self.projection.reshape(-1).tolist(),
            "viewport": list(self.viewport),
        }


def perspective(fov_y: float, aspect: float, near: float, far: float) -> np.ndarray:
    """Left-handed perspective with ``w = z``; NDC depth in [0, 1]."""
    f = 1.0 / np.tan(fov_y / 2.0)
    return np.array([
        [f / aspect, 0, 0, 0],
        [0, f, 0, 0],
        [0, 0, far / (far - near), -near * far / (far - near)],
        [0, 0, 1, 0],
    ])


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """View matrix for a camera at ``eye`` looking at ``target`` (+z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(up, dtype=np.float64), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    m = np.eye(4)
    m[0, :3], m[1, :3], m[2, :3] = x, y, z
    m[:3, 3] = -m[:3, :3] @ eye
    return m


def translation(t) -> np.ndarray:
    m = np.eye(4)
    m[:3, 3] = t
    return m


def to_view(vertices, camera: CameraRig) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    mv = camera.model_view
    return v @ mv[:3, :3].T + mv[:3, 3]


def project_to_pixels(vertices, camera: CameraRig):
    """Pixel coordinates and homogeneous w for model-space vertices."""
    v = np.asarray(vertices, dtype=np.float64)
    m = camera.full
    clip = v @ m[:3, :3].T + m[:3, 3]
    w = v @ m[3, :3] + m[3, 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        ndc = clip[:, :2] / w[:, None]
    x0, y0, width, height = camera.viewport
    px = x0 + (ndc[:, 0] + 1.0) * 0.5 * width
    py = y0 + (1.0 - ndc[:, 1]) * 0.5 * height
    return np.stack([px, py], axis=1), w


class Projection(NamedTuple):
    coords: np.ndarray     # (K, 2) in [0, 1]^2, (u along x, v along y)
    valid: np.ndarray      # (K,) False for vertices with w <= 0
    jacobian: np.ndarray   # (K, 2, 3) d coords / d vertex; zero where clamped


def project_vertices(vertices, camera: CameraRig, roi_box) -> Projection:
    """Project model-space vertices and normalize into the ROI box.

    Coordinates outside the box are clamped to [0, 1] (their Jacobian along
    the clamped axis is zero). Vertices behind the camera are flagged invalid.
    """
    v = np.asarray(vertices, dtype=np.float64)
    m = camera.full
    a = m[:2, :3]          # rows producing clip x, y
    b = m[:2, 3]
    c = m[3, :3]           # row producing w
    d = m[3, 3]
    clip = v @ a.T + b
    w = v @ c + d
    valid = w > 0
    safe_w = np.where(valid, w, 1.0)
    ndc = clip / safe_w[:, None]
    x0, y0, width, height = camera.viewport
    bx0, by0, bx1, by1 = roi_box
    sx = 0.5 * width / (bx1 - bx0)
    sy = -0.5 * height / (by1 - by0)
    u = (x0 + 0.5 * width - bx0) / (bx1 - bx0) + sx * ndc[:, 0]
    t = (y0 + 0.5 * height - by0) / (by1 - by0) + sy * ndc[:, 1]
    raw = np.stack([u, t], axis=1)
    coords = np.clip(raw, 0.0, 1.0)

    # d ndc_k / d v = (a_k * w - clip_k * c) / w^2
    dndc = (a[None, :, :] * safe_w[:, None, None] - clip[:, :, None] * c[None, None, :]) / (
        safe_w[:, None, None] ** 2
    )
    jac = dndc * np.array([sx, sy])[None, :, None]
    inside = (raw > 0.0) & (raw < 1.0) & valid[:, None]
    jac = jac * inside[:, :, None]
    coords[~valid] = 0.0
    return Projection(coords, valid, jac)
