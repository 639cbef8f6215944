"""Painter's-algorithm rasterizer for fixture frames and ROI feature synthesis.

Triangles of every object are sorted far-to-near by mean view depth and
drawn in that order, so nearer surfaces overwrite farther ones. Pixel
``(r, c)`` is covered by a triangle when its centre ``(c + .5, r + .5)`` lies
inside (edges inclusive). That is crude but exact enough for masks,
occlusion rates and coarse depth.
"""

from __future__ import annotations

from typing import List, NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from .camera import CameraRig, project_to_pixels, to_view
from .mesh import Mesh
from .refine import RoiFeature

IMAGE_SIZE = 128
ROI_SIZE = 28
BACKGROUND = -1


class Frame(NamedTuple):
    depth: np.ndarray    # (H, W) view-space z, inf where empty
    ids: np.ndarray      # (H, W) object index, BACKGROUND where empty


def _triangles(mesh: Mesh, camera: CameraRig):
    px, w = project_to_pixels(mesh.vertices, camera)
    z = to_view(mesh.vertices, camera)[:, 2]
    tri = mesh.faces
    keep = np.all(w[tri] > 0, axis=1)
    return px[tri[keep]], z[tri[keep]]


def _draw(tri_px, tri_z, depth, ids, obj_id, height, width):
    """Rasterize one triangle into the buffers (painter's order, no z test)."""
    x0 = max(int(np.floor(tri_px[:, 0].min() - 0.5)), 0)
    x1 = min(int(np.ceil(tri_px[:, 0].max() - 0.5)), width - 1)
    y0 = max(int(np.floor(tri_px[:, 1].min() - 0.5)), 0)
    y1 = min(int(np.ceil(tri_px[:, 1].max() - 0.5)), height - 1)
    if x1 < x0 or y1 < y0:
        return
    (ax, ay), (bx, by), (cx, cy) = tri_px
    det = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy)
    if abs(det) < 1e-12:
        return
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    px = xs + 0.5
    py = ys + 0.5
    l0 = ((by - cy) * (px - cx) + (cx - bx) * (py - cy)) / det
    l1 = ((cy - ay) * (px - cx) + (ax - cx) * (py - cy)) / det
    l2 = 1.0 - l0 - l1
    eps = -1e-9
    inside = (l0 >= eps) & (l1 >= eps) & (l2 >= eps)
    if not inside.any():
        return
    zz = l0 * tri_z[0] + l1 * tri_z[1] + l2 * tri_z[2]
    sub_d = depth[y0:y1 + 1, x0:x1 + 1]
    sub_i = ids[y0:y1 + 1, x0:x1 + 1]
    sub_d[inside] = zz[inside]
    sub_i[inside] = obj_id


def render(objects: Sequence[Mesh], cameras: Sequence[CameraRig],
           size=(IMAGE_SIZE, IMAGE_SIZE)) -> Frame:
    """Render several objects (each with its own rig, i.e. world matrix)."""
    height, width = size
    depth = np.full((height, width), np.inf)
    ids = np.full((height, width), BACKGROUND, dtype=np.int64)
    all_px, all_z, owner = [], [], []
    for k, (mesh, cam) in enumerate(zip(objects, cameras)):
        p, z = _triangles(mesh, cam)
        all_px.append(p)
        all_z.append(z)
        owner.append(np.full(len(p), k))
    if not all_px:
        return Frame(depth, ids)
    tri_px = np.concatenate(all_px)
    tri_z = np.concatenate(all_z)
    owner = np.concatenate(owner)
    # far-to-near; stable sort so equal depths keep input order
    order = np.argsort(-tri_z.mean(axis=1), kind="stable")
    for t in order:
        _draw(tri_px[t], tri_z[t], depth, ids, owner[t], height, width)
    return Frame(depth, ids)


def amodal_mask(mesh: Mesh, camera: CameraRig, size=(IMAGE_SIZE, IMAGE_SIZE)) -> np.ndarray:
    return render([mesh], [camera], size).ids == 0


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one 4-neighbour outside the mask."""
    return mask & ~ndimage.binary_erosion(mask, border_value=0)


def tight_box(mask: np.ndarray):
    """``(x0, y0, x1, y1)`` pixel-edge box around a nonempty mask, else None."""
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    if len(rows) == 0:
        return None
    return (float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


def expand_box(box, margin: float):
    """Grow ``box`` by ``margin`` times its width/height on every side."""
    x0, y0, x1, y1 = box
    dx, dy = margin * (x1 - x0), margin * (y1 - y0)
    return (x0 - dx, y0 - dy, x1 + dx, y1 + dy)


def roi_feature(modal: np.ndarray, depth: np.ndarray, box, z_c: float, focal: float,
                size: int = ROI_SIZE, margin: float = 0.0) -> RoiFeature:
    """Three channels over ``box`` grown by ``margin``: modal silhouette, normalized depth, boundary.

    Depth inside the silhouette is ``(z - z_c) / z_c * f / h`` (h = height of
    ``box`` in pixels, before the margin), zero elsewhere. Channels are
    bilinearly resampled at the ``size x size`` cell centres of the grown
    box, which is the box stored on the feature. The margin lets vertices
    that stray past the object still land on background.
    """
    h = box[3] - box[1]
    x0, y0, x1, y1 = roi = expand_box(box, margin)
    sil = modal.astype(np.float64)
    nd = np.where(modal, (np.where(np.isfinite(depth), depth, z_c) - z_c) / z_c * focal / h, 0.0)
    bd = boundary(modal).astype(np.float64)
    u = x0 + (np.arange(size) + 0.5) / size * (x1 - x0) - 0.5
    v = y0 + (np.arange(size) + 0.5) / size * (y1 - y0) - 0.5
    vv, uu = np.meshgrid(v, u, indexing="ij")
    coords = np.stack([vv.ravel(), uu.ravel()])
    chans: List[np.ndarray] = []
    for img in (sil, nd, bd):
        chans.append(ndimage.map_coordinates(img, coords, order=1, mode="constant", cval=0.0)
                     .reshape(size, size))
    return RoiFeature(np.stack(chans), roi)
