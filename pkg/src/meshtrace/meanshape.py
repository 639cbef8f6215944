"""Class mean shapes: averaged occupancy -> binarize -> largest component ->
marching cubes -> quadric simplification."""

from typing import Sequence

import numpy as np
from scipy import ndimage
from skimage.measure import marching_cubes

from .errors import DegenerateError
from .mesh import Mesh, OccupancyGrid, signed_volume, voxelize
from .simplify import simplify

DEFAULT_RESOLUTION = 32
DEFAULT_ISO = 0.5


def average_occupancy(meshes: Sequence[Mesh], resolution: int = DEFAULT_RESOLUTION) -> OccupancyGrid:
    """Mean of per-instance occupancies on one grid spanning all inputs."""
    if not meshes:
        raise ValueError("need at least one mesh")
    lo = np.min([m.vertices.min(axis=0) for m in meshes], axis=0)
    hi = np.max([m.vertices.max(axis=0) for m in meshes], axis=0)
    total = None
    watertight = True
    for m in meshes:
        g = voxelize(m, resolution, bounds=(lo, hi))
        watertight &= g.watertight
        total = g.values.copy() if total is None else total + g.values
    return OccupancyGrid(total / len(meshes), g.origin, g.cell_size, watertight)


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Largest 6-connected component; ties go to the lowest first cell index."""
    labels, n = ndimage.label(mask)
    if n == 0:
        return np.zeros_like(mask, dtype=bool)
    sizes = np.bincount(labels.ravel())[1:]
    # ndimage.label numbers components in raster order of their first cell
    keep = int(np.argmax(sizes)) + 1
    return labels == keep


def extract_surface(mask: np.ndarray, origin, cell_size) -> Mesh:
    """Marching cubes on a binary mask, placed in model coordinates."""
    padded = np.pad(mask.astype(np.float64), 1)
    verts, faces, _, _ = marching_cubes(padded, level=0.5, spacing=tuple(cell_size))
    # padded index i sits at origin + (i - 1 + 0.5) * cell
    verts = verts + np.asarray(origin) - 0.5 * np.asarray(cell_size)
    mesh = Mesh(verts, faces)
    if signed_volume(mesh) < 0:
        mesh = Mesh(verts, faces[:, ::-1])
    return mesh


def mean_shape(
    meshes: Sequence[Mesh],
    resolution: int = DEFAULT_RESOLUTION,
    iso: float = DEFAULT_ISO,
    target_faces: int = 4000,
) -> Mesh:
    grid = average_occupancy(meshes, resolution)
    component = largest_component(grid.values > iso)
    if not component.any():
        raise DegenerateError(f"no cell survives binarization at iso={iso}")
    surface = extract_surface(component, grid.origin, grid.cell_size)
    return simplify(surface, target_faces)
