"""
Meshes, sampling and occupancy
==============================

Load a mesh from OBJ text, sample its surface, test points for
inside-ness and voxelize it. Everything here is plain numpy arrays.
"""

import numpy as np

from meshtrace.mesh import load_obj, sample_points, save_obj, voxelize, points_inside
from meshtrace.primitives import box

# %%
# A quad face in OBJ is split into two triangles on load.
text = """
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
f 1 2 3 4
"""
quad = load_obj(text)
print("faces of the quad:\n", quad.faces)

# %%
# Primitives come from the same Mesh type; OBJ round trips are exact.
cube = box((1.0, 2.0, 1.0))
again = load_obj(save_obj(cube))
print("round trip equal:", np.array_equal(again.vertices, cube.vertices))

# %%
# Area-weighted surface samples: about twice as many land on the tall faces.
pts = sample_points(cube, 6000, seed=0)
on_side = np.isclose(np.abs(pts.points[:, 0]), 0.5).mean()
print(f"fraction on the two x faces: {on_side:.3f} (expected {4 / 10:.3f})")

# %%
# Parity inside test, then a 16^3 occupancy grid over a box twice the
# cube's size in every direction, so 1/8 of the cells are filled.
print("inside:", points_inside(cube, [[0, 0, 0], [0, 1.5, 0]]))
lo, hi = cube.bounds()
grid = voxelize(cube, 16, bounds=(2 * lo, 2 * hi))
print("occupied cells:", int(grid.values.sum()), "of", grid.values.size)
