"""
Class mean shapes
=================

Average the occupancy of several instances of a class in their shared
object frame, keep cells occupied by more than half of them, and turn the
result back into a simplified surface.
"""

import numpy as np

from meshtrace.meanshape import average_occupancy, mean_shape
from meshtrace.mesh import Mesh
from meshtrace.primitives import box

rng = np.random.default_rng(0)
base = box()
copies = [Mesh(base.vertices * rng.uniform(0.8, 1.2, 3), base.faces) for _ in range(10)]

# %%
# The averaged field is fractional near the faces, where the copies disagree.
occ = average_occupancy(copies, 32)
frac = occ.values[(occ.values > 0) & (occ.values < 1)]
print(f"{frac.size} cells hold a fraction strictly between 0 and 1")

# %%
# Binarize at 0.5, keep the largest component, extract and simplify.
mean = mean_shape(copies, resolution=32, iso=0.5, target_faces=4000)
lo, hi = mean.bounds()
print("mean shape extent:", np.round(hi - lo, 3), "faces:", mean.n_faces)
