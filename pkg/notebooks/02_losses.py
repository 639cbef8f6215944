"""
Mesh losses and their gradients
===============================

Chamfer, normal and edge terms between a predicted mesh and a target, with
an analytic vertex gradient. A few steps of gradient descent pull a small
sphere onto a larger one.
"""

import numpy as np

from meshtrace.losses import LossWeights, make_target, mesh_loss_target
from meshtrace.primitives import icosphere

target = make_target(icosphere(1.0, 3), n_samples=2000, seed=0)
src = icosphere(0.6, 2)
v = src.vertices.copy()

# %%
# The normal term is the negated mean |cos| between matched normals, so it
# lies in [-2, 0]; matching spheres sit near -2 whatever their size.
lv = mesh_loss_target(v, src.faces, target, 1000)
print(f"start: chamfer {lv.chamfer:.4f}  normal {lv.normal:.4f}  edge {lv.edge:.4f}")

# %%
# Plain gradient descent on the Chamfer term alone.
w = LossWeights(1.0, 0.0, 0.0)
for step in range(40):
    lv = mesh_loss_target(v, src.faces, target, 1000, w, seed=step)
    v -= 0.2 * lv.grad * len(v) / 10
print(f"after 40 steps: chamfer {lv.chamfer:.4f}")
print("mean radius:", np.linalg.norm(v, axis=1).mean().round(3))
