"""A walk through integrated gradients on a trained ReLU net.

Run with ``python notebooks/01_integrated_gradients.py``. Takes about a
minute, most of it training the surrogate.
"""

import numpy as np

from taig import attribution as A, autodiff, experiments, models

train, test = experiments.desk_data(seed=0)
net = models.init(experiments.SURROGATE, train.input_shape, train.n_classes, seed=0)
net, acc = models.train(net, train, models.TrainConfig(seed=0, **experiments.DESK_TRAIN), heldout=test)
print(f"{net.arch}: held-out accuracy {acc:.3f}")

x, y = test.images[0], int(test.labels[0])
black = np.zeros_like(x)
delta = net.logits(x)[y] - net.logits(black)[y]
print(f"f_y(x) - f_y(black) = {delta:.6f}")

# The Riemann sum converges at rate 1/S: each ReLU kink crossed by the
# straight path costs up to one sample's worth of error.
for S in (10, 50, 400, 3200):
    ig = A.ig_straight(net, x, k=y, S=S)
    print(f"  S={S:5d}  sum(IG) = {ig.values.sum():.6f}  gap = {A.completeness_gap(net, ig, x):.2e}")

# A random piecewise path has the same endpoints, so its exact integral is
# the same total. With one sample per segment (the attack setting) the
# estimate drifts badly as tau grows; the attacks only use its signs.
ig = A.ig_straight(net, x, k=y, S=30)
for tau in (0.0, 0.05, 0.1):
    r = A.rig(net, x, k=y, path=A.PathSpec("random", S=1, E=30, tau=tau, seed=0))
    agree = A.sign_agreement(net, x, y, r)
    print(f"  tau={tau:.2f}  sum(RIG) = {r.values.sum():.4f}  sign agreement with grad {agree:.3f}")
print(f"  straight IG sign agreement with grad {A.sign_agreement(net, x, y, ig):.3f}")

# Pixels where the path from black and the local slope disagree.
g = autodiff.grad_input(net, x, y)
flip = np.sign(g) != np.sign(ig.values)
print(f"{flip.sum()} of {flip.size} pixels have sign(IG) != sign(grad)")
