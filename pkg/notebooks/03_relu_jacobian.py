"""How IG responds to moving the input, on a piecewise-linear net.

Inside a region where no Riemann sample point changes activation pattern,
the discrete IG is ``x_i`` times a path-averaged gradient that does not
depend on ``x``. So its Jacobian is diagonal. The sum of that diagonal
equals the gradient only when the path-averaged gradient equals the
gradient at ``x``. That holds for bias-free nets with a black reference,
but not in general.
"""

import numpy as np

from taig import attribution as A, autodiff, models

rng = np.random.default_rng(0)


def safe_point(net, S):
    while True:
        x = rng.uniform(0.05, 1.0, size=net.input_shape)
        try:
            A._ig_jacobian(net, x, None, 0, S, 1e-4)
            return x
        except A.KinkProximityError:
            pass


for label, zero_bias in (("with biases", False), ("bias-free", True)):
    net = models.init("mlp-32-16", (10,), 3, seed=1)
    if zero_bias:
        for layer in net.layers:
            layer.bias[...] = 0.0
        net.invalidate()
    x = safe_point(net, 200)
    chk = A.offdiag_jacobian_check(net, x, 0, S=200)
    g = np.abs(autodiff.grad_input(net, x, 0)).max()
    total = A.grad_total_check(net, x, 0, S=200) / g
    print(f"{label:12s} offdiag/diag {chk.max_offdiag / chk.max_diag:.1e}   "
          f"|sum grad IG - grad f| / |grad f| {total:.2e}")


class Product:
    """f(x) = x0 * x1: smooth, and IG_0 depends on x1."""

    input_shape = (2,)
    n_classes = 2

    def logits(self, x):
        f = x[..., 0] * x[..., 1]
        return np.stack([f, -f], axis=-1)

    def input_gradient(self, x, k):
        g = np.stack([x[..., 1], x[..., 0]], axis=-1)
        return np.where(np.asarray(k)[..., None] == 0, g, -g)


chk = A.offdiag_jacobian_check(Product(), np.array([0.6, 0.5]), 0, S=200)
print(f"x0*x1        offdiag/diag {chk.max_offdiag / chk.max_diag:.2f}  (not diagonal)")
