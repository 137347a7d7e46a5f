"""Integrated gradients on straight and random piecewise-linear paths.

Both estimators use a right-endpoint Riemann sum: a segment from ``a`` to
``b`` sampled at ``S`` points contributes
``(b - a) * mean_s grad f(a + (s/S)(b - a))`` for ``s = 1..S``.

The checks at the bottom of the module probe the structure of IG for ReLU
networks with central finite differences. They work on the *discrete*
estimator, so they are exact statements about what the attacks consume.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from taig import autodiff


class KinkProximityError(RuntimeError):
    """A sample point sits too close to a ReLU kink; pick another input."""


@dataclass(frozen=True)
class PathSpec:
    kind: str = "straight"  # "straight" | "random"
    S: int = 30
    E: int = 1
    tau: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("straight", "random"):
            raise ValueError(f"unknown path kind {self.kind!r}")
        if self.S < 1 or self.E < 1:
            raise ValueError("S and E must be >= 1")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")

    def with_seed(self, seed: int) -> "PathSpec":
        return PathSpec(self.kind, self.S, self.E, self.tau, seed)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "S": self.S, "E": self.E, "tau": self.tau, "seed": self.seed}


@dataclass(frozen=True)
class Attribution:
    values: np.ndarray
    k: int | np.ndarray
    path: PathSpec
    reference: np.ndarray


def _gradients(model, points: np.ndarray, k) -> np.ndarray:
    """Input gradients of ``f_k`` at a stack of points (leading axis = batch)."""
    own = getattr(model, "input_gradient", None)
    if own is not None:
        return own(points, k)
    return autodiff.grad_input(model, points, k)


def _logit(model, x, k):
    z = model.logits(x)
    if np.ndim(z) == 1:
        return z[k]
    return z[np.arange(len(z)), np.broadcast_to(k, (len(z),))]


def _batched(model, x, r):
    x = np.asarray(x, dtype=np.float64)
    shape = tuple(model.input_shape)
    single = x.shape == shape
    if not single and x.shape[1:] != shape:
        raise autodiff.ShapeError(f"input shape {x.shape} does not match model input {shape}")
    xb = x[None] if single else x
    r = np.broadcast_to(np.asarray(r, dtype=np.float64), xb.shape) if r is not None else np.zeros_like(xb)
    if np.shape(r) != xb.shape:
        raise autodiff.ShapeError(f"reference shape {np.shape(r)} does not match input {x.shape}")
    return xb, r, single


def _segment_average(model, start: np.ndarray, stop: np.ndarray, k, S: int) -> np.ndarray:
    """Mean right-endpoint gradient over segments ``start[b] -> stop[b]``.

    ``start``/``stop`` have shape (M, B, *input); the result has the same shape.
    """
    frac = np.arange(1, S + 1, dtype=np.float64) / S
    frac = frac.reshape((S,) + (1,) * start.ndim)
    pts = start[None] + frac * (stop - start)[None]  # (S, M, B, *input)
    m, b = start.shape[:2]
    ks = np.broadcast_to(np.broadcast_to(k, (b,))[None, None, :], (S, m, b)).reshape(-1)
    g = _gradients(model, pts.reshape((S * m * b,) + start.shape[2:]), ks)
    return g.reshape(pts.shape).mean(axis=0)


def ig_straight(model, x, r=None, k=0, S: int = 30) -> Attribution:
    """Integrated gradients along the straight line from ``r`` (default black) to ``x``."""
    if S < 1:
        raise ValueError("S must be >= 1")
    xb, rb, single = _batched(model, x, r)
    avg = _segment_average(model, rb[None], xb[None], k, S)[0]
    values = (xb - rb) * avg
    return Attribution(values[0] if single else values, k, PathSpec("straight", S), rb[0] if single else rb)


def random_path(x, r, E: int, tau: float, seed: int) -> np.ndarray:
    """Turning points ``x_0..x_E`` of a random piecewise-linear path from ``r`` to ``x``.

    Interior points are ``r + (e/E)(x - r) + v_e`` with ``v_e ~ U(-tau, tau)``
    per component; the endpoints are exactly ``r`` and ``x``.
    """
    if E < 1:
        raise ValueError("E must be >= 1")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    r = np.broadcast_to(np.asarray(r, dtype=np.float64), x.shape)
    frac = (np.arange(E + 1, dtype=np.float64) / E).reshape((E + 1,) + (1,) * x.ndim)
    pts = r[None] + frac * (x - r)[None]
    if tau > 0 and E > 1:
        rng = np.random.default_rng(seed)
        pts[1:E] += rng.uniform(-tau, tau, size=(E - 1,) + x.shape)
    pts[0], pts[E] = r, x
    return pts


def rig(model, x, r=None, k=0, path: PathSpec | None = None) -> Attribution:
    """Integrated gradients summed over the segments of a random piecewise-linear path."""
    path = path or PathSpec("random", S=1, E=30)
    xb, rb, single = _batched(model, x, r)
    turns = random_path(xb, rb, path.E, path.tau, path.seed)  # (E+1, B, *input)
    avg = _segment_average(model, turns[:-1], turns[1:], k, path.S)
    values = ((turns[1:] - turns[:-1]) * avg).sum(axis=0)
    return Attribution(values[0] if single else values, k, path, rb[0] if single else rb)


def attribute(model, x, k, path: PathSpec, r=None) -> Attribution:
    if path.kind == "straight":
        return ig_straight(model, x, r, k, path.S)
    return rig(model, x, r, k, path)


def completeness_gap(model, attribution: Attribution, x, r=None, k=None):
    """``|f_k(x) - f_k(r) - sum_i values_i|`` (per row for a batch)."""
    k = attribution.k if k is None else k
    xb, rb, single = _batched(model, x, r if r is not None else attribution.reference)
    values = np.asarray(attribution.values).reshape(len(xb), -1)
    gap = np.abs(_logit(model, xb, k) - _logit(model, rb, k) - values.sum(axis=1))
    return float(gap[0]) if single else gap


def sign_agreement(model, x, k, attribution) -> float | np.ndarray:
    """Fraction of components where ``sign(attribution) == sign(grad f_k(x))``.

    ``attribution`` may be an :class:`Attribution` or a raw array.
    """
    values = attribution.values if isinstance(attribution, Attribution) else np.asarray(attribution)
    xb, _, single = _batched(model, x, None)
    g = _gradients(model, xb, np.broadcast_to(k, (len(xb),)))
    agree = (np.sign(values.reshape(len(xb), -1)) == np.sign(g.reshape(len(xb), -1))).mean(axis=1)
    return float(agree[0]) if single else agree


def _ig_jacobian(model, x, r, k, S: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference Jacobian of the discrete IG at a single ``x``.

    Raises :class:`KinkProximityError` if any Riemann sample point of any
    perturbed input changes ReLU activation pattern relative to the
    unperturbed one, or sits within ``1e-6 * ||layer||`` of a kink.
    """
    x = np.asarray(x, dtype=np.float64)
    r = np.zeros_like(x) if r is None else np.broadcast_to(np.asarray(r, dtype=np.float64), x.shape)
    n = x.size
    eye = np.eye(n).reshape((n,) + x.shape)
    probes = np.concatenate([x[None], x[None] + h * eye, x[None] - h * eye])  # (2n+1, *input)
    if hasattr(model, "affine_maps"):
        frac = (np.arange(1, S + 1) / S).reshape((S, 1) + (1,) * x.ndim)
        pts = r + frac * (probes - r)[None]
        pre = autodiff.preactivations(model, pts.reshape((-1,) + x.shape))
        maps = model.affine_maps()
        for layer, z in enumerate(pre):
            z = z.reshape(S, 2 * n + 1, -1)
            margin = 1e-6 * np.linalg.norm(maps[layer][0])
            if np.any(np.abs(z[:, 0]) < margin):
                raise KinkProximityError(f"sample point within {margin:.2e} of a kink in layer {layer}")
            if np.any((z > 0) != (z[:, :1] > 0)):
                raise KinkProximityError(f"finite-difference step of {h} crosses a kink in layer {layer}")
    ig = ig_straight(model, probes, np.broadcast_to(r, probes.shape), k, S).values.reshape(2 * n + 1, n)
    jac = (ig[1:n + 1] - ig[n + 1:]).T / (2 * h)  # jac[i, j] = d IG_i / d x_j
    avg_grad = _segment_average(model, r[None, None], x[None, None], k, S)[0, 0].reshape(n)
    return jac, avg_grad


class JacobianCheck(NamedTuple):
    max_offdiag: float
    diag_rel_err: float
    max_diag: float


def offdiag_jacobian_check(model, x, k: int, S: int = 30, h: float = 1e-4, r=None) -> JacobianCheck:
    """Finite-difference probe of the IG Jacobian at ``x``.

    ``max_offdiag`` is the largest ``|d IG_i / d x_j|`` with ``i != j``.
    ``diag_rel_err`` compares each ``d IG_i / d x_i`` with the path-averaged
    gradient ``mean_s d f(r + (s/S)(x - r)) / d x_i`` (the product-rule term
    ``(x_i - r_i) * d^2 f`` vanishes inside a linear region), relative to
    the largest such average.
    """
    jac, avg_grad = _ig_jacobian(model, x, r, k, S, h)
    diag = np.diag(jac).copy()
    off = jac - np.diag(diag)
    scale = max(np.abs(avg_grad).max(), 1e-300)
    return JacobianCheck(float(np.abs(off).max()), float(np.abs(diag - avg_grad).max() / scale),
                         float(np.abs(diag).max()))


def grad_total_check(model, x, k: int, S: int = 200, h: float = 1e-4, r=None) -> float:
    """``||sum_i grad IG_i(x) - grad f_k(x)||_inf`` with finite-difference ``grad IG_i``."""
    jac, _ = _ig_jacobian(model, x, r, k, S, h)
    g = _gradients(model, np.asarray(x, dtype=np.float64)[None], np.array([k]))[0].reshape(-1)
    return float(np.abs(jac.sum(axis=0) - g).max())
