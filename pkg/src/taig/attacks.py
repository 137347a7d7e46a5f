"""Sign-step attacks on logits: TAIG-S, TAIG-R and the FGSM family.

All attacks here move the input against (``descend``) or along (``ascend``)
the sign of a direction ``g`` computed for a single logit ``f_c``:

* untargeted: ``c`` is the true label and the default is to descend,
  ``x - alpha * sign(g)``. For the plain gradient this is FGSM with the
  cross-entropy ascent replaced by logit descent.
* targeted: ``c`` is the target class and the default is to ascend,
  ``x + alpha * sign(g)``.

``g`` comes from a :class:`GradientSource`: the raw gradient, IG on the
straight path from the black image (TAIG-S) or RIG on a random path
(TAIG-R). With ``momentum > 0`` the L1-normalised directions are
accumulated MI-FGSM style before taking the sign.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from taig import autodiff
from taig.attribution import PathSpec, ig_straight, rig


@dataclass(frozen=True)
class GradientSource:
    variant: str = "gradient"  # "gradient" | "ig" | "rig"
    path: PathSpec | None = None
    momentum: float = 0.0

    def __post_init__(self):
        if self.variant not in ("gradient", "ig", "rig"):
            raise ValueError(f"unknown gradient source {self.variant!r}")
        if self.momentum < 0:
            raise ValueError("momentum decay must be >= 0")
        if self.variant != "gradient" and self.path is None:
            kind = "straight" if self.variant == "ig" else "random"
            object.__setattr__(self, "path", PathSpec(kind, S=30 if kind == "straight" else 1, E=1 if kind == "straight" else 30))

    def to_dict(self) -> dict:
        return {"variant": self.variant, "momentum": self.momentum,
                "path": None if self.path is None else self.path.to_dict()}


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    alpha: float
    iterations: int = 1
    mode: str = "untargeted"  # "untargeted" | "targeted"
    direction: str | None = None  # None picks descend/ascend from the mode
    source: GradientSource = field(default_factory=GradientSource)
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.epsilon > 0 and self.alpha > self.epsilon:
            raise ValueError(f"alpha {self.alpha} exceeds epsilon {self.epsilon}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.mode not in ("untargeted", "targeted"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.direction not in (None, "descend", "ascend"):
            raise ValueError(f"unknown direction {self.direction!r}")

    @property
    def sense(self) -> float:
        d = self.direction or ("descend" if self.mode == "untargeted" else "ascend")
        return -1.0 if d == "descend" else 1.0

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "alpha": self.alpha, "iterations": self.iterations,
                "mode": self.mode, "direction": self.direction, "source": self.source.to_dict(),
                "seed": self.seed}


@dataclass
class AttackResult:
    adversarial: np.ndarray
    iterations_used: int
    trace: np.ndarray  # (iterations + 1, ...) logit of the attacked class at each iterate
    success: np.ndarray | bool


def direction(model, x, cls, source: GradientSource, seed: int = 0) -> np.ndarray:
    """The direction whose sign the attack step follows, same shape as ``x``."""
    if source.variant == "gradient":
        return autodiff.grad_input(model, x, cls)
    if source.variant == "ig":
        return ig_straight(model, x, None, cls, source.path.S).values
    return rig(model, x, None, cls, source.path.with_seed(seed)).values


def project(x: np.ndarray, origin: np.ndarray, epsilon: float) -> np.ndarray:
    """Clip into the l-inf ball around ``origin``, then into [0, 1].

    A final nudge by one ulp toward ``origin`` makes ``|x - origin| <= epsilon``
    hold in floating point, not just in exact arithmetic.
    """
    out = np.clip(np.clip(x, origin - epsilon, origin + epsilon), 0.0, 1.0)
    for _ in range(4):
        over = (out - origin) > epsilon
        under = (origin - out) > epsilon
        if not (over.any() or under.any()):
            break
        out[over] = np.nextafter(out[over], -np.inf)
        out[under] = np.nextafter(out[under], np.inf)
    return out


def _check(model, x, cls):
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == tuple(model.input_shape)
    if not single and x.shape[1:] != tuple(model.input_shape):
        raise autodiff.ShapeError(f"input shape {x.shape} does not match model input {model.input_shape}")
    n = 1 if single else len(x)
    cls = np.asarray(cls)
    if cls.ndim and len(cls) != n:
        raise ValueError(f"{len(cls)} labels for {n} inputs")
    if not np.issubdtype(cls.dtype, np.integer) or np.any(cls < 0) or np.any(cls >= model.n_classes):
        raise IndexError(f"class index out of range [0, {model.n_classes})")
    return x, cls, single


def step(model, x, cls, cfg: AttackConfig, origin=None, iteration: int = 0) -> np.ndarray:
    """One projected sign step from ``x``; ``origin`` (default ``x``) anchors the budget."""
    x, cls, _ = _check(model, x, cls)
    origin = x if origin is None else np.asarray(origin, dtype=np.float64)
    g = direction(model, x, cls, cfg.source, cfg.seed + iteration)
    return project(x + cfg.sense * cfg.alpha * np.sign(g), origin, cfg.epsilon)


def _class_logit(model, x, cls):
    z = model.logits(x)
    if z.ndim == 1:
        return z[cls]
    return z[np.arange(len(z)), np.broadcast_to(cls, (len(z),))]


def run(model, x, cls, cfg: AttackConfig) -> AttackResult:
    """Iterate :func:`step` ``cfg.iterations`` times from ``x``.

    RIG paths are redrawn every iteration with seed ``cfg.seed + t``.
    """
    x, cls, single = _check(model, x, cls)
    adv = x.copy()
    trace = [_class_logit(model, adv, cls)]
    mu = cfg.source.momentum
    accum = np.zeros_like(x)
    for t in range(cfg.iterations):
        g = direction(model, adv, cls, cfg.source, cfg.seed + t)
        if mu > 0:
            flat = g.reshape(1 if single else len(g), -1)
            norm = np.abs(flat).sum(axis=1)
            norm[norm == 0] = 1.0
            accum = mu * accum + (flat / norm[:, None]).reshape(g.shape)
            g = accum
        adv = project(adv + cfg.sense * cfg.alpha * np.sign(g), x, cfg.epsilon)
        trace.append(_class_logit(model, adv, cls))
    pred = model.predict(adv)
    success = pred != cls if cfg.mode == "untargeted" else pred == cls
    return AttackResult(adv, cfg.iterations, np.array(trace), bool(success) if single else success)


def fgsm(model, x, y, epsilon: float) -> AttackResult:
    return run(model, x, y, AttackConfig(epsilon, epsilon, 1))


def ifgsm(model, x, y, epsilon: float, alpha: float = 1 / 255, iterations: int = 20) -> AttackResult:
    return run(model, x, y, AttackConfig(epsilon, alpha, iterations))


def mifgsm(model, x, y, epsilon: float, alpha: float = 1 / 255, iterations: int = 20,
           momentum: float = 1.0) -> AttackResult:
    return run(model, x, y, AttackConfig(epsilon, alpha, iterations, source=GradientSource(momentum=momentum)))


def taig_s(epsilon: float, alpha: float = 1 / 255, iterations: int = 20, S: int = 30,
           momentum: float = 0.0, seed: int = 0, **kw) -> AttackConfig:
    src = GradientSource("ig", PathSpec("straight", S=S), momentum)
    return AttackConfig(epsilon, alpha, iterations, source=src, seed=seed, **kw)


def taig_r(epsilon: float, alpha: float = 1 / 255, iterations: int = 20, E: int = 30, S: int = 1,
           tau: float | None = None, momentum: float = 0.0, seed: int = 0, **kw) -> AttackConfig:
    """TAIG-R config; ``tau`` defaults to ``epsilon``."""
    path = PathSpec("random", S=S, E=E, tau=epsilon if tau is None else tau)
    return AttackConfig(epsilon, alpha, iterations, source=GradientSource("rig", path, momentum), seed=seed, **kw)


def with_iterations(cfg: AttackConfig, iterations: int) -> AttackConfig:
    return replace(cfg, iterations=iterations)
