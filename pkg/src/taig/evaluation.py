"""Attack success rates, transfer matrices, perceptual metrics, sign statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from taig import attacks, autodiff
from taig.attribution import attribute


def asr(victim, originals, adversarials, labels, mode: str = "untargeted") -> float:
    """Attack success rate of ``adversarials`` against ``victim``.

    Untargeted: fraction whose prediction differs from ``labels``.
    Targeted: ``labels`` are the targets; fraction predicted as the target.
    Inputs are expected to be pre-filtered so ``victim`` gets ``originals`` right.
    """
    adversarials = np.asarray(adversarials)
    labels = np.asarray(labels)
    if len(np.asarray(originals)) != len(adversarials) or len(adversarials) != len(labels):
        raise ValueError("originals, adversarials and labels must have equal length")
    if len(labels) == 0:
        return float("nan")
    pred = victim.predict(adversarials)
    hit = pred != labels if mode == "untargeted" else pred == labels
    return float(np.mean(hit))


def pick_targets(labels, n_classes: int, seed: int) -> np.ndarray:
    """A uniformly random wrong class for every label."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    return (labels + rng.integers(1, n_classes, size=len(labels))) % n_classes


@dataclass
class TransferMatrix:
    attack: str
    epsilon: float
    surrogate: str
    victims: list[str]
    rates: list[float]
    counts: list[int]
    is_surrogate: list[bool]

    @property
    def average(self) -> float | None:
        """Mean black-box rate; ``None`` when every cell is the surrogate itself."""
        bb = [r for r, s in zip(self.rates, self.is_surrogate) if not s]
        return float(np.mean(bb)) if bb else None

    def rows(self) -> list[dict]:
        return [
            {"attack": self.attack, "surrogate": self.surrogate, "victim": v, "epsilon": self.epsilon,
             "success_rate": r, "n": n, "is_surrogate": s}
            for v, r, n, s in zip(self.victims, self.rates, self.counts, self.is_surrogate)
        ]


def _tagged(models) -> list[tuple[str, object]]:
    if isinstance(models, dict):
        return list(models.items())
    return [(getattr(m, "arch", str(i)), m) for i, m in enumerate(models)]


def transfer_eval(surrogate, victims, data, cfg: attacks.AttackConfig, attack_name: str = "attack",
                  targets=None, surrogate_tag: str | None = None) -> tuple[TransferMatrix, attacks.AttackResult]:
    """Craft adversarials once on ``surrogate`` and score them on every victim.

    A victim counts as the surrogate if it is the same object or carries
    ``surrogate_tag``; such cells are kept but flagged and left out of the average.
    """
    surrogate_tag = surrogate_tag or surrogate.arch
    goal = data.labels if cfg.mode == "untargeted" else np.asarray(targets)
    if cfg.mode == "targeted" and targets is None:
        raise ValueError("targeted transfer evaluation needs targets")
    result = attacks.run(surrogate, data.images, goal, cfg)
    tags, rates, counts, diag = [], [], [], []
    for tag, net in _tagged(victims):
        tags.append(tag)
        rates.append(asr(net, data.images, result.adversarial, goal, cfg.mode))
        counts.append(len(goal))
        diag.append(net is surrogate or tag == surrogate_tag)
    return TransferMatrix(attack_name, cfg.epsilon, surrogate_tag, tags, rates, counts, diag), result


@dataclass
class MetricReport:
    rmse: np.ndarray
    l0: np.ndarray
    psnr: np.ndarray
    summary: dict = field(default_factory=dict)


def psnr_from_rmse(rmse: float, peak: float = 1.0) -> float:
    return math.inf if rmse == 0 else 20.0 * math.log10(peak / rmse)


def perceptual(originals, adversarials, threshold: float = 1e-12) -> MetricReport:
    """Per-image RMSE, fraction of changed components (L0) and PSNR with peak 1."""
    a = np.asarray(originals, dtype=np.float64)
    b = np.asarray(adversarials, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 1:
        a, b = a[None], b[None]
    diff = (b - a).reshape(len(a), -1)
    rmse = np.sqrt(np.mean(diff ** 2, axis=1))
    l0 = np.mean(np.abs(diff) > threshold, axis=1)
    psnr = np.array([psnr_from_rmse(v) for v in rmse])
    finite = psnr[np.isfinite(psnr)]
    summary = {"rmse": float(rmse.mean()), "l0": float(l0.mean()),
               "psnr": float(finite.mean()) if len(finite) else math.inf}
    return MetricReport(rmse, l0, psnr, summary)


@dataclass
class SignHistogram:
    source: str
    values: np.ndarray  # per-image normalised disagreement in [0, 1]
    counts: np.ndarray
    edges: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.values.mean())


def sign_disagreement(net, images, k, source) -> np.ndarray:
    """``||sign(A) - sign(grad f_k)||_1 / (2N)`` per image; ``source`` is a PathSpec or "gradient"."""
    g = autodiff.grad_input(net, images, k)
    a = g if source == "gradient" else attribute(net, images, k, source).values
    n = g[0].size
    return np.abs(np.sign(a) - np.sign(g)).reshape(len(g), -1).sum(axis=1) / (2 * n)


def sign_hist(net, data, sources, bins: int = 20, k=None) -> dict[str, SignHistogram]:
    """One histogram of normalised sign disagreement per attribution source."""
    k = data.labels if k is None else k
    edges = np.linspace(0.0, 1.0, bins + 1)
    out = {}
    for src in sources:
        tag = src if isinstance(src, str) else (
            f"{src.kind}(S={src.S}" + (f",E={src.E},tau={src.tau:g})" if src.kind == "random" else ")"))
        values = sign_disagreement(net, data.images, k, src)
        counts, _ = np.histogram(values, bins=edges)
        out[tag] = SignHistogram(tag, values, counts, edges)
    return out

