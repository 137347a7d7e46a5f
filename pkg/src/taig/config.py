"""INI run configuration: parsing, exhaustive validation, seed derivation.

Sections: ``[run]``, ``[data]``, ``[zoo]``, one ``[attack.<name>]`` per
attack, ``[eval]`` and optionally ``[ablate]``. Unknown sections and keys are
errors. Every error carries the line number it refers to when one exists.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

from taig import models
from taig.attacks import AttackConfig, GradientSource
from taig.attribution import PathSpec

METHODS = ("fgsm", "ifgsm", "mifgsm", "taig-s", "taig-r", "mtaig-s", "mtaig-r")

# iteration counts paired with each budget when none is given
DEFAULT_ITERATIONS = {0.03: 20, 0.05: 50, 0.1: 100, 4 / 255: 20, 8 / 255: 50, 16 / 255: 100}
DEFAULT_ALPHA = 1 / 255
DEFAULT_S = 30
DEFAULT_E = 30


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def derive_seed(seed: int, component: str, index: int = 0) -> int:
    """Child seed from ``(global seed, component name, index)``; stable across additions."""
    digest = hashlib.blake2b(f"{seed}/{component}/{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def default_iterations(epsilon: float) -> int:
    for eps, n in DEFAULT_ITERATIONS.items():
        if abs(eps - epsilon) < 1e-9:
            return n
    raise ConfigError(f"no default iteration count for epsilon={epsilon}; set 'iterations'")


@dataclass
class DataSection:
    kind: str = "blobs"
    n_classes: int = 4
    samples_per_class: int = 150
    test_samples_per_class: int = 200
    input_shape: tuple[int, ...] = (1, 8, 8)
    separation: float = 0.15
    sigma: float = 0.1
    smooth: int = 0
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""


@dataclass
class ZooSection:
    archs: list[str] = field(default_factory=lambda: list(models.ZOO))
    lr: float = 0.02
    epochs: int = 20
    batch_size: int = 32
    weight_decay: float = 0.0
    momentum: float = 0.9


@dataclass
class AttackSection:
    name: str
    method: str
    epsilon: float
    alpha: float = DEFAULT_ALPHA
    iterations: int | None = None
    S: int | None = None
    E: int = DEFAULT_E
    tau: float | None = None
    momentum: float | None = None
    mode: str = "untargeted"
    direction: str | None = None

    def build(self, seed: int) -> AttackConfig:
        iters = self.iterations
        alpha = self.alpha
        if self.method == "fgsm":
            iters, alpha = 1, self.epsilon
        elif iters is None:
            iters = default_iterations(self.epsilon)
        mu = self.momentum if self.momentum is not None else (1.0 if self.method.startswith("m") else 0.0)
        if self.method in ("fgsm", "ifgsm", "mifgsm"):
            source = GradientSource("gradient", momentum=mu)
        elif self.method.endswith("taig-s"):
            source = GradientSource("ig", PathSpec("straight", S=self.S or DEFAULT_S), mu)
        else:
            tau = self.epsilon if self.tau is None else self.tau
            source = GradientSource("rig", PathSpec("random", S=self.S or 1, E=self.E, tau=tau), mu)
        return AttackConfig(self.epsilon, alpha, iters, self.mode, self.direction, source, seed)


@dataclass
class EvalSection:
    surrogate: str
    victims: list[str]
    n_images: int = 200
    metrics: list[str] = field(default_factory=lambda: ["asr", "perceptual", "sign_hist"])
    sign_tau: float = 0.1


@dataclass
class AblateSection:
    attack: str
    param: str
    values: list[float]
    seeds: int = 1


@dataclass
class RunConfig:
    seed: int
    out: str
    data: DataSection
    zoo: ZooSection
    attacks: list[AttackSection]
    eval: EvalSection | None
    ablate: AblateSection | None
    path: Path | None = None

    def echo(self) -> dict:
        from dataclasses import asdict
        d = asdict(self)
        d["path"] = str(self.path) if self.path else None
        return d


_SCHEMA = {
    "run": {"seed": int, "out": str},
    "data": {"kind": str, "n_classes": int, "samples_per_class": int, "test_samples_per_class": int,
             "input_shape": "shape", "separation": float, "sigma": float, "smooth": int,
             "train_images": str, "train_labels": str, "test_images": str, "test_labels": str},
    "zoo": {"archs": "list", "lr": float, "epochs": int, "batch_size": int, "weight_decay": float,
            "momentum": float},
    "attack": {"method": str, "epsilon": "number", "alpha": "number", "iterations": int, "S": int, "E": int,
               "tau": "number", "momentum": float, "mode": str, "direction": str},
    "eval": {"surrogate": str, "victims": "list", "n_images": int, "metrics": "list", "sign_tau": float},
    "ablate": {"attack": str, "param": str, "values": "numbers", "seeds": int},
}
_REQUIRED = {"run": (), "data": (), "zoo": (), "attack": ("method", "epsilon"), "eval": ("surrogate", "victims"),
             "ablate": ("attack", "param", "values")}


def _number(text: str) -> float:
    m = re.fullmatch(r"\s*([0-9.eE+-]+)\s*/\s*([0-9.eE+-]+)\s*", text)
    return float(m.group(1)) / float(m.group(2)) if m else float(text)


def _convert(kind, text: str):
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind == "number":
        return _number(text)
    if kind == "shape":
        return tuple(int(t) for t in text.replace("x", ",").split(",") if t.strip())
    if kind == "list":
        return [t.strip() for t in text.split(",") if t.strip()]
    if kind == "numbers":
        return [_number(t) for t in text.split(",") if t.strip()]
    return text.strip()


def _line_index(text: str) -> dict[tuple[str, str | None], int]:
    """Map (section, key) and (section, None) to 1-based line numbers."""
    index, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            index.setdefault((section, None), no)
        elif section and s and not s.startswith((";", "#")) and ("=" in s or ":" in s):
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip()
            index.setdefault((section, key), no)
    return index


def parse(text: str, path: Path | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keep key case (S, E)
    try:
        parser.read_string(text, source=str(path or "<config>"))
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"syntax error: {exc.errors[0][1].strip() if exc.errors else exc}", line) from exc
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None)) from exc
    lines = _line_index(text)

    sections: dict[str, dict] = {}
    attack_sections: list[tuple[str, dict]] = []
    for name in parser.sections():
        base, _, label = name.partition(".")
        if base not in _SCHEMA or (base == "attack") != bool(label):
            raise ConfigError(f"unknown section [{name}]", lines.get((name, None)))
        values = {}
        for key, raw in parser.items(name):
            kind = _SCHEMA[base].get(key)
            where = lines.get((name, key))
            if kind is None:
                raise ConfigError(f"unknown key {key!r} in [{name}]; valid keys: {', '.join(_SCHEMA[base])}", where)
            try:
                values[key] = _convert(kind, raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r} in [{name}]: {raw!r}", where) from exc
        for key in _REQUIRED[base]:
            if key not in values:
                raise ConfigError(f"[{name}] is missing required key {key!r}", lines.get((name, None)))
        if base == "attack":
            attack_sections.append((label, values))
        else:
            sections[base] = values

    for needed in ("data", "zoo"):
        if needed not in sections:
            raise ConfigError(f"missing [{needed}] section")
    run = sections.get("run", {})
    data = DataSection(**sections["data"])
    if data.kind not in ("blobs", "idx"):
        raise ConfigError(f"data kind must be 'blobs' or 'idx', got {data.kind!r}", lines.get(("data", "kind")))
    if data.kind == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if not getattr(data, key):
                raise ConfigError(f"[data] kind=idx needs {key!r}", lines.get(("data", None)))
    zoo = ZooSection(**sections["zoo"])
    for arch in zoo.archs:
        try:
            models.parse_arch(arch, data.input_shape, data.n_classes)
        except models.SpecError as exc:
            raise ConfigError(f"[zoo] {exc}", lines.get(("zoo", "archs"))) from exc

    attacks = []
    for label, values in attack_sections:
        sec = f"attack.{label}"
        if values["method"] not in METHODS:
            raise ConfigError(f"unknown attack method {values['method']!r}; valid: {', '.join(METHODS)}",
                              lines.get((sec, "method")))
        att = AttackSection(name=label, **values)
        try:
            att.build(0)
        except ValueError as exc:
            raise ConfigError(f"[{sec}] {exc}", lines.get((sec, None))) from exc
        attacks.append(att)

    ev = None
    if "eval" in sections:
        ev = EvalSection(**sections["eval"])
        if ev.surrogate not in zoo.archs:
            raise ConfigError(f"surrogate {ev.surrogate!r} is not in [zoo] archs", lines.get(("eval", "surrogate")))
        if not ev.victims:
            raise ConfigError("victim list is empty", lines.get(("eval", "victims")))
        for v in ev.victims:
            if v not in zoo.archs:
                raise ConfigError(f"victim {v!r} is not in [zoo] archs", lines.get(("eval", "victims")))
        for m in ev.metrics:
            if m not in ("asr", "perceptual", "sign_hist"):
                raise ConfigError(f"unknown metric {m!r}", lines.get(("eval", "metrics")))

    ab = None
    if "ablate" in sections:
        ab = AblateSection(**sections["ablate"])
        if ab.attack not in [a.name for a in attacks]:
            raise ConfigError(f"ablation attack {ab.attack!r} has no [attack.{ab.attack}] section",
                              lines.get(("ablate", "attack")))
        if ab.param not in ("S", "E", "segment_samples"):
            raise ConfigError(f"ablation param must be S, E or segment_samples, got {ab.param!r}",
                              lines.get(("ablate", "param")))
        if not ab.values:
            raise ConfigError("ablation needs at least one value", lines.get(("ablate", "values")))
        if ev is None:
            raise ConfigError("[ablate] needs an [eval] section for surrogate and victims")

    return RunConfig(run.get("seed", 0), run.get("out", "taig-run"), data, zoo, attacks, ev, ab, path)


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse(text, path)
