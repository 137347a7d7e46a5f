"""Small ReLU classifiers: architecture parsing, init, SGD training, persistence.

Architecture tags are dash-separated. ``mlp-64-32`` is a two-hidden-layer
perceptron; ``cnn-c8k3-32`` is a valid-padding 3x3 convolution with 8 output
channels followed by a 32-unit dense layer. A bare ``mlp`` is a single affine
map (a linear classifier). Every layer but the last is followed by a ReLU.

Convolutions are stored as kernels but executed as dense affine maps built
through an index table, so the autodiff engine only ever sees affine + ReLU.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from taig import autodiff

ZOO = ("mlp-64-32", "mlp-128-64-32", "cnn-c8k3-32", "cnn-c6k3-c6k3-32")

MAGIC = b"TAIGNET1"
FORMAT_VERSION = 1


class SpecError(ValueError):
    """Architecture tag is malformed or dimensionally inconsistent."""


class FormatError(ValueError):
    """A model file could not be decoded."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class Dense:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def params(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        return self.weight, self.bias

    def describe(self) -> dict:
        return {"kind": "dense", "in": self.weight.shape[0], "out": self.weight.shape[1]}


@dataclass
class Conv2d:
    kernel: np.ndarray  # (c_out, c_in, k, k)
    bias: np.ndarray  # (c_out,)
    in_shape: tuple[int, int, int]
    _index: tuple[np.ndarray, np.ndarray, np.ndarray] | None = field(default=None, repr=False, compare=False)

    @property
    def out_shape(self) -> tuple[int, int, int]:
        c_out, _, k, _ = self.kernel.shape
        _, h, w = self.in_shape
        return c_out, h - k + 1, w - k + 1

    @property
    def out_dim(self) -> int:
        return int(np.prod(self.out_shape))

    def params(self) -> list[np.ndarray]:
        return [self.kernel, self.bias]

    def index(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(input row, output column, flat kernel index) for every nonzero of the dense map."""
        if self._index is None:
            c_out, c_in, k, _ = self.kernel.shape
            _, h, w = self.in_shape
            _, ho, wo = self.out_shape
            co, ci, di, dj, oi, oj = np.meshgrid(
                np.arange(c_out), np.arange(c_in), np.arange(k), np.arange(k),
                np.arange(ho), np.arange(wo), indexing="ij",
            )
            rows = (ci * h + oi + di) * w + (oj + dj)
            cols = (co * ho + oi) * wo + oj
            kidx = ((co * c_in + ci) * k + di) * k + dj
            self._index = (rows.ravel(), cols.ravel(), kidx.ravel())
        return self._index

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        rows, cols, kidx = self.index()
        w = np.zeros((int(np.prod(self.in_shape)), self.out_dim))
        w[rows, cols] = self.kernel.ravel()[kidx]
        _, ho, wo = self.out_shape
        return w, np.repeat(self.bias, ho * wo)

    def fold(self, dense_grad: np.ndarray) -> np.ndarray:
        """Collapse a gradient w.r.t. the dense map back onto the shared kernel."""
        rows, cols, kidx = self.index()
        g = np.bincount(kidx, weights=dense_grad[rows, cols], minlength=self.kernel.size)
        return g.reshape(self.kernel.shape)

    def describe(self) -> dict:
        c_out, c_in, k, _ = self.kernel.shape
        return {"kind": "conv", "in_shape": list(self.in_shape), "c_out": c_out, "k": k}


@dataclass
class ReluNet:
    arch: str
    input_shape: tuple[int, ...]
    n_classes: int
    layers: list
    _maps: list | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        if self.n_classes < 2:
            raise SpecError(f"class count must be >= 2, got {self.n_classes}")
        dim = int(np.prod(self.input_shape))
        for layer in self.layers:
            fan_in = layer.weight.shape[0] if isinstance(layer, Dense) else int(np.prod(layer.in_shape))
            if fan_in != dim:
                raise SpecError(f"layer expects {fan_in} inputs but receives {dim}")
            dim = layer.out_dim
        if dim != self.n_classes:
            raise SpecError(f"last layer has {dim} outputs, expected {self.n_classes}")

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    def affine_maps(self) -> list[tuple[np.ndarray, np.ndarray]]:
        if self._maps is None:
            self._maps = [layer.dense() for layer in self.layers]
        return self._maps

    def copy(self) -> "ReluNet":
        layers = [Dense(l.weight.copy(), l.bias.copy()) if isinstance(l, Dense)
                  else Conv2d(l.kernel.copy(), l.bias.copy(), l.in_shape) for l in self.layers]
        return ReluNet(self.arch, self.input_shape, self.n_classes, layers)

    def invalidate(self) -> None:
        self._maps = None

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def logits(self, x) -> np.ndarray:
        return autodiff.logits(self, x)

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.logits(x), axis=-1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReluNet):
            return NotImplemented
        return (
            self.arch == other.arch
            and self.input_shape == other.input_shape
            and self.n_classes == other.n_classes
            and len(self.params()) == len(other.params())
            and all(np.array_equal(a, b) for a, b in zip(self.params(), other.params()))
        )


_CONV = re.compile(r"^c(\d+)k(\d+)$")


def parse_arch(arch: str, input_shape, n_classes: int) -> list[dict]:
    """Layer descriptors for an architecture tag; raises SpecError."""
    tokens = arch.split("-")
    if tokens[0] not in ("mlp", "cnn"):
        raise SpecError(f"unknown architecture family {tokens[0]!r} in {arch!r}")
    shape = tuple(int(d) for d in input_shape)
    if n_classes < 2:
        raise SpecError(f"class count must be >= 2, got {n_classes}")
    descs = []
    dim = int(np.prod(shape))
    seen_dense = False
    for tok in tokens[1:]:
        m = _CONV.match(tok)
        if m:
            if tokens[0] != "cnn" or seen_dense:
                raise SpecError(f"convolution {tok!r} must precede dense layers in a cnn tag")
            if len(shape) != 3:
                raise SpecError(f"convolution needs a (C, H, W) input, got {shape}")
            c_out, k = int(m.group(1)), int(m.group(2))
            if k > shape[1] or k > shape[2] or c_out < 1 or k < 1:
                raise SpecError(f"kernel {k} does not fit input {shape}")
            descs.append({"kind": "conv", "in_shape": list(shape), "c_out": c_out, "k": k})
            shape = (c_out, shape[1] - k + 1, shape[2] - k + 1)
            dim = int(np.prod(shape))
        elif tok.isdigit() and int(tok) > 0:
            descs.append({"kind": "dense", "in": dim, "out": int(tok)})
            dim = int(tok)
            seen_dense = True
        else:
            raise SpecError(f"bad layer token {tok!r} in {arch!r}")
    descs.append({"kind": "dense", "in": dim, "out": n_classes})
    return descs


def _build(desc: dict, rng: np.random.Generator | None):
    if desc["kind"] == "dense":
        fan_in, fan_out = desc["in"], desc["out"]
        shapes = [(fan_in, fan_out), (fan_out,)]
    else:
        c_in = desc["in_shape"][0]
        fan_in = c_in * desc["k"] ** 2
        shapes = [(desc["c_out"], c_in, desc["k"], desc["k"]), (desc["c_out"],)]
    if rng is None:
        w, b = (np.zeros(s) for s in shapes)
    else:
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=shapes[0])
        b = rng.uniform(-1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), size=shapes[1])
    if desc["kind"] == "dense":
        return Dense(w, b)
    return Conv2d(w, b, tuple(desc["in_shape"]))


def init(arch: str, input_shape, n_classes: int, seed: int) -> ReluNet:
    """Fresh network with He-uniform weights, deterministic in ``seed``."""
    descs = parse_arch(arch, input_shape, n_classes)
    rng = np.random.default_rng(seed)
    return ReluNet(arch, tuple(input_shape), n_classes, [_build(d, rng) for d in descs])


def from_weights(weights: list[tuple], input_shape=None, arch: str | None = None) -> ReluNet:
    """Dense-only network from explicit ``(W, b)`` pairs, ``W`` of shape (fan_in, fan_out)."""
    layers = [Dense(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)) for w, b in weights]
    if input_shape is None:
        input_shape = (layers[0].weight.shape[0],)
    if arch is None:
        arch = "-".join(["mlp"] + [str(layer.out_dim) for layer in layers[:-1]])
    return ReluNet(arch, tuple(input_shape), layers[-1].out_dim, layers)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    weight_decay: float = 0.0
    momentum: float = 0.9
    holdout: float = 0.2

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")


def _softmax_xent(z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    n = len(y)
    loss = -np.log(p[np.arange(n), y] + 1e-300).mean()
    p[np.arange(n), y] -= 1.0
    return float(loss), p / n


def _param_grads(net: ReluNet, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    tape, node = autodiff.record(net, x)
    loss, g = _softmax_xent(tape.values[node], y)
    # tape layout: leaf, (affine, relu) per hidden layer, final affine
    affine_ids = [i for i, r in enumerate(tape.records) if r.op == "affine"]
    per_layer: list[list[np.ndarray]] = [[] for _ in net.layers]
    for li in range(len(net.layers) - 1, -1, -1):
        layer, rec = net.layers[li], tape.records[affine_ids[li]]
        inp = tape.values[rec.inputs[0]]
        if isinstance(layer, Dense):
            per_layer[li] = [inp.T @ g, g.sum(axis=0)]
        else:
            _, ho, wo = layer.out_shape
            per_layer[li] = [layer.fold(inp.T @ g), g.sum(axis=0).reshape(-1, ho * wo).sum(axis=1)]
        if li > 0:
            g = np.where(tape.records[affine_ids[li] - 1].mask, g @ rec.params[0].T, 0.0)
    return loss, [p for pair in per_layer for p in pair]


def accuracy(net: ReluNet, images: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(net.predict(images) == labels))


def train(net: ReluNet, data, cfg: TrainConfig, heldout=None, log=None) -> tuple[ReluNet, float]:
    """Minibatch SGD on softmax cross-entropy; returns a trained copy and held-out accuracy.

    Without an explicit ``heldout`` dataset a ``cfg.holdout`` fraction of
    ``data`` is set aside (seeded) for the accuracy figure.
    """
    images = np.asarray(data.images, dtype=np.float64)
    labels = np.asarray(data.labels)
    if len(labels) == 0:
        raise ValueError("cannot train on an empty dataset")
    if labels.max() >= net.n_classes or labels.min() < 0:
        raise ValueError(f"labels must lie in [0, {net.n_classes})")
    rng = np.random.default_rng(cfg.seed)
    if heldout is None:
        order = rng.permutation(len(labels))
        n_hold = int(round(cfg.holdout * len(labels)))
        hold, fit = order[:n_hold], order[n_hold:]
        test_x, test_y = images[hold], labels[hold]
        images, labels = images[fit], labels[fit]
    else:
        test_x, test_y = np.asarray(heldout.images), np.asarray(heldout.labels)

    out = net.copy()
    flat = images.reshape(len(labels), -1)
    velocity = [np.zeros_like(p) for p in out.params()]
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(labels))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss, grads = _param_grads(out, flat[batch], labels[batch])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"{out.arch}: loss became {loss} at epoch {epoch}, batch offset {start}; lower the learning rate")
            total += loss * len(batch)
            for p, g, v in zip(out.params(), grads, velocity):
                if cfg.weight_decay and p.ndim > 1:
                    g = g + cfg.weight_decay * p
                v *= cfg.momentum
                v -= cfg.lr * g
                p += v
            out.invalidate()
        if log is not None:
            log(f"{out.arch} epoch {epoch + 1}/{cfg.epochs} loss {total / len(order):.4f}")
    acc = accuracy(out, test_x, test_y) if len(test_y) else accuracy(out, images, labels)
    return out, acc


def save(net: ReluNet, path) -> None:
    """Write ``net`` in the TAIGNET1 format (atomically: temp file + rename)."""
    header = json.dumps({
        "version": FORMAT_VERSION,
        "arch": net.arch,
        "input_shape": list(net.input_shape),
        "n_classes": net.n_classes,
        "layers": [layer.describe() for layer in net.layers],
    }, sort_keys=True).encode("utf-8")
    blob = bytearray(MAGIC)
    blob += struct.pack("<I", len(header)) + header
    for p in net.params():
        blob += np.ascontiguousarray(p, dtype="<f8").tobytes()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(blob))
    tmp.replace(path)


def load(path) -> ReluNet:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4:
        raise FormatError("file too short for header", "magic")
    if raw[:len(MAGIC)] != MAGIC:
        raise FormatError(f"expected {MAGIC!r}, found {raw[:len(MAGIC)]!r}", "magic")
    (n,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    if start + n > len(raw):
        raise FormatError(f"declares {n} bytes, only {len(raw) - start} present", "header")
    try:
        meta = json.loads(raw[start:start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(str(exc), "header") from exc
    for key in ("version", "arch", "input_shape", "n_classes", "layers"):
        if key not in meta:
            raise FormatError("missing", key)
    if meta["version"] != FORMAT_VERSION:
        raise FormatError(f"unsupported version {meta['version']} (reader is {FORMAT_VERSION})", "version")
    if not isinstance(meta["n_classes"], int) or meta["n_classes"] < 2:
        raise FormatError(f"class count must be >= 2, got {meta['n_classes']}", "n_classes")
    layers = [_build(d, None) for d in meta["layers"]]
    offset = start + n
    for li, layer in enumerate(layers):
        for name, p in zip(("weight", "bias"), layer.params()):
            nbytes = p.size * 8
            if offset + nbytes > len(raw):
                raise FormatError(f"truncated at byte {offset}", f"layers[{li}].{name}")
            p[...] = np.frombuffer(raw, dtype="<f8", count=p.size, offset=offset).reshape(p.shape)
            offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{len(raw) - offset} trailing bytes", "payload")
    try:
        return ReluNet(meta["arch"], tuple(meta["input_shape"]), meta["n_classes"], layers)
    except SpecError as exc:
        raise FormatError(str(exc), "layers") from exc
