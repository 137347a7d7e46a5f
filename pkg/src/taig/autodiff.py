"""Reverse-mode differentiation for feed-forward ReLU networks.

Values are float64 numpy arrays. Every public function accepts either a
single input (shape ``net.input_shape``) or a batch with one extra leading
axis; rows of a batch never interact, so the gradient of the summed logit
``f_k`` gives every row its own input gradient in one backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Input does not match the shape a network or function expects."""


@dataclass
class _Record:
    op: str
    inputs: tuple[int, ...]
    params: tuple = ()
    mask: np.ndarray | None = None


@dataclass
class Tape:
    """Ordered record of primitive ops and the values they produced.

    Node 0 is always the leaf (the network input). ``replay`` re-executes the
    records on a new leaf value, ``backward`` pulls a cotangent from any node
    back to the leaf.
    """

    records: list[_Record] = field(default_factory=list)
    values: list[np.ndarray] = field(default_factory=list)

    def leaf(self, x: np.ndarray) -> int:
        if self.records:
            raise RuntimeError("tape already has a leaf")
        self.records.append(_Record("leaf", ()))
        self.values.append(x)
        return 0

    def _push(self, record: _Record, value: np.ndarray) -> int:
        self.records.append(record)
        self.values.append(value)
        return len(self.values) - 1

    def affine(self, i: int, weight: np.ndarray, bias: np.ndarray) -> int:
        return self._push(_Record("affine", (i,), (weight, bias)), self.values[i] @ weight + bias)

    def relu(self, i: int) -> int:
        x = self.values[i]
        mask = x > 0.0
        return self._push(_Record("relu", (i,), mask=mask), np.where(mask, x, 0.0))

    def add(self, i: int, j: int) -> int:
        return self._push(_Record("add", (i, j)), self.values[i] + self.values[j])

    def scale(self, i: int, c: float) -> int:
        return self._push(_Record("scale", (i,), (float(c),)), c * self.values[i])

    def replay(self, x: np.ndarray) -> np.ndarray:
        """Re-run the recorded ops on leaf value ``x``; returns the last node."""
        vals: list[np.ndarray] = [x]
        for rec in self.records[1:]:
            if rec.op == "affine":
                w, b = rec.params
                vals.append(vals[rec.inputs[0]] @ w + b)
            elif rec.op == "relu":
                v = vals[rec.inputs[0]]
                vals.append(np.where(v > 0.0, v, 0.0))
            elif rec.op == "add":
                vals.append(vals[rec.inputs[0]] + vals[rec.inputs[1]])
            elif rec.op == "scale":
                vals.append(rec.params[0] * vals[rec.inputs[0]])
        return vals[-1]

    def backward(self, node: int, cotangent: np.ndarray) -> np.ndarray:
        """Vector-Jacobian product of ``node`` with respect to the leaf."""
        grads: dict[int, np.ndarray] = {node: cotangent}
        for idx in range(node, 0, -1):
            g = grads.pop(idx, None)
            if g is None:
                continue
            rec = self.records[idx]
            if rec.op == "affine":
                contrib = [(rec.inputs[0], g @ rec.params[0].T)]
            elif rec.op == "relu":
                # subgradient at exactly 0 is 0
                contrib = [(rec.inputs[0], np.where(rec.mask, g, 0.0))]
            elif rec.op == "add":
                contrib = [(rec.inputs[0], g), (rec.inputs[1], g)]
            else:
                contrib = [(rec.inputs[0], rec.params[0] * g)]
            for j, gj in contrib:
                grads[j] = grads[j] + gj if j in grads else gj
        return grads.get(0, np.zeros_like(self.values[0]))


def _flatten_input(net, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    shape = tuple(net.input_shape)
    if x.shape == shape:
        single = True
        flat = x.reshape(1, -1)
    elif x.shape[1:] == shape:
        single = False
        flat = x.reshape(x.shape[0], -1)
    else:
        raise ShapeError(f"input shape {x.shape} does not match network input {shape}")
    if not np.all(np.isfinite(flat)):
        raise ValueError("input contains NaN or Inf")
    return flat, single


def record(net, flat: np.ndarray) -> tuple[Tape, int]:
    """Run the network on a 2-D batch of flattened inputs, recording a tape."""
    tape = Tape()
    node = tape.leaf(flat)
    maps = net.affine_maps()
    for depth, (w, b) in enumerate(maps):
        node = tape.affine(node, w, b)
        if depth < len(maps) - 1:
            node = tape.relu(node)
    return tape, node


def forward(net, x) -> tuple[np.ndarray, Tape]:
    """Logits of ``net`` at ``x`` together with the tape that produced them."""
    flat, single = _flatten_input(net, x)
    tape, node = record(net, flat)
    logits = tape.values[node]
    return (logits[0] if single else logits), tape


def logits(net, x) -> np.ndarray:
    return forward(net, x)[0]


def _class_cotangent(k, n_rows: int, n_classes: int) -> np.ndarray:
    k = np.broadcast_to(np.asarray(k), (n_rows,))
    if not np.issubdtype(k.dtype, np.integer):
        raise IndexError(f"class index must be an integer, got {k.dtype}")
    if np.any(k < 0) or np.any(k >= n_classes):
        raise IndexError(f"class index out of range [0, {n_classes})")
    seed = np.zeros((n_rows, n_classes))
    seed[np.arange(n_rows), k] = 1.0
    return seed


def grad_input(net, x, k) -> np.ndarray:
    """Exact input gradient of logit ``f_k`` at ``x``.

    ``k`` may be a scalar or, for a batch, one class index per row.
    """
    flat, single = _flatten_input(net, x)
    tape, node = record(net, flat)
    seed = _class_cotangent(k, flat.shape[0], net.n_classes)
    g = tape.backward(node, seed)
    return g.reshape(np.shape(x))


def value_and_grad(net, x, k) -> tuple[np.ndarray, np.ndarray]:
    """``(f_k(x), grad f_k(x))`` from a single forward/backward pass."""
    flat, single = _flatten_input(net, x)
    tape, node = record(net, flat)
    seed = _class_cotangent(k, flat.shape[0], net.n_classes)
    out = (tape.values[node] * seed).sum(axis=1)
    g = tape.backward(node, seed).reshape(np.shape(x))
    return (out[0] if single else out), g


def finite_diff_grad(net, x, k: int, h: float = 1e-5) -> np.ndarray:
    """Central-difference estimate of the gradient of ``f_k`` at a single ``x``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    eye = np.eye(n).reshape((n,) + x.shape)
    plus = logits(net, x[None] + h * eye)[:, k]
    minus = logits(net, x[None] - h * eye)[:, k]
    return ((plus - minus) / (2 * h)).reshape(x.shape)


def preactivations(net, x) -> list[np.ndarray]:
    """Hidden-layer pre-activation values (one 2-D array per ReLU layer)."""
    flat, _ = _flatten_input(net, x)
    tape, _ = record(net, flat)
    return [tape.values[i - 1] for i, r in enumerate(tape.records) if r.op == "relu"]
