"""Datasets: seeded Gaussian blobs and IDX-format image corpora."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IDXFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"byte {offset}: {message}")
        self.offset = offset


class ShortfallError(ValueError):
    def __init__(self, requested: int, available: int):
        super().__init__(f"requested {requested} items but only {available} are classified correctly by every net")
        self.requested = requested
        self.available = available


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (n, *input_shape), float64 in [0, 1]
    labels: np.ndarray  # (n,), int64
    n_classes: int
    split: str = "train"

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.shape[0] != labels.shape[0]:
            raise ValueError(f"{images.shape[0]} images but {labels.shape[0]} labels")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def take(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.n_classes, self.split)


@lru_cache(maxsize=None)
def black_reference(input_shape: tuple[int, ...]) -> np.ndarray:
    """The all-zero reference image for ``input_shape`` (shared, read-only)."""
    r = np.zeros(tuple(input_shape))
    r.setflags(write=False)
    return r


@dataclass(frozen=True)
class BlobConfig:
    n_classes: int = 4
    samples_per_class: int = 200
    input_shape: tuple[int, ...] = (1, 8, 8)
    separation: float = 0.3
    sigma: float = 0.1
    seed: int = 0
    smooth: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if not self.separation > 0:
            raise ValueError("separation must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")


def blob_centers(cfg: BlobConfig) -> np.ndarray:
    """Class centres ``0.5 + separation/2 * pattern`` with a +-1 pattern per class.

    With ``smooth > 0`` the random pattern is box-blurred over the last two
    axes that many times and renormalised to unit max-magnitude, giving
    image-like low-frequency templates instead of independent pixels.
    """
    rng = np.random.default_rng([cfg.seed, 0])
    n = int(np.prod(cfg.input_shape))
    pattern = rng.choice([-1.0, 1.0], size=(cfg.n_classes, n)).reshape((cfg.n_classes,) + tuple(cfg.input_shape))
    for _ in range(cfg.smooth):
        padded = np.pad(pattern, [(0, 0)] * (pattern.ndim - 2) + [(1, 1), (1, 1)], mode="edge")
        acc = np.zeros_like(pattern)
        for di in range(3):
            for dj in range(3):
                acc += padded[..., di:di + pattern.shape[-2], dj:dj + pattern.shape[-1]]
        pattern = acc / 9.0
    if cfg.smooth:
        pattern /= np.abs(pattern).reshape(cfg.n_classes, -1).max(axis=1).reshape((-1,) + (1,) * len(cfg.input_shape))
    return np.clip(0.5 + 0.5 * cfg.separation * pattern, 0.0, 1.0)


def gen_blobs(cfg: BlobConfig, split: str = "train") -> Dataset:
    """Gaussian clusters around :func:`blob_centers`, clipped to [0, 1].

    Train and test splits share centres but draw noise from separate streams.
    """
    centers = blob_centers(cfg)
    stream = {"train": 1, "test": 2}.get(split, 3)
    rng = np.random.default_rng([cfg.seed, stream])
    labels = np.repeat(np.arange(cfg.n_classes), cfg.samples_per_class)
    noise = rng.normal(0.0, 1.0, size=(len(labels),) + tuple(cfg.input_shape))
    images = np.clip(centers[labels] + cfg.sigma * noise, 0.0, 1.0)
    order = rng.permutation(len(labels))
    return Dataset(images[order], labels[order], cfg.n_classes, split)


def _read_idx(raw: bytes, magic: int, ndim: int, what: str) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IDXFormatError(f"{what} file truncated inside the {header}-byte header", len(raw))
    (found,) = struct.unpack_from(">I", raw, 0)
    if found != magic:
        raise IDXFormatError(f"{what} magic 0x{found:08x}, expected 0x{magic:08x}", 0)
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    need = header + int(np.prod(dims))
    if len(raw) < need:
        raise IDXFormatError(f"{what} payload truncated: need {need} bytes, have {len(raw)}", len(raw))
    if len(raw) > need:
        raise IDXFormatError(f"{what} file has {len(raw) - need} trailing bytes", need)
    return np.frombuffer(raw, dtype=np.uint8, offset=header, count=need - header).reshape(dims)


def load_idx(images_path, labels_path, n_classes: int | None = None, split: str = "train") -> Dataset:
    """Read an IDX image/label pair; pixels are scaled by 1/255 into [0, 1]."""
    pixels = _read_idx(Path(images_path).read_bytes(), IDX_IMAGES_MAGIC, 3, "image")
    labels = _read_idx(Path(labels_path).read_bytes(), IDX_LABELS_MAGIC, 1, "label")
    if len(pixels) != len(labels):
        raise IDXFormatError(f"image count {len(pixels)} != label count {len(labels)}", 4)
    if n_classes is None:
        n_classes = max(2, int(labels.max()) + 1) if len(labels) else 2
    images = pixels[:, None, :, :].astype(np.float64) / 255.0
    return Dataset(images, labels.astype(np.int64), n_classes, split)


def write_idx(data: Dataset, images_path, labels_path) -> None:
    """Inverse of :func:`load_idx` for single-channel 2-D images."""
    if data.images.ndim != 4 or data.images.shape[1] != 1:
        raise ValueError("write_idx needs (n, 1, rows, cols) images")
    pixels = np.rint(data.images[:, 0] * 255.0).astype(np.uint8)
    n, rows, cols = pixels.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + pixels.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, n) + data.labels.astype(np.uint8).tobytes())


def subsample_correct(data: Dataset, nets, n: int, seed: int) -> Dataset:
    """``n`` random items that every net in ``nets`` classifies correctly."""
    ok = np.ones(len(data), dtype=bool)
    for net in nets:
        ok &= net.predict(data.images) == data.labels
    candidates = np.flatnonzero(ok)
    if len(candidates) < n:
        raise ShortfallError(n, len(candidates))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(candidates, size=n, replace=False))
    return data.take(chosen)
