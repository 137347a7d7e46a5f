"""On-disk artefacts: f64 dumps with JSON sidecars, CSV tables, JSON metadata.

A dump ``<stem>`` is two files: ``<stem>.f64`` holds the array as flat
little-endian float64, ``<stem>.json`` holds ``{"shape": [...], "dtype":
"<f8", ...}`` plus caller metadata. Every writer goes through a temporary
file and ``os.replace`` so readers never see a partial file.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path

import numpy as np

from taig import __version__

VERSION = f"v{__version__}"

TRANSFER_COLUMNS = ["attack", "surrogate", "victim", "epsilon", "success_rate", "n", "is_surrogate", "version"]
PERCEPTUAL_COLUMNS = ["attack", "epsilon", "rmse", "l0", "psnr", "n", "version"]
ABLATION_COLUMNS = ["attack", "param", "value", "mean_asr", "std_asr", "seeds", "n", "version"]


def atomic_write(path, data: bytes | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    if isinstance(data, str):
        data = data.encode("utf-8")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj) -> Path:
    return atomic_write(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def save_dump(stem, array, **meta) -> Path:
    array = np.asarray(array, dtype=np.float64)
    stem = Path(stem)
    atomic_write(stem.with_suffix(".f64"), np.ascontiguousarray(array, dtype="<f8").tobytes())
    write_json(stem.with_suffix(".json"), {"shape": list(array.shape), "dtype": "<f8", "version": VERSION, **meta})
    return stem


def load_dump(stem) -> tuple[np.ndarray, dict]:
    stem = Path(stem)
    meta = read_json(stem.with_suffix(".json"))
    raw = stem.with_suffix(".f64").read_bytes()
    count = int(np.prod(meta["shape"]))
    if len(raw) != 8 * count:
        raise ValueError(f"{stem}.f64 holds {len(raw)} bytes, sidecar expects {8 * count}")
    return np.frombuffer(raw, dtype="<f8").reshape(meta["shape"]).copy(), meta


def save_attribution(stem, attribution, **meta) -> Path:
    """Dump an :class:`~taig.attribution.Attribution` with shape, class and path in the sidecar."""
    return save_dump(stem, attribution.values, k=attribution.k, path=attribution.path.to_dict(), **meta)


def write_csv(path, rows: list[dict], columns: list[str]) -> Path:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: _fmt(row.get(c, "")) for c in columns})
    return atomic_write(path, buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v
