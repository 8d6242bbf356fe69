"""Artifact writers: 8-bit PGM images, CSV tables and JSON summaries."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


def to_gray(img: np.ndarray, invert: bool = False, lo: float | None = None,
            hi: float | None = None) -> np.ndarray:
    """Map an array to uint8, linearly from [lo, hi] (defaults: its range)."""
    img = np.asarray(img, dtype=float)
    lo = img.min() if lo is None else lo
    hi = img.max() if hi is None else hi
    scaled = np.zeros_like(img) if hi <= lo else (np.clip(img, lo, hi) - lo) / (hi - lo)
    if invert:
        scaled = 1.0 - scaled
    return np.round(255 * scaled).astype(np.uint8)


def grid_image(values, nx: int, ny: int) -> np.ndarray:
    """Element vector (``e = ix * ny + iy``) as an image with ``ny`` rows, top row first."""
    return np.asarray(values).reshape(nx, ny).T


def write_pgm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def write_density_pgm(path, y, nx: int, ny: int) -> None:
    """Densities in [0, 1] drawn as ``1 - y`` so solid material is dark."""
    write_pgm(path, to_gray(grid_image(y, nx, ny), invert=True, lo=0.0, hi=1.0))


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path) -> tuple[list, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")
