"""Image persistence: CSV datasets (exact) and binary PGM exports (quantized).

CSV holds one image per row. Values are validated against a range, [0,1] by
default; pass a network's declared input range for other domains. PGM export
is 8-bit and therefore lossy: value v maps to round((v - lo)/(hi - lo) * 255),
which is round(v * 255) for default-range networks; reloading yields byte/255.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ImageFormatError


def save_images_csv(path, images: np.ndarray) -> None:
    """Write images (N, D) or a single flat image as CSV rows."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        arr = arr.reshape(arr.shape[0], -1)
    lines = [",".join(repr(float(v)) for v in row) for row in arr]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_images_csv(path, low=0.0, high=1.0) -> np.ndarray:
    """Read CSV rows into an (N, D) array, validating the value range."""
    text = Path(path).read_text(encoding="utf-8")
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split(",")
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise ImageFormatError(f"line {lineno}: expected {width} values, got {len(fields)}")
        try:
            row = [float(f) for f in fields]
        except ValueError as exc:
            raise ImageFormatError(f"line {lineno}: {exc}") from exc
        rows.append(row)
    if not rows:
        raise ImageFormatError("empty image file")
    arr = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ImageFormatError("non-finite image value")
    lo = np.broadcast_to(np.atleast_1d(np.asarray(low, float)), (arr.shape[1],))
    hi = np.broadcast_to(np.atleast_1d(np.asarray(high, float)), (arr.shape[1],))
    bad = (arr < lo - 1e-12) | (arr > hi + 1e-12)
    if np.any(bad):
        r, c = np.argwhere(bad)[0]
        raise ImageFormatError(
            f"value {arr[r, c]!r} at row {r + 1}, column {c + 1} outside [{lo[c]}, {hi[c]}]"
        )
    return arr


def save_pgm(path, image: np.ndarray, shape=None, low=0.0, high=1.0) -> None:
    """Write a grayscale binary PGM (P5, maxval 255). Quantization is lossy."""
    arr = np.asarray(image, dtype=np.float64).reshape(-1)
    n = arr.size
    if shape is not None and len(shape) >= 2:
        h, w = int(shape[0]), int(np.prod(shape[1:]))
    else:
        h, w = 1, n
    if h * w != n:
        raise ImageFormatError(f"cannot render {n} values as {h}x{w}")
    lo = np.broadcast_to(np.atleast_1d(np.asarray(low, float)), (n,))
    hi = np.broadcast_to(np.atleast_1d(np.asarray(high, float)), (n,))
    unit = np.clip((arr - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0, 1.0)
    data = np.rint(unit * 255).astype(np.uint8)
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def load_pgm(path) -> np.ndarray:
    """Read a binary PGM back as floats in [0,1] (byte / 255)."""
    blob = Path(path).read_bytes()
    try:
        parts = blob.split(maxsplit=4)
        magic, w, h, maxval = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
        data = parts[4] if len(parts) > 4 else b""
    except (IndexError, ValueError) as exc:
        raise ImageFormatError(f"malformed PGM header: {exc}") from exc
    if magic != b"P5" or maxval != 255:
        raise ImageFormatError("expected binary PGM with maxval 255")
    if len(data) < w * h:
        raise ImageFormatError(f"PGM payload truncated: {len(data)} < {w * h}")
    arr = np.frombuffer(data[: w * h], dtype=np.uint8).astype(np.float64) / 255.0
    return arr.reshape(h, w)
