"""Writers for the dlv-weights-1 weight format and CSV image sets.

The trainer talks to the verification toolkit only through these files, so
the schema here mirrors the documented format exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = "dlv-weights-1"


def _tensor(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "values": [float(v) for v in arr.reshape(-1)]}


def mlp_document(weight_pairs, input_shape, class_count, input_range=None, flatten_first=False) -> dict:
    """Weight document for a dense ReLU MLP.

    weight_pairs: list of (W, b) with W shaped (out, in); every pair but the
    last is followed by a relu layer.
    """
    layers = []
    if flatten_first:
        layers.append({"kind": "flatten"})
    for i, (w, b) in enumerate(weight_pairs):
        layers.append({"kind": "dense", "weights": _tensor(w), "bias": _tensor(b)})
        if i < len(weight_pairs) - 1:
            layers.append({"kind": "relu"})
    doc = {
        "version": FORMAT_VERSION,
        "input_shape": list(input_shape),
        "class_count": int(class_count),
        "layers": layers,
    }
    if input_range is not None:
        low, high = input_range
        doc["input_range"] = [
            [float(v) for v in np.atleast_1d(low)],
            [float(v) for v in np.atleast_1d(high)],
        ]
    return doc


def write_weights(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")


def write_images_csv(path, images: np.ndarray) -> None:
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    arr = arr.reshape(arr.shape[0], -1)
    lines = [",".join(repr(float(v)) for v in row) for row in arr]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_labels_csv(path, labels) -> None:
    Path(path).write_text("\n".join(str(int(v)) for v in labels) + "\n", encoding="utf-8")
