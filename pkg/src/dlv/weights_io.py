"""Self-describing weight files, format version "dlv-weights-1".

A weight file is UTF-8 JSON: version, input_shape, class_count, optional
input_range ([low, high] scalars or per-dimension arrays), and a list of
layers carrying kind plus row-major weight/bias tensors where applicable.
Float values survive a save/load round trip bit-exactly (shortest-repr JSON
floats).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DlvError, WeightFormatError
from .network import LayerSpec, Network, validate_tensor

FORMAT_VERSION = "dlv-weights-1"


def _tensor_to_json(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "values": [float(v) for v in arr.reshape(-1)]}


def _tensor_from_json(obj, what: str, layer_index: int) -> np.ndarray:
    try:
        return validate_tensor(obj["shape"], obj["values"])
    except (KeyError, TypeError, ValueError) as exc:
        raise WeightFormatError(f"layer {layer_index}: bad {what} tensor: {exc}") from exc


def network_to_dict(network: Network) -> dict:
    layers = []
    for layer in network.layers:
        entry: dict = {"kind": layer.kind}
        if layer.weights is not None:
            entry["weights"] = _tensor_to_json(layer.weights)
        if layer.bias is not None:
            entry["bias"] = _tensor_to_json(layer.bias)
        if layer.kind == "maxpool":
            entry["pool"] = layer.pool
        layers.append(entry)
    return {
        "version": FORMAT_VERSION,
        "input_shape": list(network.input_shape),
        "class_count": network.class_count,
        "input_range": [
            [float(v) for v in network.input_low],
            [float(v) for v in network.input_high],
        ],
        "layers": layers,
    }


def network_from_dict(doc: dict) -> Network:
    if not isinstance(doc, dict):
        raise WeightFormatError("weight document is not a JSON object")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise WeightFormatError(f"unsupported version {version!r}, expected {FORMAT_VERSION!r}")
    try:
        input_shape = tuple(int(s) for s in doc["input_shape"])
        class_count = int(doc["class_count"])
        layer_docs = doc["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise WeightFormatError(f"missing or malformed header field: {exc}") from exc
    layers = []
    for idx, entry in enumerate(layer_docs):
        kind = entry.get("kind")
        if kind == "dropout":
            kind = "dropout-identity"
        weights = _tensor_from_json(entry["weights"], "weights", idx) if "weights" in entry else None
        bias = _tensor_from_json(entry["bias"], "bias", idx) if "bias" in entry else None
        try:
            layers.append(LayerSpec(kind=kind, weights=weights, bias=bias, pool=int(entry.get("pool", 0))))
        except (ValueError, TypeError) as exc:
            raise WeightFormatError(f"layer {idx}: {exc}") from exc
    low = high = None
    if "input_range" in doc:
        try:
            low, high = doc["input_range"]
        except (TypeError, ValueError) as exc:
            raise WeightFormatError(f"malformed input_range: {exc}") from exc
    try:
        return Network(
            layers=tuple(layers),
            input_shape=input_shape,
            class_count=class_count,
            input_low=None if low is None else np.asarray(low, dtype=float),
            input_high=None if high is None else np.asarray(high, dtype=float),
        )
    except DlvError as exc:
        raise WeightFormatError(str(exc)) from exc


def save_network(path, network: Network) -> None:
    doc = network_to_dict(network)
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")


def load_network(path) -> Network:
    raw = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise WeightFormatError(f"parse error at byte offset {exc.pos}: {exc.msg}") from exc
    return network_from_dict(doc)
