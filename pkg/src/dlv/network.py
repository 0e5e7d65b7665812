"""Feed-forward network model: layer specs, validation, exact forward inference.

Activations are float64 numpy arrays. Every operation is pure and
deterministic, so networks and activations can be shared freely across
concurrent workers.

Two granularities of propagation exist. Raw layers are the serialized units
(dense, conv2d, relu, maxpool, flatten, softmax, dropout-identity). A *stage*
fuses a dense/conv2d layer with an immediately following relu (plus any
inference-time dropout); other kinds stand alone. Stage activations are the
per-layer activations the verification machinery works with: stage 0 is the
input, the last stage is the classifier output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, ShapeMismatchError

LAYER_KINDS = (
    "dense",
    "conv2d",
    "relu",
    "maxpool",
    "flatten",
    "softmax",
    "dropout-identity",
)


@dataclass(frozen=True, eq=False)
class LayerSpec:
    """One raw layer.

    weights: dense (out, in); conv2d (kh, kw, cin, cout). bias matches the
    output channel count. pool is the maxpool window m (window m x m, stride
    m, must divide the spatial extents).
    """

    kind: str
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    pool: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        for name in ("weights", "bias"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.ascontiguousarray(arr, dtype=np.float64)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    def output_shape(self, index: int, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Shape this layer produces for in_shape, validating consistency."""
        kind = self.kind
        if kind == "dense":
            if self.weights is None or self.weights.ndim != 2:
                raise ShapeMismatchError(index, "dense layer needs a 2-D weight matrix")
            out_n, in_n = self.weights.shape
            if in_shape != (in_n,):
                raise ShapeMismatchError(
                    index, f"dense expects input ({in_n},), got {in_shape}"
                )
            if self.bias is None or self.bias.shape != (out_n,):
                raise ShapeMismatchError(index, "dense bias shape mismatch")
            return (out_n,)
        if kind == "conv2d":
            if self.weights is None or self.weights.ndim != 4:
                raise ShapeMismatchError(index, "conv2d needs a 4-D kernel (kh,kw,cin,cout)")
            kh, kw, cin, cout = self.weights.shape
            if len(in_shape) != 3:
                raise ShapeMismatchError(index, f"conv2d expects (H,W,C) input, got {in_shape}")
            h, w, c = in_shape
            if c != cin:
                raise ShapeMismatchError(index, f"conv2d expects {cin} channels, got {c}")
            if h < kh or w < kw:
                raise ShapeMismatchError(index, "conv2d kernel larger than input")
            if self.bias is None or self.bias.shape != (cout,):
                raise ShapeMismatchError(index, "conv2d bias shape mismatch")
            return (h - kh + 1, w - kw + 1, cout)
        if kind == "maxpool":
            if self.pool < 1:
                raise ShapeMismatchError(index, "maxpool window must be >= 1")
            if len(in_shape) != 3:
                raise ShapeMismatchError(index, f"maxpool expects (H,W,C) input, got {in_shape}")
            h, w, c = in_shape
            if h % self.pool or w % self.pool:
                raise ShapeMismatchError(
                    index, f"maxpool window {self.pool} does not divide extents {in_shape}"
                )
            return (h // self.pool, w // self.pool, c)
        if kind == "flatten":
            return (int(np.prod(in_shape)),)
        # relu / softmax / dropout-identity preserve shape
        if kind == "softmax" and len(in_shape) != 1:
            raise ShapeMismatchError(index, "softmax expects a 1-D input")
        return in_shape


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def apply_layer(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    """Apply one raw layer to a batched activation of shape (B, *in_shape)."""
    kind = layer.kind
    if kind == "dense":
        return x @ layer.weights.T + layer.bias
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "dropout-identity":
        return x
    if kind == "flatten":
        return x.reshape(x.shape[0], -1)
    if kind == "softmax":
        return _softmax(x)
    if kind == "conv2d":
        kh, kw, _, _ = layer.weights.shape
        windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
        # windows: (B, H', W', C, kh, kw); kernel: (kh, kw, cin, cout)
        return np.einsum("bijckl,klco->bijo", windows, layer.weights) + layer.bias
    if kind == "maxpool":
        m = layer.pool
        b, h, w, c = x.shape
        return x.reshape(b, h // m, m, w // m, m, c).max(axis=(2, 4))
    raise ValueError(f"unknown layer kind {kind!r}")


def _stage_boundaries(layers: tuple[LayerSpec, ...]) -> list[tuple[int, int]]:
    """Group raw layers into stages: [start, end) index ranges.

    A dense/conv2d absorbs one immediately following relu and any adjacent
    dropout layers; dropout also attaches to whatever stage precedes it.
    """
    bounds: list[tuple[int, int]] = []
    i = 0
    n = len(layers)
    while i < n:
        j = i + 1
        if layers[i].kind in ("dense", "conv2d"):
            took_relu = False
            while j < n and layers[j].kind in ("relu", "dropout-identity"):
                if layers[j].kind == "relu":
                    if took_relu:
                        break
                    took_relu = True
                j += 1
        else:
            while j < n and layers[j].kind == "dropout-identity":
                j += 1
        bounds.append((i, j))
        i = j
    return bounds


@dataclass(frozen=True, eq=False)
class Network:
    """A validated feed-forward classifier.

    input_low/input_high are the per-dimension valid input ranges (flattened),
    default [0,1]; they drive attack clipping, pre-image input boxes and image
    quantization, not forward inference.
    """

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]
    class_count: int
    input_low: np.ndarray = None
    input_high: np.ndarray = None
    layer_shapes: tuple[tuple[int, ...], ...] = field(init=False)
    stages: tuple[tuple[int, int], ...] = field(init=False)
    stage_shapes: tuple[tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        n_in = int(np.prod(self.input_shape))
        low = np.zeros(n_in) if self.input_low is None else np.asarray(self.input_low, float)
        high = np.ones(n_in) if self.input_high is None else np.asarray(self.input_high, float)
        low = np.broadcast_to(np.atleast_1d(low), (n_in,)).astype(float)
        high = np.broadcast_to(np.atleast_1d(high), (n_in,)).astype(float)
        low.setflags(write=False)
        high.setflags(write=False)
        object.__setattr__(self, "input_low", low)
        object.__setattr__(self, "input_high", high)

        shapes = [self.input_shape]
        for idx, layer in enumerate(self.layers):
            shapes.append(layer.output_shape(idx, shapes[-1]))
        out_shape = shapes[-1]
        if out_shape != (self.class_count,):
            raise ShapeMismatchError(
                len(self.layers) - 1,
                f"output shape {out_shape} != class count ({self.class_count},)",
            )
        for idx, layer in enumerate(self.layers):
            for arr in (layer.weights, layer.bias):
                if arr is not None and not np.all(np.isfinite(arr)):
                    raise NonFiniteError(idx, "non-finite weight")
        bounds = _stage_boundaries(self.layers)
        object.__setattr__(self, "layer_shapes", tuple(shapes))
        object.__setattr__(self, "stages", tuple(bounds))
        object.__setattr__(
            self, "stage_shapes", tuple([self.input_shape] + [shapes[j] for _, j in bounds])
        )

    @property
    def stage_count(self) -> int:
        return len(self.stages)

    def stage_width(self, k: int) -> int:
        return int(np.prod(self.stage_shapes[k]))

    def stage_layers(self, k: int) -> tuple[LayerSpec, ...]:
        """Raw layers composing stage k (1-based; stage 0 is the input)."""
        lo, hi = self.stages[k - 1]
        return self.layers[lo:hi]

    def check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if tuple(x.shape) != self.input_shape:
            raise ShapeMismatchError(0, f"input shape {x.shape} != {self.input_shape}")
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(0, "non-finite input")
        return x


def stage_apply(network: Network, k: int, act: np.ndarray, batched: bool = False) -> np.ndarray:
    """Apply stage k (1-based) to an activation of stage k-1."""
    x = np.asarray(act, dtype=np.float64)
    squeeze = not batched
    if squeeze:
        x = x[None, ...]
    lo, hi = network.stages[k - 1]
    for idx in range(lo, hi):
        x = apply_layer(network.layers[idx], x)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(idx)
    return x[0] if squeeze else x


def forward_from(network: Network, k: int, act: np.ndarray, batched: bool = False) -> list[np.ndarray]:
    """Stage activations from stage k onward: [act_k, act_{k+1}, ..., act_S]."""
    acts = [np.asarray(act, dtype=np.float64)]
    for s in range(k + 1, network.stage_count + 1):
        acts.append(stage_apply(network, s, acts[-1], batched=batched))
    return acts


def forward(network: Network, x: np.ndarray) -> list[np.ndarray]:
    """All stage activations for one input: [x, act_1, ..., act_S].

    Deterministic; dropout layers act as the identity. The input must match
    the declared shape (values are the caller's responsibility: image
    networks use [0,1] pixels, other domains their declared ranges).
    """
    return forward_from(network, 0, network.check_input(x))


def forward_batch(network: Network, xs: np.ndarray) -> np.ndarray:
    """Final-stage outputs for a batch of inputs, shape (B, class_count)."""
    xs = np.asarray(xs, dtype=np.float64)
    if tuple(xs.shape[1:]) != network.input_shape:
        raise ShapeMismatchError(0, f"batch input shape {xs.shape[1:]} != {network.input_shape}")
    return forward_from(network, 0, xs, batched=True)[-1]


def output_logits(network: Network, x: np.ndarray) -> np.ndarray:
    """Pre-softmax output scores (the final output if no softmax layer)."""
    acts = _raw_forward(network, network.check_input(x))
    return _logits_from_raw(network, acts)


def _raw_forward(network: Network, x: np.ndarray, batched: bool = False) -> list[np.ndarray]:
    """Per raw layer activations, [x, a_1, ..., a_n]."""
    a = x if batched else x[None, ...]
    acts = [a]
    for idx, layer in enumerate(network.layers):
        a = apply_layer(layer, a)
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(idx)
        acts.append(a)
    if batched:
        return acts
    return [arr[0] for arr in acts]


def _logits_from_raw(network: Network, raw_acts: list[np.ndarray]) -> np.ndarray:
    if network.layers and network.layers[-1].kind == "softmax":
        return raw_acts[-2]
    return raw_acts[-1]


def classify(network: Network, x: np.ndarray) -> int:
    """Predicted class: argmax over output activations, ties to the lowest index."""
    return int(np.argmax(output_logits(network, x)))


def classify_batch(network: Network, xs: np.ndarray) -> np.ndarray:
    out = forward_batch(network, xs)
    return np.argmax(out, axis=1)


def classify_from_stage(network: Network, k: int, act: np.ndarray, batched: bool = False) -> np.ndarray | int:
    """Class of a stage-k activation by direct propagation through the rest."""
    out = forward_from(network, k, act, batched=batched)[-1]
    if batched:
        return np.argmax(out.reshape(out.shape[0], -1), axis=1)
    return int(np.argmax(out))


def validate_tensor(shape, values) -> np.ndarray:
    """Check the flat-tensor wire invariants and return the shaped array."""
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ValueError(f"non-positive extent in shape {shape}")
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size != int(np.prod(shape)):
        raise ValueError(f"shape {shape} expects {int(np.prod(shape))} values, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr.reshape(shape)
