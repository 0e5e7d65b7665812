"""Input gradients and Jacobians by reverse-mode accumulation.

gradient_input differentiates the cross-entropy of the softmax output against
a label; jacobian_output_input differentiates each pre-softmax output score.
Both are validated against central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteError
from .network import LayerSpec, Network, _logits_from_raw, _raw_forward, _softmax


def _backward_layer(layer: LayerSpec, x_in: np.ndarray, x_out: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Propagate the gradient g (w.r.t. x_out) back to x_in for one raw layer."""
    kind = layer.kind
    if kind == "dense":
        return g @ layer.weights
    if kind == "relu":
        return g * (x_in > 0)
    if kind == "dropout-identity":
        return g
    if kind == "flatten":
        return g.reshape(x_in.shape)
    if kind == "softmax":
        # J_softmax^T g = p * (g - <g, p>)
        p = _softmax(x_in)
        return p * (g - np.sum(g * p, axis=-1, keepdims=True))
    if kind == "conv2d":
        kh, kw, _, _ = layer.weights.shape
        gi = np.zeros_like(x_in)
        hp, wp = g.shape[1], g.shape[2]
        for di in range(kh):
            for dj in range(kw):
                gi[:, di : di + hp, dj : dj + wp, :] += np.einsum(
                    "bijo,co->bijc", g, layer.weights[di, dj]
                )
        return gi
    if kind == "maxpool":
        m = layer.pool
        b, h, w, c = x_in.shape
        win = x_in.reshape(b, h // m, m, w // m, m, c).transpose(0, 1, 3, 5, 2, 4)
        win = win.reshape(b, h // m, w // m, c, m * m)
        # route to the first maximum in each window (deterministic tie-break)
        idx = np.argmax(win, axis=-1)
        mask = np.zeros_like(win)
        np.put_along_axis(mask, idx[..., None], 1.0, axis=-1)
        gi = mask * g[..., None]
        gi = gi.reshape(b, h // m, w // m, c, m, m).transpose(0, 1, 4, 2, 5, 3)
        return gi.reshape(b, h, w, c)
    raise ValueError(f"unknown layer kind {kind!r}")


def _backprop_from_logits(network: Network, raw_acts: list[np.ndarray], seed: np.ndarray) -> np.ndarray:
    """Carry d(objective)/d(logits) back to the input. seed shape (B, classes)."""
    has_softmax = bool(network.layers) and network.layers[-1].kind == "softmax"
    last = len(network.layers) - (2 if has_softmax else 1)
    g = seed
    for idx in range(last, -1, -1):
        layer = network.layers[idx]
        g = _backward_layer(layer, raw_acts[idx], raw_acts[idx + 1], g)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(idx, "non-finite gradient")
    return g


def gradient_input(network: Network, x: np.ndarray, label: int) -> np.ndarray:
    """d/dx of the cross-entropy loss -log softmax(logits)[label].

    Returned array has the input's shape. Raises on labels outside the class
    range and on non-finite intermediates.
    """
    if not 0 <= label < network.class_count:
        raise ValueError(f"label {label} outside class range {network.class_count}")
    x = network.check_input(x)
    raw_acts = _raw_forward(network, x[None, ...], batched=True)
    logits = _logits_from_raw(network, raw_acts)
    p = _softmax(logits)
    seed = p.copy()
    seed[:, label] -= 1.0
    g = _backprop_from_logits(network, raw_acts, seed)
    return g[0]


def jacobian_output_input(network: Network, x: np.ndarray) -> np.ndarray:
    """Matrix of d(logit_c)/d(x_i), shape (class_count, input_dims)."""
    x = network.check_input(x)
    c = network.class_count
    raw_acts = _raw_forward(network, np.repeat(x[None, ...], c, axis=0), batched=True)
    seed = np.eye(c)
    g = _backprop_from_logits(network, raw_acts, seed)
    return g.reshape(c, -1)
