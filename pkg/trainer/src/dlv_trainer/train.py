"""Training loops for the fixture networks.

Both trainers are deterministic given their seed (CPU torch). They return the
weight document plus held-out accuracy so callers can enforce targets and
retry with fresh seeds when a run falls short.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .curve import X1_RANGE, X2_RANGE, sample_points
from .export import mlp_document


@dataclass
class TrainSpec:
    hidden: tuple[int, ...]
    epochs: int
    seed: int
    accuracy_target: float
    lr: float = 0.01
    weight_decay: float = 1e-4
    retries: int = 5
    train_size: int = 5000
    test_size: int = 2000


@dataclass
class TrainResult:
    document: dict
    accuracy: float
    seed: int
    history: list = field(default_factory=list)


def _build_mlp(sizes: tuple[int, ...]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


def _weight_pairs(model: nn.Sequential) -> list[tuple[np.ndarray, np.ndarray]]:
    pairs = []
    for module in model:
        if isinstance(module, nn.Linear):
            pairs.append(
                (
                    module.weight.detach().numpy().astype(np.float64),
                    module.bias.detach().numpy().astype(np.float64),
                )
            )
    return pairs


def _fit(model, x, y, epochs, lr, weight_decay, log_every=0):
    opt = torch.optim.Adam(model.parameters(), lr=lr, weight_decay=weight_decay)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=epochs)
    loss_fn = nn.CrossEntropyLoss()
    history = []
    for epoch in range(epochs):
        opt.zero_grad()
        loss = loss_fn(model(x), y)
        loss.backward()
        opt.step()
        sched.step()
        if log_every and epoch % log_every == 0:
            history.append((epoch, float(loss.detach())))
    return history


def _accuracy(model, x, y) -> float:
    with torch.no_grad():
        pred = model(x).argmax(dim=1)
    return float((pred == y).float().mean())


def train_2d_curve(spec: TrainSpec) -> TrainResult:
    """Train the 2-20-20-20-2 ReLU point classifier for the analytic curve.

    Retries with incremented seeds until the held-out accuracy target is met;
    raises RuntimeError when the retry budget runs out.
    """
    last = None
    for attempt in range(spec.retries + 1):
        seed = spec.seed + attempt
        torch.manual_seed(seed)
        train_x, train_y = sample_points(spec.train_size, seed=seed * 7919 + 1)
        test_x, test_y = sample_points(spec.test_size, seed=seed * 7919 + 2)
        tx = torch.tensor(train_x, dtype=torch.float32)
        ty = torch.tensor(train_y)
        vx = torch.tensor(test_x, dtype=torch.float32)
        vy = torch.tensor(test_y)
        model = _build_mlp((2,) + spec.hidden + (2,))
        history = _fit(model, tx, ty, spec.epochs, spec.lr, spec.weight_decay, log_every=500)
        acc = _accuracy(model, vx, vy)
        doc = mlp_document(
            _weight_pairs(model),
            input_shape=(2,),
            class_count=2,
            input_range=(
                [X1_RANGE[0], X2_RANGE[0]],
                [X1_RANGE[1], X2_RANGE[1]],
            ),
        )
        last = TrainResult(document=doc, accuracy=acc, seed=seed, history=history)
        if acc >= spec.accuracy_target:
            return last
    raise RuntimeError(
        f"accuracy target {spec.accuracy_target} unreached after {spec.retries + 1} "
        f"attempts (best run: {last.accuracy:.4f})"
    )


def load_digit_data(seed: int, test_size: int = 500):
    """8x8 digit images scaled into [0,1], deterministically split."""
    from sklearn.datasets import load_digits

    data = load_digits()
    x = (data.data / 16.0).astype(np.float64)
    y = data.target.astype(np.int64)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(x))
    x, y = x[order], y[order]
    return (x[test_size:], y[test_size:]), (x[:test_size], y[:test_size])


def train_mini_classifier(spec: TrainSpec) -> TrainResult:
    """Train the small digit MLP (flatten + dense stack over 8x8 inputs)."""
    last = None
    for attempt in range(spec.retries + 1):
        seed = spec.seed + attempt
        torch.manual_seed(seed)
        (train_x, train_y), (test_x, test_y) = load_digit_data(seed=seed * 104729 + 3)
        tx = torch.tensor(train_x, dtype=torch.float32)
        ty = torch.tensor(train_y)
        vx = torch.tensor(test_x, dtype=torch.float32)
        vy = torch.tensor(test_y)
        model = _build_mlp((64,) + spec.hidden + (10,))
        history = _fit(model, tx, ty, spec.epochs, spec.lr, spec.weight_decay, log_every=100)
        acc = _accuracy(model, vx, vy)
        doc = mlp_document(
            _weight_pairs(model),
            input_shape=(8, 8),
            class_count=10,
            flatten_first=True,
        )
        last = TrainResult(document=doc, accuracy=acc, seed=seed, history=history)
        if acc >= spec.accuracy_target:
            last.test_set = (test_x, test_y)  # type: ignore[attr-defined]
            return last
    raise RuntimeError(
        f"accuracy target {spec.accuracy_target} unreached after {spec.retries + 1} "
        f"attempts (best run: {last.accuracy:.4f})"
    )
