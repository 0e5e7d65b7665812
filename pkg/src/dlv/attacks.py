"""Baseline adversarial-example generators: the one-step gradient-sign attack
and the iterative Jacobian-saliency pixel-pair attack.

Both are deterministic per input. Success means any class change relative to
the network's own prediction on the clean input; distances follow the metrics
module's normalized definitions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gradients import gradient_input, jacobian_output_input
from .metrics import l_distance
from .network import Network, classify, output_logits


@dataclass
class AttackResult:
    perturbed: np.ndarray
    success: bool
    original_class: int
    new_class: int
    l1: float
    l2: float
    steps: int
    params: dict = field(default_factory=dict)


def _finish(network, x, perturbed, original_class, steps, params) -> AttackResult:
    new_class = classify(network, perturbed)
    return AttackResult(
        perturbed=perturbed,
        success=new_class != original_class,
        original_class=original_class,
        new_class=new_class,
        l1=l_distance(x, perturbed, 1),
        l2=l_distance(x, perturbed, 2),
        steps=steps,
        params=params,
    )


def fgsm(network: Network, x, epsilon: float) -> AttackResult:
    """x + epsilon * sign(grad of the cross-entropy loss), clipped to the
    network's input range."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    x = network.check_input(x)
    label = classify(network, x)
    g = gradient_input(network, x, label)
    perturbed = x.reshape(-1) + epsilon * np.sign(g.reshape(-1))
    perturbed = np.clip(perturbed, network.input_low, network.input_high)
    perturbed = perturbed.reshape(network.input_shape)
    return _finish(network, x, perturbed, label, 1, {"epsilon": epsilon})


def _runner_up(logits: np.ndarray, exclude: int) -> int:
    order = np.lexsort((np.arange(logits.size), -logits))
    for idx in order:
        if int(idx) != exclude:
            return int(idx)
    return exclude


def saliency_pair(jacobian: np.ndarray, target: int, candidates: np.ndarray):
    """Best pixel pair by the increase-target criterion.

    For pair (p, q): alpha = dJ_target/dp + dJ_target/dq must be positive,
    beta = sum over other classes of the same must be negative; the pair
    maximizes -alpha*beta. Ties resolve to the lexicographically smallest
    pair. Returns None when no pair qualifies.
    """
    target_grad = jacobian[target]
    other_grad = jacobian.sum(axis=0) - target_grad
    cand = np.asarray(sorted(candidates), dtype=int)
    if cand.size < 2:
        return None
    tg = target_grad[cand]
    og = other_grad[cand]
    alpha = tg[:, None] + tg[None, :]
    beta = og[:, None] + og[None, :]
    score = -alpha * beta
    eligible = (alpha > 0) & (beta < 0)
    iu = np.triu_indices(cand.size, k=1)
    mask = eligible[iu]
    if not np.any(mask):
        return None
    vals = np.where(mask, score[iu], -np.inf)
    best = np.max(vals)
    flat_hits = np.where(vals >= best - 1e-15 * max(1.0, abs(best)))[0]
    i, j = iu[0][flat_hits[0]], iu[1][flat_hits[0]]
    return int(cand[i]), int(cand[j])


def jsma(network: Network, x, theta: float, epsilon_fraction: float = 0.1,
         target_class: int | None = None) -> AttackResult:
    """Iteratively drive the most salient pixel pair toward the target class.

    theta in (0, 1] is the per-step change as a fraction of each pixel's
    range; at most ceil(epsilon_fraction * n) pixels are ever modified.
    Stops at the first class change, on the pixel budget, or when no
    eligible pair remains.
    """
    if not 0 < theta <= 1:
        raise ValueError("theta must be in (0, 1]")
    if epsilon_fraction < 0:
        raise ValueError("epsilon_fraction must be >= 0")
    x = network.check_input(x)
    original_class = classify(network, x)
    if target_class is None:
        target_class = _runner_up(output_logits(network, x), original_class)
    if not 0 <= target_class < network.class_count:
        raise ValueError(f"target class {target_class} outside range {network.class_count}")
    n = int(np.prod(network.input_shape))
    budget = math.ceil(epsilon_fraction * n)
    low, high = network.input_low, network.input_high
    current = x.reshape(-1).copy()
    changed: set[int] = set()
    params = {"theta": theta, "epsilon_fraction": epsilon_fraction, "target_class": target_class}

    steps = 0
    while True:
        candidates = [p for p in range(n) if current[p] < high[p] - 1e-12]
        pair = saliency_pair(
            jacobian_output_input(network, current.reshape(network.input_shape)),
            target_class,
            np.asarray(candidates, dtype=int),
        )
        if pair is None:
            break
        if len(changed | set(pair)) > budget:
            break
        p, q = pair
        for idx in (p, q):
            current[idx] = min(high[idx], current[idx] + theta * (high[idx] - low[idx]))
            changed.add(idx)
        steps += 1
        if classify(network, current.reshape(network.input_shape)) != original_class:
            break
    return _finish(network, x, current.reshape(network.input_shape), original_class, steps, params)
