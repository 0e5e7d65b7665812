import itertools

import numpy as np
import pytest

from dlv.attacks import AttackResult, fgsm, jsma, saliency_pair
from dlv.gradients import gradient_input, jacobian_output_input
from dlv.metrics import l_distance
from dlv.network import LayerSpec, Network, classify

from conftest import random_relu_net


def test_fgsm_zero_epsilon_is_identity(minidigits, digit_images):
    result = fgsm(minidigits, digit_images[0], 0.0)
    assert not result.success
    assert np.array_equal(result.perturbed, digit_images[0])
    assert result.l1 == 0.0 and result.l2 == 0.0


def test_fgsm_formula_structure(minidigits, digit_images):
    x = digit_images[1]
    eps = 0.15
    result = fgsm(minidigits, x, eps)
    g = gradient_input(minidigits, x, classify(minidigits, x))
    expect = np.clip(x + eps * np.sign(g), 0.0, 1.0)
    assert np.array_equal(result.perturbed, expect)
    # each pixel moves by exactly +-eps, stays put (zero gradient), or clips
    diff = (result.perturbed - x).reshape(-1)
    at_bounds = (result.perturbed.reshape(-1) <= 0.0) | (result.perturbed.reshape(-1) >= 1.0)
    free = ~at_bounds
    assert np.all(np.isin(np.round(np.abs(diff[free]), 12), [0.0, eps]))
    assert np.max(np.abs(diff)) <= eps + 1e-12


def test_fgsm_deterministic(minidigits, digit_images):
    a = fgsm(minidigits, digit_images[2], 0.2)
    b = fgsm(minidigits, digit_images[2], 0.2)
    assert np.array_equal(a.perturbed, b.perturbed)
    assert a.success == b.success


def test_fgsm_success_rate_nondecreasing_in_epsilon(minidigits, digit_images):
    rates = []
    for eps in (0.1, 0.2, 0.4):
        rates.append(sum(fgsm(minidigits, img, eps).success for img in digit_images[:100]))
    assert rates[0] <= rates[1] <= rates[2]
    assert rates[-1] > 0


def test_fgsm_distances_match_metrics(minidigits, digit_images):
    result = fgsm(minidigits, digit_images[4], 0.3)
    assert abs(result.l1 - l_distance(digit_images[4], result.perturbed, 1)) <= 1e-12
    assert abs(result.l2 - l_distance(digit_images[4], result.perturbed, 2)) <= 1e-12


def test_fgsm_negative_epsilon_rejected(minidigits, digit_images):
    with pytest.raises(ValueError):
        fgsm(minidigits, digit_images[0], -0.1)


def toy_16px_net(seed):
    rng = np.random.default_rng(seed)
    return random_relu_net(rng, (16, 10, 4), scale=1.5), rng


def test_jsma_theta_one_saturates_chosen_pixels():
    net, rng = toy_16px_net(0)
    x = rng.uniform(0.05, 0.6, size=16)
    result = jsma(net, x, theta=1.0, epsilon_fraction=0.5)
    touched = ~np.isclose(result.perturbed, x)
    assert np.all(result.perturbed[touched] == 1.0)


def test_jsma_pixel_pair_matches_bruteforce_each_step():
    # exhaustive pair enumeration oracle, several nets and steps
    for seed in range(5):
        net, rng = toy_16px_net(seed)
        x = rng.uniform(0.1, 0.7, size=16)
        original = classify(net, x)
        target = (original + 1) % 4
        current = x.copy()
        for step in range(20):
            jac = jacobian_output_input(net, current)
            candidates = [p for p in range(16) if current[p] < 1.0 - 1e-12]
            got = saliency_pair(jac, target, np.asarray(candidates))
            # brute force over all candidate pairs
            tg = jac[target]
            og = jac.sum(axis=0) - tg
            best, best_score = None, -np.inf
            for p, q in itertools.combinations(sorted(candidates), 2):
                alpha = tg[p] + tg[q]
                beta = og[p] + og[q]
                if alpha > 0 and beta < 0 and -alpha * beta > best_score:
                    best, best_score = (p, q), -alpha * beta
            assert got == best
            if got is None:
                break
            current[list(got)] = 1.0


def test_jsma_zero_budget_returns_input():
    net, rng = toy_16px_net(7)
    x = rng.uniform(0.1, 0.7, size=16)
    result = jsma(net, x, theta=1.0, epsilon_fraction=0.0)
    assert not result.success
    assert np.array_equal(result.perturbed, x)
    assert result.steps == 0


def test_jsma_respects_pixel_budget(minidigits, digit_images):
    for frac in (0.05, 0.1):
        result = jsma(minidigits, digit_images[5], theta=1.0, epsilon_fraction=frac)
        changed = int(np.sum(~np.isclose(result.perturbed, digit_images[5])))
        assert changed <= int(np.ceil(frac * 64))


def test_jsma_succeeds_on_some_digits(minidigits, digit_images):
    wins = sum(
        jsma(minidigits, img, theta=1.0, epsilon_fraction=0.15).success
        for img in digit_images[:20]
    )
    assert wins > 0


def test_jsma_invalid_target_rejected(minidigits, digit_images):
    with pytest.raises(ValueError):
        jsma(minidigits, digit_images[0], theta=1.0, target_class=10)
    with pytest.raises(ValueError):
        jsma(minidigits, digit_images[0], theta=1.5)


def test_jsma_success_flag_consistent(minidigits, digit_images):
    for img in digit_images[:10]:
        result = jsma(minidigits, img, theta=1.0, epsilon_fraction=0.1)
        assert result.success == (classify(minidigits, result.perturbed) != result.original_class)
