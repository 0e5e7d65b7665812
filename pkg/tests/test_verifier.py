import numpy as np
import pytest

from dlv.errors import DlvError, SearchBudgetExceededError
from dlv.geometry import Region, generate_manipulation_set
from dlv.mcts import mcts_search
from dlv.network import LayerSpec, Network, classify
from dlv.search import (
    SearchConfig,
    Verdict,
    brute_force_oracle,
    partition_features,
    single_path_search,
    verify_0_variation,
)

from conftest import random_relu_net


def linear_net(w, b):
    return Network(
        layers=(LayerSpec("dense", np.asarray(w, float), np.asarray(b, float)),),
        input_shape=(len(w[0]),),
        class_count=len(w),
    )


def region_at(base, spans, steps, layer=0, dims=None):
    base = np.asarray(base, float)
    dims = tuple(range(base.size)) if dims is None else dims
    return Region(layer=layer, base=base, dims=dims, spans=spans, steps=steps)


CFG = SearchConfig()


def test_constant_network_safe():
    net = linear_net(np.zeros((2, 2)), [1.0, 0.0])
    region = region_at([0.5, 0.5], (0.25, 0.25), (2, 2))
    outcome = verify_0_variation(net, region, generate_manipulation_set(region), CFG)
    assert outcome.verdict is Verdict.SAFE
    assert outcome.explored == region.grid_size() == 25


def test_boundary_crossing_region_adversarial():
    # logits (x0, 1 - x0): boundary at x0 = 0.5 crosses the box
    net = linear_net([[1.0, 0.0], [-1.0, 0.0]], [0.0, 1.0])
    region = region_at([0.3, 0.5], (0.15, 0.15), (2, 2))
    manips = generate_manipulation_set(region)
    outcome = verify_0_variation(net, region, manips, CFG, original_input=region.base)
    assert outcome.verdict is Verdict.ADVERSARIAL
    assert outcome.new_class != outcome.original_class
    # the witness replays to a different class and its ladder is well formed
    assert classify(net, outcome.witness_input) == outcome.new_class
    assert outcome.ladder.check()
    assert outcome.l1 is not None and outcome.l2 is not None


def test_explored_never_exceeds_lattice_size():
    rng = np.random.default_rng(2)
    for _ in range(10):
        net = random_relu_net(rng, (2, 5, 2))
        base = rng.uniform(-1, 1, size=2)
        region = region_at(base, tuple(rng.uniform(0.05, 0.3, 2)), tuple(int(m) for m in rng.integers(1, 4, 2)))
        outcome = verify_0_variation(net, region, generate_manipulation_set(region), CFG)
        assert outcome.explored <= region.grid_size()
        if outcome.verdict is Verdict.SAFE:
            assert outcome.explored == region.grid_size()


def test_budget_exhaustion_is_loud():
    net = linear_net(np.zeros((2, 2)), [1.0, 0.0])
    region = region_at([0.5, 0.5], (0.1, 0.1), (5, 5))
    cfg = SearchConfig(max_explored=10)
    with pytest.raises(SearchBudgetExceededError):
        verify_0_variation(net, region, generate_manipulation_set(region), cfg)


def test_brute_force_oracle_cases():
    net = linear_net([[1.0, 0.0], [-1.0, 0.0]], [0.0, 1.0])
    # zero extent: only the base point
    flat = region_at([0.3, 0.5], (1e-9, 1e-9), (0, 0))
    assert brute_force_oracle(net, flat, quantum=0.1) is Verdict.SAFE
    # boundary at x0 = 0.5 inside the box
    crossing = region_at([0.3, 0.5], (0.15, 0.15), (2, 2))
    assert brute_force_oracle(net, crossing, quantum=0.05) is Verdict.ADVERSARIAL
    with pytest.raises(DlvError):
        brute_force_oracle(net, crossing, quantum=1e-6)


def test_oracle_agreement_at_unit_quantum():
    # with spans equal to the oracle quantum the two lattices coincide,
    # so the verdicts must agree exactly (20/20)
    rng = np.random.default_rng(7)
    agree = 0
    for trial in range(20):
        net = random_relu_net(rng, (2, int(rng.integers(3, 7)), 2), scale=1.5)
        base = rng.uniform(-1.0, 1.0, size=2)
        quantum = float(rng.uniform(0.02, 0.2))
        steps = (int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        region = region_at(base, (quantum, quantum), steps)
        verdict = verify_0_variation(net, region, generate_manipulation_set(region), CFG).verdict
        oracle = brute_force_oracle(net, region, quantum)
        agree += verdict is oracle
    assert agree == 20


def test_oracle_safe_implies_search_safe():
    rng = np.random.default_rng(17)
    checked = 0
    for _ in range(30):
        net = random_relu_net(rng, (2, 4, 2))
        base = rng.uniform(-1, 1, size=2)
        q = float(rng.uniform(0.05, 0.2))
        region = region_at(base, (q, q), (2, 2))
        if brute_force_oracle(net, region, q) is Verdict.SAFE:
            outcome = verify_0_variation(net, region, generate_manipulation_set(region), CFG)
            assert outcome.verdict is Verdict.SAFE
            checked += 1
    assert checked > 0


def test_partition_chunking():
    region = region_at(np.zeros(6), (1.0,) * 6, (1,) * 6)
    part = partition_features(region, 5)
    assert [len(f.dims) for f in part.features] == [5, 1]
    single = partition_features(region, 6)
    assert len(single) == 1
    with pytest.raises(ValueError):
        partition_features(region, 0)


def test_partition_saliency_order():
    region = region_at(np.zeros(3), (1.0,) * 3, (1,) * 3)
    part = partition_features(region, 1, saliency=np.array([3.0, 1.0, 2.0]))
    assert [f.dims for f in part.features] == [(0,), (2,), (1,)]


def test_partition_disjoint_and_covering():
    rng = np.random.default_rng(12)
    base = rng.normal(size=10)
    region = region_at(base, (1.0,) * 10, (1,) * 10)
    part = partition_features(region, 3)
    seen = [d for f in part.features for d in f.dims]
    assert sorted(seen) == sorted(region.dims)
    assert len(seen) == len(set(seen))


def test_single_feature_equals_plain_search():
    rng = np.random.default_rng(9)
    net = random_relu_net(rng, (2, 6, 2))
    region = region_at(rng.uniform(-1, 1, 2), (0.2, 0.2), (2, 2))
    part = partition_features(region, len(region.dims))
    a = single_path_search(net, region, part, CFG, original_input=region.base)
    b = verify_0_variation(net, region, generate_manipulation_set(region), CFG, original_input=region.base)
    assert a.verdict is b.verdict
    assert a.explored == b.explored
    if a.verdict is Verdict.ADVERSARIAL:
        assert np.allclose(a.witness_input, b.witness_input)


def test_single_path_safe_counts_all_features():
    net = linear_net(np.zeros((2, 4)), [1.0, 0.0])
    region = region_at([0.5] * 4, (0.1,) * 4, (1,) * 4)
    part = partition_features(region, 2)
    outcome = single_path_search(net, region, part, CFG, original_input=region.base)
    assert outcome.verdict is Verdict.SAFE
    # each of the two features sweeps its own 3x3 sub-box
    assert outcome.explored == 18
    assert "features explored" in outcome.note


def test_single_path_finds_change_on_fixture_digits(minidigits, digit_images):
    cfg = SearchConfig(start_layer=0, dims=14, feature_dims=5)
    found = 0
    for img in digit_images[:10]:
        from dlv.refinement import build_regions_to_layer

        region = build_regions_to_layer(minidigits, img, cfg, 0)[0][0]
        part = partition_features(region, cfg.feature_dims)
        outcome = single_path_search(minidigits, region, part, cfg, original_input=img)
        found += outcome.verdict is Verdict.ADVERSARIAL
        if outcome.verdict is Verdict.ADVERSARIAL:
            assert classify(minidigits, outcome.witness_input) == outcome.new_class
    assert found > 0  # success recorded, not a fixed count


def test_single_path_witness_reproducible_by_mcts():
    # when single-path reports a change, multi-path search with the same
    # region finds one too (it can reach every point single-path can)
    rng = np.random.default_rng(23)
    hits = 0
    for _ in range(10):
        net = random_relu_net(rng, (3, 6, 2))
        region = region_at(rng.uniform(-1, 1, 3), (0.3,) * 3, (1,) * 3)
        part = partition_features(region, 2)
        sp = single_path_search(net, region, part, CFG, original_input=region.base)
        if sp.verdict is Verdict.ADVERSARIAL:
            hits += 1
            mc = mcts_search(
                net, region, part,
                SearchConfig(seed=1, mcts_iterations=4000),
                original_input=region.base,
            )
            assert mc.verdict is Verdict.ADVERSARIAL
    assert hits > 0


def test_mcts_deterministic_given_seed():
    rng = np.random.default_rng(31)
    net = random_relu_net(rng, (3, 6, 2))
    region = region_at(rng.uniform(-1, 1, 3), (0.4,) * 3, (1,) * 3)
    part = partition_features(region, 2)
    cfg = SearchConfig(seed=5, mcts_iterations=500)
    a = mcts_search(net, region, part, cfg, original_input=region.base)
    b = mcts_search(net, region, part, cfg, original_input=region.base)
    assert a.verdict is b.verdict
    assert a.explored == b.explored
    if a.verdict is Verdict.ADVERSARIAL:
        assert a.l1 == b.l1
        assert np.array_equal(a.witness_activation, b.witness_activation)


def test_mcts_zero_budget_inconclusive():
    net = linear_net([[1.0, 0.0], [-1.0, 0.0]], [0.0, 1.0])
    region = region_at([0.3, 0.5], (0.15, 0.15), (1, 1))
    part = partition_features(region, 2)
    outcome = mcts_search(net, region, part, SearchConfig(mcts_iterations=0), original_input=region.base)
    assert outcome.verdict is Verdict.INCONCLUSIVE
    assert "not a safety certificate" in outcome.note


def test_mcts_at_least_matches_single_path_distance():
    # multi-path may find closer examples; with a large budget on a small
    # lattice it must not do worse
    rng = np.random.default_rng(40)
    compared = 0
    for _ in range(10):
        net = random_relu_net(rng, (3, 8, 2), scale=1.5)
        region = region_at(rng.uniform(-0.5, 0.5, 3), (0.4,) * 3, (1,) * 3)
        part = partition_features(region, 1)
        sp = single_path_search(net, region, part, CFG, original_input=region.base)
        if sp.verdict is not Verdict.ADVERSARIAL:
            continue
        mc = mcts_search(
            net, region, part,
            SearchConfig(seed=3, mcts_iterations=10000),
            original_input=region.base,
        )
        assert mc.verdict is Verdict.ADVERSARIAL
        assert mc.l1 <= sp.l1 + 1e-12
        compared += 1
    assert compared > 0


def test_witness_self_consistency_random_nets():
    rng = np.random.default_rng(55)
    for _ in range(10):
        net = random_relu_net(rng, (2, 6, 3), scale=1.5)
        region = region_at(rng.uniform(-1, 1, 2), (0.5, 0.5), (2, 2))
        outcome = verify_0_variation(
            net, region, generate_manipulation_set(region), CFG, original_input=region.base
        )
        if outcome.verdict is Verdict.ADVERSARIAL:
            assert classify(net, outcome.witness_input) == outcome.new_class != outcome.original_class
