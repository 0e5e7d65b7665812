"""Monte Carlo tree search over feature/manipulation sequences.

Tree nodes are sequences of (feature, manipulation) choices applied to the
region base; selection uses UCT, rollouts apply uniformly random choices
until a class change or the depth budget, and the reward is 1/(1 + L1
distance of the reconstructed witness) on misclassification, else 0. The
search is a falsifier: it returns the best (smallest-L1) adversarial example
found within the iteration budget, or a distinct inconclusive verdict, never
Safe. Fixing the seed fixes the outcome exactly.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import Region, all_directions, canonical_ladder, generate_manipulation_set
from .metrics import l_distance
from .network import Network
from .search import (
    FeaturePartition,
    SearchConfig,
    Verdict,
    VerificationOutcome,
    _ClassChecker,
)


class _Node:
    __slots__ = ("state", "children", "untried", "visits", "value")

    def __init__(self, state, n_actions):
        self.state = state
        self.children = {}
        self.untried = list(range(n_actions))
        self.visits = 0
        self.value = 0.0


class _Searcher:
    def __init__(self, network, region, partition, config, chain_regions, chain_anchors, original_input):
        self.region = region
        self.config = config
        self.original_input = original_input
        self.checker = _ClassChecker(
            network, region,
            chain_regions=chain_regions, chain_anchors=chain_anchors,
            tolerance=config.tolerance,
        )
        self.steps = np.asarray(region.steps, dtype=int)
        self.dim_pos = {d: i for i, d in enumerate(region.dims)}
        self.actions = [
            (fi, feature.dims, direction)
            for fi, feature in enumerate(partition.features)
            for direction in all_directions(len(feature.dims), cap=config.dims_cap)
        ]
        self.rng = np.random.default_rng(config.seed)
        self.cache: dict[tuple, tuple] = {}
        self.original_class = None
        self.best = None  # (l1, state, cls, witness_input)

    def lookup(self, state):
        hit = self.cache.get(state)
        if hit is None:
            classes, inputs, ok = self.checker.check_rows(np.asarray([state], dtype=int))
            witness = inputs[0] if (inputs is not None and ok[0]) else None
            hit = (int(classes[0]), witness, bool(ok[0]))
            self.cache[state] = hit
        return hit

    def apply(self, state, action_idx):
        fi, dims, direction = self.actions[action_idx]
        row = np.asarray(state, dtype=int).copy()
        for d, step in zip(dims, direction):
            i = self.dim_pos[d]
            row[i] = int(np.clip(row[i] + step, -self.steps[i], self.steps[i]))
        return tuple(int(v) for v in row)

    def reward_of(self, state):
        cls, witness, ok = self.lookup(state)
        if not ok or cls == self.original_class:
            return None
        if self.region.layer == 0:
            witness = self.region.lattice_point(state)
        l1 = (
            l_distance(self.original_input, witness, 1)
            if (self.original_input is not None and witness is not None)
            else float("inf")
        )
        if self.best is None or l1 < self.best[0]:
            self.best = (l1, state, cls, witness)
        return 1.0 / (1.0 + l1) if math.isfinite(l1) else 0.5

    def uct_child(self, node):
        log_n = math.log(max(node.visits, 1))
        best_idx, best_score = None, -math.inf
        for idx in sorted(node.children):
            child = node.children[idx]
            score = child.value / child.visits + self.config.mcts_exploration * math.sqrt(
                log_n / child.visits
            )
            if score > best_score + 1e-15:
                best_idx, best_score = idx, score
        return node.children[best_idx]

    def rollout(self, state, depth):
        for _ in range(depth):
            action = int(self.rng.integers(0, len(self.actions)))
            state = self.apply(state, action)
            r = self.reward_of(state)
            if r is not None:
                return r
        return 0.0

    def run(self):
        base = tuple([0] * len(self.region.dims))
        cls, _, ok = self.lookup(base)
        self.original_class = cls
        depth = self.config.mcts_rollout_depth or 2 * int(np.sum(self.steps))
        root = _Node(base, len(self.actions))
        for _ in range(self.config.mcts_iterations):
            node, path = root, [root]
            # selection
            while not node.untried and node.children:
                node = self.uct_child(node)
                path.append(node)
            # expansion
            if node.untried:
                action = node.untried.pop(0)
                child_state = self.apply(node.state, action)
                child = _Node(child_state, len(self.actions))
                node.children[action] = child
                node = child
                path.append(node)
            # simulation
            reward = self.reward_of(node.state)
            if reward is None:
                reward = self.rollout(node.state, depth)
            # backpropagation
            for n in path:
                n.visits += 1
                n.value += reward
        return root


def mcts_search(network: Network, region: Region, partition: FeaturePartition,
                config: SearchConfig, *, chain_regions=(), chain_anchors=(),
                original_input=None) -> VerificationOutcome:
    searcher = _Searcher(network, region, partition, config, chain_regions, chain_anchors, original_input)
    searcher.run()
    explored = len(searcher.cache)
    if searcher.best is not None:
        l1, state, cls, witness = searcher.best
        witness_act = region.lattice_point(state)
        manips = generate_manipulation_set(region, cap=config.dims_cap)
        l2 = (
            l_distance(original_input, witness, 2)
            if (original_input is not None and witness is not None)
            else None
        )
        return VerificationOutcome(
            verdict=Verdict.ADVERSARIAL,
            layer=region.layer,
            explored=explored,
            original_class=searcher.original_class,
            new_class=cls,
            witness_activation=witness_act,
            witness_input=witness,
            l1=l1 if math.isfinite(l1) else None,
            l2=l2,
            ladder=canonical_ladder(region, manips, state),
            note=f"best of {config.mcts_iterations} tree-search iterations (seed {config.seed})",
        )
    return VerificationOutcome(
        verdict=Verdict.INCONCLUSIVE,
        layer=region.layer,
        explored=explored,
        original_class=searcher.original_class if searcher.original_class is not None else -1,
        note=(
            f"no adversarial example within {config.mcts_iterations} iterations "
            "(budget exhausted; not a safety certificate)"
        ),
    )
