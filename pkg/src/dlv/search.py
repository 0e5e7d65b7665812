"""Exhaustive 0-variation search over a region's manipulation lattice.

The complete, covering ladder tree induced by a manipulation set over a
region is explored as a breadth-first sweep of the integer-coefficient
lattice with a visited set, clamping every move to the region box (a clamped
move that goes nowhere ends its branch). A region is Safe when every
reachable lattice point keeps the base class; the first differing point is
returned as an Adversarial witness together with its ladder and, where
reconstruction succeeds, an input-layer image.

Input-layer points classify directly; deeper-layer points classify through
their reconstructed input-layer representative (points with no preimage are
discarded: they correspond to no real input).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DlvError, SearchBudgetExceededError
from .geometry import Ladder, Region, canonical_ladder, generate_manipulation_set
from .metrics import l_distance
from .network import Network, classify_batch, classify_from_stage, forward
from .preimage import DEFAULT_TOLERANCE, reconstruct_inputs_batch


_CHUNK = 20000  # wave batch size: bounds memory and budget overshoot


class Verdict(enum.Enum):
    SAFE = "safe"
    ADVERSARIAL = "adversarial"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class SearchConfig:
    """All search tunables; the named presets mirror the shipped parameter sets."""

    start_layer: int = 0
    dims: int = 2                    # dimensions selected at the start layer
    span: float = 1.0                # step size s_p
    steps: int = 1                   # step count m_p (half-width = span * steps)
    epsilon: float = 0.1             # refinement precision
    feature_dims: int = 2            # dimensions per feature
    mode: str = "single"             # "single" or "mcts"
    seed: int = 0
    mcts_iterations: int = 2000
    mcts_exploration: float = math.sqrt(2.0)
    mcts_rollout_depth: int = 0      # 0 = auto
    dims_cap: int = 20
    coverage_samples: int = 1000
    refine_samples: int = 1000
    horizon_cap: int = 64
    grow_doublings_cap: int = 20
    span_halvings_cap: int = 20
    direction_cap: int = 256
    max_explored: int = 2_000_000
    quantum: float = 1.0 / 255.0
    tolerance: float = DEFAULT_TOLERANCE

    def to_dict(self) -> dict:
        return {
            "start_layer": self.start_layer,
            "dims": self.dims,
            "span": self.span,
            "steps": self.steps,
            "epsilon": self.epsilon,
            "feature_dims": self.feature_dims,
            "mode": self.mode,
            "seed": self.seed,
            "mcts_iterations": self.mcts_iterations,
            "mcts_exploration": self.mcts_exploration,
            "max_explored": self.max_explored,
            "horizon_cap": self.horizon_cap,
            "quantum": self.quantum,
        }


PRESETS = {
    "2d": SearchConfig(start_layer=0, dims=2, span=1.0, steps=1, epsilon=0.1, feature_dims=2),
    "mnist-mini": SearchConfig(start_layer=1, dims=12, span=1.0, steps=1, epsilon=1.0, feature_dims=5),
}


@dataclass
class VerificationOutcome:
    verdict: Verdict
    layer: int
    explored: int
    original_class: int
    new_class: int | None = None
    witness_activation: np.ndarray | None = None
    witness_input: np.ndarray | None = None
    l1: float | None = None
    l2: float | None = None
    discarded: int = 0
    note: str = ""
    ladder: Ladder | None = None
    certificate: object = None

    def to_dict(self) -> dict:
        doc = {
            "verdict": self.verdict.value,
            "layer": self.layer,
            "explored": self.explored,
            "discarded": self.discarded,
            "original_class": self.original_class,
            "new_class": self.new_class,
            "l1": self.l1,
            "l2": self.l2,
            "note": self.note,
            "witness_reconstructed": self.witness_input is not None,
        }
        if self.certificate is not None:
            doc["refinement"] = self.certificate.to_dict()
        return doc


@dataclass(frozen=True)
class Feature:
    """A group of region dimensions explored as one unit."""

    dims: tuple[int, ...]


@dataclass(frozen=True)
class FeaturePartition:
    region: Region
    features: tuple[Feature, ...]

    def __post_init__(self):
        seen: set[int] = set()
        for f in self.features:
            if seen & set(f.dims):
                raise ValueError("features overlap")
            seen |= set(f.dims)
        if seen != set(self.region.dims):
            raise ValueError("features do not cover the region dims")

    def __len__(self):
        return len(self.features)


def partition_features(region: Region, dims_per_feature: int, saliency=None) -> FeaturePartition:
    """Chunk the region dims into features of dims_per_feature dimensions,
    most salient first (|activation - layer mean| by default, ties by index);
    the last feature may be smaller."""
    if dims_per_feature < 1:
        raise ValueError("dims_per_feature must be >= 1")
    base = region.base_flat
    if saliency is None:
        saliency = np.abs(base[list(region.dims)] - base.mean())
    else:
        saliency = np.asarray(saliency, dtype=float)
        if saliency.shape != (len(region.dims),):
            raise ValueError("saliency must align with region dims")
    order = np.lexsort((region.dims, -saliency))
    ordered = [region.dims[i] for i in order]
    features = tuple(
        Feature(dims=tuple(ordered[i : i + dims_per_feature]))
        for i in range(0, len(ordered), dims_per_feature)
    )
    return FeaturePartition(region=region, features=features)


class _ClassChecker:
    """Classifies lattice points of a region, caching by coefficient tuple.

    For deeper layers, classification routes through the reconstructed
    input-layer representative; match dims are the full region's dims even
    when only a feature sub-lattice is walked.
    """

    def __init__(self, network: Network, region: Region, *, match_region: Region | None = None,
                 chain_regions=(), chain_anchors=(), tolerance: float = DEFAULT_TOLERANCE):
        self.network = network
        self.region = region
        self.match_dims = (match_region or region).dims
        self.chain_regions = tuple(chain_regions)
        self.chain_anchors = tuple(chain_anchors)
        self.tolerance = tolerance

    def base_point(self) -> np.ndarray:
        return self.region.base

    def check_rows(self, coeff_rows: np.ndarray):
        """(classes, inputs, feasible): class -1 where no preimage exists."""
        pts = self.region.lattice_points(coeff_rows)
        k = self.region.layer
        if k == 0:
            classes = classify_batch(self.network, pts)
            return classes, pts, np.ones(len(pts), dtype=bool)
        inputs, ok = reconstruct_inputs_batch(
            self.network, k, pts, self.match_dims,
            self.chain_regions, self.chain_anchors, self.tolerance,
        )
        classes = np.full(len(pts), -1, dtype=int)
        if np.any(ok):
            classes[ok] = classify_batch(self.network, inputs[ok])
        return classes, inputs, ok


def _distances(original_input, witness_input):
    if original_input is None or witness_input is None:
        return None, None
    return (
        l_distance(original_input, witness_input, 1),
        l_distance(original_input, witness_input, 2),
    )


def verify_0_variation(network: Network, region: Region, manipulations, config: SearchConfig,
                       *, chain_regions=(), chain_anchors=(), original_input=None,
                       original_class: int | None = None,
                       checker: _ClassChecker | None = None,
                       visited: set | None = None,
                       match_region: Region | None = None) -> VerificationOutcome:
    """Decide whether the region keeps one class across its whole lattice.

    Explores the complete covering ladder tree breadth-first with a visited
    set; raises SearchBudgetExceededError (a distinguished inconclusive
    error, never a silent Safe) when config.max_explored is hit.
    """
    manipulations = tuple(manipulations)
    directions = np.asarray([m.direction for m in manipulations], dtype=int)
    steps = np.asarray(region.steps, dtype=int)
    if checker is None:
        checker = _ClassChecker(
            network, region, match_region=match_region,
            chain_regions=chain_regions, chain_anchors=chain_anchors,
            tolerance=config.tolerance,
        )
    own_visited = visited if visited is not None else set()

    base = tuple([0] * len(region.dims))
    classes, inputs, ok = checker.check_rows(np.asarray([base]))
    if original_class is None:
        if not ok[0]:
            raise DlvError("base point of the region has no input-layer representative")
        original_class = int(classes[0])
    explored = 0
    discarded = 0
    wave = [base]
    own_visited.add(base)

    while wave:
        rows = None
        hit = np.empty(0, dtype=int)
        for start in range(0, len(wave), _CHUNK):
            rows = np.asarray(wave[start : start + _CHUNK], dtype=int)
            classes, inputs, ok = checker.check_rows(rows)
            explored += len(rows)
            if explored > config.max_explored:
                raise SearchBudgetExceededError(explored, config.max_explored)
            discarded += int(np.sum(~ok))
            hit = np.where(ok & (classes != original_class))[0]
            if hit.size:
                break
        if hit.size:
            i = int(hit[0])
            coeffs = tuple(int(c) for c in rows[i])
            witness_act = region.lattice_point(coeffs)
            witness_input = None
            if region.layer == 0:
                witness_input = witness_act
            elif inputs is not None:
                witness_input = inputs[i]
            l1, l2 = _distances(original_input, witness_input)
            return VerificationOutcome(
                verdict=Verdict.ADVERSARIAL,
                layer=region.layer,
                explored=explored,
                discarded=discarded,
                original_class=original_class,
                new_class=int(classes[i]),
                witness_activation=witness_act,
                witness_input=witness_input,
                l1=l1,
                l2=l2,
                ladder=canonical_ladder(region, manipulations, coeffs),
                note="class change at lattice point " + repr(coeffs),
            )
        nxt = []
        for row in wave:
            moved = np.clip(np.asarray(row) + directions, -steps, steps)
            for cand in moved:
                key = tuple(int(c) for c in cand)
                if key != row and key not in own_visited:
                    own_visited.add(key)
                    nxt.append(key)
        wave = sorted(nxt)

    note = (
        f"0-variation holds: {explored} lattice points, "
        f"{len(manipulations)} manipulations over dims {region.dims}, "
        f"spans {tuple(round(s, 12) for s in region.spans)}, steps {tuple(region.steps)}"
    )
    return VerificationOutcome(
        verdict=Verdict.SAFE,
        layer=region.layer,
        explored=explored,
        discarded=discarded,
        original_class=original_class,
        note=note,
    )


def brute_force_oracle(network: Network, region: Region, quantum: float,
                       max_points: int = 10**6) -> Verdict:
    """Independent grid check: classify every quantum-spaced lattice point of
    the region box by direct forward propagation (no preimages, no ladders)."""
    if quantum <= 0:
        raise ValueError("quantum must be positive")
    half = np.asarray(region.spans) * np.asarray(region.steps)
    counts = np.floor(half / quantum + 1e-9).astype(int)
    total = int(np.prod(2 * counts + 1))
    if total > max_points:
        raise DlvError(f"oracle grid of {total} points exceeds cap {max_points}")
    axes = [np.arange(-c, c + 1) * quantum for c in counts]
    mesh = np.meshgrid(*axes, indexing="ij") if axes else []
    offsets = np.stack([m.reshape(-1) for m in mesh], axis=1) if axes else np.zeros((1, 0))
    pts = np.repeat(region.base_flat[None, :], offsets.shape[0], axis=0)
    pts[:, list(region.dims)] += offsets
    pts = pts.reshape((offsets.shape[0],) + region.base.shape)
    if region.layer == 0:
        classes = classify_batch(network, pts)
        base_class = int(classify_batch(network, region.base[None])[0])
    else:
        classes = classify_from_stage(network, region.layer, pts, batched=True)
        base_class = int(classify_from_stage(network, region.layer, region.base))
    return Verdict.ADVERSARIAL if np.any(classes != base_class) else Verdict.SAFE


def _feature_sub_region(region: Region, feature: Feature, current: dict[int, int]) -> Region:
    """The feature's own box around the current point (other dims frozen)."""
    base = region.lattice_point([current.get(d, 0) for d in region.dims])
    idx = [region.dims.index(d) for d in feature.dims]
    return Region(
        layer=region.layer,
        base=base,
        dims=feature.dims,
        spans=tuple(region.spans[i] for i in idx),
        steps=tuple(region.steps[i] for i in idx),
    )


def single_path_search(network: Network, region: Region, partition: FeaturePartition,
                       config: SearchConfig, *, chain_regions=(), chain_anchors=(),
                       original_input=None) -> VerificationOutcome:
    """Explore features one at a time in partition order.

    Each feature's sub-region is searched exhaustively; when it stays safe,
    the walk commits to that feature's boundary-reaching point (the explored
    point furthest from the feature's center, ties broken lexicographically)
    and moves on. The first class change anywhere wins.
    """
    current: dict[int, int] = {}
    explored = 0
    discarded = 0
    original_class = None

    for fi, feature in enumerate(partition.features):
        sub = _feature_sub_region(region, feature, current)
        manips = generate_manipulation_set(sub, cap=config.dims_cap)
        checker = _ClassChecker(
            network, sub, match_region=region,
            chain_regions=chain_regions, chain_anchors=chain_anchors,
            tolerance=config.tolerance,
        )
        visited: set = set()
        outcome = verify_0_variation(
            network, sub, manips, config,
            original_input=original_input, original_class=original_class,
            checker=checker, visited=visited,
        )
        if original_class is None:
            original_class = outcome.original_class
        explored += outcome.explored
        discarded += outcome.discarded
        if outcome.verdict is Verdict.ADVERSARIAL:
            return VerificationOutcome(
                verdict=Verdict.ADVERSARIAL,
                layer=region.layer,
                explored=explored,
                discarded=discarded,
                original_class=original_class,
                new_class=outcome.new_class,
                witness_activation=outcome.witness_activation,
                witness_input=outcome.witness_input,
                l1=outcome.l1,
                l2=outcome.l2,
                ladder=outcome.ladder,
                note=f"class change while exploring feature {fi} {feature.dims}",
            )
        # commit this feature to its boundary-reaching point
        spans = np.asarray(sub.spans)
        best_key = None
        best_val = -1.0
        for key in sorted(visited):
            val = float(np.sum(np.abs(np.asarray(key)) * spans))
            if val > best_val + 1e-12:
                best_val = val
                best_key = key
        if best_key is not None:
            for d, c in zip(feature.dims, best_key):
                current[d] = int(c)

    return VerificationOutcome(
        verdict=Verdict.SAFE,
        layer=region.layer,
        explored=explored,
        discarded=discarded,
        original_class=original_class if original_class is not None else -1,
        note=f"all {len(partition.features)} features explored without class change",
    )
