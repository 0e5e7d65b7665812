"""Layer-by-layer propagation: pick deeper-layer dimensions, grow regions
until they cover the image of the previous region, and refine manipulation
spans until every previous-layer step is matched by a short same-layer walk
within the configured precision.

The universal obligations are discharged by seeded sampling (box corners plus
uniform interior points); the SMT emitter exists so any instance can be
audited externally. Sampling obligations are independent, so they can be
distributed across workers; certificate aggregation is a pure reduction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    CoverageFailureError,
    DisconnectedDimensionError,
    RefinementFailureError,
    SearchBudgetExceededError,
)
from .geometry import BOX_TOL, Region, all_directions, generate_manipulation_set
from .mcts import mcts_search
from .network import Network, classify, forward, stage_apply
from .search import (
    SearchConfig,
    Verdict,
    VerificationOutcome,
    partition_features,
    single_path_search,
)

_SPAN_FLOOR = 1e-9
_CORNER_CAP = 4096
# full manipulation sets are materialized only for narrow regions; wide ones
# are always walked feature by feature, which builds its own small sets
_MATERIALIZE_CAP = 8


@dataclass(frozen=True)
class DimensionSelection:
    """Chosen dimensions of a layer, most salient first.

    Saliency is the distance from the layer's mean activation; upstream_map
    records which chosen dim covers each previous-layer dim (empty for the
    start layer)."""

    layer: int
    dims: tuple[int, ...]
    layer_mean: float
    saliencies: tuple[float, ...]
    upstream_map: dict = None

    def __post_init__(self):
        object.__setattr__(self, "upstream_map", dict(self.upstream_map or {}))


def _order_by_saliency(saliency: np.ndarray, candidates) -> list[int]:
    cand = np.asarray(sorted(candidates), dtype=int)
    order = np.lexsort((cand, -saliency[cand]))
    return [int(cand[i]) for i in order]


def select_dims_start(activation: np.ndarray, count: int) -> DimensionSelection:
    """Top-count dims by |activation - layer mean|, ties to the lowest index."""
    flat = np.asarray(activation, dtype=np.float64).reshape(-1)
    if count > flat.size:
        raise ValueError(f"requested {count} dims from a layer of width {flat.size}")
    if count < 1:
        raise ValueError("count must be >= 1")
    mean = float(flat.mean())
    sal = np.abs(flat - mean)
    chosen = _order_by_saliency(sal, range(flat.size))[:count]
    return DimensionSelection(
        layer=0,
        dims=tuple(chosen),
        layer_mean=mean,
        saliencies=tuple(float(sal[d]) for d in chosen),
    )


def _layer_connectivity(layer, in_shape, out_shape) -> np.ndarray:
    """Boolean (out, in) reachability matrix of one raw layer."""
    n_in = int(np.prod(in_shape))
    n_out = int(np.prod(out_shape))
    kind = layer.kind
    if kind == "dense":
        return np.abs(layer.weights) > 1e-12
    if kind in ("relu", "dropout-identity", "flatten"):
        return np.eye(n_in, dtype=bool)
    if kind == "softmax":
        return np.ones((n_out, n_in), dtype=bool)
    if kind == "maxpool":
        m = layer.pool
        h, w, c = in_shape
        conn = np.zeros((n_out, n_in), dtype=bool)
        out_idx = np.arange(n_out).reshape(out_shape)
        in_idx = np.arange(n_in).reshape(in_shape)
        for i in range(h // m):
            for j in range(w // m):
                for ch in range(c):
                    window = in_idx[i * m : (i + 1) * m, j * m : (j + 1) * m, ch]
                    conn[out_idx[i, j, ch], window.reshape(-1)] = True
        return conn
    if kind == "conv2d":
        kh, kw, cin, cout = layer.weights.shape
        conn = np.zeros((n_out, n_in), dtype=bool)
        out_idx = np.arange(n_out).reshape(out_shape)
        in_idx = np.arange(n_in).reshape(in_shape)
        used = np.abs(layer.weights) > 1e-12
        for i in range(out_shape[0]):
            for j in range(out_shape[1]):
                for o in range(cout):
                    patch = used[:, :, :, o]
                    src = in_idx[i : i + kh, j : j + kw, :][patch]
                    conn[out_idx[i, j, o], src] = True
        return conn
    raise ValueError(f"unknown layer kind {kind!r}")


def stage_connectivity(network: Network, k: int) -> np.ndarray:
    """Boolean matrix (stage-k dims x stage-(k-1) dims) of reachability."""
    lo, hi = network.stages[k - 1]
    conn = None
    for idx in range(lo, hi):
        mat = _layer_connectivity(
            network.layers[idx], network.layer_shapes[idx], network.layer_shapes[idx + 1]
        )
        conn = mat if conn is None else (mat.astype(int) @ conn.astype(int)) > 0
    return conn


def select_dims_next(network: Network, k: int, prev_dims, activation: np.ndarray) -> DimensionSelection:
    """Carry a dimension selection one layer deeper.

    Each previous dim claims its most salient connected dim not claimed yet
    (a previous dim whose connected dims are all claimed stays covered by one
    of them); a previous dim with no connected dims at all is an error.
    """
    flat = np.asarray(activation, dtype=np.float64).reshape(-1)
    mean = float(flat.mean())
    sal = np.abs(flat - mean)
    conn = stage_connectivity(network, k)
    chosen: list[int] = []
    upstream: dict[int, int] = {}
    for p_prev in sorted(int(p) for p in prev_dims):
        cands = np.where(conn[:, p_prev])[0]
        if cands.size == 0:
            raise DisconnectedDimensionError(p_prev)
        ranked = _order_by_saliency(sal, cands)
        pick = next((p for p in ranked if p not in chosen), None)
        if pick is None:
            upstream[p_prev] = ranked[0]  # already selected; coverage holds
        else:
            chosen.append(pick)
            upstream[p_prev] = pick
    order = _order_by_saliency(sal, chosen)
    return DimensionSelection(
        layer=k,
        dims=tuple(order),
        layer_mean=mean,
        saliencies=tuple(float(sal[d]) for d in order),
        upstream_map=upstream,
    )


def _corner_rows(ndims: int, steps, seed: int) -> np.ndarray:
    """All sign-corner coefficient rows, or a seeded subset beyond the cap."""
    steps = np.asarray(steps, dtype=float)
    if 2**ndims <= _CORNER_CAP:
        signs = np.asarray(list(itertools.product((-1.0, 1.0), repeat=ndims)))
    else:
        rng = np.random.default_rng(seed ^ 0xC0C0)
        signs = rng.choice((-1.0, 1.0), size=(_CORNER_CAP, ndims))
    return signs * steps


def _sample_rows(region: Region, samples: int, seed: int) -> np.ndarray:
    """Corner rows first, then uniform interior rows (continuous coefficients)."""
    d = len(region.dims)
    corners = _corner_rows(d, region.steps, seed)
    rng = np.random.default_rng(seed)
    interior = rng.uniform(-1.0, 1.0, size=(samples, d)) * np.asarray(region.steps, dtype=float)
    return np.concatenate([corners, interior], axis=0)


def check_region_covers(network: Network, prev_region: Region, region: Region,
                        samples: int, seed: int):
    """Sampled universal check that the forward image of the previous region
    lands inside the region's box on its selected dims.

    Returns (ok, worst_residual, worst_point); corners are always included.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rows = _sample_rows(prev_region, samples, seed)
    pts = prev_region.lattice_points(rows)
    imgs = stage_apply(network, region.layer, pts, batched=True)
    sel = imgs.reshape(len(rows), -1)[:, list(region.dims)]
    box = region.box()
    lows = np.asarray(box.lows)
    highs = np.asarray(box.highs)
    excess = np.maximum(np.maximum(lows - sel, sel - highs), 0.0)
    residuals = excess.max(axis=1)
    worst = int(np.argmax(residuals))
    return bool(residuals[worst] <= BOX_TOL), float(residuals[worst]), pts[worst]


def grow_region(network: Network, k: int, prev_region: Region,
                selection: DimensionSelection, config: SearchConfig) -> Region:
    """Region at stage k satisfying the sampled coverage condition.

    Initial spans come from the forward-image spread of the previous region's
    corners; the step count doubles until coverage passes or the cap is hit.
    """
    base_k = stage_apply(network, k, prev_region.base)
    corners = prev_region.lattice_points(_corner_rows(len(prev_region.dims), prev_region.steps, config.seed))
    imgs = stage_apply(network, k, corners, batched=True).reshape(len(corners), -1)
    base_flat = base_k.reshape(-1)
    spread = np.max(np.abs(imgs[:, list(selection.dims)] - base_flat[list(selection.dims)]), axis=0)
    steps0 = max(1, int(config.steps))
    spans = np.maximum(spread, _SPAN_FLOOR) / steps0
    for doubling in range(config.grow_doublings_cap + 1):
        region = Region(
            layer=k, base=base_k, dims=selection.dims,
            spans=tuple(spans), steps=tuple([steps0 * 2**doubling] * len(selection.dims)),
        )
        ok, residual, worst = check_region_covers(
            network, prev_region, region, config.coverage_samples, config.seed
        )
        if ok:
            return region
    raise CoverageFailureError(residual, worst)


@dataclass(frozen=True)
class RefinementCertificate:
    """Evidence that sampled previous-layer steps are matched within epsilon."""

    layer: int
    horizon: int
    sample_count: int
    direction_count: int
    max_residual: float
    epsilon: float
    spans: tuple[float, ...]
    halvings: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "horizon": self.horizon,
            "sample_count": self.sample_count,
            "direction_count": self.direction_count,
            "max_residual": self.max_residual,
            "epsilon": self.epsilon,
            "spans": list(self.spans),
            "halvings": self.halvings,
            "seed": self.seed,
        }


def _maybe_manipulation_set(region: Region, config: SearchConfig):
    if len(region.dims) > _MATERIALIZE_CAP:
        return None  # implicit: derived per feature during the search
    return generate_manipulation_set(region, cap=config.dims_cap)


def _prev_directions(ndims: int, cap: int, seed: int) -> np.ndarray:
    """Directions of the previous layer's manipulation set; the full 3^d - 1
    enumeration below the cap, else axis steps plus a seeded sample."""
    total = 3**ndims - 1
    if total <= cap:
        return np.asarray(list(all_directions(ndims, cap=ndims)), dtype=int)
    rows = []
    for axis in range(ndims):
        for sign in (-1, 1):
            row = [0] * ndims
            row[axis] = sign
            rows.append(tuple(row))
    rng = np.random.default_rng(seed ^ 0xD17)
    seen = set(rows)
    while len(rows) < cap:
        cand = tuple(int(v) for v in rng.integers(-1, 2, size=ndims))
        if any(cand) and cand not in seen:
            seen.add(cand)
            rows.append(cand)
    return np.asarray(rows, dtype=int)


def _walk_stats(z_sel, a_sel, spans, horizon):
    """Closed-form ladder-walk reachability for obligations.

    r_p = |z_p - a_p| / s_p. A lattice walk (any valid direction per step)
    reaches the target's cell corner in max_p floor(r_p) steps and one final
    step brackets the target, so needed = floor(max r) + 1. The residual is
    the distance from the target to the nearest endpoint of the bracketing
    step, truncated at the horizon when it is too short.
    """
    spans = np.asarray(spans, dtype=float)
    r = np.abs(z_sel - a_sel) / spans
    flo = np.floor(r + 1e-12)
    frac = r - flo
    needed = np.floor(np.max(r, axis=1) - 1e-9).astype(int) + 1
    t_star = np.minimum(horizon - 1, np.maximum(needed - 1, 0))[:, None]
    c1 = np.minimum(t_star, flo)
    d1 = np.linalg.norm((r - c1) * spans, axis=1)
    c2 = np.minimum(t_star + 1, flo + (frac > 1e-12))
    d2 = np.linalg.norm((r - c2) * spans, axis=1)
    return needed, np.minimum(d1, d2)


def _obligation_residuals(network, k, prev_region, prev_directions, region, horizon, samples, seed):
    """(max needed horizon, max residual) over all sampled obligations."""
    rows = _sample_rows(prev_region, samples, seed)
    pts = prev_region.lattice_points(rows).reshape(len(rows), -1)
    box = prev_region.box()
    lows = np.asarray(box.lows)
    highs = np.asarray(box.highs)
    prev_dims = list(prev_region.dims)
    prev_spans = np.asarray(prev_region.spans)
    sel = list(region.dims)
    shape = (len(rows),) + tuple(prev_region.base.shape)
    a_img = stage_apply(network, k, pts.reshape(shape), batched=True).reshape(len(rows), -1)[:, sel]
    worst_needed = 1
    worst_residual = 0.0
    for d in prev_directions:
        moved = pts.copy()
        moved[:, prev_dims] = np.clip(
            moved[:, prev_dims] + d * prev_spans, lows, highs
        )
        z_img = stage_apply(network, k, moved.reshape(shape), batched=True).reshape(len(rows), -1)[:, sel]
        needed, residual = _walk_stats(z_img, a_img, region.spans, horizon)
        worst_needed = max(worst_needed, int(needed.max()))
        worst_residual = max(worst_residual, float(residual.max()))
    return worst_needed, worst_residual


def refine_manipulations(network: Network, k: int, prev_region: Region, prev_manipulations,
                         region: Region, epsilon: float, config: SearchConfig):
    """Refine the grown region's spans and pick a horizon so that every sampled
    previous-layer manipulation is matched by a bounded same-layer walk ending
    within epsilon.

    Returns (refined_region, manipulations, certificate). Spans are halved
    first until the step diameter sqrt(sum s_p^2) is at most epsilon (horizon
    escalation cannot fix a diameter violation, and halving doubles the
    needed horizon); then the horizon doubles 1,2,4,... up to the cap to
    cover the worst obligation.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    halvings = 0
    while (
        math.sqrt(sum(s * s for s in region.with_scale(halvings).spans)) > epsilon
        and halvings < config.span_halvings_cap
    ):
        halvings += 1
    refined = region.with_scale(halvings)
    if math.sqrt(sum(s * s for s in refined.spans)) > epsilon:
        raise RefinementFailureError(math.sqrt(sum(s * s for s in refined.spans)) - epsilon)

    directions = _prev_directions(len(prev_region.dims), config.direction_cap, config.seed)
    needed, residual = _obligation_residuals(
        network, k, prev_region, directions, refined, config.horizon_cap,
        config.refine_samples, config.seed,
    )
    horizon = 1
    while horizon < needed:
        horizon *= 2
    if horizon > config.horizon_cap:
        raise RefinementFailureError(residual)
    # residual at the final horizon (identical when horizon >= needed)
    _, residual = _obligation_residuals(
        network, k, prev_region, directions, refined, horizon,
        config.refine_samples, config.seed,
    )
    certificate = RefinementCertificate(
        layer=k,
        horizon=horizon,
        sample_count=config.refine_samples,
        direction_count=len(directions),
        max_residual=residual,
        epsilon=epsilon,
        spans=refined.spans,
        halvings=halvings,
        seed=config.seed,
    )
    return refined, _maybe_manipulation_set(refined, config), certificate


def refinement_residual(network: Network, k: int, prev_region: Region, region: Region,
                        certificate: RefinementCertificate, samples: int, seed: int) -> float:
    """Re-evaluate the certificate's worst residual on a fresh sample."""
    directions = _prev_directions(len(prev_region.dims), certificate.direction_count, seed)
    _, residual = _obligation_residuals(
        network, k, prev_region, directions, region, certificate.horizon, samples, seed
    )
    return residual


def build_regions_to_layer(network: Network, x: np.ndarray, config: SearchConfig, upto: int):
    """Regions/manipulations/certificates from the start layer through `upto`,
    constructed exactly as the verification pipeline would, without searching."""
    x = network.check_input(x)
    acts = forward(network, x)
    if not config.start_layer <= upto <= network.stage_count:
        raise ValueError(f"layer {upto} outside {config.start_layer}..{network.stage_count}")
    artifacts = {}
    prev_region = prev_manips = None
    for k in range(config.start_layer, upto + 1):
        if k == config.start_layer:
            width = int(np.prod(network.stage_shapes[k]))
            selection = select_dims_start(acts[k], min(config.dims, width))
            region = Region(
                layer=k, base=acts[k], dims=selection.dims,
                spans=tuple([config.span] * len(selection.dims)),
                steps=tuple([config.steps] * len(selection.dims)),
            )
            manips, cert = _maybe_manipulation_set(region, config), None
        else:
            selection = select_dims_next(network, k, prev_region.dims, acts[k])
            grown = grow_region(network, k, prev_region, selection, config)
            region, manips, cert = refine_manipulations(
                network, k, prev_region, prev_manips, grown, config.epsilon, config
            )
        artifacts[k] = (region, manips, cert)
        prev_region, prev_manips = region, manips
    return artifacts


def run_algorithm1(network: Network, x: np.ndarray, config: SearchConfig) -> list[VerificationOutcome]:
    """Layer-by-layer verification from the configured start layer.

    Per layer: build the region and manipulation set (growing and refining
    from the previous layer's), verify 0-variation; continue deeper on Safe,
    stop and report on Adversarial (the witness is mapped back to the input
    layer by the search itself). In mcts mode an inconclusive layer does not
    stop the walk inward, since that search only falsifies.
    """
    x = network.check_input(x)
    acts = forward(network, x)
    n_stages = network.stage_count
    if not 0 <= config.start_layer <= n_stages:
        raise ValueError(f"start layer {config.start_layer} outside 0..{n_stages}")

    chain_regions: list = [None] * (n_stages + 1)
    outcomes: list[VerificationOutcome] = []
    prev_region = None
    prev_manips = None

    for k in range(config.start_layer, n_stages + 1):
        certificate = None
        if k == config.start_layer:
            width = int(np.prod(network.stage_shapes[k]))
            selection = select_dims_start(acts[k], min(config.dims, width))
            region = Region(
                layer=k, base=acts[k], dims=selection.dims,
                spans=tuple([config.span] * len(selection.dims)),
                steps=tuple([config.steps] * len(selection.dims)),
            )
            manips = _maybe_manipulation_set(region, config)
        else:
            selection = select_dims_next(network, k, prev_region.dims, acts[k])
            grown = grow_region(network, k, prev_region, selection, config)
            region, manips, certificate = refine_manipulations(
                network, k, prev_region, prev_manips, grown, config.epsilon, config
            )
        chain_regions[k] = region
        partition = partition_features(region, config.feature_dims)
        kwargs = dict(
            chain_regions=tuple(chain_regions[:k]),
            chain_anchors=tuple(acts[:k]),
            original_input=x,
        )
        try:
            if config.mode == "mcts":
                outcome = mcts_search(network, region, partition, config, **kwargs)
            else:
                outcome = single_path_search(network, region, partition, config, **kwargs)
        except SearchBudgetExceededError as exc:
            outcome = VerificationOutcome(
                verdict=Verdict.INCONCLUSIVE, layer=k, explored=exc.explored,
                original_class=classify(network, x), note=str(exc),
            )
        outcome.certificate = certificate
        outcomes.append(outcome)
        if outcome.verdict is Verdict.ADVERSARIAL:
            break
        if outcome.verdict is Verdict.INCONCLUSIVE and config.mode != "mcts":
            break
        prev_region, prev_manips = region, manips
    return outcomes
