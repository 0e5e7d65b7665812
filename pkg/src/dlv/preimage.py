"""Reconstruction of representative earlier-layer points for deeper activations.

A deeper-layer point produced by the search differs from the base activation
only on a region's selected dimensions, so reconstruction solves for a point
whose forward image matches the target on an explicit set of match dims (all
dims when unspecified), stays inside each intermediate region box, and is
anchored least-norm at the original point's activation. Every candidate is
verified by forward replay at the query tolerance before being returned;
failures yield None (no preimage), never an unverified point.

Dense chains go through an anchored least-squares solve; ReLU inverts
positives exactly and maps zeros to the canonical representative 0 (zero
targets pin the pre-activation to 0 only when the anchored solve leaves them
positive); maxpool is inverted jointly with the stage above it, reusing the
m*m-1 non-maximal window elements of the base activation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedLayerError
from .network import Network, classify_batch, stage_apply

DEFAULT_TOLERANCE = 1e-6
_NEG_TOL = 1e-9


@dataclass(frozen=True)
class PreimageQuery:
    """Target activation at a stage plus the constraint chain below it.

    regions[j] (j < layer) constrains the stage-j point; anchors[j] is the
    original input's stage-j activation, used both as the least-norm anchor
    and as the source of frozen values.
    """

    layer: int
    target: np.ndarray
    match_dims: tuple[int, ...] | None
    regions: tuple
    anchors: tuple
    tolerance: float = DEFAULT_TOLERANCE

    def region_at(self, j: int):
        return self.regions[j] if j < len(self.regions) else None

    def anchor_at(self, j: int) -> np.ndarray:
        return np.asarray(self.anchors[j], dtype=np.float64)


def _stage_box(network: Network, j: int, region) -> tuple[np.ndarray, np.ndarray]:
    """Full-width [low, high] constraint vectors for a stage-j point."""
    n = network.stage_width(j)
    low = np.full(n, -np.inf)
    high = np.full(n, np.inf)
    if region is not None:
        box = region.box()
        low[list(box.dims)] = box.lows
        high[list(box.dims)] = box.highs
    if j == 0:
        low = np.maximum(low, network.input_low)
        high = np.minimum(high, network.input_high)
    return low, high


def _matches(out: np.ndarray, target: np.ndarray, dims, tol: float) -> bool:
    o = out.reshape(-1)[list(dims)]
    t = target.reshape(-1)[list(dims)]
    return bool(np.all(np.abs(o - t) <= tol * np.maximum(1.0, np.abs(t))))


def _stage_kinds(network: Network, k: int) -> list[str]:
    return [layer.kind for layer in network.stage_layers(k)]


def _is_dense_family(kinds: list[str]) -> bool:
    return kinds[0] in ("dense", "conv2d") and all(
        kd in ("relu", "dropout-identity") for kd in kinds[1:]
    )


def stage_linear_map(network: Network, k: int) -> tuple[np.ndarray, np.ndarray, bool]:
    """(W, b, has_relu) with pre-activation = W @ y_flat + b for stage k."""
    kinds = _stage_kinds(network, k)
    if not _is_dense_family(kinds):
        raise UnsupportedLayerError(f"stage {k} ({kinds}) is not a linear stage")
    has_relu = "relu" in kinds
    first = network.stage_layers(k)[0]
    if first.kind == "dense":
        return first.weights, first.bias, has_relu
    # conv2d: materialize the linear operator column by column
    n_in = network.stage_width(k - 1)
    in_shape = network.stage_shapes[k - 1]
    from .network import apply_layer

    bias_img = apply_layer(first, np.zeros((1,) + in_shape))[0].reshape(-1)
    cols = []
    for i in range(n_in):
        e = np.zeros(n_in)
        e[i] = 1.0
        cols.append(apply_layer(first, e.reshape((1,) + in_shape))[0].reshape(-1) - bias_img)
    return np.stack(cols, axis=1), bias_img, has_relu


def _solve_dense(network, k, targets, match_dims, box, anchor, tol):
    """Vectorized anchored solve for a batch of targets through a dense-family
    stage. Returns (points (B, n_prev), ok mask)."""
    W, b, has_relu = stage_linear_map(network, k)
    dims = list(match_dims)
    B = targets.shape[0]
    t = targets.reshape(B, -1)[:, dims]
    ok = np.ones(B, dtype=bool)
    if has_relu:
        ok &= ~np.any(t < -_NEG_TOL, axis=1)
    anchor_flat = anchor.reshape(-1)
    low, high = box
    points = np.zeros((B, anchor_flat.size))

    def verify(idx, ys):
        out = stage_apply(network, k, ys.reshape((-1,) + network.stage_shapes[k - 1]), batched=True)
        out = out.reshape(len(idx), -1)[:, dims]
        return np.all(np.abs(out - t[idx]) <= tol * np.maximum(1.0, np.abs(t[idx])), axis=1)

    def solve_rows(idx, row_mask):
        """Equality rows A_sub y = c_sub, anchored least-norm, clipped to box."""
        sub = [d for d, keep in zip(dims, row_mask) if keep]
        tt = t[idx][:, row_mask]
        c = np.where(tt > _NEG_TOL, tt, 0.0) - b[sub] if has_relu else tt - b[sub]
        if not sub:
            ys = np.repeat(anchor_flat[None, :], len(idx), axis=0)
        else:
            A = W[sub]
            pinv = np.linalg.pinv(A)
            ys = anchor_flat[None, :] + (c - A @ anchor_flat) @ pinv.T
        return np.clip(ys, low, high)

    alive = np.where(ok)[0]
    if not alive.size:
        return points, ok

    if has_relu:
        # solve per zero-pattern group: zero targets stay unconstrained first so
        # dimensions dead at the anchor keep their negative pre-activations
        patterns = t[alive] > _NEG_TOL
        failed = []
        for pattern in np.unique(patterns, axis=0):
            grp = alive[np.where(np.all(patterns == pattern, axis=1))[0]]
            ys = solve_rows(grp, pattern)
            good = verify(grp, ys)
            points[grp] = ys
            ok[grp[~good]] = False
            failed.extend(grp[~good].tolist())
        retry = np.asarray(sorted(failed), dtype=int)
        if retry.size:
            # second pass: pin zero targets to pre-activation 0
            ys = solve_rows(retry, np.ones(len(dims), dtype=bool))
            good = verify(retry, ys)
            points[retry[good]] = ys[good]
            ok[retry[good]] = True
            retry = retry[~good]
    else:
        ys = solve_rows(alive, np.ones(len(dims), dtype=bool))
        good = verify(alive, ys)
        points[alive] = ys
        ok[alive[~good]] = False
        retry = alive[~good]

    if retry.size:
        ys, good = _solve_dense_bounded(network, k, t[retry], dims, W, b, has_relu, low, high, tol, anchor_flat)
        points[retry[good]] = ys[good]
        ok[retry[good]] = True
    return points, ok


def _active_set_solve(A, c, anchor, low, high, iters=6):
    """Anchored equality solve under a box: coordinates that land outside get
    pinned at their bound and the reduced system is re-solved."""
    n = A.shape[1]
    fixed = np.zeros(n, dtype=bool)
    y = anchor.copy()
    for _ in range(iters):
        free = ~fixed
        r = c - A @ y
        if not free.any():
            break
        d = np.linalg.lstsq(A[:, free], r, rcond=None)[0]
        y = y.copy()
        y[free] += d
        below = y < low - 1e-12
        above = y > high + 1e-12
        if not (below.any() or above.any()):
            return y
        y[below] = low[below]
        y[above] = high[above]
        fixed |= below | above
    return np.clip(y, low, high)


def _solve_dense_bounded(network, k, t_rows, dims, W, b, has_relu, low, high, tol, anchor=None):
    """Box-constrained fallback solve, one point at a time: a fast pinning
    pass first, the generic bounded least-squares solver as a last resort."""
    from scipy.optimize import lsq_linear

    A = W[dims]
    B = t_rows.shape[0]
    anchor0 = np.clip(np.zeros(A.shape[1]) if anchor is None else anchor, low, high)
    ys = np.zeros((B, A.shape[1]))
    ok = np.zeros(B, dtype=bool)
    lo = np.where(np.isfinite(low), low, -1e12)
    hi = np.where(np.isfinite(high), high, 1e12)
    shape = network.stage_shapes[k - 1]
    for i in range(B):
        c = np.where(t_rows[i] > _NEG_TOL, t_rows[i], 0.0) - b[dims] if has_relu else t_rows[i] - b[dims]
        y = _active_set_solve(A, c, anchor0, low, high)
        out = stage_apply(network, k, y.reshape(shape))
        if _matches_rows(out.reshape(-1)[dims], t_rows[i], tol):
            ys[i] = y
            ok[i] = True
            continue
        try:
            res = lsq_linear(A, c, bounds=(lo, hi), tol=1e-12, max_iter=40)
        except ValueError:
            continue
        y = np.clip(res.x, low, high)
        out = stage_apply(network, k, y.reshape(shape))
        if _matches_rows(out.reshape(-1)[dims], t_rows[i], tol):
            ys[i] = y
            ok[i] = True
    return ys, ok


def _matches_rows(o, t, tol):
    return bool(np.all(np.abs(o - t) <= tol * np.maximum(1.0, np.abs(t))))


def _invert_elementwise(network, k, kinds, target, match_dims, box, anchor, tol):
    """Stages that invert index-by-index: relu, flatten, dropout, softmax."""
    t = target.reshape(-1)
    y = anchor.reshape(-1).copy()
    dims = range(t.size) if match_dims is None else match_dims
    main = kinds[0]
    if main == "relu":
        for p in dims:
            if t[p] < -_NEG_TOL:
                return None
            y[p] = t[p] if t[p] > _NEG_TOL else 0.0
    elif main in ("flatten", "dropout-identity"):
        for p in dims:
            y[p] = t[p]
    elif main == "softmax":
        if match_dims is not None and len(match_dims) != t.size:
            return None  # partial softmax inversion is not well defined
        if np.any(t <= 0) or abs(t.sum() - 1.0) > 1e-6:
            return None
        z = np.log(t)
        y = z + (anchor.reshape(-1).mean() - z.mean())
    else:
        raise UnsupportedLayerError(f"stage {k} kind {main} has no pointwise inverse")
    low, high = box
    y = np.clip(y, low, high)
    y = y.reshape(network.stage_shapes[k - 1])
    out = stage_apply(network, k, y)
    dims_list = list(range(t.size)) if match_dims is None else list(match_dims)
    if not _matches(out, target, dims_list, tol):
        return None
    return y


def _expand_maxpool(network, j, pooled, anchor_below, box_below, tol):
    """Place pooled values back into the base windows, reusing every
    non-maximal element of the anchor; None when a pooled value would fall
    below a frozen neighbor."""
    layer = network.stage_layers(j)[0]
    m = layer.pool
    below_shape = network.stage_shapes[j - 1]
    h, w, c = below_shape
    out = np.asarray(anchor_below, dtype=np.float64).reshape(below_shape).copy()
    q = np.asarray(pooled, dtype=np.float64).reshape(network.stage_shapes[j])
    for i in range(h // m):
        for jj in range(w // m):
            for ch in range(c):
                window = out[i * m : (i + 1) * m, jj * m : (jj + 1) * m, ch]
                flat = window.reshape(-1)
                arg = int(np.argmax(flat))
                others = np.delete(flat, arg)
                v = q[i, jj, ch]
                if others.size and v < others.max() - _NEG_TOL:
                    return None
                flat[arg] = v
                window[...] = flat.reshape(m, m)
    low, high = box_below
    flat_out = np.clip(out.reshape(-1), low, high)
    out = flat_out.reshape(below_shape)
    replay = stage_apply(network, j, out)
    if not np.allclose(replay, q, rtol=tol, atol=tol):
        return None
    return out


def preimage_step(network: Network, k: int, target, region=None, anchor=None,
                  match_dims=None, tolerance: float = DEFAULT_TOLERANCE):
    """One representative stage-(k-1) point mapping to `target` on match_dims,
    inside the region box; None when none verifies."""
    if k < 1:
        raise ValueError("preimage_step needs k >= 1")
    target = np.asarray(target, dtype=np.float64)
    if anchor is None:
        anchor = np.zeros(network.stage_shapes[k - 1])
    anchor = np.asarray(anchor, dtype=np.float64)
    box = _stage_box(network, k - 1, region)
    kinds = _stage_kinds(network, k)
    dims = tuple(range(target.size)) if match_dims is None else tuple(match_dims)
    if _is_dense_family(kinds):
        pts, ok = _solve_dense(network, k, target.reshape(1, -1), dims, box, anchor, tolerance)
        if not ok[0]:
            return None
        return pts[0].reshape(network.stage_shapes[k - 1])
    if kinds[0] == "maxpool":
        return _expand_maxpool(network, k, target, anchor, box, tolerance)
    return _invert_elementwise(network, k, kinds, target, match_dims, box, anchor, tolerance)


def preimage_maxpool_combined(network: Network, j: int, target, *, match_dims=None,
                              pool_region=None, below_region=None,
                              anchor_pooled=None, anchor_below=None,
                              tolerance: float = DEFAULT_TOLERANCE):
    """Joint inversion of stage j and the maxpool stage j-1 below it.

    Solves stage j for the pooled vector under the stage-(j-1) region box,
    then rebuilds the stage-(j-2) point by replacing only each window's
    maximal element of the base activation.
    """
    if j < 2 or _stage_kinds(network, j - 1)[0] != "maxpool":
        raise UnsupportedLayerError(f"stage {j - 1} below stage {j} is not maxpool")
    if anchor_pooled is None:
        anchor_pooled = stage_apply(network, j - 1, anchor_below)
    pooled = preimage_step(network, j, target, region=pool_region, anchor=anchor_pooled,
                           match_dims=match_dims, tolerance=tolerance)
    if pooled is None:
        return None
    box_below = _stage_box(network, j - 2, below_region)
    return _expand_maxpool(network, j - 1, pooled, anchor_below, box_below, tolerance)


def reconstruct_input(network: Network, query: PreimageQuery):
    """Chain stage inversions from query.layer down to the input layer."""
    j = query.layer
    point = np.asarray(query.target, dtype=np.float64)
    match = query.match_dims
    while j > 0:
        if j >= 2 and _stage_kinds(network, j - 1)[0] == "maxpool":
            point = preimage_maxpool_combined(
                network, j, point,
                match_dims=match,
                pool_region=query.region_at(j - 1),
                below_region=query.region_at(j - 2),
                anchor_below=query.anchor_at(j - 2),
                tolerance=query.tolerance,
            )
            j -= 2
        else:
            point = preimage_step(
                network, j, point,
                region=query.region_at(j - 1),
                anchor=query.anchor_at(j - 1),
                match_dims=match,
                tolerance=query.tolerance,
            )
            j -= 1
        if point is None:
            return None
        reg = query.region_at(j)
        match = reg.dims if reg is not None else None
    return point


def reconstruct_inputs_batch(network: Network, layer: int, targets: np.ndarray,
                             match_dims, regions, anchors,
                             tolerance: float = DEFAULT_TOLERANCE):
    """Batched reconstruct_input: (points (B, *input_shape), ok mask).

    Dense-family stages are solved vectorized; other stage kinds fall back to
    the per-point chain.
    """
    B = targets.shape[0]
    j = layer
    pts = targets.reshape(B, -1).astype(np.float64)
    ok = np.ones(B, dtype=bool)
    match = match_dims
    while j > 0:
        kinds = _stage_kinds(network, j)
        region_below = regions[j - 1] if j - 1 < len(regions) else None
        if _is_dense_family(kinds) and not (j >= 2 and _stage_kinds(network, j - 1)[0] == "maxpool"):
            box = _stage_box(network, j - 1, region_below)
            anchor = np.asarray(anchors[j - 1], dtype=np.float64)
            dims = tuple(range(network.stage_width(j))) if match is None else tuple(match)
            alive = np.where(ok)[0]
            if alive.size:
                solved, good = _solve_dense(network, j, pts[alive], dims, box, anchor, tolerance)
                new_pts = np.zeros((B, anchor.size))
                new_pts[alive] = solved
                ok[alive[~good]] = False
                pts = new_pts
            else:
                pts = np.zeros((B, int(np.asarray(anchors[j - 1]).size)))
            j -= 1
        else:
            # generic fallback, point by point
            new_width = network.stage_width(0)
            out = np.zeros((B, new_width))
            for i in range(B):
                if not ok[i]:
                    continue
                q = PreimageQuery(
                    layer=j,
                    target=pts[i].reshape(network.stage_shapes[j]),
                    match_dims=match,
                    regions=tuple(regions[:j]),
                    anchors=tuple(anchors[:j]),
                    tolerance=tolerance,
                )
                rec_pt = reconstruct_input(network, q)
                if rec_pt is None:
                    ok[i] = False
                else:
                    out[i] = rec_pt.reshape(-1)
            return out.reshape((B,) + network.input_shape), ok
        reg = regions[j] if j < len(regions) else None
        match = reg.dims if reg is not None else None
    return pts.reshape((B,) + network.input_shape), ok


def map_back_to_input(network: Network, query: PreimageQuery, original_class: int):
    """Input-layer witness for a deeper-layer point: reconstructs, clamps to
    the declared input range, replays the full forward pass, and returns the
    image only when the class change survives."""
    if query.layer == 0:
        point = np.clip(query.target.reshape(-1), network.input_low, network.input_high)
        point = point.reshape(network.input_shape)
    else:
        point = reconstruct_input(network, query)
        if point is None:
            return None
        point = np.clip(point.reshape(-1), network.input_low, network.input_high)
        point = point.reshape(network.input_shape)
    if int(classify_batch(network, point[None])[0]) == original_class:
        return None
    return point
