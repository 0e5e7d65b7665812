"""Regions, step manipulations and their hyper-rectangle geometry.

A Region is a box over a chosen subset of a stage's (flattened) dimensions,
centered at a base activation: dimension p ranges over
[base_p - span_p * steps_p, base_p + span_p * steps_p]. Its lattice is the
integer-coefficient grid base + c_p * span_p with |c_p| <= steps_p, which is
what the exhaustive search walks. A Manipulation shifts each selected
dimension by -span, 0 or +span according to its direction.

All types are immutable and the operations pure, so regions and manipulation
sets can be explored from parallel workers safely.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import CombinatorialBlowupError

BOX_TOL = 1e-9  # closed-interval membership tolerance for verification decisions

DEFAULT_DIMS_CAP = 20


@dataclass(frozen=True)
class HyperRectangle:
    """Closed per-dimension intervals over an explicit dimension set."""

    dims: tuple[int, ...]
    lows: tuple[float, ...]
    highs: tuple[float, ...]

    def __post_init__(self):
        if any(l > h + BOX_TOL for l, h in zip(self.lows, self.highs)):
            raise ValueError("hyper-rectangle with low > high")

    def contains(self, values: np.ndarray, tol: float = BOX_TOL) -> bool:
        v = np.asarray(values, dtype=float).reshape(-1)[list(self.dims)]
        return bool(
            np.all(v >= np.asarray(self.lows) - tol)
            and np.all(v <= np.asarray(self.highs) + tol)
        )


def rec(a: np.ndarray, b: np.ndarray, layer_a: int | None = None, layer_b: int | None = None) -> HyperRectangle:
    """Smallest box containing two same-layer activations, per dimension."""
    if layer_a is not None and layer_b is not None and layer_a != layer_b:
        raise ValueError(f"activations from different layers {layer_a} != {layer_b}")
    av = np.asarray(a, dtype=float).reshape(-1)
    bv = np.asarray(b, dtype=float).reshape(-1)
    if av.shape != bv.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return HyperRectangle(
        dims=tuple(range(av.size)),
        lows=tuple(np.minimum(av, bv)),
        highs=tuple(np.maximum(av, bv)),
    )


@dataclass(frozen=True)
class Region:
    """Box over selected dims of a stage activation, with its step lattice.

    layer is the stage index; base the full activation there; dims flattened
    dimension ids; spans the per-dim step size s_p > 0; steps the per-dim step
    count m_p >= 0 (half-width = span * steps).
    """

    layer: int
    base: np.ndarray
    dims: tuple[int, ...]
    spans: tuple[float, ...]
    steps: tuple[int, ...]

    def __post_init__(self):
        base = np.asarray(self.base, dtype=np.float64)
        base.setflags(write=False)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        n = base.size
        if not self.dims:
            raise ValueError("region needs at least one dimension")
        if len(set(self.dims)) != len(self.dims):
            raise ValueError("region dims must be distinct")
        if any(d < 0 or d >= n for d in self.dims):
            raise ValueError(f"region dim outside layer width {n}")
        spans = tuple(float(s) for s in np.broadcast_to(np.atleast_1d(self.spans), (len(self.dims),)))
        steps = tuple(int(m) for m in np.broadcast_to(np.atleast_1d(self.steps), (len(self.dims),)))
        if any(s <= 0 for s in spans):
            raise ValueError("spans must be positive")
        if any(m < 0 for m in steps):
            raise ValueError("step counts must be >= 0")
        object.__setattr__(self, "spans", spans)
        object.__setattr__(self, "steps", steps)

    @property
    def base_flat(self) -> np.ndarray:
        return self.base.reshape(-1)

    def box(self) -> HyperRectangle:
        center = self.base_flat[list(self.dims)]
        half = np.asarray(self.spans) * np.asarray(self.steps)
        return HyperRectangle(self.dims, tuple(center - half), tuple(center + half))

    def lattice_point(self, coeffs) -> np.ndarray:
        """Full activation for integer lattice coefficients over dims."""
        point = self.base_flat.copy()
        point[list(self.dims)] += np.asarray(coeffs, dtype=float) * np.asarray(self.spans)
        return point.reshape(self.base.shape)

    def lattice_points(self, coeff_rows: np.ndarray) -> np.ndarray:
        """Batched lattice_point: (B, ndims) coefficients -> (B, *shape)."""
        rows = np.asarray(coeff_rows, dtype=float)
        pts = np.repeat(self.base_flat[None, :], rows.shape[0], axis=0)
        pts[:, list(self.dims)] += rows * np.asarray(self.spans)
        return pts.reshape((rows.shape[0],) + self.base.shape)

    def grid_size(self) -> int:
        n = 1
        for m in self.steps:
            n *= 2 * m + 1
        return n

    def contains(self, values: np.ndarray, tol: float = BOX_TOL) -> bool:
        return self.box().contains(values, tol=tol)

    def with_scale(self, halvings: int) -> "Region":
        """Same box, spans halved `halvings` times (step counts doubled)."""
        f = 2 ** halvings
        return Region(
            self.layer,
            self.base,
            self.dims,
            tuple(s / f for s in self.spans),
            tuple(m * f for m in self.steps),
        )


@dataclass(frozen=True)
class Manipulation:
    """A one-step operator: shift dimension p by direction_p * span_p."""

    layer: int
    dims: tuple[int, ...]
    direction: tuple[int, ...]
    spans: tuple[float, ...]

    def __post_init__(self):
        if len(self.dims) != len(self.direction) or len(self.dims) != len(self.spans):
            raise ValueError("dims/direction/spans length mismatch")
        if not any(d != 0 for d in self.direction):
            raise ValueError("direction must move at least one dimension")
        if any(d not in (-1, 0, 1) for d in self.direction):
            raise ValueError("direction entries must be in {-1, 0, +1}")


def apply_manipulation(manipulation: Manipulation, act: np.ndarray) -> np.ndarray:
    """Shifted activation; untouched dimensions are preserved exactly.

    No clamping happens here: keeping the result inside a region is the
    search's policy.
    """
    flat = np.asarray(act, dtype=np.float64).reshape(-1).copy()
    for d, s, dim in zip(manipulation.direction, manipulation.spans, manipulation.dims):
        flat[dim] += d * s
    return flat.reshape(np.asarray(act).shape)


def all_directions(ndims: int, cap: int = DEFAULT_DIMS_CAP):
    """All 3^ndims - 1 nonzero direction tuples, lexicographic (-1 < 0 < +1)."""
    if ndims > cap:
        raise CombinatorialBlowupError(
            f"{ndims} dims would enumerate 3^{ndims}-1 directions; "
            f"cap is {cap} -- decompose the region into features instead"
        )
    for direction in itertools.product((-1, 0, 1), repeat=ndims):
        if any(d != 0 for d in direction):
            yield direction


def generate_manipulation_set(region: Region, cap: int = DEFAULT_DIMS_CAP) -> tuple[Manipulation, ...]:
    """Every single-step manipulation of the region: all nonzero directions
    over its dims, paired with the region's spans. Deterministic order."""
    return tuple(
        Manipulation(region.layer, region.dims, direction, region.spans)
        for direction in all_directions(len(region.dims), cap=cap)
    )


def is_valid_manipulation_set(manipulations, act: np.ndarray, layer: int | None = None) -> bool:
    """True iff the base activation is strictly interior to the union of the
    manipulations' rectangles: every dimension touched by the set must be
    moved strictly down by some manipulation and strictly up by another."""
    manipulations = tuple(manipulations)
    if not manipulations:
        return False
    if layer is not None and any(m.layer != layer for m in manipulations):
        raise ValueError("manipulation set spans multiple layers")
    down: set[int] = set()
    up: set[int] = set()
    touched: set[int] = set()
    for m in manipulations:
        for d, s, dim in zip(m.direction, m.spans, m.dims):
            if d == 0 or s <= 0:
                continue
            touched.add(dim)
            (down if d < 0 else up).add(dim)
    return bool(touched) and all(dim in down and dim in up for dim in touched)


def is_minimal_at_granularity(manipulation: Manipulation, quantum: float) -> bool:
    """Discretized minimality surrogate: every span is at most the quantum."""
    if quantum <= 0:
        raise ValueError("quantum must be positive")
    return all(s <= quantum + BOX_TOL for s in manipulation.spans)


@dataclass(frozen=True)
class Ladder:
    """A chain of activations linked by recorded manipulations.

    The first element is its region's base; each successor results from
    applying the recorded manipulation to its predecessor; every element but
    possibly the last lies inside the region.
    """

    region: Region
    activations: tuple
    manipulations: tuple[Manipulation, ...]

    def check(self, tol: float = BOX_TOL) -> bool:
        acts = [np.asarray(a, dtype=float) for a in self.activations]
        if len(acts) != len(self.manipulations) + 1:
            return False
        if not np.allclose(acts[0], self.region.base, atol=tol, rtol=0):
            return False
        for prev, manip, nxt in zip(acts, self.manipulations, acts[1:]):
            if not np.allclose(apply_manipulation(manip, prev), nxt, atol=tol, rtol=0):
                return False
        for act in acts[:-1]:
            if not self.region.contains(act, tol=tol):
                return False
        return True


def canonical_ladder(region: Region, manipulations, coeffs) -> Ladder:
    """Deterministic ladder from the region base to the lattice point with
    the given coefficients: walk each dimension in order, one step at a time,
    using single-dimension manipulations from the set."""
    by_direction = {m.direction: m for m in manipulations}
    current = np.zeros(len(region.dims), dtype=int)
    acts = [region.lattice_point(current)]
    path = []
    for axis, target in enumerate(coeffs):
        step = 1 if target >= 0 else -1
        direction = tuple(step if i == axis else 0 for i in range(len(region.dims)))
        manip = by_direction.get(direction)
        if manip is None:
            raise ValueError(f"manipulation set lacks direction {direction}")
        for _ in range(abs(int(target))):
            current = current.copy()
            current[axis] += step
            path.append(manip)
            acts.append(region.lattice_point(current))
    return Ladder(region, tuple(acts), tuple(path))
