"""SMT-LIB 2 emission of the region-coverage and refinement obligations.

The emitted files let an external solver audit what the sampling-based
checks decide internally. Output is deterministic text in linear real
arithmetic: piecewise ReLU/maxpool behavior is encoded with ite, distance
bounds are squared to stay linear (spans are constants), and the refinement
walk is unrolled to the given horizon with the direction carried over
positionally from the previous layer's dims.

Only piecewise-linear stages can be emitted; softmax (or any other smooth
stage) between the two layers is an error.
"""

from __future__ import annotations

import numpy as np

from .errors import UnsupportedLayerError
from .geometry import Region, all_directions
from .network import Network

_PIECEWISE = ("dense", "relu", "maxpool", "flatten", "dropout-identity")


def _num(v: float) -> str:
    if v < 0:
        return f"(- {_num(-v)})"
    text = np.format_float_positional(float(v), unique=True, trim="0")
    if text.endswith("."):
        text += "0"
    if "." not in text:
        text += ".0"
    return text


def _sum(terms: list[str]) -> str:
    if not terms:
        return "0.0"
    if len(terms) == 1:
        return terms[0]
    return "(+ " + " ".join(terms) + ")"


class _StageEmitter:
    """Symbolic forward pass through one stage, producing let bindings."""

    def __init__(self, network: Network, k: int, prefix: str):
        self.network = network
        self.k = k
        self.prefix = prefix
        lo, hi = network.stages[k - 1]
        for idx in range(lo, hi):
            if network.layers[idx].kind not in _PIECEWISE:
                raise UnsupportedLayerError(
                    f"layer {idx} ({network.layers[idx].kind}) is not piecewise-linear"
                )

    def emit(self, input_exprs: list[str]) -> tuple[list[tuple[str, str]], list[str]]:
        """(bindings, output expression names) for the stage applied to inputs."""
        bindings: list[tuple[str, str]] = []
        exprs = list(input_exprs)
        lo, hi = self.network.stages[self.k - 1]
        for idx in range(lo, hi):
            layer = self.network.layers[idx]
            kind = layer.kind
            if kind == "dense":
                outs = []
                for i in range(layer.weights.shape[0]):
                    terms = [
                        f"(* {_num(w)} {exprs[j]})"
                        for j, w in enumerate(layer.weights[i])
                        if w != 0.0
                    ]
                    terms.append(_num(layer.bias[i]))
                    name = f"{self.prefix}_l{idx}_{i}"
                    bindings.append((name, _sum(terms)))
                    outs.append(name)
                exprs = outs
            elif kind == "relu":
                outs = []
                for i, e in enumerate(exprs):
                    name = f"{self.prefix}_l{idx}_{i}"
                    bindings.append((name, f"(ite (>= {e} 0.0) {e} 0.0)"))
                    outs.append(name)
                exprs = outs
            elif kind == "maxpool":
                m = layer.pool
                h, w, c = self.network.layer_shapes[idx]
                grid = np.asarray(exprs, dtype=object).reshape(h, w, c)
                outs = []
                for i in range(h // m):
                    for j in range(w // m):
                        for ch in range(c):
                            window = grid[i * m : (i + 1) * m, j * m : (j + 1) * m, ch].reshape(-1)
                            expr = window[0]
                            for other in window[1:]:
                                expr = f"(ite (>= {expr} {other}) {expr} {other})"
                            name = f"{self.prefix}_l{idx}_{i}_{j}_{ch}"
                            bindings.append((name, expr))
                            outs.append(name)
                exprs = outs
            # flatten / dropout-identity: index order is already flat
        return bindings, exprs


def _wrap_lets(bindings: list[tuple[str, str]], body: str) -> str:
    for name, expr in reversed(bindings):
        body = f"(let (({name} {expr})) {body})"
    return body


def _box_predicate(names: list[str], lows, highs) -> str:
    clauses = []
    for name, lo, hi in zip(names, lows, highs):
        clauses.append(f"(<= {_num(lo)} {name})")
        clauses.append(f"(<= {name} {_num(hi)})")
    return "(and " + " ".join(clauses) + ")"


def _input_exprs(prev_region: Region, var_names: dict[int, str]) -> list[str]:
    exprs = []
    for i, v in enumerate(prev_region.base_flat):
        exprs.append(var_names.get(i, _num(float(v))))
    return exprs


def export_constraints(network: Network, k: int, prev_region: Region, region: Region,
                       manipulations=None, which: str = "eq8", *, epsilon: float | None = None,
                       horizon: int = 1, seed: int | None = None,
                       direction_cap: int = 64) -> str:
    """SMT-LIB 2 text of the coverage ("eq8") or refinement ("eq9") formula
    between stage k-1 and stage k. The assertion is closed, so check-sat
    decides whether the property holds."""
    if which not in ("eq8", "eq9"):
        raise ValueError("which must be 'eq8' or 'eq9'")
    if region.layer != k or prev_region.layer != k - 1:
        raise ValueError("regions must sit at stages k and k-1")

    var_names = {d: f"y{d}" for d in prev_region.dims}
    prev_box = prev_region.box()
    quant = " ".join(f"({var_names[d]} Real)" for d in prev_region.dims)
    guard = _box_predicate([var_names[d] for d in prev_region.dims], prev_box.lows, prev_box.highs)

    lines = [
        f"; stage {k} obligation ({which})",
        f"; epsilon {_num(epsilon) if epsilon is not None else 'n/a'}",
        f"; seed {seed if seed is not None else 'n/a'}",
        "(set-logic LRA)",
    ]
    box = region.box()
    sel = list(region.dims)

    if which == "eq8":
        emitter = _StageEmitter(network, k, "img")
        bindings, outs = emitter.emit(_input_exprs(prev_region, var_names))
        pred = _box_predicate([outs[d] for d in sel], box.lows, box.highs)
        body = _wrap_lets(bindings, pred)
        lines.append(f"(assert (forall ({quant}) (=> {guard} {body})))")
    else:
        if epsilon is None:
            raise ValueError("eq9 needs epsilon")
        spans = dict(zip(region.dims, region.spans))
        prev_dirs = list(all_directions(len(prev_region.dims), cap=len(prev_region.dims)))
        if len(prev_dirs) > direction_cap:
            prev_dirs = prev_dirs[:direction_cap]
        a_emit = _StageEmitter(network, k, "a")
        a_bind, a_out = a_emit.emit(_input_exprs(prev_region, var_names))
        clauses = []
        for di, direction in enumerate(prev_dirs):
            shifted = {}
            for d, step, s in zip(prev_region.dims, direction, prev_region.spans):
                base = var_names[d]
                shifted[d] = base if step == 0 else f"(+ {base} {_num(step * s)})"
            z_emit = _StageEmitter(network, k, f"z{di}")
            z_bind, z_out = z_emit.emit(_input_exprs(prev_region, {**var_names, **shifted}))
            a_bind = a_bind + z_bind
            # direction carried positionally onto the selected dims
            pos_dir = {p: direction[i % len(direction)] for i, p in enumerate(sel)}
            step_sq = sum((spans[p] ** 2) for p in sel if pos_dir[p] != 0)
            step_ok = f"(<= {_num(step_sq)} {_num(epsilon * epsilon)})"
            ts = []
            for t in range(horizon):
                per_dim = []
                for p in sel:
                    a, z = a_out[p], z_out[p]
                    d = pos_dir[p]
                    s = spans[p]
                    if d == 0:
                        per_dim.append(f"(= {z} {a})")
                    else:
                        lo_expr = f"(+ {a} {_num(t * d * s)})"
                        hi_expr = f"(+ {a} {_num((t + 1) * d * s)})"
                        if d < 0:
                            lo_expr, hi_expr = hi_expr, lo_expr
                        per_dim.append(f"(and (>= {z} {lo_expr}) (<= {z} {hi_expr}))")
                ts.append("(and " + " ".join(per_dim + [step_ok]) + ")")
            clauses.append("(or " + " ".join(ts) + ")")
        body = _wrap_lets(a_bind, "(and " + " ".join(clauses) + ")")
        lines.append(f"(assert (forall ({quant}) (=> {guard} {body})))")

    lines.append("(check-sat)")
    return "\n".join(lines) + "\n"
