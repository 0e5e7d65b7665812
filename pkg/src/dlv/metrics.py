"""Distance metrics and the robustness comparison harness.

Distances are per-pixel normalized so values are comparable across image
sizes on the 0-1 scale: order 1 is the mean absolute difference, order 2 the
root-mean-square difference. Report averages are taken over successful
examples only; the success rate is successes / sample count. The convention
is printed in every report header.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .network import Network, classify

DISTANCE_CONVENTION = "L1 = mean |dx|, L2 = sqrt(mean dx^2) (per-pixel normalized)"


def l_distance(x, y, order: int) -> float:
    """Normalized distance between two same-shape images."""
    xv = np.asarray(x, dtype=np.float64).reshape(-1)
    yv = np.asarray(y, dtype=np.float64).reshape(-1)
    if xv.shape != yv.shape:
        raise ValueError(f"shape mismatch {np.shape(x)} vs {np.shape(y)}")
    d = np.abs(xv - yv)
    if order == 1:
        return float(d.mean())
    if order == 2:
        return float(np.sqrt(np.mean(d * d)))
    raise ValueError("order must be 1 or 2")


def diff_class(network: Network, x, y) -> int:
    """1 when the two inputs classify differently, else 0."""
    return int(classify(network, x) != classify(network, y))


@dataclass
class ImageRecord:
    """One per-image evaluation row of the raw log."""

    image_id: int
    method: str
    success: bool
    l1: float | None
    l2: float | None
    steps: int
    seconds: float
    note: str = ""


@dataclass
class ReportRow:
    method: str
    params: dict
    count: int
    successes: int
    success_rate: float
    l1_avg: float | None
    l2_avg: float | None
    excluded_from_distance: int
    seconds_per_image: float

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "params": self.params,
            "count": self.count,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "l1_avg": self.l1_avg,
            "l2_avg": self.l2_avg,
            "excluded_from_distance": self.excluded_from_distance,
            "seconds_per_image": self.seconds_per_image,
        }


def summarize_records(method: str, params: dict, records: list[ImageRecord]) -> ReportRow:
    """Fold per-image records into one report row.

    Successes without a reconstructed witness (distance None) count toward
    the rate but are excluded from the distance averages; the exclusion count
    is reported."""
    count = len(records)
    succ = [r for r in records if r.success]
    with_dist = [r for r in succ if r.l1 is not None and r.l2 is not None]
    l1 = float(np.mean([r.l1 for r in with_dist])) if with_dist else None
    l2 = float(np.mean([r.l2 for r in with_dist])) if with_dist else None
    secs = float(np.mean([r.seconds for r in records])) if records else 0.0
    return ReportRow(
        method=method,
        params=params,
        count=count,
        successes=len(succ),
        success_rate=len(succ) / count if count else 0.0,
        l1_avg=l1,
        l2_avg=l2,
        excluded_from_distance=len(succ) - len(with_dist),
        seconds_per_image=secs,
    )


def robustness_report(network: Network, images: np.ndarray, methods) -> tuple[list[ReportRow], list[ImageRecord]]:
    """Run each method over the image set and collect rows plus raw records.

    methods: list of (name, params, fn) where fn(network, image) returns an
    object with success / perturbed-or-witness_input / l1 / l2 / steps
    attributes. Per-image failures are recorded, never abort the batch.
    """
    rows = []
    all_records: list[ImageRecord] = []
    for name, params, fn in methods:
        records = []
        for i, image in enumerate(images):
            t0 = time.perf_counter()
            try:
                result = fn(network, image)
                rec = ImageRecord(
                    image_id=i,
                    method=name,
                    success=bool(result.success),
                    l1=result.l1 if result.success else None,
                    l2=result.l2 if result.success else None,
                    steps=int(getattr(result, "steps", 0)),
                    seconds=time.perf_counter() - t0,
                )
            except Exception as exc:  # per-image failure, recorded
                rec = ImageRecord(
                    image_id=i, method=name, success=False, l1=None, l2=None,
                    steps=0, seconds=time.perf_counter() - t0, note=f"error: {exc}",
                )
            records.append(rec)
        rows.append(summarize_records(name, params, records))
        all_records.extend(records)
    return rows, all_records


def records_to_csv(records: list[ImageRecord]) -> str:
    lines = ["image_id,method,success,l1,l2,steps,seconds"]
    for r in records:
        l1 = "" if r.l1 is None else repr(r.l1)
        l2 = "" if r.l2 is None else repr(r.l2)
        lines.append(f"{r.image_id},{r.method},{int(r.success)},{l1},{l2},{r.steps},{r.seconds:.6f}")
    return "\n".join(lines) + "\n"


def _fmt(v, width=10):
    if v is None:
        return "n/a".rjust(width)
    if isinstance(v, float):
        return f"{v:.4f}".rjust(width)
    return str(v).rjust(width)


def render_text_table(rows: list[ReportRow]) -> str:
    """Aligned plain-text summary table."""
    out = [f"# {DISTANCE_CONVENTION}"]
    header = f"{'method':<28}{'n':>6}{'succ':>6}{'%':>9}{'L1':>10}{'L2':>10}{'excl':>6}{'s/img':>10}"
    out.append(header)
    out.append("-" * len(header))
    for r in rows:
        pct = f"{100.0 * r.success_rate:.1f}%"
        out.append(
            f"{r.method:<28}{r.count:>6}{r.successes:>6}{pct:>9}"
            f"{_fmt(r.l1_avg)}{_fmt(r.l2_avg)}{r.excluded_from_distance:>6}"
            f"{r.seconds_per_image:>10.4f}"
        )
    return "\n".join(out) + "\n"
