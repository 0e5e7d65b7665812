"""Analytic labeling curve for the two-dimensional point-classification task.

The boundary is a gentle sine tilt plus one Gaussian dip. Class 1 is above
the curve, class 0 below. The constants are part of the fixture contract:
datasets regenerate bit-identically from the same seed.
"""

from __future__ import annotations

import numpy as np

X1_RANGE = (0.0, 2.0 * np.pi)
X2_RANGE = (0.0, 3.0)

BASE_HEIGHT = 2.4
DIP_DEPTH = 1.0
DIP_CENTER = 3.09
DIP_WIDTH = 0.22
TILT_AMP = 0.08
TILT_FREQ = 0.9
TILT_PHASE = 0.4


def curve(x1):
    """Boundary height x2 = c(x1)."""
    x1 = np.asarray(x1, dtype=np.float64)
    dip = DIP_DEPTH * np.exp(-((x1 - DIP_CENTER) ** 2) / (2.0 * DIP_WIDTH**2))
    return BASE_HEIGHT - dip + TILT_AMP * np.sin(TILT_FREQ * x1 + TILT_PHASE)


def label(points: np.ndarray) -> np.ndarray:
    """1 above the curve, 0 on or below."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return (pts[:, 1] > curve(pts[:, 0])).astype(np.int64)


def sample_points(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform points over the domain with their labels."""
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(*X1_RANGE, size=n)
    x2 = rng.uniform(*X2_RANGE, size=n)
    pts = np.stack([x1, x2], axis=1)
    return pts, label(pts)
