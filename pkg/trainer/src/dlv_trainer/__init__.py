"""Fixture network trainer: regenerates the committed dlv-weights-1 fixtures."""

from .curve import curve, label, sample_points
from .train import TrainResult, TrainSpec, load_digit_data, train_2d_curve, train_mini_classifier

__all__ = [
    "TrainResult",
    "TrainSpec",
    "curve",
    "label",
    "load_digit_data",
    "sample_points",
    "train_2d_curve",
    "train_mini_classifier",
]
