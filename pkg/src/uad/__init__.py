"""Universal anomaly detection: learned inverse generator + K1 coincidence test."""

__version__ = "0.1.0"

from .detector import DetectorModel, GaussianChi2Cdf, NormalCdf, Verdict, detect, load_model, save_model, transform
from .nn import Mlp
from .uniformity import TestSpec, coincidence_pmf, coincidence_test, expected_k1, k1_statistic, quantize, threshold
from .wigan import TrainConfig, train

__all__ = [
    "DetectorModel", "GaussianChi2Cdf", "NormalCdf", "Verdict", "detect", "load_model",
    "save_model", "transform", "Mlp", "TestSpec", "coincidence_pmf", "coincidence_test",
    "expected_k1", "k1_statistic", "quantize", "threshold", "TrainConfig", "train",
]
