"""Uncertainty score functions over stochastic forward passes.

All scores are oriented so that larger means more uncertain, which gives
every score function the same threshold semantics: route to a human when
the score exceeds the calibrated threshold. Entropies are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCORE_FUNCTIONS = ("lc", "sm", "mi")


@dataclass
class PredictiveSamples:
    """T per-pass class-probability rows for one input."""

    probs: np.ndarray  # (T, C), each row sums to 1
    provenance: str  # baseline | mcd | bbb | ensemble

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.shape[0] < 1:
            raise ValueError("samples must be a T x C matrix with T >= 1")
        if np.any(self.probs < -1e-12):
            raise ValueError("negative probability in samples")
        if np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("sample rows must sum to 1")


@dataclass(frozen=True)
class UncertaintyScore:
    value: float
    score_function: str  # lc | sm | mi


def _check_probs(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("not a probability vector")
    return p


def mean_predictive(samples: PredictiveSamples) -> np.ndarray:
    """Arithmetic mean over the T rows."""
    return samples.probs.mean(axis=0)


def predicted_label(p: np.ndarray) -> int:
    """Argmax class; ties go to the lowest index."""
    return int(np.argmax(_check_probs(p)))


def entropy(p: np.ndarray) -> float:
    p = _check_probs(p)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def least_confidence(p: np.ndarray) -> UncertaintyScore:
    return UncertaintyScore(float(1.0 - _check_probs(p).max()), "lc")


def smallest_margin(p: np.ndarray) -> UncertaintyScore:
    """1 - (top probability - runner-up), so one-hot scores 0."""
    p = _check_probs(p)
    if p.shape[0] < 2:
        raise ValueError("smallest margin needs >= 2 classes")
    top2 = np.partition(p, -2)[-2:]
    return UncertaintyScore(float(1.0 - (top2[1] - top2[0])), "sm")


def mutual_information(samples: PredictiveSamples) -> UncertaintyScore:
    """Disagreement across passes: H[mean] - mean per-pass H (BALD)."""
    mean_entropy = entropy(mean_predictive(samples))
    row_entropy = float(np.mean([entropy(row) for row in samples.probs]))
    # clamp tiny negative float residue
    return UncertaintyScore(max(0.0, mean_entropy - row_entropy), "mi")


def score(samples: PredictiveSamples, fn: str) -> tuple[int, float, UncertaintyScore]:
    """Predicted label, confidence, and uncertainty under one score function.

    LC and SM are computed on the mean predictive distribution, MI on the
    full sample matrix; confidence is the max of the mean predictive.
    """
    mean = mean_predictive(samples)
    label = predicted_label(mean)
    confidence = float(mean.max())
    if fn == "lc":
        unc = least_confidence(mean)
    elif fn == "sm":
        unc = smallest_margin(mean)
    elif fn == "mi":
        unc = mutual_information(samples)
    else:
        raise ValueError(f"unknown score function {fn!r}; expected one of {SCORE_FUNCTIONS}")
    return label, confidence, unc
