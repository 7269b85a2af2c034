"""Assessment metrics: micro F1, misclassification AUC-ROC, confidence stats.

Metrics are fractions internally; the percent scaling (2 decimals) happens
only in `metrics_report`, the serialization used by the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from modq.uncertainty import UncertaintyScore

# above this many records, pairwise AUC counting is replaced by the
# rank-statistic method (identical result, O(n log n))
_PAIRWISE_LIMIT = 10_000


@dataclass(frozen=True)
class EvaluationRecord:
    doc_id: int
    true_label: int
    predicted_label: int
    confidence: float
    uncertainty: UncertaintyScore

    @property
    def correct(self) -> bool:
        return self.predicted_label == self.true_label


@dataclass(frozen=True)
class ConfidenceStats:
    mean_conf_mis: float  # percent
    mean_conf_suc: float  # percent
    range: float  # suc - mis, percent


def micro_f1(records: list[EvaluationRecord]) -> float:
    """Micro-averaged F1. Single-label multiclass: micro precision and
    recall both equal accuracy, so this is (#correct)/(#records)."""
    if not records:
        raise ValueError("micro F1 over empty record list")
    correct = sum(1 for r in records if r.correct)
    return correct / len(records)


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j < len(values) and values[order[j]] == values[order[i]]:
            j += 1
        ranks[order[i:j]] = 0.5 * ((i + 1) + j)  # half-integer, exact
        i = j
    return ranks


def auc_roc_misclassification(records: list[EvaluationRecord]) -> float:
    """AUC-ROC of confidence separating correct (positive) from
    misclassified (negative) records; ties count one half."""
    pos = np.array([r.confidence for r in records if r.correct])
    neg = np.array([r.confidence for r in records if not r.correct])
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC undefined: need both correct and misclassified records")
    if len(records) <= _PAIRWISE_LIMIT:
        wins = float((pos[:, None] > neg[None, :]).sum())
        ties = float((pos[:, None] == neg[None, :]).sum())
        return (wins + 0.5 * ties) / (len(pos) * len(neg))
    ranks = _midranks(np.concatenate([pos, neg]))
    u = float(ranks[: len(pos)].sum()) - len(pos) * (len(pos) + 1) / 2.0
    return u / (len(pos) * len(neg))


def confidence_stats(records: list[EvaluationRecord]) -> ConfidenceStats:
    """Mean confidence of misclassified vs successful records, in percent."""
    mis = [r.confidence for r in records if not r.correct]
    suc = [r.confidence for r in records if r.correct]
    if not mis or not suc:
        raise ValueError("confidence stats need both correct and misclassified records")
    mean_mis = 100.0 * float(np.mean(mis))
    mean_suc = 100.0 * float(np.mean(suc))
    return ConfidenceStats(mean_mis, mean_suc, mean_suc - mean_mis)


def metrics_report(records: list[EvaluationRecord]) -> dict[str, float]:
    """Metric dict in percent with 2 decimals, as serialized by the CLI."""
    stats = confidence_stats(records)
    return {
        "f1": round(100.0 * micro_f1(records), 2),
        "auc_roc": round(100.0 * auc_roc_misclassification(records), 2),
        "mean_conf_mis": round(stats.mean_conf_mis, 2),
        "mean_conf_suc": round(stats.mean_conf_suc, 2),
        "range": round(stats.range, 2),
    }
