"""Moderation simulation, saturation detection, and threshold derivation.

The simulation replays a perfect-oracle moderation over a scored record
set: records are visited in order of descending uncertainty and their
labels replaced by ground truth, giving an accuracy-vs-load curve. The
chord of that curve from (0, f1(0)) to (1, 1) is exactly the expected
accuracy of random moderation, so the knee (maximum of curve minus chord)
is both the Kneedle knee of the normalized curve and the point where
uncertainty-guided moderation stops beating random selection.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from modq.evaluation import EvaluationRecord, micro_f1

DEFAULT_GRID_STEP = 0.01
DEFAULT_SMOOTHING_DEGREE = 7
DEFAULT_MIN_KNEE_HEIGHT = 0.005


@dataclass
class ModerationCurve:
    loads: np.ndarray  # strictly increasing, includes 0 and 1
    f1: np.ndarray
    smoothed: np.ndarray | None = None


@dataclass(frozen=True)
class SaturationReport:
    score_function: str
    m_star: float
    f1_0: float
    f1_at_m_star: float
    f1_gain_pp: float
    threshold: float
    effort_savings: float


@dataclass(frozen=True)
class SyntheticCurveSpec:
    """Exponential-saturation curve family used as the knee oracle."""

    a: float
    b: float
    y0: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0 or not 0 < self.y0 < 1:
            raise ValueError("need a > 0, b > 0, y0 in (0, 1)")

    def raw(self, x):
        return self.a * (1.0 - np.exp(-self.b * np.asarray(x, dtype=np.float64)))

    def normalized(self, m):
        """Anchored to (0, y0) and (1, 1): y0 + (1-y0)(1-e^-bm)/(1-e^-b)."""
        m = np.asarray(m, dtype=np.float64)
        return self.y0 + (1.0 - self.y0) * (1.0 - np.exp(-self.b * m)) / (1.0 - math.exp(-self.b))

    def knee_location(self) -> float:
        """Closed-form argmax of normalized(m) minus its chord."""
        return math.log(self.b / (1.0 - math.exp(-self.b))) / self.b


def moderation_order(records: list[EvaluationRecord]) -> list[EvaluationRecord]:
    """Descending uncertainty, ties broken by ascending doc id."""
    return sorted(records, key=lambda r: (-r.uncertainty.value, r.doc_id))


def _load_grid(grid_step: float) -> np.ndarray:
    if not 0.0 < grid_step <= 0.1:
        raise ValueError("grid_step must be in (0, 0.1]")
    steps = math.ceil(1.0 / grid_step - 1e-9)
    loads = np.minimum(np.arange(steps + 1) * grid_step, 1.0)
    loads[-1] = 1.0
    return loads


def _moderated_count(m: float, n: int) -> int:
    # ceil with guard against float residue (e.g. 0.1 * 10 -> 1.0000000000000002)
    return min(n, math.ceil(m * n - 1e-9))


def simulate_moderation_curve(
    records: list[EvaluationRecord], grid_step: float = DEFAULT_GRID_STEP
) -> ModerationCurve:
    """F1 at each moderation load when the top ceil(m*n) most uncertain
    records are replaced by their ground-truth labels."""
    if not records:
        raise ValueError("no records to simulate")
    ordered = moderation_order(records)
    n = len(ordered)
    correct = np.array([r.correct for r in ordered], dtype=np.int64)
    # suffix_correct[k] = correct predictions among the n-k never-moderated
    suffix_correct = np.concatenate([np.cumsum(correct[::-1])[::-1], [0]])
    loads = _load_grid(grid_step)
    f1 = np.array([
        (k + int(suffix_correct[k])) / n for k in (_moderated_count(m, n) for m in loads)
    ])
    return ModerationCurve(loads, f1)


def random_baseline(f1_0: float):
    """Expected accuracy of uniformly random moderation: the straight line
    from (0, f1_0) to (1, 1); works on scalars and arrays."""
    if not 0.0 <= f1_0 <= 1.0:
        raise ValueError("f1_0 must be in [0, 1]")

    def line(m):
        return f1_0 + np.asarray(m, dtype=np.float64) * (1.0 - f1_0)

    return line


def smooth_curve(curve: ModerationCurve, degree: int = DEFAULT_SMOOTHING_DEGREE) -> ModerationCurve:
    """Least-squares polynomial fit evaluated on the grid, with the two
    endpoints pinned to the empirical values."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    if len(curve.loads) <= degree + 1:
        raise ValueError("need more grid points than degree + 1")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", np.exceptions.RankWarning)
        series, (_, rank, *_rest) = np.polynomial.Polynomial.fit(
            curve.loads, curve.f1, degree, full=True
        )
    if rank < degree + 1:
        raise ValueError("ill-conditioned polynomial fit; try a lower degree")
    smoothed = series(curve.loads)
    smoothed[0] = curve.f1[0]
    smoothed[-1] = curve.f1[-1]
    return ModerationCurve(curve.loads.copy(), curve.f1.copy(), smoothed)


def find_saturation(
    curve: ModerationCurve, min_knee_height: float = DEFAULT_MIN_KNEE_HEIGHT
) -> float:
    """Load maximizing (smoothed curve - chord); the chord coincides with
    the random baseline, so this is the knee of the saturation curve."""
    if curve.smoothed is None:
        raise ValueError("curve must be smoothed first")
    if curve.f1[-1] <= curve.f1[0]:
        raise ValueError("curve does not increase; no saturation point")
    y0, y1 = curve.smoothed[0], curve.smoothed[-1]
    chord = y0 + curve.loads * (y1 - y0)
    diff = curve.smoothed - chord
    best = int(np.argmax(diff))
    if diff[best] <= min_knee_height:
        raise ValueError("no saturation point: curve does not rise above the random baseline")
    return float(curve.loads[best])


def threshold_from_load(records: list[EvaluationRecord], m_star: float) -> float:
    """Uncertainty threshold reproducing the top-ceil(m*n) moderated set
    under the routing rule "uncertainty > threshold -> human"."""
    if not records:
        raise ValueError("no records")
    if not 0.0 < m_star < 1.0:
        raise ValueError("m_star must be in (0, 1)")
    ordered = moderation_order(records)
    n = len(ordered)
    k = _moderated_count(m_star, n)
    if k >= n:
        return float("-inf")  # every item goes to the moderator
    threshold = ordered[k].uncertainty.value
    if k > 0 and ordered[k - 1].uncertainty.value == threshold:
        warnings.warn(
            "tied uncertainties at the moderation boundary; routing will send "
            "fewer items than the calibrated load",
            stacklevel=2,
        )
    return float(threshold)


def effort_savings(f1_0: float, f1_star: float, m_star: float) -> float:
    """Moderation effort saved versus random selection reaching the same F1:
    1 - m_star / m_random, clamped to [0, 1]."""
    if not 0.0 < m_star < 1.0:
        raise ValueError("m_star must be in (0, 1)")
    if not f1_0 < f1_star <= 1.0:
        raise ValueError("need f1_0 < f1_star <= 1")
    m_random = (f1_star - f1_0) / (1.0 - f1_0)
    return float(min(1.0, max(0.0, 1.0 - m_star / m_random)))


def build_report(
    records: list[EvaluationRecord],
    score_function: str,
    grid_step: float = DEFAULT_GRID_STEP,
    degree: int = DEFAULT_SMOOTHING_DEGREE,
    min_knee_height: float = DEFAULT_MIN_KNEE_HEIGHT,
) -> tuple[SaturationReport, ModerationCurve]:
    """simulate -> smooth -> knee -> threshold -> savings, in one pass.

    The returned curve carries both raw and smoothed values; the report's
    f1_at_m_star is the raw curve value at the detected grid load.
    """
    if len(records) < 2:
        raise ValueError("need at least 2 records to build a report")
    curve = smooth_curve(simulate_moderation_curve(records, grid_step), degree)
    m_star = find_saturation(curve, min_knee_height)
    f1_0 = float(curve.f1[0])
    f1_at = float(curve.f1[np.searchsorted(curve.loads, m_star)])
    report = SaturationReport(
        score_function=score_function,
        m_star=m_star,
        f1_0=f1_0,
        f1_at_m_star=f1_at,
        f1_gain_pp=100.0 * (f1_at - f1_0),
        threshold=threshold_from_load(records, m_star),
        effort_savings=effort_savings(f1_0, f1_at, m_star),
    )
    return report, curve


def encode_threshold(value: float):
    """JSON-safe threshold: -inf becomes the string sentinel "-inf"."""
    return "-inf" if value == float("-inf") else value


def decode_threshold(value) -> float:
    if value == "-inf":
        return float("-inf")
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"threshold must be a number or '-inf', got {value!r}") from None
    if math.isnan(out) or out == float("inf"):
        raise ValueError("threshold must be finite or -inf")
    return out


def report_to_dict(report: SaturationReport) -> dict:
    """Exact JSON contract consumed by the CLI `report` command."""
    return {
        "score_function": report.score_function,
        "m_star": report.m_star,
        "f1_0": report.f1_0,
        "f1_at_m_star": report.f1_at_m_star,
        "f1_gain_pp": report.f1_gain_pp,
        "threshold": encode_threshold(report.threshold),
        "effort_savings": report.effort_savings,
    }


def write_curve_csv(path, curve: ModerationCurve) -> None:
    """Curve export: load,f1_raw,f1_smoothed,f1_random with 6 decimals."""
    baseline = random_baseline(float(curve.f1[0]))
    smoothed = curve.smoothed if curve.smoothed is not None else curve.f1
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("load,f1_raw,f1_smoothed,f1_random\n")
        for m, raw, smooth in zip(curve.loads, curve.f1, smoothed):
            fh.write(f"{m:.6f},{raw:.6f},{smooth:.6f},{float(baseline(m)):.6f}\n")
