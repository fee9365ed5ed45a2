"""Split-conformal calibration, prediction sets, and coverage-gap diagnostics.

Quantile convention
-------------------
The calibration threshold is the empirical quantile of the calibration scores
at level ``ceil((1 - alpha) * (n + 1)) / n``, where the quantile at level p is
the smallest order statistic t with empirical CDF ``F(t) >= p`` and the CDF is
the right-continuous ``F(t) = #{s_i <= t} / n``. When the level exceeds 1 (too
few calibration points) the threshold is the :data:`FULL_SET` sentinel and the
prediction set is all of ``1..K``, which preserves the coverage guarantee
trivially. Level arithmetic goes through exact rationals so that ceil never
flips on float rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .scores import _as_batch, _check_labels, _margins_of_labels, score_matrix

#: Sentinel threshold meaning "include every label". Infinity keeps the
#: downstream set arithmetic (s <= threshold + tau) working unchanged.
FULL_SET = float("inf")

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class CalibrationResult:
    """Conformal threshold with its level arithmetic.

    ``threshold`` is one of the calibration scores when ``level <= 1`` and
    :data:`FULL_SET` otherwise.
    """

    threshold: float
    alpha: float
    n: int
    level: float

    @property
    def is_full_set(self) -> bool:
        return math.isinf(self.threshold) and self.threshold > 0


@dataclass(frozen=True)
class GapEstimate:
    """Pointwise coverage gaps over an alpha grid and their integral."""

    per_alpha: tuple[tuple[float, float], ...]
    integrated: float


def _validate_alpha(alpha: float) -> None:
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def _quantile_count(n: int, alpha: float) -> int:
    # Exact ceil of (1-alpha)(n+1); Fraction avoids e.g. 0.8*5 -> 4.0000000000000002.
    return math.ceil(Fraction(n + 1) * (1 - Fraction(alpha)))


def conformal_level(n: int, alpha: float) -> float:
    """Quantile level ``ceil((1 - alpha)(n + 1)) / n``; may exceed 1 for small n."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"calibration count must be a positive integer, got {n}")
    _validate_alpha(alpha)
    return _quantile_count(int(n), alpha) / n


def empirical_quantile(scores, level: float) -> float:
    """Smallest order statistic with empirical CDF at least ``level``.

    Returns :data:`FULL_SET` when ``level`` exceeds 1. For ``level <= 1`` the
    result is the ``ceil(level * n)``-th smallest score (exact rational
    arithmetic), hence always an element of ``scores``.
    """
    s = np.asarray(scores, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("scores must be a nonempty 1-D sample")
    if level > 1.0:
        return FULL_SET
    if level <= 0.0:
        raise ValueError(f"quantile level must be positive, got {level}")
    n = s.size
    k = math.ceil(Fraction(level) * n)
    return float(np.partition(s, k - 1)[k - 1])


def calibrate(scores, alpha: float) -> CalibrationResult:
    """Split-conformal threshold of a calibration score sample at level alpha."""
    s = np.asarray(scores, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("scores must be a nonempty 1-D sample")
    _validate_alpha(alpha)
    n = s.size
    k = _quantile_count(n, alpha)
    threshold = FULL_SET if k > n else float(np.partition(s, k - 1)[k - 1])
    return CalibrationResult(threshold=threshold, alpha=float(alpha), n=n, level=k / n)


def prediction_set(model, x, cal: CalibrationResult, tau: float = 0.0) -> frozenset[int]:
    """Labels whose score at ``x`` is at most ``threshold + tau`` (non-strict).

    ``tau = 0`` gives the plain conformal set; ``tau > 0`` relaxes it.
    """
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("prediction_set expects a single input vector")
    row = score_matrix(model, x)
    members = np.nonzero(row <= cal.threshold + tau)[0] + 1
    return frozenset(int(m) for m in members)


def coverage(model, x, y, cal: CalibrationResult, tau: float = 0.0) -> float:
    """Fraction of labeled test points whose true label lands in the prediction set."""
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    batch, _ = _as_batch(x)
    if batch.shape[0] == 0:
        raise ValueError("coverage of an empty sample is undefined")
    yarr = _check_labels(np.asarray(y), model.n_classes)
    true_scores = -_margins_of_labels(model.logit_matrix(batch), yarr)
    return float(np.mean(true_scores <= cal.threshold + tau))


def expected_set_size(model, x, cal: CalibrationResult, tau: float = 0.0) -> float:
    """Mean prediction-set cardinality over a batch of inputs."""
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    batch, _ = _as_batch(x)
    if batch.shape[0] == 0:
        raise ValueError("expected set size of an empty sample is undefined")
    mat = score_matrix(model, batch)
    return float((mat <= cal.threshold + tau).sum(axis=1).mean())


def empirical_cdf(scores, t: float) -> float:
    """Right-continuous empirical CDF ``#{s_i <= t} / n``."""
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise ValueError("empirical CDF of an empty sample is undefined")
    return float(np.mean(s <= t))


def coverage_gap_at_alpha(cal_scores_p, test_scores_p, test_scores_q, alpha: float) -> float:
    """Absolute CDF gap between two held-out score samples at the source threshold.

    The threshold is calibrated from ``cal_scores_p`` at ``alpha``; the gap is
    ``|F_P(q) - F_Q(q)|`` with both CDFs estimated from the test samples.
    """
    cal = calibrate(cal_scores_p, alpha)
    return abs(empirical_cdf(test_scores_p, cal.threshold) - empirical_cdf(test_scores_q, cal.threshold))


def integrated_coverage_gap(cal_scores_p, test_scores_p, test_scores_q, alpha_grid=None) -> GapEstimate:
    """Trapezoidal aggregate of the pointwise gaps over an alpha grid.

    The default grid is ``0.01, 0.02, ..., 0.99``; the open endpoints avoid
    the degenerate empirical quantiles at alpha near 0 or 1.
    """
    if alpha_grid is None:
        alpha_grid = np.arange(1, 100) / 100.0
    grid = np.asarray(alpha_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("alpha grid must contain at least two points")
    if not ((grid > 0).all() and (grid < 1).all()):
        raise ValueError("alpha grid must lie inside (0, 1)")
    if not (np.diff(grid) > 0).all():
        raise ValueError("alpha grid must be strictly increasing")

    cal_p = np.sort(np.asarray(cal_scores_p, dtype=float))
    if cal_p.size == 0:
        raise ValueError("calibration scores must be nonempty")
    tp = np.sort(np.asarray(test_scores_p, dtype=float))
    tq = np.sort(np.asarray(test_scores_q, dtype=float))
    if tp.size == 0 or tq.size == 0:
        raise ValueError("test score samples must be nonempty")

    n = cal_p.size
    gaps = np.empty(grid.size)
    for i, a in enumerate(grid):
        k = _quantile_count(n, float(a))
        q = FULL_SET if k > n else cal_p[k - 1]
        fp = np.searchsorted(tp, q, side="right") / tp.size
        fq = np.searchsorted(tq, q, side="right") / tq.size
        gaps[i] = abs(fp - fq)
    integrated = float(_trapezoid(gaps, grid))
    return GapEstimate(per_alpha=tuple(zip(grid.tolist(), gaps.tolist())), integrated=integrated)
