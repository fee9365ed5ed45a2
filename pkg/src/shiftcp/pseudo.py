"""Pseudo-labels and source-tuned pseudo-calibration.

Hard pseudo-labels are the classifier's own predictions. Randomized
pseudo-labels keep the prediction where the predictive entropy is at most a
cutoff ``u`` and substitute a uniformly random class above it. The
source-tuned procedure sweeps ``u`` over a grid, measures on labeled source
data how much coverage each cutoff retains, picks the largest cutoff that
keeps source coverage at the nominal level, and calibrates on the unlabeled
target inputs with that cutoff.

Coupling
--------
:class:`~shiftcp.rng.RngStream` generators restart at the stream head on
every call, so calibrating the same inputs at two cutoffs with the same
stream reuses the identical uniform draw per point. That per-point coupling
is what makes thresholds and coverage monotone in ``u`` realization by
realization, and it is relied on by the tests; pass distinct substreams when
you want independent randomization instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conformal import CalibrationResult, calibrate
from .rng import RngStream
from .scores import _as_batch, _margins_of_labels, predict, predictive_entropy

__all__ = [
    "UncertaintyGrid",
    "TuningResult",
    "hard_pseudo_label",
    "randomized_pseudo_label",
    "pseudo_calibrate",
    "source_coverage_curve",
    "select_u_star",
    "source_tuned_calibrate",
]


@dataclass(frozen=True)
class UncertaintyGrid:
    """Strictly increasing grid of nonnegative entropy cutoffs (may end at +inf)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("uncertainty grid must be a nonempty 1-D array")
        if np.isnan(v).any() or (v < 0).any():
            raise ValueError("uncertainty grid values must be nonnegative reals")
        if v.size > 1 and not (np.diff(v) > 0).all():
            raise ValueError("uncertainty grid must be strictly increasing")
        object.__setattr__(self, "values", v)

    @classmethod
    def default(cls, n_classes: int, size: int = 32) -> "UncertaintyGrid":
        """Uniform grid of ``size`` points on [0, ln K] plus an unbounded cutoff.

        Predictive entropy is bounded by ln K, so this grid spans the whole
        attainable range; the +inf point recovers hard pseudo-labeling.
        """
        if n_classes < 2:
            raise ValueError("need at least two classes")
        pts = np.linspace(0.0, math.log(n_classes), size)
        return cls(np.append(pts, np.inf))

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class TuningResult:
    """Trace of the source sweep: the chosen cutoff and the coverage curve."""

    u_star: float
    coverage_curve: tuple[tuple[float, float], ...]
    source_threshold_at_u_star: float


def hard_pseudo_label(model, x):
    """Deterministic pseudo-label: the classifier's prediction."""
    return predict(model, x)


def randomized_pseudo_label(model, h_value: float, u: float, x, rng: RngStream) -> int:
    """Prediction when ``h_value <= u``, otherwise a uniform class from ``rng``.

    Repeated calls with the same stream replay the same uniform draw; give
    each data point its own substream for independent draws.
    """
    if h_value <= u:
        return int(predict(model, x))
    return int(rng.generator().integers(1, model.n_classes + 1))


def _mixed_labels(model, batch: np.ndarray, u: float, rng: RngStream | None) -> np.ndarray:
    """Vectorized pseudo-labels at cutoff ``u`` with one coupled uniform draw per point."""
    hard = predict(model, batch)
    if math.isinf(u) and u > 0:
        return hard
    if rng is None:
        raise ValueError("randomized pseudo-labels with a finite cutoff require an rng stream")
    h = predictive_entropy(model, batch)
    uniform = rng.generator().integers(1, model.n_classes + 1, size=batch.shape[0])
    return np.where(h <= u, hard, uniform)


def pseudo_calibrate(
    model,
    inputs,
    alpha: float,
    u: float = math.inf,
    rng: RngStream | None = None,
) -> CalibrationResult:
    """Calibrate on the scores of pseudo-labeled inputs.

    The default ``u = inf`` keeps every hard pseudo-label (no randomness
    consumed); a finite ``u`` randomizes the labels of points whose predictive
    entropy exceeds it.
    """
    batch, _ = _as_batch(inputs)
    if batch.shape[0] == 0:
        raise ValueError("cannot calibrate on an empty input sample")
    labels = _mixed_labels(model, batch, u, rng)
    pseudo_scores = -_margins_of_labels(model.logit_matrix(batch), labels)
    return calibrate(pseudo_scores, alpha)


def source_coverage_curve(
    model,
    x_source,
    y_source,
    alpha: float,
    grid: UncertaintyGrid,
    rng: RngStream,
) -> list[tuple[float, float]]:
    """Empirical source coverage retained by each cutoff in the grid.

    For each ``u``: pseudo-score the source inputs at cutoff ``u``, compute
    the conformal threshold from those pseudo-scores, and report the fraction
    of *true-label* source scores at or below it. The same per-point uniform
    draw is shared across the grid, so the curve is non-increasing in ``u``
    realization by realization.
    """
    curve = _curve_with_thresholds(model, x_source, y_source, alpha, grid, rng)
    return [(u, c) for u, c, _ in curve]


def _curve_with_thresholds(model, x_source, y_source, alpha, grid, rng):
    batch, _ = _as_batch(x_source)
    if batch.shape[0] == 0:
        raise ValueError("source sample must be nonempty")
    y = np.asarray(y_source)
    rows = model.logit_matrix(batch)
    true_scores = -_margins_of_labels(rows, y)
    hard = np.argmax(rows, axis=1) + 1
    h = predictive_entropy(model, batch)
    uniform = rng.generator().integers(1, model.n_classes + 1, size=batch.shape[0])

    out = []
    for u in grid.values:
        labels = hard if (math.isinf(u) and u > 0) else np.where(h <= u, hard, uniform)
        cal = calibrate(-_margins_of_labels(rows, labels), alpha)
        c_hat = float(np.mean(true_scores <= cal.threshold))
        out.append((float(u), c_hat, cal.threshold))
    return out


def select_u_star(curve, alpha: float) -> float:
    """Largest cutoff whose retained source coverage is at least ``1 - alpha``.

    Falls back to the smallest grid value (maximal randomization, most
    conservative) when no cutoff qualifies.
    """
    if not curve:
        raise ValueError("coverage curve must be nonempty")
    qualifying = [u for u, c in curve if c >= 1.0 - alpha]
    if qualifying:
        return max(qualifying)
    return min(u for u, _ in curve)


def source_tuned_calibrate(
    model,
    x_source,
    y_source,
    x_target,
    alpha: float,
    grid: UncertaintyGrid | None = None,
    rng: RngStream | None = None,
) -> tuple[TuningResult, CalibrationResult]:
    """Tune the entropy cutoff on labeled source data, then calibrate the target.

    Runs the full pipeline: source coverage curve -> cutoff selection ->
    randomized pseudo-calibration of the unlabeled target inputs at the chosen
    cutoff. Source and target randomization use independent substreams of
    ``rng``.
    """
    if rng is None:
        raise ValueError("source_tuned_calibrate requires an rng stream")
    if grid is None:
        grid = UncertaintyGrid.default(model.n_classes)
    trace = _curve_with_thresholds(model, x_source, y_source, alpha, grid, rng.substream("tune-source"))
    curve = [(u, c) for u, c, _ in trace]
    u_star = select_u_star(curve, alpha)
    source_threshold = next(thr for u, _, thr in trace if u == u_star)
    target_cal = pseudo_calibrate(model, x_target, alpha, u=u_star, rng=rng.substream("tune-target"))
    tuning = TuningResult(
        u_star=u_star,
        coverage_curve=tuple(curve),
        source_threshold_at_u_star=source_threshold,
    )
    return tuning, target_cal
