"""Experiment orchestration CLI.

Subcommands reproduce the evaluation protocol end to end on synthetic data
with analytically certified shift sizes: ``sweep`` compares the four
calibration strategies over a shift-strength grid, ``tau`` runs the
threshold-slack correction experiment, ``bounds`` evaluates every coverage
bound from measured and certified quantities, ``tune`` traces the source
sweep of the entropy cutoff, ``gen``/``train`` export datasets and the fitted
classifier, ``replay`` re-derives every emitted coverage/ESS figure from the
emitted thresholds, and ``selftest`` runs the built-in oracle equivalence
suite.

All outputs are machine-readable (CSV/JSON); a resolved copy of the
configuration is written next to them so each run is self-describing. Runs
are deterministic for a fixed config and seed regardless of ``--threads``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conformal import CalibrationResult, calibrate, coverage, expected_set_size, integrated_coverage_gap
from .exceptions import ConfigError, DataError, InvariantError
from .pseudo import UncertaintyGrid, pseudo_calibrate, select_u_star, source_tuned_calibrate
from .pseudo import _curve_with_thresholds
from .rng import RngStream
from .scores import (
    lipschitz_bound,
    population_hinge_loss,
    population_ramp_loss,
    predict,
    score,
)
from .shift_bounds import (
    coverage_gap_bound,
    kantorovich_rubinstein_holds,
    pseudo_coverage_lower_bound,
    relaxed_coverage_lower_bound,
    rho_mix,
    score_shift_w1_bound,
    sup_density_estimate,
    tau_correction,
    undercoverage_gap_estimate,
    w1_1d,
    w1_assignment,
    w1_assignment_subsampled,
)
from .synthetic import (
    LogitTable,
    ShiftSpec,
    SourceSpec,
    apply_shift,
    generate_source,
    load_logit_table,
    logit_table_as_map,
    train_classifier,
    write_dataset_csv,
)

METHODS = ("source", "hard_pseudo", "source_tuned", "oracle")

RECORD_COLUMNS = ("method", "sigma", "trial", "threshold", "u_star", "tau", "coverage", "ess", "thm2_bound", "cor1_bound")

DEFAULT_CONFIG: dict = {
    "seed": 20250809,
    "alpha": 0.2,
    "n_train": 4000,
    "n_cal": 2000,
    "n_test": 5000,
    "trials": 200,
    "sigma_grid": [0.0, 0.15, 0.3, 0.8, 1.6, 2.4],
    "methods": list(METHODS),
    "tau_policy": {"kind": "none", "value": 0.0},
    "u_grid": None,
    "tau_grid": [0.0, 0.5, 1.0, 2.0, 4.0],
    "train": {"epochs": 150, "learning_rate": 0.1},
    "source": {
        "class_means": [[2.0, 0.0], [-1.0, 1.7320508075688772], [-1.0, -1.7320508075688772]],
        "class_cov_scale": 0.65,
        "priors": [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    },
    "shift": {
        "per_class_translation": [
            [-0.6, 0.0],
            [0.3, -0.5196152422706632],
            [0.3, 0.5196152422706632],
        ],
        "noise_scale": 0.12,
        "clip_radius": 0.15,
        "clip_mode": "resample",
    },
}


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    alpha: float
    n_train: int
    n_cal: int
    n_test: int
    trials: int
    sigma_grid: tuple[float, ...]
    methods: tuple[str, ...]
    tau_policy_kind: str
    tau_policy_value: float
    u_grid: tuple[float, ...] | None
    tau_grid: tuple[float, ...]
    epochs: int
    learning_rate: float
    source_spec: SourceSpec
    shift_spec: ShiftSpec

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        merged = _merge_config(DEFAULT_CONFIG, raw)
        try:
            source = SourceSpec(
                class_means=np.asarray(merged["source"]["class_means"], dtype=float),
                class_cov_scale=float(merged["source"]["class_cov_scale"]),
                priors=np.asarray(merged["source"]["priors"], dtype=float),
            )
            shift = ShiftSpec(
                per_class_translation=np.asarray(merged["shift"]["per_class_translation"], dtype=float),
                noise_scale=float(merged["shift"]["noise_scale"]),
                clip_radius=float(merged["shift"]["clip_radius"]),
                clip_mode=str(merged["shift"]["clip_mode"]),
            )
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid source/shift specification: {exc}") from exc
        if shift.per_class_translation.shape != source.class_means.shape:
            raise ConfigError("per_class_translation must match class_means in shape")

        sigma_grid = tuple(float(s) for s in merged["sigma_grid"])
        if not sigma_grid:
            raise ConfigError("sigma_grid must be nonempty")
        if any(s < 0 for s in sigma_grid):
            raise ConfigError("sigma_grid values must be nonnegative")
        if any(b <= a for a, b in zip(sigma_grid, sigma_grid[1:])):
            raise ConfigError("sigma_grid must be strictly ascending")

        methods = tuple(str(m) for m in merged["methods"])
        unknown = [m for m in methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown method(s) {unknown}; choose from {list(METHODS)}")
        if not methods:
            raise ConfigError("methods must be nonempty")

        policy = merged["tau_policy"]
        kind = str(policy.get("kind", "none"))
        if kind not in ("none", "fixed", "tau_design"):
            raise ConfigError(f"unknown tau policy kind {kind!r}")
        value = float(policy.get("value", 0.0))
        if kind == "fixed" and value < 0:
            raise ConfigError("fixed tau must be nonnegative")

        u_grid = merged["u_grid"]
        if u_grid is not None:
            u_grid = tuple(float(u) for u in u_grid)
            try:
                UncertaintyGrid(np.asarray(u_grid))
            except ValueError as exc:
                raise ConfigError(f"invalid u_grid: {exc}") from exc

        alpha = float(merged["alpha"])
        if not (0.0 < alpha < 1.0):
            raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
        counts = {name: int(merged[name]) for name in ("n_train", "n_cal", "n_test", "trials")}
        for name, val in counts.items():
            if val < 1:
                raise ConfigError(f"{name} must be at least 1")
        epochs = int(merged["train"]["epochs"])
        learning_rate = float(merged["train"]["learning_rate"])
        if epochs < 1 or learning_rate <= 0:
            raise ConfigError("train.epochs must be >= 1 and train.learning_rate positive")

        return cls(
            seed=int(merged["seed"]),
            alpha=alpha,
            n_train=counts["n_train"],
            n_cal=counts["n_cal"],
            n_test=counts["n_test"],
            trials=counts["trials"],
            sigma_grid=sigma_grid,
            methods=methods,
            tau_policy_kind=kind,
            tau_policy_value=value,
            u_grid=u_grid,
            tau_grid=tuple(float(t) for t in merged["tau_grid"]),
            epochs=epochs,
            learning_rate=learning_rate,
            source_spec=source,
            shift_spec=shift,
        )

    def resolved(self) -> dict:
        """Fully materialized configuration (all defaults filled) for output headers."""
        return {
            "seed": self.seed,
            "alpha": self.alpha,
            "n_train": self.n_train,
            "n_cal": self.n_cal,
            "n_test": self.n_test,
            "trials": self.trials,
            "sigma_grid": list(self.sigma_grid),
            "methods": list(self.methods),
            "tau_policy": {"kind": self.tau_policy_kind, "value": self.tau_policy_value},
            "u_grid": list(self.uncertainty_grid().values.tolist()),
            "tau_grid": list(self.tau_grid),
            "train": {"epochs": self.epochs, "learning_rate": self.learning_rate},
            "source": {
                "class_means": self.source_spec.class_means.tolist(),
                "class_cov_scale": self.source_spec.class_cov_scale,
                "priors": self.source_spec.priors.tolist(),
            },
            "shift": {
                "per_class_translation": self.shift_spec.per_class_translation.tolist(),
                "noise_scale": self.shift_spec.noise_scale,
                "clip_radius": self.shift_spec.clip_radius,
                "clip_mode": self.shift_spec.clip_mode,
            },
        }

    def uncertainty_grid(self) -> UncertaintyGrid:
        if self.u_grid is not None:
            return UncertaintyGrid(np.asarray(self.u_grid, dtype=float))
        return UncertaintyGrid.default(self.source_spec.n_classes)

    def rho_mix_certified(self, sigma: float) -> float:
        """Generator-certified mixture shift bound at strength sigma."""
        per_class = self.shift_spec.scaled(sigma).per_class_rho()
        return float(self.source_spec.priors @ per_class)


def _merge_config(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if key not in merged:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(merged[key], dict) and isinstance(value, dict):
            for sub, subval in value.items():
                if sub not in merged[key]:
                    raise ConfigError(f"unknown config key {key}.{sub}")
                merged[key][sub] = subval
        else:
            merged[key] = value
    return merged


def load_config(path: str | None, seed_override: int | None = None) -> ExperimentConfig:
    raw: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config document must be a JSON object")
    if seed_override is not None:
        raw = {**raw, "seed": int(seed_override)}
    return ExperimentConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# Trial machinery


@dataclass(frozen=True)
class TrialData:
    """Per-trial splits with the labeled/unlabeled separation made explicit.

    Calibration methods receive ``x_target_cal`` only; ``y_target_cal_oracle``
    is revealed solely to the oracle arm and ``y_target_test`` solely to final
    evaluation and oracle-flagged loss measurements.
    """

    x_source: np.ndarray
    y_source: np.ndarray
    x_target_cal: np.ndarray
    y_target_cal_oracle: np.ndarray
    x_target_test: np.ndarray
    y_target_test: np.ndarray


@dataclass(frozen=True)
class TrialRecord:
    method: str
    sigma: float | None
    trial: int
    threshold: float
    u_star: float | None
    tau: float | None
    coverage: float
    ess: float
    thm2_bound: float | None
    cor1_bound: float | None


def make_trial_data(cfg: ExperimentConfig, sigma_idx: int, trial: int) -> TrialData:
    """Regenerate the splits of one (sigma, trial) cell from its derived streams."""
    sigma = cfg.sigma_grid[sigma_idx]
    shift = cfg.shift_spec.scaled(sigma)
    cell = RngStream(cfg.seed).substream("trial", sigma_idx, trial)
    x_src, y_src = generate_source(cfg.source_spec, cfg.n_cal, cell.substream("source-cal"))
    xb, yb = generate_source(cfg.source_spec, cfg.n_cal, cell.substream("target-cal-base"))
    x_tc = apply_shift(xb, yb, shift, cell.substream("target-cal-shift"))
    xt, yt = generate_source(cfg.source_spec, cfg.n_test, cell.substream("target-test-base"))
    x_tt = apply_shift(xt, yt, shift, cell.substream("target-test-shift"))
    return TrialData(
        x_source=x_src,
        y_source=y_src,
        x_target_cal=x_tc,
        y_target_cal_oracle=yb,
        x_target_test=x_tt,
        y_target_test=yt,
    )


def _tune_stream(cfg: ExperimentConfig, sigma_idx: int, trial: int) -> RngStream:
    return RngStream(cfg.seed).substream("trial", sigma_idx, trial, "tune")


def _assert_score_invariants(model, x, y) -> None:
    """Pointwise relations between true-label and pseudo-label scores.

    On every synthetic trial: the pseudo score never exceeds the true score,
    they coincide on correctly classified points, and the excess on
    misclassified points is at most twice the (positive) true score.
    """
    s_true = score(model, x, y)
    s_pseudo = score(model, x, predict(model, x))
    if not (s_true >= s_pseudo - 1e-9).all():
        raise InvariantError("pseudo score exceeded the true-label score")
    correct = np.asarray(y) == predict(model, x)
    if correct.any() and not np.allclose(s_true[correct], s_pseudo[correct], rtol=0.0, atol=1e-12):
        raise InvariantError("scores differ on correctly classified points")
    wrong = ~correct
    if wrong.any():
        excess = s_true[wrong] - s_pseudo[wrong]
        if not (excess <= 2.0 * s_true[wrong] + 1e-9).all():
            raise InvariantError("score excess exceeded twice the negated margin on a misclassified point")


def train_model(cfg: ExperimentConfig):
    """Train the fixed classifier used by every trial of a run."""
    x, y = generate_source(cfg.source_spec, cfg.n_train, RngStream(cfg.seed).substream("train-data"))
    return train_classifier(x, y, epochs=cfg.epochs, learning_rate=cfg.learning_rate)


def _calibrate_method(cfg: ExperimentConfig, model, method: str, data: TrialData, sigma_idx: int, trial: int):
    """Threshold for one calibration strategy; target labels reach only the oracle arm."""
    if method == "source":
        return calibrate(score(model, data.x_source, data.y_source), cfg.alpha), None
    if method == "hard_pseudo":
        return pseudo_calibrate(model, data.x_target_cal, cfg.alpha), None
    if method == "source_tuned":
        tuning, cal = source_tuned_calibrate(
            model,
            data.x_source,
            data.y_source,
            data.x_target_cal,
            cfg.alpha,
            grid=cfg.uncertainty_grid(),
            rng=_tune_stream(cfg, sigma_idx, trial),
        )
        return cal, tuning
    if method == "oracle":
        return calibrate(score(model, data.x_target_cal, data.y_target_cal_oracle), cfg.alpha), None
    raise ConfigError(f"unknown method {method!r}")


def _trial_tau(cfg: ExperimentConfig, model, data: TrialData) -> float | None:
    """Slack applied to prediction sets under the configured tau policy."""
    if cfg.tau_policy_kind == "none":
        return None
    if cfg.tau_policy_kind == "fixed":
        return cfg.tau_policy_value
    # tau_design: undercoverage gap and hinge losses; the target hinge loss is
    # an oracle input measured on the evaluation split.
    gap = undercoverage_gap_estimate(model, data.x_source, data.y_source, cfg.alpha)
    hinge_src = population_hinge_loss(model, data.x_source, data.y_source)
    hinge_tgt = population_hinge_loss(model, data.x_target_test, data.y_target_test)
    try:
        return tau_correction(hinge_src, hinge_tgt, gap)
    except ValueError as exc:
        raise DataError(
            f"tau_design policy failed: {exc} (hinge_source={hinge_src:.4g}, gap={gap:.4g}); "
            "a larger calibration sample or a larger alpha stabilizes the undercoverage estimate"
        ) from exc


def run_trial(cfg: ExperimentConfig, model, sigma_idx: int, trial: int) -> list[TrialRecord]:
    """All method records of one (sigma, trial) cell, sharing the same data."""
    sigma = cfg.sigma_grid[sigma_idx]
    data = make_trial_data(cfg, sigma_idx, trial)
    _assert_score_invariants(model, data.x_target_test, data.y_target_test)

    tau = _trial_tau(cfg, model, data)
    tau_eff = 0.0 if tau is None else tau

    lip = lipschitz_bound(model)
    ramp_src = population_ramp_loss(model, data.x_source, data.y_source)
    thm2 = pseudo_coverage_lower_bound(cfg.alpha, ramp_src, lip, cfg.rho_mix_certified(sigma))
    # Oracle-flagged target losses back the relaxed bound column.
    ramp_tgt = population_ramp_loss(model, data.x_target_test, data.y_target_test)
    hinge_tgt = population_hinge_loss(model, data.x_target_test, data.y_target_test)
    cor1 = relaxed_coverage_lower_bound(cfg.alpha, ramp_tgt, hinge_tgt, tau_eff)

    records = []
    for method in cfg.methods:
        cal, tuning = _calibrate_method(cfg, model, method, data, sigma_idx, trial)
        cov = coverage(model, data.x_target_test, data.y_target_test, cal, tau_eff)
        ess = expected_set_size(model, data.x_target_test, cal, tau_eff)
        records.append(
            TrialRecord(
                method=method,
                sigma=sigma,
                trial=trial,
                threshold=cal.threshold,
                u_star=tuning.u_star if tuning is not None else None,
                tau=tau,
                coverage=cov,
                ess=ess,
                thm2_bound=thm2 if method == "hard_pseudo" else None,
                cor1_bound=cor1 if method == "hard_pseudo" else None,
            )
        )
    return records


def run_method(cfg: ExperimentConfig, model, method: str, sigma_idx: int, trial: int) -> TrialRecord:
    """Single-method record for one (sigma, trial) cell."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    sub = ExperimentConfig.from_dict({**cfg.resolved(), "methods": [method]})
    return run_trial(sub, model, sigma_idx, trial)[0]


def _parallel_trials(cfg: ExperimentConfig, model, worker, threads: int) -> list:
    cells = [(si, t) for si in range(len(cfg.sigma_grid)) for t in range(cfg.trials)]
    if threads <= 1:
        return [worker(si, t) for si, t in cells]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda c: worker(*c), cells))


def run_sweep(cfg: ExperimentConfig, threads: int = 1) -> tuple[list[TrialRecord], list[dict]]:
    """Full method x sigma x trial grid plus per-(method, sigma) aggregates."""
    model = train_model(cfg)
    chunks = _parallel_trials(cfg, model, lambda si, t: run_trial(cfg, model, si, t), threads)
    records = [rec for chunk in chunks for rec in chunk]
    records.sort(key=lambda r: (cfg.methods.index(r.method), r.sigma, r.trial))
    return records, aggregate_records(records)


def aggregate_records(records: list[TrialRecord]) -> list[dict]:
    """Mean and standard error of coverage/ESS per (method, sigma) group."""
    groups: dict[tuple[str, float | None], list[TrialRecord]] = {}
    order: list[tuple[str, float | None]] = []
    for rec in records:
        key = (rec.method, rec.sigma)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(rec)

    out = []
    for method, sigma in order:
        rows = groups[(method, sigma)]
        cov = np.array([r.coverage for r in rows])
        ess = np.array([r.ess for r in rows])
        n = cov.size
        se = lambda v: float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        bounds2 = [r.thm2_bound for r in rows if r.thm2_bound is not None]
        bounds1 = [r.cor1_bound for r in rows if r.cor1_bound is not None]
        out.append(
            {
                "method": method,
                "sigma": sigma,
                "trials": n,
                "mean_coverage": float(cov.mean()),
                "se_coverage": se(cov),
                "mean_ess": float(ess.mean()),
                "se_ess": se(ess),
                "mean_threshold": float(np.mean([r.threshold for r in rows])),
                "mean_thm2_bound": float(np.mean(bounds2)) if bounds2 else None,
                "mean_cor1_bound": float(np.mean(bounds1)) if bounds1 else None,
            }
        )
    return out


# ---------------------------------------------------------------------------
# Tau experiment


def tau_diagnostics(cfg: ExperimentConfig, model, sigma_idx: int) -> dict:
    """Per-sigma ingredients of the slack rule, measured on dedicated batches.

    The target hinge/ramp losses come from a held-out labeled target batch and
    are oracle inputs; everything else is source-measurable.
    """
    sigma = cfg.sigma_grid[sigma_idx]
    shift = cfg.shift_spec.scaled(sigma)
    diag = RngStream(cfg.seed).substream("tau-diag", sigma_idx)
    # The slack rule divides by (source hinge loss - undercoverage gap), so the
    # gap estimate must be accurate relative to the hinge loss. These are
    # one-off per-sigma scalars; a generous batch keeps the denominator's sign
    # stable (the gap estimator halves its sample internally).
    n_diag = max(2 * cfg.n_cal, 8192)
    x_src, y_src = generate_source(cfg.source_spec, n_diag, diag.substream("source"))
    xb, yb = generate_source(cfg.source_spec, max(cfg.n_cal, n_diag // 2), diag.substream("target-base"))
    x_tgt = apply_shift(xb, yb, shift, diag.substream("target-shift"))

    gap = undercoverage_gap_estimate(model, x_src, y_src, cfg.alpha)
    hinge_src = population_hinge_loss(model, x_src, y_src)
    hinge_tgt = population_hinge_loss(model, x_tgt, yb)
    ramp_tgt = population_ramp_loss(model, x_tgt, yb)
    try:
        tau = tau_correction(hinge_src, hinge_tgt, gap)
    except ValueError as exc:
        raise DataError(
            f"sigma={sigma}: {exc} (hinge_source={hinge_src:.4g}, gap={gap:.4g}); "
            "a larger calibration sample or a larger alpha stabilizes the undercoverage estimate"
        ) from exc
    return {
        "sigma": sigma,
        "undercoverage_gap": gap,
        "hinge_source": hinge_src,
        "hinge_target_oracle": hinge_tgt,
        "ramp_target_oracle": ramp_tgt,
        "tau": tau,
    }


def run_tau_experiment(cfg: ExperimentConfig, threads: int = 1) -> tuple[list[TrialRecord], list[dict]]:
    """Hard pseudo-calibration with and without the designed threshold slack.

    Emits paired records per trial: the unadjusted threshold (tau = 0) and the
    same threshold with the per-sigma slack added at evaluation time.
    """
    model = train_model(cfg)
    diagnostics = [tau_diagnostics(cfg, model, si) for si in range(len(cfg.sigma_grid))]

    def worker(si: int, t: int) -> list[TrialRecord]:
        sigma = cfg.sigma_grid[si]
        diag = diagnostics[si]
        data = make_trial_data(cfg, si, t)
        _assert_score_invariants(model, data.x_target_test, data.y_target_test)
        cal = pseudo_calibrate(model, data.x_target_cal, cfg.alpha)
        out = []
        for method, tau in (("hard_pseudo", 0.0), ("tau_adjusted", diag["tau"])):
            cov = coverage(model, data.x_target_test, data.y_target_test, cal, tau)
            ess = expected_set_size(model, data.x_target_test, cal, tau)
            cor1 = relaxed_coverage_lower_bound(cfg.alpha, diag["ramp_target_oracle"], diag["hinge_target_oracle"], tau)
            out.append(
                TrialRecord(
                    method=method,
                    sigma=sigma,
                    trial=t,
                    threshold=cal.threshold,
                    u_star=None,
                    tau=tau,
                    coverage=cov,
                    ess=ess,
                    thm2_bound=None,
                    cor1_bound=cor1,
                )
            )
        return out

    chunks = _parallel_trials(cfg, model, worker, threads)
    records = [rec for chunk in chunks for rec in chunk]
    method_order = {"hard_pseudo": 0, "tau_adjusted": 1}
    records.sort(key=lambda r: (method_order[r.method], r.sigma, r.trial))
    return records, diagnostics


# ---------------------------------------------------------------------------
# Bounds report


def run_bounds_report(cfg: ExperimentConfig) -> dict:
    """Evaluate every bound from measured and generator-certified quantities."""
    model = train_model(cfg)
    lip = lipschitz_bound(model)
    root = RngStream(cfg.seed).substream("bounds")

    x_cal, y_cal = generate_source(cfg.source_spec, cfg.n_cal, root.substream("source-cal"))
    x_src, y_src = generate_source(cfg.source_spec, cfg.n_test, root.substream("source-test"))
    cal_scores = score(model, x_cal, y_cal)
    src_scores = score(model, x_src, y_src)
    sup_density = sup_density_estimate(src_scores)
    ramp_src = population_ramp_loss(model, x_src, y_src)
    hinge_src = population_hinge_loss(model, x_src, y_src)

    per_sigma = []
    for si, sigma in enumerate(cfg.sigma_grid):
        shift = cfg.shift_spec.scaled(sigma)
        stream = root.substream("target", si)
        xb, yb = generate_source(cfg.source_spec, cfg.n_test, stream.substream("base"))
        x_tgt = apply_shift(xb, yb, shift, stream.substream("shift"))
        tgt_scores = score(model, x_tgt, yb)

        rho_cert = shift.rho_true
        rho_mix_cert = cfg.rho_mix_certified(sigma)
        w1_measured = w1_1d(src_scores, tgt_scores)
        w1_bound = score_shift_w1_bound(lip, rho_cert)
        k = cfg.source_spec.n_classes
        class_rows = [np.nonzero(yb == c)[0] for c in range(1, k + 1)]
        per_class_w1 = None
        rho_mix_measured = None
        if all(rows.size >= 2 for rows in class_rows):
            per_class_w1 = [
                w1_assignment_subsampled(xb[rows], x_tgt[rows], seed=cfg.seed) for rows in class_rows
            ]
            rho_mix_measured = rho_mix(cfg.source_spec.priors, per_class_w1)
        gap = integrated_coverage_gap(cal_scores, src_scores, tgt_scores)
        ramp_tgt = population_ramp_loss(model, x_tgt, yb)
        hinge_tgt = population_hinge_loss(model, x_tgt, yb)
        gap_src = undercoverage_gap_estimate(model, x_src, y_src, cfg.alpha)
        try:
            tau_rule = tau_correction(hinge_src, hinge_tgt, gap_src)
        except ValueError:
            tau_rule = None

        per_sigma.append(
            {
                "sigma": sigma,
                "rho_certified": rho_cert,
                "rho_mix_certified": rho_mix_cert,
                "per_class_w1_paired": per_class_w1,
                "rho_mix_measured": rho_mix_measured,
                "ramp_source": ramp_src,
                "hinge_source": hinge_src,
                "ramp_target_oracle": ramp_tgt,
                "hinge_target_oracle": hinge_tgt,
                "w1_scores_measured": w1_measured,
                "w1_score_bound": w1_bound,
                "coverage_gap_measured": gap.integrated,
                "coverage_gap_bound": coverage_gap_bound(sup_density, w1_bound),
                "pseudo_coverage_lower": pseudo_coverage_lower_bound(cfg.alpha, ramp_src, lip, rho_mix_cert),
                "relaxed_coverage_lower": [
                    [t, relaxed_coverage_lower_bound(cfg.alpha, ramp_tgt, hinge_tgt, t)] for t in cfg.tau_grid
                ],
                "undercoverage_gap": gap_src,
                "tau_rule": tau_rule,
            }
        )

    return {
        "alpha": cfg.alpha,
        "lipschitz": lip,
        "sup_density_source": sup_density,
        "oracle_inputs": ["ramp_target_oracle", "hinge_target_oracle"],
        "per_sigma": per_sigma,
    }


def run_bounds_report_from_table(table: LogitTable, alpha: float, tau_grid) -> dict:
    """Bounds computable from ingested logits alone; shift-certificate terms are null."""
    model = logit_table_as_map(table)
    x_cal, y_cal = table.features("source_cal"), table.labels_for("source_cal")
    x_src, y_src = table.features("source_test"), table.labels_for("source_test")
    x_tgt, y_tgt = table.features("target_test"), table.labels_for("target_test")
    for name, y in (("source_cal", y_cal), ("source_test", y_src), ("target_test", y_tgt)):
        if (np.asarray(y) == 0).any():
            raise DataError(f"split {name} contains MISSING labels; cannot measure losses")

    cal_scores = score(model, x_cal, y_cal)
    src_scores = score(model, x_src, y_src)
    tgt_scores = score(model, x_tgt, y_tgt)
    sup_density = sup_density_estimate(src_scores)
    ramp_src = population_ramp_loss(model, x_src, y_src)
    hinge_src = population_hinge_loss(model, x_src, y_src)
    ramp_tgt = population_ramp_loss(model, x_tgt, y_tgt)
    hinge_tgt = population_hinge_loss(model, x_tgt, y_tgt)
    w1_measured = w1_1d(src_scores, tgt_scores)
    gap = integrated_coverage_gap(cal_scores, src_scores, tgt_scores)
    gap_src = undercoverage_gap_estimate(model, x_src, y_src, alpha)
    try:
        tau_rule = tau_correction(hinge_src, hinge_tgt, gap_src)
    except ValueError:
        tau_rule = None

    return {
        "alpha": alpha,
        "lipschitz": None,
        "sup_density_source": sup_density,
        "oracle_inputs": ["ramp_target_oracle", "hinge_target_oracle"],
        "per_sigma": [
            {
                "sigma": None,
                "rho_certified": None,
                "rho_mix_certified": None,
                "per_class_w1_paired": None,
                "rho_mix_measured": None,
                "ramp_source": ramp_src,
                "hinge_source": hinge_src,
                "ramp_target_oracle": ramp_tgt,
                "hinge_target_oracle": hinge_tgt,
                "w1_scores_measured": w1_measured,
                "w1_score_bound": None,
                "coverage_gap_measured": gap.integrated,
                "coverage_gap_bound": coverage_gap_bound(sup_density, w1_measured),
                "pseudo_coverage_lower": None,
                "relaxed_coverage_lower": [
                    [t, relaxed_coverage_lower_bound(alpha, ramp_tgt, hinge_tgt, t)] for t in tau_grid
                ],
                "undercoverage_gap": gap_src,
                "tau_rule": tau_rule,
            }
        ],
    }


# ---------------------------------------------------------------------------
# Tuning trace


def run_tune(cfg: ExperimentConfig) -> tuple[list[dict], dict]:
    """Source sweep trace of the entropy cutoff plus per-sigma target thresholds."""
    model = train_model(cfg)
    grid = cfg.uncertainty_grid()
    root = RngStream(cfg.seed).substream("tune-run")
    x_src, y_src = generate_source(cfg.source_spec, cfg.n_cal, root.substream("source"))
    trace = _curve_with_thresholds(model, x_src, y_src, cfg.alpha, grid, root.substream("source-labels"))
    u_star = select_u_star([(u, c) for u, c, _ in trace], cfg.alpha)

    per_sigma = []
    for si, sigma in enumerate(cfg.sigma_grid):
        shift = cfg.shift_spec.scaled(sigma)
        stream = root.substream("target", si)
        xb, yb = generate_source(cfg.source_spec, cfg.n_cal, stream.substream("base"))
        x_tgt = apply_shift(xb, yb, shift, stream.substream("shift"))
        cal = pseudo_calibrate(model, x_tgt, cfg.alpha, u=u_star, rng=stream.substream("labels"))
        per_sigma.append({"sigma": sigma, "target_threshold": cal.threshold, "n": cfg.n_cal})

    rows = [{"u": u, "c_hat": c, "source_threshold": thr} for u, c, thr in trace]
    return rows, {"u_star": u_star, "per_sigma": per_sigma}


# ---------------------------------------------------------------------------
# Logit-table-backed runs


def run_sweep_from_table(table: LogitTable, cfg: ExperimentConfig) -> tuple[list[TrialRecord], list[dict]]:
    """One-shot sweep over an ingested logit table (no generator, single trial)."""
    model = logit_table_as_map(table)
    x_src, y_src = table.features("source_cal"), table.labels_for("source_cal")
    x_tc, y_tc = table.features("target_cal"), table.labels_for("target_cal")
    x_tt, y_tt = table.features("target_test"), table.labels_for("target_test")
    if x_src.shape[0] == 0 or x_tc.shape[0] == 0 or x_tt.shape[0] == 0:
        raise DataError("logit table must populate source_cal, target_cal and target_test")
    if (y_src == 0).any() or (y_tt == 0).any():
        raise DataError("source_cal and target_test splits must be fully labeled")

    data = TrialData(
        x_source=x_src,
        y_source=y_src,
        x_target_cal=x_tc,
        y_target_cal_oracle=y_tc,
        x_target_test=x_tt,
        y_target_test=y_tt,
    )
    _assert_score_invariants(model, data.x_target_test, data.y_target_test)
    if "oracle" in cfg.methods and (y_tc == 0).any():
        raise DataError("oracle method requested but target_cal contains MISSING labels")

    tau = None
    if cfg.tau_policy_kind == "fixed":
        tau = cfg.tau_policy_value
    elif cfg.tau_policy_kind == "tau_design":
        gap = undercoverage_gap_estimate(model, x_src, y_src, cfg.alpha)
        hinge_src = population_hinge_loss(model, x_src, y_src)
        hinge_tgt = population_hinge_loss(model, x_tt, y_tt)
        tau = tau_correction(hinge_src, hinge_tgt, gap)
    tau_eff = 0.0 if tau is None else tau

    ramp_tgt = population_ramp_loss(model, x_tt, y_tt)
    hinge_tgt = population_hinge_loss(model, x_tt, y_tt)
    cor1 = relaxed_coverage_lower_bound(cfg.alpha, ramp_tgt, hinge_tgt, tau_eff)

    records = []
    for method in cfg.methods:
        cal, tuning = _calibrate_table_method(cfg, model, method, data)
        cov = coverage(model, x_tt, y_tt, cal, tau_eff)
        ess = expected_set_size(model, x_tt, cal, tau_eff)
        records.append(
            TrialRecord(
                method=method,
                sigma=None,
                trial=0,
                threshold=cal.threshold,
                u_star=tuning.u_star if tuning is not None else None,
                tau=tau,
                coverage=cov,
                ess=ess,
                thm2_bound=None,
                cor1_bound=cor1 if method == "hard_pseudo" else None,
            )
        )
    return records, aggregate_records(records)


def _calibrate_table_method(cfg: ExperimentConfig, model, method: str, data: TrialData):
    if method == "source_tuned":
        tuning, cal = source_tuned_calibrate(
            model,
            data.x_source,
            data.y_source,
            data.x_target_cal,
            cfg.alpha,
            grid=cfg.uncertainty_grid(),
            rng=RngStream(cfg.seed).substream("table-tune"),
        )
        return cal, tuning
    return _calibrate_method(cfg, model, method, data, 0, 0)


# ---------------------------------------------------------------------------
# Output formatting


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return f"{float(value):.9g}"


def write_records_csv(path, records: list[TrialRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.method,
                    _fmt(r.sigma),
                    str(r.trial),
                    _fmt(r.threshold),
                    _fmt(r.u_star),
                    _fmt(r.tau),
                    _fmt(r.coverage),
                    _fmt(r.ess),
                    _fmt(r.thm2_bound),
                    _fmt(r.cor1_bound),
                ]
            )


def write_aggregate_csv(path, aggregates: list[dict]) -> None:
    columns = (
        "method",
        "sigma",
        "trials",
        "mean_coverage",
        "se_coverage",
        "mean_ess",
        "se_ess",
        "mean_threshold",
        "mean_thm2_bound",
        "mean_cor1_bound",
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in aggregates:
            writer.writerow([row["method"]] + [_fmt(row[c]) if c != "trials" else str(row[c]) for c in columns[1:]])


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Replay audit


def read_records_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(RECORD_COLUMNS):
            raise DataError(f"{path}: unexpected records header {header}")
        return [dict(zip(RECORD_COLUMNS, row)) for row in reader]


def replay_audit(out_dir, threads: int = 1) -> int:
    """Recompute every emitted coverage/ESS from the emitted thresholds.

    Regenerates each trial's evaluation split from its derived stream and
    checks that coverage and ESS, formatted identically, match the records
    byte for byte. Returns the number of audited rows; raises
    :class:`InvariantError` on any mismatch.
    """
    out = Path(out_dir)
    config_path = out / "config.json"
    if not config_path.exists():
        raise ConfigError(f"{config_path} not found; replay needs the resolved config of the run")
    with open(config_path, encoding="utf-8") as fh:
        resolved = json.load(fh)
    logits_path = resolved.pop("logits", None)
    cfg = ExperimentConfig.from_dict(resolved)

    candidates = [p for p in (out / "records.csv", out / "tau_records.csv") if p.exists()]
    if not candidates:
        raise DataError(f"no records.csv or tau_records.csv under {out}")

    if logits_path is not None:
        table = load_logit_table(logits_path)
        model = logit_table_as_map(table)
    else:
        table = None
        model = train_model(cfg)

    audited = 0
    mismatches = []
    for path in candidates:
        rows = read_records_csv(path)

        def check(row: dict) -> tuple[bool, str]:
            tau = float(row["tau"]) if row["tau"] else 0.0
            threshold = float(row["threshold"])
            cal = CalibrationResult(threshold=threshold, alpha=cfg.alpha, n=cfg.n_cal, level=float("nan"))
            if table is not None:
                x_tt, y_tt = table.features("target_test"), table.labels_for("target_test")
            else:
                sigma = float(row["sigma"])
                try:
                    sigma_idx = cfg.sigma_grid.index(sigma)
                except ValueError:
                    return False, f"{path.name}: sigma {sigma} not in config grid"
                data = make_trial_data(cfg, sigma_idx, int(row["trial"]))
                x_tt, y_tt = data.x_target_test, data.y_target_test
            cov = _fmt(coverage(model, x_tt, y_tt, cal, tau))
            ess = _fmt(expected_set_size(model, x_tt, cal, tau))
            if cov != row["coverage"] or ess != row["ess"]:
                return False, (
                    f"{path.name}: {row['method']} sigma={row['sigma']} trial={row['trial']}: "
                    f"coverage {row['coverage']} -> {cov}, ess {row['ess']} -> {ess}"
                )
            return True, ""

        if threads <= 1:
            results = [check(r) for r in rows]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(check, rows))
        audited += len(rows)
        mismatches.extend(msg for ok, msg in results if not ok)

    for msg in mismatches:
        print(f"replay mismatch: {msg}", file=sys.stderr)
    if mismatches:
        raise InvariantError(f"{len(mismatches)} of {audited} records failed the replay audit")
    return audited


# ---------------------------------------------------------------------------
# Selftest


def run_selftest(seed: int = 7) -> list[tuple[str, bool]]:
    """Oracle-equivalence suite: independent brute-force routes against the library."""
    from fractions import Fraction
    from itertools import combinations_with_replacement, permutations

    results: list[tuple[str, bool]] = []
    g = RngStream(seed).generator()

    # Quantile definition vs direct scan over the empirical CDF (exact rationals).
    ok = True
    from .conformal import calibrate as _calibrate, conformal_level, empirical_quantile, FULL_SET

    for size in range(1, 5):
        for values in combinations_with_replacement(range(1, 5), size):
            scores = np.array(values, dtype=float)
            for alpha in (0.1, 0.25, 0.5, 0.75, 0.9):
                level = conformal_level(size, alpha)
                got = empirical_quantile(scores, level)
                if level > 1:
                    expected = FULL_SET
                else:
                    frac = Fraction(level)
                    expected = min(t for t in sorted(values) if Fraction(sum(v <= t for v in values), size) >= frac)
                ok &= got == expected and _calibrate(scores, alpha).threshold == expected
    results.append(("quantile-vs-cdf-scan", ok))

    # Assignment distance vs exhaustive matching and the 1-D reduction.
    ok_perm, ok_1d = True, True
    for _ in range(60):
        n = int(g.integers(2, 6))
        d = int(g.integers(1, 4))
        a = g.normal(size=(n, d))
        b = g.normal(size=(n, d))
        got = w1_assignment(a, b)
        best = min(
            float(np.mean([np.linalg.norm(a[i] - b[j]) for i, j in enumerate(perm)]))
            for perm in permutations(range(n))
        )
        ok_perm &= abs(got - best) <= 1e-9
        if d == 1:
            ok_1d &= abs(got - w1_1d(a[:, 0], b[:, 0])) <= 1e-9
    a = g.normal(size=(8, 1))
    b = g.normal(size=(8, 1))
    ok_1d &= abs(w1_assignment(a, b) - w1_1d(a[:, 0], b[:, 0])) <= 1e-9
    results.append(("assignment-vs-exhaustive", ok_perm))
    results.append(("assignment-1d-reduction", ok_1d))

    # Lipschitz mean deviation bound on random 1-Lipschitz test functions.
    ok = True
    for _ in range(1000):
        xa = g.normal(size=40)
        xb = g.normal(size=40) + g.normal() * 0.5
        anchor = g.normal()
        ok &= kantorovich_rubinstein_holds(np.abs(xa - anchor), np.abs(xb - anchor), 1.0, w1_1d(xa, xb))
    results.append(("lipschitz-mean-bound", ok))

    # Score dominance and coupled threshold monotonicity on one synthetic trial.
    cfg = ExperimentConfig.from_dict({"n_train": 600, "n_cal": 300, "n_test": 300, "trials": 1})
    model = train_model(cfg)
    data = make_trial_data(cfg, min(2, len(cfg.sigma_grid) - 1), 0)
    try:
        _assert_score_invariants(model, data.x_target_test, data.y_target_test)
        ok = True
    except InvariantError:
        ok = False
    results.append(("score-dominance-invariants", ok))

    hard = pseudo_calibrate(model, data.x_target_cal, cfg.alpha)
    stream = RngStream(seed).substream("selftest-labels")
    grid = UncertaintyGrid.default(model.n_classes, size=8)
    monotone = True
    prev = None
    for u in grid.values[::-1]:
        cal = pseudo_calibrate(model, data.x_target_cal, cfg.alpha, u=float(u), rng=stream)
        monotone &= cal.threshold >= hard.threshold
        if prev is not None:
            monotone &= cal.threshold >= prev  # thresholds grow as u shrinks
        prev = cal.threshold
    results.append(("threshold-monotone-in-randomization", monotone))
    return results


# ---------------------------------------------------------------------------
# Subcommand drivers


def _cmd_gen(cfg: ExperimentConfig, out: Path, args) -> int:
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.resolved())
    for si, sigma in enumerate(cfg.sigma_grid):
        data = make_trial_data(cfg, si, 0)
        stream = RngStream(cfg.seed).substream("gen-source-test", si)
        x_st, y_st = generate_source(cfg.source_spec, cfg.n_test, stream)
        split = (
            ["source_cal"] * cfg.n_cal
            + ["source_test"] * cfg.n_test
            + ["target_cal"] * cfg.n_cal
            + ["target_test"] * cfg.n_test
        )
        labels = np.concatenate([data.y_source, y_st, data.y_target_cal_oracle, data.y_target_test])
        feats = np.vstack([data.x_source, x_st, data.x_target_cal, data.x_target_test])
        path = out / f"dataset_sigma_{si}.csv"
        write_dataset_csv(path, split, labels, feats)
        print(f"wrote {path}")
    return 0


def _cmd_train(cfg: ExperimentConfig, out: Path, args) -> int:
    out.mkdir(parents=True, exist_ok=True)
    model = train_model(cfg)
    x, y = generate_source(cfg.source_spec, cfg.n_train, RngStream(cfg.seed).substream("train-data"))
    acc = float(np.mean(predict(model, x) == y))
    payload = {
        "weights": model.weights.tolist(),
        "biases": model.biases.tolist(),
        "n_train": cfg.n_train,
        "epochs": cfg.epochs,
        "learning_rate": cfg.learning_rate,
        "train_accuracy": acc,
        "lipschitz": lipschitz_bound(model),
    }
    _write_json(out / "classifier.json", payload)
    print(f"wrote {out / 'classifier.json'} (train accuracy {acc:.4f})")
    return 0


def _cmd_sweep(cfg: ExperimentConfig, out: Path, args) -> int:
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.resolved()
    if args.logits:
        table = load_logit_table(args.logits)
        records, aggregates = run_sweep_from_table(table, cfg)
        resolved["logits"] = str(args.logits)
    else:
        records, aggregates = run_sweep(cfg, threads=args.threads)
    _write_json(out / "config.json", resolved)
    write_records_csv(out / "records.csv", records)
    write_aggregate_csv(out / "aggregate.csv", aggregates)
    print(f"wrote {out / 'records.csv'} ({len(records)} records)")
    return 0


def _cmd_tau(cfg: ExperimentConfig, out: Path, args) -> int:
    if args.logits:
        raise ConfigError("the tau experiment requires the synthetic generator")
    out.mkdir(parents=True, exist_ok=True)
    records, diagnostics = run_tau_experiment(cfg, threads=args.threads)
    _write_json(out / "config.json", cfg.resolved())
    write_records_csv(out / "tau_records.csv", records)
    _write_json(out / "tau_diagnostics.json", diagnostics)
    write_aggregate_csv(out / "tau_aggregate.csv", aggregate_records(records))
    print(f"wrote {out / 'tau_records.csv'} ({len(records)} records)")
    return 0


def _cmd_bounds(cfg: ExperimentConfig, out: Path, args) -> int:
    out.mkdir(parents=True, exist_ok=True)
    if args.logits:
        table = load_logit_table(args.logits)
        report = run_bounds_report_from_table(table, cfg.alpha, cfg.tau_grid)
    else:
        report = run_bounds_report(cfg)
    _write_json(out / "config.json", cfg.resolved())
    _write_json(out / "bounds.json", report)
    print(f"wrote {out / 'bounds.json'}")
    return 0


def _cmd_tune(cfg: ExperimentConfig, out: Path, args) -> int:
    if args.logits:
        raise ConfigError("the tuning trace requires the synthetic generator")
    out.mkdir(parents=True, exist_ok=True)
    rows, result = run_tune(cfg)
    _write_json(out / "config.json", cfg.resolved())
    with open(out / "tune_trace.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["u", "c_hat", "source_threshold"])
        for row in rows:
            writer.writerow([_fmt(row["u"]), _fmt(row["c_hat"]), _fmt(row["source_threshold"])])
    _write_json(out / "tune_result.json", result)
    print(f"wrote {out / 'tune_trace.csv'} (u_star = {_fmt(result['u_star'])})")
    return 0


def _cmd_replay(cfg: ExperimentConfig, out: Path, args) -> int:
    audited = replay_audit(out, threads=args.threads)
    print(f"replay audit passed: {audited} records verified")
    return 0


def _cmd_selftest(cfg: ExperimentConfig, out: Path, args) -> int:
    results = run_selftest(seed=cfg.seed)
    failed = [name for name, ok in results if not ok]
    for name, ok in results:
        print(f"selftest {name}: {'PASS' if ok else 'FAIL'}")
    if failed:
        raise InvariantError(f"selftest failures: {', '.join(failed)}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "sweep": _cmd_sweep,
    "tau": _cmd_tau,
    "bounds": _cmd_bounds,
    "tune": _cmd_tune,
    "replay": _cmd_replay,
    "selftest": _cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftcp",
        description="Conformal prediction under bounded covariate shift: experiments, bounds and audits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "emit the synthetic dataset splits as CSV",
        "train": "fit the classifier and dump it as JSON",
        "sweep": "run the full method x shift x trial experiment",
        "tau": "run the threshold-slack correction experiment",
        "bounds": "evaluate the coverage bounds into a JSON report",
        "tune": "trace the source sweep of the entropy cutoff",
        "replay": "audit an output directory by recomputing coverage/ESS",
        "selftest": "run the built-in oracle equivalence suite",
    }
    for name, help_text in helps.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="JSON config file (defaults are used when omitted)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default="shiftcp-out", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads for trial evaluation")
        p.add_argument("--logits", default=None, help="ingest externally computed logits from this CSV table")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        return _COMMANDS[args.command](cfg, Path(args.out), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except InvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
