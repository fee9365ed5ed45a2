"""Synthetic source/target generation and external-logit ingestion.

The generator draws isotropic Gaussian class clusters for the source domain
and produces the target by a per-class translation plus norm-clipped Gaussian
noise, so labels are preserved by construction (identical class marginals)
and the per-pair displacement is certifiably at most
``max_y(||t_y|| + clip_radius)``. Translations and noise scale jointly under
a single shift-strength knob, keeping the certificate analytic across a
sweep. A plain multinomial logistic regression trained by full-batch gradient
descent plays the role of the fixed pre-trained classifier.

Externally computed logits can be ingested from a CSV table; the resulting
table map plugs into every downstream scoring and calibration routine, with
row indices standing in for feature vectors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import DataError, InvariantError
from .rng import RngStream
from .scores import LinearLogitMap

SPLIT_TAGS = ("source_cal", "source_test", "target_cal", "target_test")

#: Internal label code for rows whose label column is the literal MISSING.
MISSING_LABEL = 0

_MAX_REJECTION_ROUNDS = 10_000


@dataclass(frozen=True)
class SourceSpec:
    """Isotropic Gaussian mixture defining the source domain.

    ``class_means`` has one row per class; ``class_cov_scale`` is the shared
    isotropic standard deviation (0 collapses each class onto its mean);
    ``priors`` is a probability vector over classes.
    """

    class_means: np.ndarray
    class_cov_scale: float
    priors: np.ndarray

    def __post_init__(self) -> None:
        means = np.asarray(self.class_means, dtype=float)
        priors = np.asarray(self.priors, dtype=float)
        if means.ndim != 2 or means.shape[0] < 2:
            raise ValueError("class_means must be a (K, d) matrix with K >= 2")
        if priors.shape != (means.shape[0],):
            raise ValueError("priors must have one entry per class")
        if (priors < 0).any() or abs(priors.sum() - 1.0) > 1e-9:
            raise ValueError("priors must be a probability vector")
        if self.class_cov_scale < 0:
            raise ValueError("class_cov_scale must be nonnegative")
        if not (np.isfinite(means).all() and np.isfinite(priors).all()):
            raise ValueError("spec entries must be finite")
        object.__setattr__(self, "class_means", means)
        object.__setattr__(self, "priors", priors)

    @property
    def n_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]


@dataclass(frozen=True)
class ShiftSpec:
    """Per-class translation plus norm-clipped Gaussian noise.

    ``clip_mode`` selects how noise is kept inside the radius: ``resample``
    redraws rejected vectors (smooth density), ``project`` rescales them onto
    the ball.
    """

    per_class_translation: np.ndarray
    noise_scale: float
    clip_radius: float
    clip_mode: str = "resample"

    def __post_init__(self) -> None:
        t = np.asarray(self.per_class_translation, dtype=float)
        if t.ndim != 2:
            raise ValueError("per_class_translation must be a (K, d) matrix")
        if not np.isfinite(t).all():
            raise ValueError("translations must be finite")
        if self.noise_scale < 0 or self.clip_radius < 0:
            raise ValueError("noise_scale and clip_radius must be nonnegative")
        if self.clip_mode not in ("resample", "project"):
            raise ValueError(f"unknown clip_mode {self.clip_mode!r}")
        object.__setattr__(self, "per_class_translation", t)

    @property
    def rho_true(self) -> float:
        """Certified sup displacement: max translation norm plus the clip radius."""
        return float(np.linalg.norm(self.per_class_translation, axis=1).max() + self.clip_radius)

    def per_class_rho(self) -> np.ndarray:
        """Certified per-class displacement bounds ``||t_y|| + clip_radius``."""
        return np.linalg.norm(self.per_class_translation, axis=1) + self.clip_radius

    def scaled(self, sigma: float) -> "ShiftSpec":
        """Shift of strength ``sigma``: translations, noise and radius all scale jointly."""
        if sigma < 0:
            raise ValueError("shift strength must be nonnegative")
        return replace(
            self,
            per_class_translation=self.per_class_translation * sigma,
            noise_scale=self.noise_scale * sigma,
            clip_radius=self.clip_radius * sigma,
        )


def generate_source(spec: SourceSpec, n: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` labeled source points: labels from the priors, features Gaussian."""
    if n < 0:
        raise ValueError("sample size must be nonnegative")
    g = rng.generator()
    y = g.choice(spec.n_classes, size=n, p=spec.priors) + 1
    x = spec.class_means[y - 1] + spec.class_cov_scale * g.standard_normal((n, spec.dim))
    return x, y


def _clipped_noise(n: int, d: int, scale: float, radius: float, mode: str, g: np.random.Generator) -> np.ndarray:
    if scale == 0.0 or radius == 0.0:
        # radius 0 clips the noise entirely; no rejection loop.
        return np.zeros((n, d))
    eps = scale * g.standard_normal((n, d))
    if mode == "project":
        norms = np.linalg.norm(eps, axis=1, keepdims=True)
        factor = np.where(norms > radius, radius / np.where(norms > 0, norms, 1.0), 1.0)
        return eps * factor
    for _ in range(_MAX_REJECTION_ROUNDS):
        bad = np.linalg.norm(eps, axis=1) > radius
        if not bad.any():
            return eps
        eps[bad] = scale * g.standard_normal((int(bad.sum()), d))
    raise InvariantError("clipped-noise rejection sampling did not converge; radius is too small for the noise scale")


def apply_shift(x, y, shift: ShiftSpec, rng: RngStream) -> np.ndarray:
    """Shift features by the class translation plus clipped noise; labels are unchanged.

    Returns the shifted features aligned row-by-row with ``x``, so the
    positional pairing realizes an explicit coupling for sup-displacement
    checks.
    """
    xa = np.asarray(x, dtype=float)
    single = xa.ndim == 1
    if single:
        xa = xa[None, :]
    ya = np.atleast_1d(np.asarray(y))
    k = shift.per_class_translation.shape[0]
    if ya.size and (ya.min() < 1 or ya.max() > k):
        raise ValueError(f"labels must lie in 1..{k}")
    if xa.shape[1] != shift.per_class_translation.shape[1]:
        raise ValueError("feature dimension does not match the shift specification")
    g = rng.generator()
    eps = _clipped_noise(xa.shape[0], xa.shape[1], shift.noise_scale, shift.clip_radius, shift.clip_mode, g)
    out = xa + shift.per_class_translation[ya - 1] + eps
    return out[0] if single else out


def train_classifier(
    x,
    y,
    epochs: int = 200,
    learning_rate: float = 0.1,
    rng: RngStream | None = None,
) -> LinearLogitMap:
    """Multinomial logistic regression by full-batch gradient descent.

    Zero-initialized, so the fit is deterministic; the ``rng`` parameter is
    accepted for pipeline uniformity only. The cross-entropy loss must be
    non-increasing across epochs and an :class:`InvariantError` is raised if
    it is not (a sign the learning rate is too large for the data scale).
    """
    del rng
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y)
    if xa.ndim != 2 or xa.shape[0] == 0:
        raise ValueError("training data must be a nonempty (n, d) array")
    if epochs < 1 or learning_rate <= 0:
        raise ValueError("need epochs >= 1 and a positive learning rate")
    k = int(ya.max()) if ya.size else 0
    if k < 2:
        raise ValueError("training data must contain at least two classes")
    present = np.unique(ya)
    missing = sorted(set(range(1, k + 1)) - set(int(v) for v in present))
    if missing:
        raise ValueError(f"no training samples for class(es) {missing}")

    n, d = xa.shape
    w = np.zeros((k, d))
    b = np.zeros(k)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), ya - 1] = 1.0

    prev_loss = np.inf
    for _ in range(epochs):
        z = xa @ w.T + b
        zmax = z.max(axis=1, keepdims=True)
        logsumexp = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
        loss = float(np.mean(logsumexp - z[np.arange(n), ya - 1]))
        if loss > prev_loss + 1e-9:
            raise InvariantError(f"training loss increased ({prev_loss:.6g} -> {loss:.6g}); lower the learning rate")
        prev_loss = loss
        p = np.exp(z - zmax)
        p /= p.sum(axis=1, keepdims=True)
        grad = (p - onehot) / n
        w -= learning_rate * (grad.T @ xa)
        b -= learning_rate * grad.sum(axis=0)
    return LinearLogitMap(w, b)


@dataclass(frozen=True)
class LogitTable:
    """Rows of (split tag, label-or-missing, K logits) from an external classifier."""

    split: np.ndarray
    labels: np.ndarray
    logits: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.logits.shape[1]

    def rows(self, tag: str) -> np.ndarray:
        """Global row indices belonging to a split tag."""
        if tag not in SPLIT_TAGS:
            raise ValueError(f"unknown split tag {tag!r}")
        return np.nonzero(self.split == tag)[0]

    def features(self, tag: str) -> np.ndarray:
        """Row indices of a split, shaped (m, 1) to act as feature vectors for the table map."""
        return self.rows(tag)[:, None].astype(float)

    def labels_for(self, tag: str) -> np.ndarray:
        """Labels of a split; contains :data:`MISSING_LABEL` where absent."""
        return self.labels[self.rows(tag)]


@dataclass(frozen=True)
class LogitTableMap:
    """Classifier facade over stored logits; inputs are table row indices.

    A "feature vector" is the 1-element row index, so single points have
    shape (1,) and batches shape (m, 1), matching the conventions of
    :mod:`shiftcp.scores`.
    """

    logits: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.logits.shape[1]

    @property
    def dim(self) -> int:
        return 1

    def logit_matrix(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != 1:
            raise ValueError("table-map inputs must be row indices of shape (m, 1)")
        idx = x[:, 0].astype(int)
        if not np.array_equal(idx.astype(float), x[:, 0]):
            raise ValueError("table-map inputs must be integral row indices")
        if idx.size and (idx.min() < 0 or idx.max() >= self.logits.shape[0]):
            raise ValueError("row index out of range")
        return self.logits[idx]


def logit_table_as_map(table: LogitTable) -> LogitTableMap:
    """Wrap a logit table so it can be used wherever a classifier is expected."""
    return LogitTableMap(logits=table.logits)


def load_logit_table(path) -> LogitTable:
    """Parse a logit-table CSV.

    Expected header: ``split,label,logit_0,...,logit_{K-1}``. Labels are
    1-based integers, or the literal ``MISSING`` (accepted only in the
    ``target_cal`` split). Raises :class:`DataError` with the offending line
    number on any malformed content.
    """
    splits: list[str] = []
    labels: list[int] = []
    rows: list[list[float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        expected_prefix = ["split", "label"]
        if header[:2] != expected_prefix or len(header) < 3:
            raise DataError(f"{path}: line 1: header must start with 'split,label,logit_0,...'")
        k = len(header) - 2
        if header[2:] != [f"logit_{i}" for i in range(k)]:
            raise DataError(f"{path}: line 1: logit columns must be named logit_0..logit_{k - 1}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != k + 2:
                raise DataError(f"{path}: line {lineno}: expected {k + 2} fields, got {len(row)}")
            tag = row[0]
            if tag not in SPLIT_TAGS:
                raise DataError(f"{path}: line {lineno}: unknown split tag {tag!r}")
            raw_label = row[1].strip()
            if raw_label == "MISSING":
                if tag != "target_cal":
                    raise DataError(f"{path}: line {lineno}: MISSING labels are only allowed in target_cal")
                label = MISSING_LABEL
            else:
                try:
                    label = int(raw_label)
                except ValueError:
                    raise DataError(f"{path}: line {lineno}: label must be an integer or MISSING") from None
                if not (1 <= label <= k):
                    raise DataError(f"{path}: line {lineno}: label {label} outside 1..{k}")
            try:
                values = [float(v) for v in row[2:]]
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-numeric logit") from None
            if not all(np.isfinite(values)):
                raise DataError(f"{path}: line {lineno}: non-finite logit")
            splits.append(tag)
            labels.append(label)
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return LogitTable(
        split=np.asarray(splits, dtype=object),
        labels=np.asarray(labels, dtype=int),
        logits=np.asarray(rows, dtype=float),
    )


def write_logit_table(path, split, labels, logits) -> None:
    """Write a logit-table CSV; floats use repr so a round-trip is bit-identical.

    ``labels`` entries equal to :data:`MISSING_LABEL` are written as MISSING.
    """
    split = list(split)
    labels = np.asarray(labels, dtype=int)
    logits = np.asarray(logits, dtype=float)
    if not (len(split) == labels.shape[0] == logits.shape[0]):
        raise ValueError("split, labels and logits must have matching lengths")
    k = logits.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["split", "label"] + [f"logit_{i}" for i in range(k)])
        for tag, label, row in zip(split, labels, logits):
            text = "MISSING" if label == MISSING_LABEL else str(int(label))
            writer.writerow([tag, text] + [repr(float(v)) for v in row])


def write_dataset_csv(path, split, labels, features) -> None:
    """Export a dataset as ``split,label,x_0,...,x_{d-1}`` for reproducibility audits."""
    split = list(split)
    labels = np.asarray(labels, dtype=int)
    features = np.asarray(features, dtype=float)
    if not (len(split) == labels.shape[0] == features.shape[0]):
        raise ValueError("split, labels and features must have matching lengths")
    d = features.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["split", "label"] + [f"x_{i}" for i in range(d)])
        for tag, label, row in zip(split, labels, features):
            writer.writerow([tag, str(int(label))] + [repr(float(v)) for v in row])
