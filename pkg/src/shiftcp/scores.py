"""Margin-based classifier scoring.

Logits, argmax prediction, multiclass margins, the nonconformity score
(negated margin), ramp/hinge surrogate losses, predictive entropy, and the
exact Lipschitz constant of the margin for linear logit maps.

Conventions
-----------
Labels are 1-based: classes are ``1..K``. Every function accepts either a
single input (1-D feature vector, scalar label) or a batch (2-D inputs with
one row per point, 1-D label array) and vectorizes accordingly. Any object
exposing ``logit_matrix(x) -> (n, K)`` and ``n_classes`` can stand in for a
classifier; see :class:`LinearLogitMap` and the logit-table map in
:mod:`shiftcp.synthetic`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LinearLogitMap:
    """Linear multiclass classifier ``logits(x) = weights @ x + biases``.

    Parameters
    ----------
    weights : np.ndarray, shape (K, d)
        One weight row per class.
    biases : np.ndarray, shape (K,)
        One intercept per class.
    """

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        b = np.asarray(self.biases, dtype=float)
        if w.ndim != 2:
            raise ValueError("weights must be a (K, d) matrix")
        if b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ValueError("biases must be a length-K vector matching weights")
        if w.shape[0] < 2:
            raise ValueError("at least two classes are required")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("weights and biases must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def logit_matrix(self, x: np.ndarray) -> np.ndarray:
        """Class logits for a batch of inputs, shape (n, K)."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"expected inputs of shape (n, {self.dim}), got {x.shape}")
        return x @ self.weights.T + self.biases


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValueError(f"inputs must be 1-D or 2-D, got ndim={x.ndim}")


def _check_labels(y: np.ndarray, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if not np.issubdtype(y.dtype, np.integer):
        yi = y.astype(int)
        if not np.array_equal(yi, y):
            raise ValueError("labels must be integers")
        y = yi
    if y.size and (y.min() < 1 or y.max() > n_classes):
        raise ValueError(f"labels must lie in 1..{n_classes}")
    return y


def logits(model, x) -> np.ndarray:
    """Class logit vector(s) for ``x``: shape (K,) for a single input, (n, K) for a batch."""
    batch, single = _as_batch(x)
    out = model.logit_matrix(batch)
    return out[0] if single else out


def predict(model, x):
    """Predicted class = argmax of the logits, ties broken by the smallest class index."""
    out = np.argmax(logits(model, x), axis=-1) + 1
    return int(out) if np.ndim(out) == 0 else out


def _margins_of_labels(logit_rows: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Margin of label y[i] in row i: own logit minus the best competing logit."""
    n = logit_rows.shape[0]
    idx = np.arange(n)
    own = logit_rows[idx, y - 1]
    masked = logit_rows.copy()
    masked[idx, y - 1] = -np.inf
    return own - masked.max(axis=1)


def margin(model, x, y):
    """Multiclass margin of label ``y`` at ``x``.

    Positive iff ``y`` strictly beats every other class; zero on exact ties.
    """
    batch, single = _as_batch(x)
    yarr = _check_labels(np.atleast_1d(y), model.n_classes)
    if single and yarr.size != 1:
        raise ValueError("single input requires a single label")
    out = _margins_of_labels(model.logit_matrix(batch), yarr)
    return float(out[0]) if single else out


def score(model, x, y):
    """Nonconformity score: the negated margin of label ``y`` at ``x``."""
    return -margin(model, x, y)


def score_matrix(model, x) -> np.ndarray:
    """Scores of every candidate label, shape (n, K)."""
    batch, single = _as_batch(x)
    rows = model.logit_matrix(batch)
    k = rows.shape[1]
    part = np.partition(rows, k - 2, axis=1)
    top1 = part[:, -1]
    top2 = part[:, -2]
    best = np.argmax(rows, axis=1)
    competitors = np.where(np.arange(k)[None, :] == best[:, None], top2[:, None], top1[:, None])
    out = competitors - rows
    return out[0] if single else out


def ramp_loss(gamma):
    """Ramp surrogate ``min(max(1 - gamma, 0), 1)``: 1 below margin 0, 0 above margin 1."""
    g = np.asarray(gamma, dtype=float)
    out = np.clip(1.0 - g, 0.0, 1.0)
    return float(out) if g.ndim == 0 else out


def hinge_loss(gamma):
    """Hinge surrogate ``max(1 - gamma, 0)``."""
    g = np.asarray(gamma, dtype=float)
    out = np.maximum(1.0 - g, 0.0)
    return float(out) if g.ndim == 0 else out


def population_ramp_loss(model, x, y) -> float:
    """Mean ramp loss of the true-label margins over a labeled sample."""
    batch, _ = _as_batch(x)
    if batch.shape[0] == 0:
        raise ValueError("population loss of an empty sample is undefined")
    yarr = _check_labels(np.asarray(y), model.n_classes)
    return float(ramp_loss(_margins_of_labels(model.logit_matrix(batch), yarr)).mean())


def population_hinge_loss(model, x, y) -> float:
    """Mean hinge loss of the true-label margins over a labeled sample."""
    batch, _ = _as_batch(x)
    if batch.shape[0] == 0:
        raise ValueError("population loss of an empty sample is undefined")
    yarr = _check_labels(np.asarray(y), model.n_classes)
    return float(hinge_loss(_margins_of_labels(model.logit_matrix(batch), yarr)).mean())


def predictive_entropy(model, x):
    """Entropy (nats) of the temperature-1 softmax over the logits.

    Computed with max-subtraction for stability; ranges over ``[0, ln K]``.
    """
    batch, single = _as_batch(x)
    rows = model.logit_matrix(batch)
    z = rows - rows.max(axis=1, keepdims=True)
    expz = np.exp(z)
    p = expz / expz.sum(axis=1, keepdims=True)
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    out = -terms.sum(axis=1)
    return float(out[0]) if single else out


def lipschitz_bound(model: LinearLogitMap) -> float:
    """Exact Lipschitz constant of the margin for a linear logit map.

    The margin of label y is ``min over k != y`` of the linear function
    ``(w_y - w_k) . x + (b_y - b_k)``, each Lipschitz with constant
    ``||w_y - w_k||``. A pointwise min of L-Lipschitz functions is
    L-Lipschitz, so the max pairwise row-difference norm bounds every label's
    margin at once (and is tighter than summing row norms).
    """
    w = model.weights
    diffs = w[:, None, :] - w[None, :, :]
    return float(np.linalg.norm(diffs, axis=2).max())
