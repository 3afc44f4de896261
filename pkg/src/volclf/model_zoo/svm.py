"""Linear soft-margin SVM trained in the dual.

The solver is sequential minimal optimization over a precomputed Gram
matrix: each step picks the maximal violating pair, solves the two-variable
subproblem in closed form and updates the dual gradient.  The bias is then
set to the exact minimizer of the hinge term for the final weights, so the
reported primal objective is as low as the dual solution allows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from volclf.errors import ConfigurationError, DataError

DEFAULT_C_GRID = tuple(10.0**e for e in range(-3, 4))


@dataclass
class SVMModel:
    weights: np.ndarray
    bias: float
    C: float
    n_iter: int = 0
    dual_objective: list[float] = field(default_factory=list, repr=False)

    def decision_function(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64).reshape(len(features), -1)
        return x @ self.weights + self.bias

    def predict(self, features) -> np.ndarray:
        """Labels in {-1, +1}; a zero margin goes to +1."""
        return np.where(self.decision_function(features) >= 0, 1, -1)

    def objective(self, features, labels) -> float:
        return primal_objective(self.weights, self.bias, features, labels, self.C)


def primal_objective(w, b, features, labels, C) -> float:
    x = np.asarray(features, dtype=np.float64).reshape(len(features), -1)
    y = np.asarray(labels, dtype=np.float64)
    hinge = np.maximum(0.0, 1.0 - y * (x @ w + b))
    return 0.5 * float(w @ w) + C * float(hinge.sum())


def _check_labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or not np.isin(y, (-1, 1)).all():
        raise DataError("SVM labels must be a vector of -1/+1")
    if len(np.unique(y)) < 2:
        raise DataError("SVM training needs both classes")
    return y.astype(np.float64)


def best_bias(margins_without_bias: np.ndarray, y: np.ndarray, start: float) -> float:
    """Minimize sum(max(0, 1 - y (f + b))) over b; ties resolved toward ``start``."""
    candidates = np.concatenate([[start], y - margins_without_bias])
    losses = np.maximum(0.0, 1.0 - y[None, :] * (margins_without_bias[None, :] + candidates[:, None])).sum(axis=1)
    best = losses.min()
    tied = candidates[losses <= best + 1e-12 * max(1.0, best)]
    return float(tied[np.argmin(np.abs(tied - start))])


def _smo(gram: np.ndarray, y: np.ndarray, C: float, tol: float, max_iter: int, record: bool):
    n = len(y)
    Q = gram * np.outer(y, y)
    diag = np.diag(Q).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 0.5 a'Qa - sum(a)
    history = []
    it = 0
    tau = 1e-12
    while it < max_iter:
        score = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        j = int(np.flatnonzero(low)[np.argmin(score[low])])
        if score[i] - score[j] < tol:
            break
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(diag[i] + diag[j] + 2 * Q[i, j], tau)
            delta = (-grad[i] - grad[j]) / quad
            diff = ai - aj
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0 and alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, diff
            elif diff <= 0 and alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0 and alpha[i] > C:
                alpha[i], alpha[j] = C, C - diff
            elif diff <= 0 and alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            quad = max(diag[i] + diag[j] - 2 * Q[i, j], tau)
            delta = (grad[i] - grad[j]) / quad
            total = ai + aj
            alpha[i] -= delta
            alpha[j] += delta
            if total > C and alpha[i] > C:
                alpha[i], alpha[j] = C, total - C
            elif total <= C and alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, total
            if total > C and alpha[j] > C:
                alpha[j], alpha[i] = C, total - C
            elif total <= C and alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, total
        grad += Q[:, i] * (alpha[i] - ai) + Q[:, j] * (alpha[j] - aj)
        it += 1
        if record:
            history.append(float(alpha.sum() - 0.5 * alpha @ (grad + 1.0)))
    score = -y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        b = float(score[free].mean())
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        hi = score[up].max() if up.any() else 0.0
        lo = score[low].min() if low.any() else 0.0
        b = float((hi + lo) / 2)
    return alpha, b, it, history


def svm_train(
    features,
    labels,
    C: float,
    tol: float = 1e-3,
    max_epochs: int = 10_000,
    record_objective: bool = False,
    gram: np.ndarray | None = None,
) -> SVMModel:
    """Fit ``0.5*|w|^2 + C*sum(hinge)``; ``labels`` in {-1, +1}.

    ``max_epochs`` caps the number of pair updates at ``max_epochs * n``.
    """
    if C <= 0:
        raise ConfigurationError(f"C must be positive, got {C}")
    y = _check_labels(labels)
    x = np.asarray(features, dtype=np.float64).reshape(len(y), -1)
    if gram is None:
        gram = x @ x.T
    alpha, b, it, history = _smo(gram, y, float(C), tol, max_epochs * len(y), record_objective)
    coef = alpha * y
    w = x.T @ coef
    b = best_bias(gram @ coef, y, b)
    return SVMModel(w, b, float(C), it, history)


def _balanced_accuracy(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    rates = [np.mean(y_pred[y_true == c] == c) for c in (-1, 1) if np.any(y_true == c)]
    return float(np.mean(rates))


def stratified_folds(labels, k: int, seed: int) -> np.ndarray:
    """Fold index per sample: each class shuffled, then dealt round-robin."""
    y = np.asarray(labels)
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), dtype=np.int64)
    offset = 0
    for cls in np.unique(y):
        members = rng.permutation(np.flatnonzero(y == cls))
        fold[members] = (np.arange(len(members)) + offset) % k
        offset += len(members)
    return fold


def svm_select_C(features, labels, grid=DEFAULT_C_GRID, k: int = 10, seed: int = 0, tol: float = 1e-3) -> float:
    """Grid value with the highest mean inner-CV balanced accuracy; ties go to the smallest C."""
    y = _check_labels(labels)
    x = np.asarray(features, dtype=np.float64).reshape(len(y), -1)
    if min(np.sum(y == -1), np.sum(y == 1)) < 2:
        raise DataError("C selection needs at least two samples per class")
    k = min(k, len(y))
    folds = stratified_folds(y, k, seed)
    gram = x @ x.T
    best_c, best_score = None, -np.inf
    for C in sorted(grid):
        scores = []
        for f in range(k):
            tr, va = folds != f, folds == f
            if not va.any() or len(np.unique(y[tr])) < 2:
                continue
            model = svm_train(x[tr], y[tr], C, tol=tol, gram=gram[np.ix_(tr, tr)])
            scores.append(_balanced_accuracy(y[va], model.predict(x[va])))
        score = float(np.mean(scores))
        if score > best_score + 1e-12:
            best_c, best_score = C, score
    return float(best_c)
