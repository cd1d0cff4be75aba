"""Reference models and evaluation metrics: OLS, lagged features, RMSE/MAE/R2."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .graph import SpatialGraph, row_normalize
from .numerics import as_dense


@dataclass
class LinearModel:
    intercept: float
    coefficients: np.ndarray
    feature_names: tuple

    def predict(self, x) -> np.ndarray:
        return as_dense(x) @ self.coefficients + self.intercept


def ols_fit(x, y, feature_names=None) -> LinearModel:
    """Least squares via QR with an internally appended intercept column.

    Rank deficiency raises and names the offending column (the first one
    that is linearly dependent on its predecessors).
    """
    x = as_dense(x)
    y = np.asarray(y, dtype=np.float64)
    n, k = x.shape
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(k))
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} rows for {k} features, have {n}")
    design = np.hstack([np.ones((n, 1)), x])
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    bad = np.nonzero(diag <= 1e-10 * max(diag.max(), 1.0))[0]
    if bad.size:
        j = int(bad[0])
        label = "intercept" if j == 0 else feature_names[j - 1]
        raise ValueError(f"design matrix is rank deficient at column {label!r}")
    beta = solve_triangular(r, q.T @ y)
    return LinearModel(intercept=float(beta[0]), coefficients=beta[1:],
                       feature_names=tuple(feature_names))


def slx_augment(g: SpatialGraph, x) -> np.ndarray:
    """Append the neighborhood average of every feature column: [X | D^-1 A X]."""
    x = as_dense(x)
    return np.hstack([x, row_normalize(g) @ x])


def eval_metrics(y_true, y_pred) -> dict:
    """Root mean squared error, mean absolute error and out-of-sample R2."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or y_true.size < 2:
        raise ValueError("need two equal-length vectors of at least 2 entries")
    err = y_pred - y_true
    sst = float(np.sum((y_true - y_true.mean()) ** 2))
    if sst == 0:
        raise ValueError("y_true is constant, R2 undefined")
    sse = float(err @ err)
    return {
        "rmse": float(np.sqrt(np.mean(err ** 2))),
        "mae": float(np.mean(np.abs(err))),
        "r2": 1.0 - sse / sst,
    }
