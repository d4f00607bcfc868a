"""Regression learning of discretized NMZ operators from lag-correlation matrices.

With ``X[j]`` the N x M matrix of observables at step ``j``, the empirical
lag-``k`` correlation over a window of ``W`` steps is::

    C[k] = 1 / (N (W - k)) * sum_{l=0}^{W-k-1} X[k+l]^T X[l]

The Markov operator is ``Omega[0] = C[1] C[0]^-1`` and the memory operators
follow from ``Omega[n+1] = (C[n+2] - sum_{l<=n} Omega[l] C[n-l+1]) C[0]^-1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import (
    ContinuousModel,
    DiscreteNmzModel,
    NmzOperator,
    NumericalError,
    TimeSeriesSet,
    ValidationError,
)

COND_LIMIT = 1e12

ESTIMATORS = ("window", "ensemble")


class SingularCorrelationError(NumericalError):
    """C[0] is numerically singular: the training data does not excite every observable."""


@dataclass(frozen=True)
class CorrelationSet:
    delta: float
    lags: tuple[np.ndarray, ...]
    h_star_index: int
    estimator: str = "window"

    @property
    def n_lags(self) -> int:
        return len(self.lags)


def correlation_matrices(
    data: TimeSeriesSet,
    h_star_index: int,
    n_lags: int | None = None,
    estimator: str = "window",
) -> CorrelationSet:
    """Empirical lag-correlation matrices ``C[0..n_lags-1]``.

    ``h_star_index`` is the averaging window ``W`` (at most the series length K).
    ``n_lags`` defaults to ``W``.

    With ``estimator="ensemble"`` every lag is correlated against the first
    sample only, ``C[k] = X[k]^T X[0] / N`` (the ``W = k + 1`` member of the
    windowed family, taken lag by lag). This is the ensemble correlation over
    initial states, for which the operator recursion is exact on data from a
    finite-memory linear recursion; it needs at least M linearly independent
    initial states. The windowed time average instead assumes the series are
    close to stationary and carries an O(1/W) end-of-window bias on transients.
    """
    if estimator not in ESTIMATORS:
        raise ValidationError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")
    K = data.n_samples
    W = int(h_star_index)
    if not 1 <= W <= K:
        raise ValidationError(f"correlation window h*={W} outside [1, {K}]")
    n_lags = W if n_lags is None else int(n_lags)
    if not 1 <= n_lags <= (K if estimator == "ensemble" else W):
        raise ValidationError(f"cannot form {n_lags} lags with window {W} from K={K} samples")
    X = data.as_array()
    N = data.n_series
    lags = []
    for k in range(n_lags):
        if estimator == "window":
            c = np.einsum("lni,lnj->ij", X[k:W], X[: W - k]) / (N * (W - k))
        else:
            c = X[k].T @ X[0] / N
        c.setflags(write=False)
        lags.append(c)
    return CorrelationSet(data.delta, tuple(lags), W, estimator)


class _C0Solver:
    """Right-division by C[0] (``A -> A C[0]^-1``) via an LU factorization."""

    def __init__(self, c0: np.ndarray, ridge: float = 0.0):
        c0 = np.asarray(c0, dtype=float)
        if ridge:
            c0 = c0 + ridge * np.eye(c0.shape[0])
        cond = np.linalg.cond(c0)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise SingularCorrelationError(
                f"C[0] is numerically singular (condition number {cond:.3g} > {COND_LIMIT:.0e}); "
                "train on time evolutions from a wider variety of initial states"
            )
        self.cond = cond
        self._lu = scipy.linalg.lu_factor(c0.T)

    def rdiv(self, a: np.ndarray) -> np.ndarray:
        # A C0^-1 = (C0^-T A^T)^T
        return scipy.linalg.lu_solve(self._lu, np.asarray(a).T).T


def learn_markov(corr: CorrelationSet, ridge: float = 0.0) -> NmzOperator:
    """Markov operator ``C[1] C[0]^-1``. ``ridge`` is added to the diagonal of C[0]."""
    if corr.n_lags < 2:
        raise ValidationError("learning the Markov operator needs lags C[0] and C[1]")
    solver = _C0Solver(corr.lags[0], ridge)
    return NmzOperator(solver.rdiv(corr.lags[1]), 0)


def learn_memory_kernel(
    corr: CorrelationSet,
    omega0: NmzOperator | None = None,
    n_operators: int | None = None,
    ridge: float = 0.0,
) -> DiscreteNmzModel:
    """Markov operator plus memory operators up to lag ``n_operators - 1``.

    Operator ``n`` needs ``C[n+1]``. When ``n_operators`` is omitted every
    computable operator is returned (``corr.n_lags - 1`` of them).
    """
    max_ops = corr.n_lags - 1
    if n_operators is None:
        n_operators = max_ops
    if n_operators < 1 or n_operators > max_ops:
        raise ValidationError(
            f"{n_operators} operators need {n_operators + 1} correlation lags, have {corr.n_lags}"
        )
    solver = _C0Solver(corr.lags[0], ridge)
    C = corr.lags
    ops = [omega0.matrix if omega0 is not None else solver.rdiv(C[1])]
    for n in range(n_operators - 1):
        acc = C[n + 2].copy()
        for l in range(n + 1):
            acc -= ops[l] @ C[n - l + 1]
        ops.append(solver.rdiv(acc))
    return DiscreteNmzModel.from_matrices(corr.delta, ops)


def learn_model(
    data: TimeSeriesSet,
    n_operators: int = 1,
    window: int | None = None,
    estimator: str = "window",
    ridge: float = 0.0,
) -> DiscreteNmzModel:
    """Learn ``n_operators`` NMZ operators (kernel length ``(n_operators - 1) * delta``).

    ``window`` defaults to the full series length, i.e. every sample pair
    contributes to the correlations.
    """
    K = data.n_samples
    if window is None:
        window = K
    if n_operators + 1 > (K if estimator == "ensemble" else window):
        raise ValidationError(
            f"{n_operators} operators need {n_operators + 1} lags; series have K={K} "
            f"samples and window {window}"
        )
    corr = correlation_matrices(data, window, n_operators + 1, estimator)
    return learn_memory_kernel(corr, n_operators=n_operators, ridge=ridge)


def recover_continuous(model: DiscreteNmzModel) -> ContinuousModel:
    """Small-step estimates ``M = (Omega[0] - I) / delta`` and ``K(l delta) = Omega[l] / delta^2``."""
    if model.n_operators < 1:
        raise ValidationError("model has no operators")
    d = model.delta
    om0 = model.operators[0].matrix
    markov = (om0 - np.eye(om0.shape[0])) / d
    kernel = tuple((op.lag_index * d, op.matrix / d**2) for op in model.operators[1:])
    return ContinuousModel(markov, kernel)
