"""Forward prediction with a discrete NMZ model, RMSE, and leave-one-out sweeps."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DiscreteNmzModel,
    NmzError,
    NumericalError,
    ObservableVector,
    TimeSeries,
    TimeSeriesSet,
    ValidationError,
    l2_norm,
)
from .learner import learn_model

DIVERGENCE_LIMIT = 1e6


class UnstableModelError(NumericalError):
    """Prediction diverged; the learned model produces unphysical dynamics."""

    def __init__(self, message: str, partial: np.ndarray | None = None):
        super().__init__(message)
        self.partial = partial


def predict(model: DiscreteNmzModel, g0: ObservableVector, steps: int,
            check_stability: bool = True) -> TimeSeries:
    """Roll ``g[k+1] = sum_{l <= min(k, L-1)} Omega[l] @ g[k-l]`` forward from ``g0``.

    Early steps use whatever history exists. Returns ``steps + 1`` samples.
    """
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    ops = [op.matrix for op in model.operators]
    n_ops = len(ops)
    out = np.empty((steps + 1, ops[0].shape[0]))
    out[0] = np.asarray(g0.entries)
    for k in range(steps):
        acc = ops[0] @ out[k]
        for l in range(1, min(k + 1, n_ops)):
            acc = acc + ops[l] @ out[k - l]
        out[k + 1] = acc
        if check_stability and not np.all(np.abs(acc) <= DIVERGENCE_LIMIT):
            raise UnstableModelError(
                f"unstable model: prediction exceeded {DIVERGENCE_LIMIT:g} at step {k + 1}",
                partial=out[: k + 2].copy(),
            )
    return TimeSeries(model.delta, out)


def rmse(pred: TimeSeries, truth: TimeSeries) -> float:
    """Root of the per-sample summed squared Bloch-vector deviation; the bias entry is ignored."""
    if pred.n_samples != truth.n_samples:
        raise ValidationError(
            f"length mismatch: prediction has {pred.n_samples} samples, truth {truth.n_samples}"
        )
    if not math.isclose(pred.delta, truth.delta, rel_tol=1e-12):
        raise ValidationError(f"delta mismatch: {pred.delta} vs {truth.delta}")
    diff = pred.values[:, 1:4] - truth.values[:, 1:4]
    return math.sqrt(float(np.sum(diff * diff)) / pred.n_samples)


@dataclass(frozen=True)
class PredictionRun:
    model: DiscreteNmzModel
    predicted: TimeSeries
    truth: TimeSeries | None = None
    rmse: float | None = None


def run_prediction(model: DiscreteNmzModel, truth: TimeSeries,
                   horizon_steps: int | None = None) -> PredictionRun:
    """Predict ``truth`` from its first sample and score it over the horizon."""
    steps = truth.n_samples - 1 if horizon_steps is None else int(horizon_steps)
    if not 1 <= steps <= truth.n_samples - 1:
        raise ValidationError(f"horizon of {steps} steps exceeds the test series")
    pred = predict(model, truth[0], steps)
    cut = TimeSeries(truth.delta, truth.values[: steps + 1])
    return PredictionRun(model, pred, cut, rmse(pred, cut))


@dataclass(frozen=True)
class CvReport:
    h: float
    n_operators: int
    fold_rmse: tuple[float, ...]
    failed_folds: tuple[int, ...] = ()

    @property
    def n_folds(self) -> int:
        return len(self.fold_rmse)

    @property
    def _ok(self) -> np.ndarray:
        v = np.array(self.fold_rmse)
        return v[np.isfinite(v)]

    @property
    def mean_rmse(self) -> float:
        ok = self._ok
        return float(np.mean(ok)) if ok.size else math.nan

    @property
    def stderr_rmse(self) -> float:
        """Standard error of the mean across successful folds."""
        ok = self._ok
        if ok.size < 2:
            return math.nan
        return float(np.std(ok, ddof=1) / math.sqrt(ok.size))


@dataclass(frozen=True)
class SweepResult:
    """LOOCV results over a grid of memory kernel lengths."""

    delta: float
    reports: tuple[CvReport, ...]
    fold_norms: np.ndarray  # (n_folds, max_lag + 1), NaN for failed folds
    fold_markov: np.ndarray  # (n_folds, M, M) learned Markov operators
    fold_errors: tuple[str | None, ...] = ()
    fit: object | None = field(default=None, compare=False)

    @property
    def h_grid(self) -> np.ndarray:
        return np.array([r.h for r in self.reports])

    @property
    def mean_rmse(self) -> np.ndarray:
        return np.array([r.mean_rmse for r in self.reports])

    @property
    def stderr_rmse(self) -> np.ndarray:
        return np.array([r.stderr_rmse for r in self.reports])

    @property
    def mean_norms(self) -> np.ndarray:
        """Mean operator norm per lag across folds, lag 0 first."""
        return np.nanmean(self.fold_norms, axis=0)

    @property
    def lag_times(self) -> np.ndarray:
        return self.delta * np.arange(self.fold_norms.shape[1])

    def norm_curve(self, include_lag0: bool = False) -> list[tuple[float, float]]:
        start = 0 if include_lag0 else 1
        return [(float(t), float(v)) for t, v in zip(self.lag_times[start:], self.mean_norms[start:])]


def kernel_lags(h_grid, delta: float) -> list[int]:
    """Convert kernel lengths ``h`` to lag counts ``l = h / delta``."""
    lags = []
    for h in h_grid:
        l = round(h / delta)
        if l < 0 or abs(l * delta - h) > 1e-9 * max(1.0, abs(h)):
            raise ValidationError(f"kernel length {h} is not a nonnegative multiple of delta={delta}")
        lags.append(l)
    return lags


def _fold(data: TimeSeriesSet, i: int, lags: list[int], horizon: int | None,
          learn_kwargs: dict, norm_kind: str):
    train = data.subset([j for j in range(data.n_series) if j != i])
    test = data[i]
    max_lag = max(lags)
    try:
        full = learn_model(train, n_operators=max_lag + 1, **learn_kwargs)
    except NmzError as exc:
        return None, None, [math.nan] * len(lags), f"{type(exc).__name__}: {exc}"
    norms = np.array([l2_norm(op, norm_kind) for op in full.operators])
    errs = []
    for l in lags:
        try:
            errs.append(run_prediction(full.truncate(l + 1), test, horizon).rmse)
        except NumericalError:
            errs.append(math.nan)
    return full.operators[0].matrix, norms, errs, None


def loocv_sweep(
    data: TimeSeriesSet,
    h_grid,
    horizon_steps: int | None = None,
    *,
    window: int | None = None,
    estimator: str = "window",
    ridge: float = 0.0,
    norm_kind: str = "spectral",
    n_workers: int = 1,
) -> SweepResult:
    """Leave-one-out cross validation over memory kernel lengths.

    For each fold the model is learned once with the longest kernel in
    ``h_grid``; shorter kernels are exact truncations because each operator
    depends only on lower-order ones. Held-out series are predicted from their
    first sample for ``horizon_steps`` steps (default: the full series).
    """
    if data.n_series < 2:
        raise ValidationError("LOOCV needs at least two series")
    lags = kernel_lags(h_grid, data.delta)
    kw = dict(window=window, estimator=estimator, ridge=ridge)
    folds = range(data.n_series)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(lambda i: _fold(data, i, lags, horizon_steps, kw, norm_kind), folds))
    else:
        results = [_fold(data, i, lags, horizon_steps, kw, norm_kind) for i in folds]

    n_lag = max(lags) + 1
    M = data.dim
    fold_norms = np.full((data.n_series, n_lag), math.nan)
    fold_markov = np.full((data.n_series, M, M), math.nan)
    for i, (markov, norms, _, _) in enumerate(results):
        if norms is not None:
            fold_norms[i] = norms
            fold_markov[i] = markov
    reports = []
    for j, (h, l) in enumerate(zip(h_grid, lags)):
        vals = tuple(r[2][j] for r in results)
        failed = tuple(i for i, v in enumerate(vals) if not math.isfinite(v))
        reports.append(CvReport(float(h), l + 1, vals, failed))
    return SweepResult(data.delta, tuple(reports), fold_norms, fold_markov,
                       tuple(r[3] for r in results))
