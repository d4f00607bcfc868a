"""Diagnostics for learned NMZ models.

Operator-norm decay curves, exponential decay fits ``A exp(-gamma_m h) + B``,
kernel truncation selection, and inversion of a learned Markov operator into
Lindblad rates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    DiscreteNmzModel,
    MasterEquationParams,
    NmzOperator,
    NumericalError,
    ValidationError,
    l2_norm,
)
from .simulator import build_markov_transition

_B, _X, _Y, _Z = 0, 1, 2, 3


@dataclass(frozen=True)
class ExponentialFit:
    amplitude: float
    decay_rate: float
    offset: float
    residual: float
    n_iter: int = 0
    identifiable: bool = True

    def __call__(self, x):
        return self.amplitude * np.exp(-self.decay_rate * np.asarray(x, dtype=float)) + self.offset


class FitConvergenceError(NumericalError):
    def __init__(self, message: str, best: ExponentialFit):
        super().__init__(message)
        self.best = best


def norm_curve(model: DiscreteNmzModel, include_lag0: bool = False,
               kind: str = "spectral") -> list[tuple[float, float]]:
    """``(l * delta, ||Omega[l]||)`` for each lag; lag 0 is left out by default."""
    start = 0 if include_lag0 else 1
    return [(op.lag_index * model.delta, l2_norm(op, kind)) for op in model.operators[start:]]


def _initial_guess(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    b0 = float(np.min(y))
    a0 = float(np.max(y)) - b0
    half = max(len(x) // 2, 2)
    xs, ys = x[:half], y[:half] - b0
    keep = ys > 0
    g0 = math.nan
    if np.count_nonzero(keep) >= 2:
        slope = np.polyfit(xs[keep], np.log(ys[keep]), 1)[0]
        g0 = -slope
    if not (math.isfinite(g0) and g0 > 0):
        span = float(np.ptp(x)) or 1.0
        g0 = 1.0 / span
    return np.array([a0, g0, b0])


def fit_exponential_decay(points: Sequence[tuple[float, float]], max_iter: int = 500,
                          rtol: float = 1e-10) -> ExponentialFit:
    """Least-squares fit of ``y = A exp(-gamma_m x) + B`` by Levenberg-Marquardt.

    Starts from ``B = min(y)``, ``A = max(y) - B`` and a log-linear estimate of
    the rate over the first half of the points. Stops when an accepted step
    changes the parameters by less than ``rtol`` (relative). A flat curve gives
    ``A = 0`` and ``identifiable=False``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 4:
        raise ValidationError("an exponential fit needs at least 4 points")
    x, y = pts[:, 0], pts[:, 1]
    if not np.all(np.isfinite(pts)):
        raise ValidationError("fit points must be finite")
    scale = max(float(np.max(np.abs(y))), np.finfo(float).tiny)
    if np.ptp(y) <= 1e-12 * scale:
        b = float(np.mean(y))
        return ExponentialFit(0.0, math.nan, b, float(np.sum((y - b) ** 2)), 0, False)

    def residuals(p):
        return p[0] * np.exp(-p[1] * x) + p[2] - y

    p = _initial_guess(x, y)
    r = residuals(p)
    cost = float(r @ r)
    lam = 1e-3
    for it in range(1, max_iter + 1):
        e = np.exp(-p[1] * x)
        J = np.column_stack([e, -p[0] * x * e, np.ones_like(x)])
        JtJ = J.T @ J
        g = J.T @ r
        while True:
            A = JtJ + lam * np.diag(np.diag(JtJ))
            try:
                step = -np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(A, g, rcond=None)[0]
            trial = p + step
            r_t = residuals(trial)
            cost_t = float(r_t @ r_t)
            if np.isfinite(cost_t) and cost_t <= cost:
                break
            lam *= 10.0
            if lam > 1e16:
                # no descent direction left at working precision
                return ExponentialFit(float(p[0]), float(p[1]), float(p[2]), cost, it)
        change = np.linalg.norm(step) / max(np.linalg.norm(p), np.finfo(float).tiny)
        p, r, cost = trial, r_t, cost_t
        lam = max(lam / 10.0, 1e-15)
        if change < rtol or cost == 0.0:
            return ExponentialFit(float(p[0]), float(p[1]), float(p[2]), cost, it)
    best = ExponentialFit(float(p[0]), float(p[1]), float(p[2]), cost, max_iter)
    raise FitConvergenceError(f"exponential fit did not converge in {max_iter} iterations", best)


@dataclass(frozen=True)
class TruncationChoice:
    h_star: float
    flag: str | None = None


def select_truncation(curve: Sequence[tuple[float, float]], fit: ExponentialFit,
                      relative_threshold: float = 0.01) -> TruncationChoice:
    """Smallest grid kernel length where the fitted decaying part is below ``threshold * A``."""
    if not 0 < relative_threshold < 1:
        raise ValidationError("relative threshold must lie in (0, 1)")
    grid = sorted(h for h, _ in curve)
    if not grid:
        raise ValidationError("empty norm curve")
    if not (fit.identifiable and math.isfinite(fit.decay_rate) and fit.decay_rate > 0
            and fit.amplitude > 0):
        return TruncationChoice(grid[-1], "no decay")
    h_exact = math.log(1.0 / relative_threshold) / fit.decay_rate
    for h in grid:
        if h >= h_exact * (1 - 1e-12):
            return TruncationChoice(h)
    return TruncationChoice(grid[-1], "threshold not reached on grid")


@dataclass(frozen=True)
class RateExtraction:
    params: MasterEquationParams
    negatives_flag: bool
    residual_asymmetry: float
    # coherent rates read off one entry each: omega_x from (z,y), omega_y from (x,z), omega_z from (y,x)
    single_entry_omegas: tuple[float, float, float] = (0.0, 0.0, 0.0)


def extract_physical_rates(omega0: NmzOperator | np.ndarray, delta: float) -> RateExtraction:
    """Invert the first-order Markov transition matrix into Lindblad rates, assuming gamma_plus = 0.

    Coherent rates come from the antisymmetric part of the rotation block and
    the three dephasing rates from the three diagonal entries, so the inversion
    is exact on matrices built by :func:`build_markov_transition`. Negative
    dissipative rates are reported and flagged, not rejected.
    """
    if not delta > 0:
        raise ValidationError("delta must be positive")
    m = omega0.matrix if isinstance(omega0, NmzOperator) else np.asarray(omega0, dtype=float)
    d = float(delta)
    gamma_minus = -m[_Z, _B] / d
    omega_x = (m[_Z, _Y] - m[_Y, _Z]) / (4 * d)
    omega_y = (m[_X, _Z] - m[_Z, _X]) / (4 * d)
    omega_z = (m[_Y, _X] - m[_X, _Y]) / (4 * d)
    dx = (1 - m[_X, _X] - 0.5 * d * gamma_minus) / (2 * d)
    dy = (1 - m[_Y, _Y] - 0.5 * d * gamma_minus) / (2 * d)
    dz = (1 - m[_Z, _Z] - d * gamma_minus) / (2 * d)
    params = MasterEquationParams(
        omega_x=float(omega_x), omega_y=float(omega_y), omega_z=float(omega_z),
        gamma_big_x=float((dy + dz - dx) / 2),
        gamma_big_y=float((dx + dz - dy) / 2),
        gamma_big_z=float((dx + dy - dz) / 2),
        gamma_plus=0.0, gamma_minus=float(gamma_minus),
    )
    mismatch = m - build_markov_transition(params, d).matrix
    asym = float(np.linalg.norm(0.5 * (mismatch + mismatch.T)))
    negatives = any(v < 0 for v in (params.gamma_big_x, params.gamma_big_y, params.gamma_big_z,
                                     params.gamma_minus))
    single = (float(m[_Z, _Y] / (2 * d)), float(m[_X, _Z] / (2 * d)), float(m[_Y, _X] / (2 * d)))
    return RateExtraction(params, negatives, asym, single)
