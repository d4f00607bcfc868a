"""Synthetic single-qubit data.

Two generators are provided:

* Markovian dynamics, by repeated application of the first-order finite-time
  transition matrix of the Lindblad generator on the augmented Bloch vector.
* Non-Markovian dynamics of a qubit with Hamiltonian
  ``H(t) = omega_z * sz + eta(t) * sx`` where ``eta`` is an Ornstein-Uhlenbeck
  process. The noise-averaged dynamics is estimated by Monte Carlo over exact
  OU sample paths, with each fine step an exact Bloch-sphere rotation.

Because every trajectory acts linearly on the initial Bloch vector, the
ensemble is reduced to an averaged 3x3 propagator, which is then applied to any
number of initial states.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np
from scipy.signal import lfilter

from .core import (
    MasterEquationParams,
    NmzOperator,
    ObservableVector,
    TimeSeries,
    TimeSeriesSet,
    ValidationError,
    from_bloch,
)

_X, _Y, _Z = 1, 2, 3


@dataclass(frozen=True)
class OuParams:
    """Ornstein-Uhlenbeck process ``d eta = -gamma (eta - mu) dt + sigma dW``."""

    gamma: float
    mu: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValidationError(f"OU reversion rate must be positive, got {self.gamma}")
        if self.sigma < 0:
            raise ValidationError(f"OU fluctuation rate must be nonnegative, got {self.sigma}")

    @property
    def stationary_variance(self) -> float:
        return self.sigma**2 / (2.0 * self.gamma)

    def autocovariance(self, lag: float) -> float:
        return self.stationary_variance * math.exp(-self.gamma * abs(lag))


@dataclass(frozen=True)
class SimConfig:
    delta_fine: float
    total_time: float
    downsample_factor: int = 1
    n_trajectories: int = 5000
    seed: int = 0
    antithetic: bool = True

    def __post_init__(self):
        if not self.delta_fine > 0 or not self.total_time > 0:
            raise ValidationError("fine step and total time must be positive")
        ratio = self.total_time / self.delta_fine
        n = round(ratio)
        if n < 1 or abs(ratio - n) > 1e-9 * ratio:
            raise ValidationError(
                f"total_time / delta_fine = {ratio!r} is not a positive integer"
            )
        if self.downsample_factor < 1 or n % self.downsample_factor:
            raise ValidationError(
                f"downsample factor {self.downsample_factor} does not divide {n} fine steps"
            )
        if self.n_trajectories < 1:
            raise ValidationError("need at least one trajectory")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    @property
    def n_fine_steps(self) -> int:
        return round(self.total_time / self.delta_fine)

    @property
    def delta(self) -> float:
        """Sampling interval of the downsampled output."""
        return self.downsample_factor * self.delta_fine

    @property
    def n_samples(self) -> int:
        return self.n_fine_steps // self.downsample_factor + 1


def build_markov_transition(params: MasterEquationParams, delta: float) -> NmzOperator:
    """First-order finite-time transition matrix of the Lindblad generator.

    Acts on ``(1, <sx>, <sy>, <sz>)``; row 0 is ``(1, 0, 0, 0)`` so the bias
    entry is conserved.
    """
    if not delta > 0:
        raise ValidationError(f"delta must be positive, got {delta}")
    p = params
    d = float(delta)
    incoh = p.gamma_plus + p.gamma_minus
    m = np.eye(4)
    m[_X, _X] = 1 - 2 * d * (p.gamma_big_y + p.gamma_big_z) - 0.5 * d * incoh
    m[_X, _Y] = -2 * d * p.omega_z
    m[_X, _Z] = 2 * d * p.omega_y
    m[_Y, _X] = 2 * d * p.omega_z
    m[_Y, _Y] = 1 - 2 * d * (p.gamma_big_x + p.gamma_big_z) - 0.5 * d * incoh
    m[_Y, _Z] = -2 * d * p.omega_x
    m[_Z, 0] = d * (p.gamma_plus - p.gamma_minus)
    m[_Z, _X] = -2 * d * p.omega_y
    m[_Z, _Y] = 2 * d * p.omega_x
    m[_Z, _Z] = 1 - 2 * d * (p.gamma_big_x + p.gamma_big_y) - d * incoh
    return NmzOperator(m, 0)


def propagate_markov(
    omega0: NmzOperator, g0: ObservableVector, steps: int, delta: float = 1.0
) -> TimeSeries:
    """``samples[k] = omega0**k @ g0`` for ``k = 0..steps``, by repeated multiplication."""
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    m = omega0.matrix
    out = np.empty((steps + 1, m.shape[0]))
    out[0] = np.asarray(g0.entries)
    for k in range(steps):
        out[k + 1] = m @ out[k]
    return TimeSeries(delta, out)


def downsample(series: TimeSeries, factor: int) -> TimeSeries:
    if factor < 1:
        raise ValidationError("downsample factor must be >= 1")
    if (series.n_samples - 1) % factor:
        raise ValidationError(
            f"factor {factor} does not divide the {series.n_samples - 1} sampling intervals"
        )
    return TimeSeries(series.delta * factor, series.values[::factor])


def trajectory_rng(seed: int, index: int | None = None, stream: int = 0) -> np.random.Generator:
    """Generator for ``seed``, or for member ``index`` of sub-stream ``stream`` of ``seed``.

    Members come from ``SeedSequence(seed, spawn_key=(stream, index))``, so a
    trajectory's noise depends only on (seed, index) and never on how an
    ensemble is split between workers. Stream 0 drives OU trajectories,
    stream 1 draws initial states.
    """
    if index is None:
        return np.random.default_rng(np.random.SeedSequence(seed))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, index)))


def random_pure_state(seed: int, index: int | None = None) -> ObservableVector:
    """Pure state with Bloch vector uniform on the unit sphere."""
    v = trajectory_rng(seed, index, stream=1).standard_normal(3)
    v /= np.linalg.norm(v)
    return from_bloch(*v)


def random_initial_states(n: int, seed: int) -> list[ObservableVector]:
    return [random_pure_state(seed, i) for i in range(n)]


def _ou_path(params: OuParams, delta_fine: float, steps: int, rng: np.random.Generator,
             eta0: float | None = None) -> np.ndarray:
    decay = math.exp(-params.gamma * delta_fine)
    scale = params.sigma * math.sqrt(-math.expm1(-2.0 * params.gamma * delta_fine) / (2.0 * params.gamma))
    if eta0 is None:
        eta0 = params.mu + math.sqrt(params.stationary_variance) * rng.standard_normal()
    xi = rng.standard_normal(steps)
    dev = lfilter([1.0], [1.0, -decay], scale * xi, zi=[decay * (eta0 - params.mu)])[0]
    path = np.empty(steps + 1)
    path[0] = eta0
    path[1:] = params.mu + dev
    return path


def sample_ou_path(params: OuParams, delta_fine: float, steps: int, seed: int,
                   eta0: float | None = None) -> np.ndarray:
    """Exact discretization of the OU process on ``steps + 1`` grid points.

    The initial value is drawn from the stationary law ``N(mu, sigma^2 / 2 gamma)``
    unless ``eta0`` is given.
    """
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    return _ou_path(params, delta_fine, steps, trajectory_rng(seed), eta0)


@numba.njit(cache=True, nogil=True)
def _rotation_propagators(eta, omega_z, dt, factor, out):
    # out[j] = product of fine-step rotations up to time j * factor * dt
    r = np.eye(3)
    out[0] = r
    n_steps = eta.shape[0] - 1
    tmp = np.empty((3, 3))
    for k in range(n_steps):
        bx = eta[k]
        bz = omega_z
        b = math.sqrt(bx * bx + bz * bz)
        if b > 0.0:
            nx = bx / b
            nz = bz / b
            theta = 2.0 * b * dt
            s = math.sin(theta)
            c1 = 1.0 - math.cos(theta)
            # Rodrigues: I + s [n]x + c1 [n]x^2 with n = (nx, 0, nz)
            r00 = 1.0 - c1 * nz * nz
            r01 = -s * nz
            r02 = c1 * nx * nz
            r10 = s * nz
            r11 = 1.0 - c1
            r12 = -s * nx
            r20 = c1 * nx * nz
            r21 = s * nx
            r22 = 1.0 - c1 * nx * nx
            for j in range(3):
                a0 = r[0, j]
                a1 = r[1, j]
                a2 = r[2, j]
                tmp[0, j] = r00 * a0 + r01 * a1 + r02 * a2
                tmp[1, j] = r10 * a0 + r11 * a1 + r12 * a2
                tmp[2, j] = r20 * a0 + r21 * a1 + r22 * a2
            for i in range(3):
                for j in range(3):
                    r[i, j] = tmp[i, j]
        if (k + 1) % factor == 0:
            out[(k + 1) // factor] = r
    return out


def trajectory_propagators(eta: np.ndarray, omega_z: float, delta_fine: float,
                           factor: int = 1) -> np.ndarray:
    """Bloch rotation matrices of one noise realization at every ``factor``-th fine step.

    ``eta[k]`` is held constant over fine step ``k``; the result has shape
    ``(len(eta) - 1) // factor + 1, 3, 3)``.
    """
    eta = np.ascontiguousarray(eta, dtype=float)
    n_steps = eta.shape[0] - 1
    if n_steps % factor:
        raise ValidationError("factor must divide the number of fine steps")
    out = np.empty((n_steps // factor + 1, 3, 3))
    return _rotation_propagators(eta, float(omega_z), float(delta_fine), int(factor), out)


def ensemble_member_path(ou: OuParams, cfg: SimConfig, index: int) -> np.ndarray:
    """OU path of trajectory ``index`` of the ensemble described by ``cfg``.

    With ``cfg.antithetic`` trajectories ``2p`` and ``2p + 1`` share the draws of
    stream ``p`` with the deviation from the mean mirrored, which cancels the
    leading-order Monte Carlo fluctuation of the ensemble average.
    """
    if cfg.antithetic:
        path = _ou_path(ou, cfg.delta_fine, cfg.n_fine_steps, trajectory_rng(cfg.seed, index // 2))
        if index % 2:
            path = 2.0 * ou.mu - path
        return path
    return _ou_path(ou, cfg.delta_fine, cfg.n_fine_steps, trajectory_rng(cfg.seed, index))


def _chunk_propagators(indices, omega_z, ou, cfg):
    return [
        trajectory_propagators(ensemble_member_path(ou, cfg, i), omega_z, cfg.delta_fine,
                               cfg.downsample_factor)
        for i in indices
    ]


def ensemble_propagator(omega_z: float, ou: OuParams, cfg: SimConfig,
                        n_workers: int = 1, chunk_size: int = 16) -> np.ndarray:
    """Noise-averaged Bloch propagator at the downsampled times, shape ``(K, 3, 3)``.

    Trajectories are summed in index order with compensated summation, so the
    result is bit-identical for any ``n_workers``.
    """
    n = cfg.n_trajectories
    chunks = [range(a, min(a + chunk_size, n)) for a in range(0, n, chunk_size)]
    total = np.zeros((cfg.n_samples, 3, 3))
    comp = np.zeros_like(total)

    def accumulate(results):
        nonlocal total, comp
        for chunk in results:
            for rot in chunk:
                y = rot - comp
                t = total + y
                comp = (t - total) - y
                total = t

    if n_workers <= 1:
        accumulate(_chunk_propagators(c, omega_z, ou, cfg) for c in chunks)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            accumulate(pool.map(lambda c: _chunk_propagators(c, omega_z, ou, cfg), chunks))
    return total / n


def apply_bloch_propagator(propagator: np.ndarray, g0: ObservableVector, delta: float) -> TimeSeries:
    bloch = propagator @ np.asarray(g0.entries[1:])
    values = np.empty((propagator.shape[0], 4))
    values[:, 0] = 1.0
    values[:, 1:] = bloch
    return TimeSeries(delta, values)


def simulate_stochastic_qubit(omega_z: float, ou: OuParams, g0: ObservableVector,
                              cfg: SimConfig, n_workers: int = 1) -> TimeSeries:
    """Noise-averaged trajectory of ``g0`` under the OU-driven Hamiltonian, sampled every ``cfg.delta``."""
    prop = ensemble_propagator(omega_z, ou, cfg, n_workers=n_workers)
    return apply_bloch_propagator(prop, g0, cfg.delta)


def simulate_stochastic_set(omega_z: float, ou: OuParams, initial_states, cfg: SimConfig,
                            n_workers: int = 1) -> TimeSeriesSet:
    """Same as :func:`simulate_stochastic_qubit` for many initial states, sharing one ensemble."""
    prop = ensemble_propagator(omega_z, ou, cfg, n_workers=n_workers)
    return TimeSeriesSet(tuple(apply_bloch_propagator(prop, g, cfg.delta) for g in initial_states))


def simulate_markov_set(params: MasterEquationParams, initial_states, delta_fine: float,
                        total_time: float, downsample_factor: int) -> TimeSeriesSet:
    """Markovian training data: propagate at the fine step, then downsample."""
    params.validate_for_simulation()
    cfg = SimConfig(delta_fine, total_time, downsample_factor, 1, 0)
    omega = build_markov_transition(params, delta_fine)
    return TimeSeriesSet(tuple(
        downsample(propagate_markov(omega, g, cfg.n_fine_steps, delta_fine), downsample_factor)
        for g in initial_states
    ))


def apply_shot_noise(series: TimeSeries, shots: int, seed: int) -> TimeSeries:
    """Replace each Pauli expectation by a binomial estimate from ``shots`` projective measurements."""
    if shots < 1:
        raise ValidationError("shots must be >= 1")
    rng = trajectory_rng(seed)
    p_up = np.clip((1.0 + series.values[:, 1:]) / 2.0, 0.0, 1.0)
    counts = rng.binomial(shots, p_up)
    values = series.values.copy()
    values[:, 1:] = 2.0 * counts / shots - 1.0
    return TimeSeries(series.delta, values)
