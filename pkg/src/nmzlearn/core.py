"""Shared value types, validation and operator norms.

Observables are the augmented Bloch vector ``g = (1, <sx>, <sy>, <sz>)``; the
leading constant lets linear maps on ``g`` represent affine (non-unital)
qubit dynamics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

OBS_DIM = 4
BLOCH_EPS = 1e-9

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class NmzError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(NmzError, ValueError):
    """Input violates a type invariant."""


class NumericalError(NmzError, ArithmeticError):
    """A numerical procedure failed (singular system, divergence, ...)."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ObservableVector:
    """Augmented Bloch vector ``(bias, x, y, z)``.

    ``bloch_warning`` is set when the Bloch norm exceeds ``1 + BLOCH_EPS``;
    measured data with shot noise may legitimately do so.
    """

    entries: np.ndarray
    bloch_warning: bool = False

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.shape != (OBS_DIM,):
            raise ValidationError(f"observable vector must have shape (4,), got {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ValidationError("observable vector has non-finite entries")
        object.__setattr__(self, "entries", _frozen(e))

    @property
    def bloch(self) -> np.ndarray:
        return self.entries[1:]

    @property
    def bloch_norm(self) -> float:
        return float(np.linalg.norm(self.entries[1:]))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def from_bloch(x: float, y: float, z: float) -> ObservableVector:
    vals = (float(x), float(y), float(z))
    if not all(math.isfinite(v) for v in vals):
        raise ValidationError(f"non-finite Bloch components {vals}")
    norm = math.sqrt(sum(v * v for v in vals))
    return ObservableVector(np.array((1.0,) + vals), bloch_warning=norm > 1.0 + BLOCH_EPS)


def from_density_matrix(rho: np.ndarray) -> ObservableVector:
    """Observable vector of a 2x2 density matrix; the bias entry is exactly 1."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise ValidationError("density matrix must be 2x2")
    comps = [float(np.real(np.trace(rho @ s))) for s in (SIGMA_X, SIGMA_Y, SIGMA_Z)]
    return from_bloch(*comps)


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled trajectory of observable vectors.

    ``values`` has shape ``(K, M)``; row ``k`` is the sample at time ``k * delta``.
    """

    delta: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValidationError(f"time series values must be 2-D, got shape {v.shape}")
        if v.shape[0] < 2:
            raise ValidationError(f"time series needs K >= 2 samples, got {v.shape[0]}")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ValidationError(f"delta must be positive and finite, got {self.delta}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("time series contains non-finite values")
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def from_samples(cls, delta: float, samples: Sequence[ObservableVector]) -> "TimeSeries":
        return cls(delta, np.stack([np.asarray(s.entries) for s in samples]))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.delta * np.arange(self.n_samples)

    @property
    def samples(self) -> list[ObservableVector]:
        return [ObservableVector(row) for row in self.values]

    def __len__(self) -> int:
        return self.n_samples

    def __getitem__(self, k: int) -> ObservableVector:
        return ObservableVector(self.values[k])


@dataclass(frozen=True)
class TimeSeriesSet:
    """N homogeneous time series (same delta, K and M)."""

    series: tuple[TimeSeries, ...]

    def __post_init__(self):
        series = tuple(self.series)
        if not series:
            raise ValidationError("a time series set needs at least one series")
        d0, k0, m0 = series[0].delta, series[0].n_samples, series[0].dim
        for i, s in enumerate(series):
            if s.delta != d0:
                raise ValidationError(f"series {i} has delta {s.delta}, expected {d0}")
            if s.n_samples != k0:
                raise ValidationError(f"series {i} has K={s.n_samples}, expected {k0}")
            if s.dim != m0:
                raise ValidationError(f"series {i} has M={s.dim}, expected {m0}")
        if m0 != OBS_DIM:
            raise ValidationError(f"observable dimension must be {OBS_DIM}, got {m0}")
        object.__setattr__(self, "series", series)

    @property
    def delta(self) -> float:
        return self.series[0].delta

    @property
    def n_series(self) -> int:
        return len(self.series)

    @property
    def n_samples(self) -> int:
        return self.series[0].n_samples

    @property
    def dim(self) -> int:
        return self.series[0].dim

    def as_array(self) -> np.ndarray:
        """Data tensor ``X`` with shape ``(K, N, M)``; ``X[k]`` is the N x M slice at step k."""
        return np.stack([s.values for s in self.series], axis=1)

    def subset(self, indices: Sequence[int]) -> "TimeSeriesSet":
        return TimeSeriesSet(tuple(self.series[i] for i in indices))

    def __len__(self) -> int:
        return len(self.series)

    def __iter__(self) -> Iterator[TimeSeries]:
        return iter(self.series)

    def __getitem__(self, i: int) -> TimeSeries:
        return self.series[i]


@dataclass(frozen=True)
class NmzOperator:
    matrix: np.ndarray
    lag_index: int = 0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError(f"operator must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValidationError("operator has non-finite entries")
        if int(self.lag_index) < 0:
            raise ValidationError("lag index must be nonnegative")
        object.__setattr__(self, "matrix", _frozen(m))
        object.__setattr__(self, "lag_index", int(self.lag_index))


@dataclass(frozen=True)
class DiscreteNmzModel:
    """Discretized NMZ model: ``g[k+1] = sum_l Omega[l] @ g[k-l]``.

    The Langevin (orthogonal dynamics) term is taken to be identically zero.
    """

    delta: float
    operators: tuple[NmzOperator, ...]
    langevin_assumed_zero: bool = field(default=True, init=False)

    def __post_init__(self):
        ops = tuple(self.operators)
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ValidationError(f"delta must be positive, got {self.delta}")
        for i, op in enumerate(ops):
            if op.lag_index != i:
                raise ValidationError(
                    f"operators must be sorted and contiguous from lag 0; position {i} has lag {op.lag_index}"
                )
        object.__setattr__(self, "operators", ops)
        object.__setattr__(self, "delta", float(self.delta))

    @classmethod
    def from_matrices(cls, delta: float, matrices: Sequence[np.ndarray]) -> "DiscreteNmzModel":
        return cls(delta, tuple(NmzOperator(m, i) for i, m in enumerate(matrices)))

    @property
    def n_operators(self) -> int:
        return len(self.operators)

    @property
    def kernel_length(self) -> float:
        """Memory kernel length ``h = (count - 1) * delta``."""
        return max(self.n_operators - 1, 0) * self.delta

    @property
    def matrices(self) -> np.ndarray:
        return np.stack([op.matrix for op in self.operators])

    def truncate(self, n_operators: int) -> "DiscreteNmzModel":
        if n_operators < 1:
            raise ValidationError("a model keeps at least the Markov operator")
        return DiscreteNmzModel(self.delta, self.operators[:n_operators])


@dataclass(frozen=True)
class ContinuousModel:
    """Continuous-time NMZ operators: Markov matrix and sampled memory kernel."""

    markov: np.ndarray
    kernel: tuple[tuple[float, np.ndarray], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "markov", _frozen(self.markov))
        kernel = tuple((float(t), _frozen(k)) for t, k in self.kernel)
        times = [t for t, _ in kernel]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("kernel times must be strictly increasing")
        object.__setattr__(self, "kernel", kernel)


@dataclass(frozen=True)
class MasterEquationParams:
    """Rates of the single-qubit Lindblad generator.

    Coherent rates ``omega_*`` multiply the Pauli terms of the Hamiltonian,
    ``gamma_big_*`` are Pauli dephasing rates and ``gamma_plus``/``gamma_minus``
    the incoherent excitation/relaxation rates.
    """

    omega_x: float = 0.0
    omega_y: float = 0.0
    omega_z: float = 0.0
    gamma_big_x: float = 0.0
    gamma_big_y: float = 0.0
    gamma_big_z: float = 0.0
    gamma_plus: float = 0.0
    gamma_minus: float = 0.0

    def validate_for_simulation(self) -> "MasterEquationParams":
        for name in ("gamma_big_x", "gamma_big_y", "gamma_big_z", "gamma_plus", "gamma_minus"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative for simulation")
        return self

    def as_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in self.__dict__.items()}


def l2_norm(op: NmzOperator | np.ndarray, kind: str = "spectral") -> float:
    """Matrix norm of an operator: largest singular value, or Frobenius with ``kind="fro"``."""
    m = op.matrix if isinstance(op, NmzOperator) else np.asarray(op, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValidationError("cannot take the norm of a matrix with non-finite entries")
    if kind == "spectral":
        return float(np.linalg.norm(m, 2))
    if kind == "fro":
        return float(np.linalg.norm(m, "fro"))
    raise ValueError(f"unknown norm kind {kind!r}")
