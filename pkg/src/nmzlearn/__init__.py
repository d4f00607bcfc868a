"""Data-driven learning of Nakajima-Mori-Zwanzig memory kernels for single-qubit dynamics."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    DiscreteNmzModel,
    MasterEquationParams,
    NmzError,
    NmzOperator,
    NumericalError,
    ObservableVector,
    TimeSeries,
    TimeSeriesSet,
    ValidationError,
    from_bloch,
    l2_norm,
)
from .learner import correlation_matrices, learn_markov, learn_memory_kernel, learn_model  # noqa: E402
from .predictor import loocv_sweep, predict, rmse  # noqa: E402
from .simulator import build_markov_transition, OuParams, SimConfig  # noqa: E402
from .analysis import extract_physical_rates, fit_exponential_decay, select_truncation  # noqa: E402

__all__ = [
    "DiscreteNmzModel", "MasterEquationParams", "NmzError", "NmzOperator", "NumericalError",
    "ObservableVector", "TimeSeries", "TimeSeriesSet", "ValidationError", "from_bloch", "l2_norm",
    "correlation_matrices", "learn_markov", "learn_memory_kernel", "learn_model",
    "loocv_sweep", "predict", "rmse", "build_markov_transition", "OuParams", "SimConfig",
    "extract_physical_rates", "fit_exponential_decay", "select_truncation",
]
