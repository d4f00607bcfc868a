import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nmzlearn.core import (
    BLOCH_EPS,
    ContinuousModel,
    DiscreteNmzModel,
    MasterEquationParams,
    NmzOperator,
    ObservableVector,
    TimeSeries,
    TimeSeriesSet,
    ValidationError,
    from_bloch,
    from_density_matrix,
    l2_norm,
)

from conftest import PRINTED_BENCH_OMEGA
from oracles import PAULI, jacobi_singular_values

finite = st.floats(-10, 10, allow_nan=False)
mat4 = arrays(np.float64, (4, 4), elements=finite)


def test_l2_norm_identity_and_zero():
    assert l2_norm(NmzOperator(np.eye(4))) == pytest.approx(1.0, abs=1e-15)
    assert l2_norm(NmzOperator(np.zeros((4, 4)))) == 0.0


def test_l2_norm_printed_matrix_matches_jacobi_svd():
    expected = jacobi_singular_values(PRINTED_BENCH_OMEGA)[0]
    assert l2_norm(NmzOperator(PRINTED_BENCH_OMEGA)) == pytest.approx(expected, rel=1e-13)


def test_l2_norm_frobenius_option():
    m = np.arange(16.0).reshape(4, 4)
    assert l2_norm(m, "fro") == pytest.approx(math.sqrt(float(np.sum(m * m))))
    with pytest.raises(ValueError):
        l2_norm(m, "nuclear")


def test_l2_norm_rejects_non_finite():
    m = np.eye(4)
    m[1, 2] = np.nan
    with pytest.raises(ValidationError):
        l2_norm(m)
    with pytest.raises(ValidationError):
        NmzOperator(m)


@settings(max_examples=100, deadline=None)
@given(mat4, mat4)
def test_l2_norm_sub_multiplicative(a, b):
    assert l2_norm(a @ b) <= l2_norm(a) * l2_norm(b) * (1 + 1e-12) + 1e-300


@pytest.mark.parametrize("xyz, expected, warned", [
    ((0, 0, 1), (1, 0, 0, 1), False),
    ((0, 0, 0), (1, 0, 0, 0), False),
    ((1, 1, 1), (1, 1, 1, 1), True),
])
def test_from_bloch_examples(xyz, expected, warned):
    g = from_bloch(*xyz)
    np.testing.assert_array_equal(g.entries, expected)
    assert g.bloch_warning is warned


def test_from_bloch_warning_threshold():
    assert not from_bloch(0, 0, 1 + 0.5 * BLOCH_EPS).bloch_warning
    assert from_bloch(0, 0, 1 + 2 * BLOCH_EPS).bloch_warning


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_from_bloch_rejects_non_finite(bad):
    with pytest.raises(ValidationError):
        from_bloch(0.0, bad, 0.0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (2, 2), elements=finite), arrays(np.float64, (2, 2), elements=finite))
def test_density_matrix_bias_is_one(re, im):
    a = re + 1j * im
    rho = a @ a.conj().T
    tr = np.trace(rho).real
    if tr < 1e-6:
        rho, tr = np.eye(2) / 2, 1.0
    rho = rho / tr
    g = from_density_matrix(rho)
    assert g.entries[0] == 1.0
    expected = [np.trace(rho @ s).real for s in PAULI]
    np.testing.assert_allclose(g.bloch, expected, atol=1e-12)
    assert g.bloch_norm <= 1 + 1e-9


def test_observable_vector_is_immutable():
    g = from_bloch(0.1, 0.2, 0.3)
    with pytest.raises(ValueError):
        g.entries[1] = 5.0


def _series(K=5, delta=0.1, M=4):
    return TimeSeries(delta, np.ones((K, M)))


def test_time_series_validation():
    with pytest.raises(ValidationError):
        TimeSeries(0.1, np.ones((1, 4)))
    with pytest.raises(ValidationError):
        TimeSeries(0.0, np.ones((3, 4)))
    with pytest.raises(ValidationError):
        TimeSeries(0.1, np.full((3, 4), np.nan))
    s = _series(K=4, delta=0.5)
    np.testing.assert_allclose(s.times, [0, 0.5, 1.0, 1.5])
    assert len(s.samples) == 4 and s[2].entries[0] == 1.0


@pytest.mark.parametrize("other", [
    _series(delta=0.2),
    _series(K=6),
])
def test_time_series_set_rejects_ragged(other):
    with pytest.raises(ValidationError):
        TimeSeriesSet((_series(), other))


def test_time_series_set_pins_dimension():
    with pytest.raises(ValidationError):
        TimeSeriesSet((_series(M=3), _series(M=3)))
    with pytest.raises(ValidationError):
        TimeSeriesSet((_series(), _series(M=3)))
    with pytest.raises(ValidationError):
        TimeSeriesSet(())


def test_time_series_set_array_layout():
    a = TimeSeries(0.1, np.arange(12.0).reshape(3, 4))
    b = TimeSeries(0.1, -np.arange(12.0).reshape(3, 4))
    X = TimeSeriesSet((a, b)).as_array()
    assert X.shape == (3, 2, 4)
    np.testing.assert_array_equal(X[1, 1], b.values[1])


def test_discrete_model_structure():
    m = DiscreteNmzModel.from_matrices(0.1, [np.eye(4), 0.5 * np.eye(4), 0.25 * np.eye(4)])
    assert m.n_operators == 3
    assert m.kernel_length == pytest.approx(0.2)
    assert m.langevin_assumed_zero is True
    assert m.truncate(1).kernel_length == 0.0
    with pytest.raises(ValidationError):
        DiscreteNmzModel(0.1, (NmzOperator(np.eye(4), 0), NmzOperator(np.eye(4), 2)))
    with pytest.raises(ValidationError):
        m.truncate(0)


def test_continuous_model_times_increase():
    ContinuousModel(np.zeros((4, 4)), ((0.1, np.eye(4)), (0.2, np.eye(4))))
    with pytest.raises(ValidationError):
        ContinuousModel(np.zeros((4, 4)), ((0.2, np.eye(4)), (0.1, np.eye(4))))


def test_master_equation_params_simulation_check():
    MasterEquationParams(omega_x=-1.0).validate_for_simulation()
    with pytest.raises(ValidationError):
        MasterEquationParams(gamma_big_z=-1e-3).validate_for_simulation()
    assert MasterEquationParams(gamma_minus=0.4).as_dict()["gamma_minus"] == 0.4


def test_operator_frozen():
    op = NmzOperator(np.eye(4), 0)
    with pytest.raises(ValueError):
        op.matrix[0, 0] = 2.0
    with pytest.raises(ValidationError):
        NmzOperator(np.eye(4), -1)
    assert isinstance(ObservableVector(np.zeros(4)), ObservableVector)
