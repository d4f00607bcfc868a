import numpy as np
import pytest

from nmzlearn.core import MasterEquationParams, TimeSeries, TimeSeriesSet
from nmzlearn.simulator import build_markov_transition, random_initial_states, simulate_markov_set

from oracles import linear_recursion

# Markovian benchmark: omega_z = 1, Gamma_x = 0.1, gamma_minus = 0.4
BENCH_PARAMS = MasterEquationParams(omega_z=1.0, gamma_big_x=0.1, gamma_minus=0.4)
BENCH_DELTA_FINE = 1e-3
BENCH_FACTOR = 100

# learned Markov matrix printed for the benchmark at Delta = 0.1
PRINTED_BENCH_OMEGA = np.array([
    [1.01, -5.0e-4, 2.4e-4, 9.4e-3],
    [6.44e-6, 0.966, -0.194, 6.03e-6],
    [1.70e-6, 0.194, 0.946, 7.97e-6],
    [-0.04, 3.3e-4, -1.6e-4, 0.940],
])

# learned Pauli-X gate Markov matrix printed at Delta = 1 us
PRINTED_PAULI_X_OMEGA = np.array([
    [0.9957, -0.0027, 0.032, -0.021],
    [9.0e-4, 0.9936, -8.3e-3, -1.7e-3],
    [9.6e-3, -1.0e-3, 0.9911, -0.124],
    [-7.4e-3, -7.1e-3, 0.135, 0.9810],
])


def bench_data(n_series=10, total_time=20.0, seed=0):
    states = random_initial_states(n_series, seed)
    return simulate_markov_set(BENCH_PARAMS, states, BENCH_DELTA_FINE, total_time, BENCH_FACTOR)


def bench_true_omega():
    """Coarse-step truth: the fine-step matrix multiplied 100 times."""
    fine = build_markov_transition(BENCH_PARAMS, BENCH_DELTA_FINE).matrix
    out = np.eye(4)
    for _ in range(BENCH_FACTOR):
        out = fine @ out
    return out


@pytest.fixture(scope="session")
def markov_bench():
    return bench_data()


def random_params(rng, gamma_plus=False):
    vals = dict(
        omega_x=rng.normal(), omega_y=rng.normal(), omega_z=rng.normal(),
        gamma_big_x=rng.uniform(0, 1), gamma_big_y=rng.uniform(0, 1), gamma_big_z=rng.uniform(0, 1),
        gamma_minus=rng.uniform(0, 1),
    )
    if gamma_plus:
        vals["gamma_plus"] = rng.uniform(0, 1)
    return MasterEquationParams(**vals)


# Non-Markovian benchmark: H = omega_z sigma_z + eta(t) sigma_x with OU noise eta
OU_SLOW = dict(gamma=0.5, mu=0.5, sigma=0.1, delta_fine=1e-3, factor=100)
OU_FAST = dict(gamma=10.0, mu=0.5, sigma=1.0, delta_fine=1e-2, factor=10)
OU_TOTAL_TIME = 200.0
OU_TRAJECTORIES = 2000

_ENSEMBLES = {}


def ou_ensemble(regime, seed=11, n_trajectories=OU_TRAJECTORIES):
    """Noise-averaged Bloch propagator (K, 3, 3) for a benchmark regime, cached per session."""
    from nmzlearn.simulator import OuParams, SimConfig, ensemble_propagator

    key = (regime["gamma"], seed, n_trajectories)
    if key not in _ENSEMBLES:
        ou = OuParams(regime["gamma"], regime["mu"], regime["sigma"])
        cfg = SimConfig(regime["delta_fine"], OU_TOTAL_TIME, regime["factor"], n_trajectories, seed)
        _ENSEMBLES[key] = (ensemble_propagator(1.0, ou, cfg), cfg.delta)
    return _ENSEMBLES[key]


def ou_dataset(regime, n_series=10, seed=11):
    from nmzlearn.simulator import apply_bloch_propagator

    prop, delta = ou_ensemble(regime, seed)
    states = random_initial_states(n_series, seed)
    return TimeSeriesSet(tuple(apply_bloch_propagator(prop, g, delta) for g in states))


def recursion_set(operators, n_states, steps, seed=0):
    """Series from rest: g[1] = A0 g[0], g[2] = A0 g[1] + A1 g[0], ..."""
    series = []
    for g in random_initial_states(n_states, seed):
        history = [np.zeros(4)] * (len(operators) - 1) + [g.entries]
        out = linear_recursion(operators, history, steps)[len(operators) - 1:]
        series.append(out)
    return TimeSeriesSet(tuple(TimeSeries(0.1, a) for a in series))


def stable_pair(seed):
    """A 2-term recursion that keeps the bias row (1, 0, 0, 0) and stays bounded."""
    rng = np.random.default_rng(seed)
    A = build_markov_transition(random_params(rng), 0.05).matrix
    Bm = np.zeros((4, 4))
    Bm[1:, 1:] = 0.02 * rng.normal(size=(3, 3))
    return A, Bm


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
