"""Sanity checks of the oracles themselves against closed forms."""
import math

import numpy as np

from oracles import bloch_after_unitary, expm_taylor, jacobi_singular_values


def test_jacobi_matches_diagonal_and_rotation():
    assert jacobi_singular_values(np.diag([3.0, -2.0, 1.0])) == [3.0, 2.0, 1.0]
    c, s = math.cos(0.3), math.sin(0.3)
    rot = np.array([[c, -s], [s, c]])
    sv = jacobi_singular_values(rot @ np.diag([5.0, 0.5]))
    np.testing.assert_allclose(sv, [5.0, 0.5], rtol=1e-14)


def test_expm_taylor_on_rotation_generator():
    a = np.array([[0.0, -2.0], [2.0, 0.0]])
    np.testing.assert_allclose(expm_taylor(a), [[math.cos(2), -math.sin(2)],
                                                [math.sin(2), math.cos(2)]], atol=1e-13)


def test_unitary_oracle_precesses_about_z():
    # H = sigma_z precesses the Bloch vector at angular frequency 2
    out = bloch_after_unitary([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], 0.25)
    np.testing.assert_allclose(out, [math.cos(0.5), math.sin(0.5), 0.0], atol=1e-14)
