import numpy as np
import pytest

from nmsse.operators import SIGMA_MINUS, SIGMA_X, SIGMA_Y, SIGMA_Z

KET0 = np.array([1, 0], dtype=complex)
KET1 = np.array([0, 1], dtype=complex)
PLUS = np.array([1, 1], dtype=complex) / np.sqrt(2)


def random_matrix(rng, n):
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


def random_hermitian(rng, n):
    a = random_matrix(rng, n)
    return 0.5 * (a + a.conj().T)


def random_density(rng, n):
    a = random_matrix(rng, n)
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


__all__ = ["KET0", "KET1", "PLUS", "SIGMA_MINUS", "SIGMA_X", "SIGMA_Y", "SIGMA_Z",
           "random_matrix", "random_hermitian", "random_density"]
