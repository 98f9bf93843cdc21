import numpy as np
import pytest

from curvflow.sphere_core import SpectralField, make_grid, n_coeffs


@pytest.fixture(scope="session")
def grid32():
    return make_grid(32, 2)


@pytest.fixture(scope="session")
def grid16():
    return make_grid(16, 2)


def random_coeffs(lmax, seed, scale=1.0, lmin=0):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(n_coeffs(lmax)) * scale
    c[: n_coeffs(lmin - 1) if lmin > 0 else 0] = 0.0
    return SpectralField(lmax, c)
