import numpy as np
import pytest

from tstiefel.manifold import TensorStiefel


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def rand_tensor(rng, shape):
    return rng.standard_normal(shape)


def fd_directional(f, x, v, h=1e-5):
    """Central-difference directional derivative of a scalar map."""
    return (f(x + h * v) - f(x - h * v)) / (2.0 * h)


def fd_map_directional(g, x, v, h=1e-5):
    """Central-difference directional derivative of a tensor-valued map."""
    return (g(x + h * v) - g(x - h * v)) / (2.0 * h)


def make_point_and_tangents(n, p, l, seed=0, count=1):
    mfd = TensorStiefel(n, p, l)
    x = mfd.random_point(seed=seed)
    vs = [mfd.random_tangent(x, seed=seed + 1 + i, unit=True) for i in range(count)]
    return mfd, x, vs
