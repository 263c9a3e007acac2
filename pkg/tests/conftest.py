"""Shared test fixtures and independent reference implementations.

The reference code here (finite differences, scalar momentum, brute
averages) is deliberately written from scratch so the tests never check
the library against itself.
"""

import numpy as np
import pytest

from parle import Dataset, FlatParams, MlpOracle, Rng


def fd_grad(f, x, eps=1e-6):
    """Independent central-difference gradient used as the test oracle."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += eps
        lo[i] -= eps
        g[i] = (f(hi) - f(lo)) / (2.0 * eps)
    return g


class ZeroOracle:
    """Gradient identically zero; fixed-point probes for every optimizer."""

    def __init__(self, dim):
        self.dim = dim

    def value_grad(self, x, batch=None, rng=None):
        return 0.0, x.with_data(np.zeros(self.dim))


def random_mlp_params(sizes, rng: Rng, scale=1.0) -> FlatParams:
    arrays = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        arrays.append(scale * rng.normal(size=(fan_out, fan_in)))
        arrays.append(scale * rng.normal(size=fan_out))
    return FlatParams.from_arrays(arrays)


def mlp_forward_reference(params: FlatParams, xb: np.ndarray) -> np.ndarray:
    """From-scratch ReLU MLP forward pass (checks permutation symmetry)."""
    views = params.as_arrays()
    h = xb
    for i in range(0, len(views), 2):
        z = h @ views[i].T + views[i + 1]
        h = z if i == len(views) - 2 else np.maximum(z, 0.0)
    return h


@pytest.fixture
def tiny_dataset() -> Dataset:
    rng = Rng(321)
    x = rng.uniform(0.0, 1.0, size=(12, 2))
    y = (x[:, 0] > x[:, 1]).astype(np.int64)
    return Dataset(x, y, name="tiny")


@pytest.fixture
def tiny_mlp(tiny_dataset) -> MlpOracle:
    return MlpOracle((2, 4, 3), tiny_dataset, weight_decay=0.0, batch_size=4)
