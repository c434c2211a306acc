import numpy as np
import pytest

from apps.experiments.services.coords import JointTable
from apps.experiments.services.storage import write_binary_csv


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def skewed_pair():
    """(p00, p01, p10, p11) = (0.4, 0.3, 0.2, 0.1) written as x1 x2, stored in bitmask order."""
    return JointTable(2, np.array([0.4, 0.2, 0.3, 0.1]))


@pytest.fixture
def make_table():
    """Random positive table; ``floor`` mixes in the uniform table to keep every cell away from zero."""

    def build(n, rng, floor=0.0):
        probs = rng.dirichlet(np.ones(1 << n))
        probs = (1.0 - floor) * probs + floor / (1 << n)
        return JointTable.from_weights(np.maximum(probs, 1e-12), n)

    return build


@pytest.fixture
def binary_csv(tmp_path, rng):
    """Four-column sample file with a strong dependence between the first two columns."""
    first = rng.random(200) < 0.5
    second = np.where(rng.random(200) < 0.9, first, ~first)
    rest = rng.random((200, 2)) < 0.5
    samples = np.column_stack((first, second, rest)).astype(np.uint8)
    return write_binary_csv(samples, tmp_path / "samples.csv")
