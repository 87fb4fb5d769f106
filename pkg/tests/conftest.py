import numpy as np
import pytest

from conngcl.data import Connectome, Dataset, generate_synthetic


@pytest.fixture(scope="session")
def tiny_ds():
    # 12 subjects, 6 nodes: enough for one batch of everything
    return generate_synthetic(12, 6, 0.4, 0.02, 5)


@pytest.fixture(scope="session")
def small_ds():
    # big enough to split 80/10/10 without empty portions
    return generate_synthetic(30, 6, 0.4, 0.02, 7)


def make_flat_dataset(count, n=4):
    # content-free subjects for split arithmetic: zero sc, identity fc
    sc = np.zeros((n, n))
    fc = np.eye(n)
    return Dataset([Connectome(f"d{i:04d}", sc, fc, i % 2) for i in range(count)])
