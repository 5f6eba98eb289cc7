import numpy as np
import pytest

from embstab import EmbeddingMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_pair(n, m, dim, seed=0, dtype=np.float64):
    """Random full-rank embedding pair with unit expected row norm."""
    gen = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(dim)
    items = EmbeddingMatrix.of_items((gen.standard_normal((n, dim)) * scale).astype(dtype))
    users = EmbeddingMatrix.of_users((gen.standard_normal((m, dim)) * scale).astype(dtype))
    return items, users


def random_orthogonal(dim, seed=0):
    """Haar-distributed orthogonal matrix (QR with the sign correction)."""
    gen = np.random.default_rng(seed)
    q, r = np.linalg.qr(gen.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def rel_fro(a, b):
    """Relative Frobenius distance ||a - b|| / ||b||."""
    return np.linalg.norm(a - b) / np.linalg.norm(b)
