import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("suite", deadline=None, max_examples=25)
settings.load_profile("suite")


def rel_error(got: np.ndarray, want: np.ndarray) -> float:
    """Norm-based relative error, robust to near-zero entries."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = max(np.linalg.norm(want.ravel()), np.linalg.norm(got.ravel()), 1e-300)
    return float(np.linalg.norm((got - want).ravel()) / denom)


def central_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of scalar-valued f at x by central differences, one entry at a time."""
    shape = np.shape(x)
    base = np.array(x, dtype=np.float64).ravel()
    g = np.zeros_like(base)
    for i in range(base.size):
        pert = base.copy()
        pert[i] = base[i] + h
        fp = f(pert.reshape(shape))
        pert[i] = base[i] - h
        fm = f(pert.reshape(shape))
        g[i] = (fp - fm) / (2.0 * h)
    return g.reshape(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
