import numpy as np
import pytest


def central_difference(loss_fn, param, eps=1e-5):
    """Central finite differences of a scalar loss w.r.t. an array edited
    in place. The independent oracle for every backward-pass test."""
    grad = np.zeros_like(param, dtype=np.float64)
    flat = param.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn()
        flat[i] = orig - eps
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def relative_error(a, b):
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max() / denom)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
