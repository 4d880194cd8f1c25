"""Shared oracles for the test suite: finite differences and error norms."""

import numpy as np


def central_difference(f, x, h=1e-5):
    """Dense central-difference gradient of a scalar function of an array."""
    base = np.array(x, dtype=np.float64)
    grad = np.empty_like(base)
    flat_base = base.reshape(-1)
    flat_grad = grad.reshape(-1)
    for i in range(flat_base.size):
        orig = flat_base[i]
        flat_base[i] = orig + h
        fp = float(f(base))
        flat_base[i] = orig - h
        fm = float(f(base))
        flat_base[i] = orig
        flat_grad[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(a, b):
    """Relative error between two arrays in the Euclidean norm."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def random_image(rng, height, width):
    return rng.uniform(0.0, 1.0, size=(height, width, 3))
