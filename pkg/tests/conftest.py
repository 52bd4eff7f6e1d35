"""Shared independent oracles and fixtures for the test suite."""

import numpy as np
import pytest

from gaze_forge.fixtures import make_fixture_sequence


def fd_gradient(f, x, h):
    """Central finite differences of a scalar function of a flat array."""
    x = np.array(x, dtype=np.float64)
    flat = x.ravel()
    grad = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * h)
    return grad.reshape(x.shape)


def max_rel_error(analytic, numeric, floor=1e-8):
    a = np.asarray(analytic).ravel()
    n = np.asarray(numeric).ravel()
    return float((np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)).max())


def hausdorff_bruteforce(points_a, points_b):
    """O(n*m) double-loop symmetric Hausdorff between two (k, 2) point sets."""
    a = np.asarray(points_a, dtype=np.float64)
    b = np.asarray(points_b, dtype=np.float64)
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    forward = np.sqrt(d2.min(axis=1)).max()
    backward = np.sqrt(d2.min(axis=0)).max()
    return float(max(forward, backward))


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    """A synthetic dataset with one sequence of eight 96x96 frames."""
    root = tmp_path_factory.mktemp("dataset")
    make_fixture_sequence(root, seq=1, frames=8, height=96, width=96, instruments=2, seed=0)
    return root
