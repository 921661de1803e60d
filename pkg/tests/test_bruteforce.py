"""Sanity checks on the leaf-enumeration oracle itself."""
import numpy as np
import pytest

from bruteforce import brute_moments, leaf_likelihoods


@pytest.mark.parametrize("q,d,lam,n", [(3, 2, 0.5, 1), (3, 2, -0.4, 2), (2, 3, 0.3, 2)])
def test_likelihoods_are_distributions(q, d, lam, n):
    L = leaf_likelihoods(q, d, lam, n)
    assert np.allclose(L.sum(axis=0), 1.0)


def test_single_edge_by_hand():
    # one child, q=3, lam=1/2: M = [[2/3,1/6,1/6],...]; seeing spin 1 gives posterior (2/3,1/6,1/6)
    x, z, p, mean, _ = brute_moments(3, 1, 0.5, 1)
    # E v1 = 2/3 * 2/3 + 2 * 1/6 * 1/6
    assert mean[0] == pytest.approx(4 / 9 + 1 / 18)
    assert x == pytest.approx(4 / 9 + 1 / 18 - 1 / 3)
    assert p == pytest.approx(2 / 3)


def test_independent_leaves():
    x, z, p, _, _ = brute_moments(3, 2, 0.0, 2)
    assert x == pytest.approx(0.0, abs=1e-15)
    assert z == pytest.approx(0.0, abs=1e-15)
    assert p == pytest.approx(1 / 3)
