"""Leaf-enumeration oracle, independent of the atom dynamic program.

Every assignment of spins to the d**n leaves is visited. Its likelihood under
each root spin comes from upward message passing with the transition matrix,
and the conditioned posterior moments are accumulated directly.
"""
import itertools

import numpy as np


def _transition(q, lam):
    M = np.full((q, q), (1 - lam) / q)
    np.fill_diagonal(M, (1 + (q - 1) * lam) / q)
    return M


def leaf_likelihoods(q, d, lam, n):
    """Array L[config, r] = P(leaves = config | root = r), configs in product order."""
    M = _transition(q, lam)
    n_leaves = d**n
    configs = np.array(list(itertools.product(range(q), repeat=n_leaves)), dtype=np.int64)
    # messages at the leaves: indicator of the observed spin
    msg = np.eye(q)[configs]                      # (C, n_leaves, q)
    for _ in range(n):
        up = msg @ M.T                            # P(subtree | parent = r)
        C, m, _q = up.shape
        msg = up.reshape(C, m // d, d, q).prod(axis=2)
    return msg[:, 0, :]


def brute_moments(q, d, lam, n):
    """(x_n, z_n, p_n, mean vector, second-moment matrix) under root spin 1."""
    if n == 0:
        v = np.eye(q)[0]
        return 1 - 1 / q, (1 - 1 / q) ** 2, 1.0, v, np.outer(v, v)
    L = leaf_likelihoods(q, d, lam, n)
    tot = L.sum(axis=1)
    live = tot > 0
    L, tot = L[live], tot[live]
    post = L / tot[:, None]                       # uniform prior on the root
    w = L[:, 0]                                   # P(config | root = 1)
    mean = w @ post
    second = (post * w[:, None]).T @ post
    x = mean[0] - 1 / q
    z = w @ (post[:, 0] - 1 / q) ** 2
    # argmax estimator with uniform tie splitting
    top = post.max(axis=1, keepdims=True)
    ties = np.isclose(post, top, rtol=0, atol=1e-13)
    p = w @ (ties[:, 0] / ties.sum(axis=1))
    return x, z, p, mean, second
