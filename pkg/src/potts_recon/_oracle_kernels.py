"""numba kernels for the final-level sweep of the exact oracle.

The sweep visits every (partial product, last child) pair, so its inner loop
is generated per q with the spin coordinates unrolled. That keeps the loop
over last-child atoms a single vectorisable pass over contiguous rows.
"""
import functools
import math

import numpy as np
from numba import njit

_FAST = {"reassoc", "contract", "arcp", "nsz"}


def _kernel_source(q):
    us = [f"u{i}" for i in range(q)]
    lines = [
        "def sweep(P, FT, wy, out):",
        "    m = P.shape[0]",
        "    K = FT.shape[1]",
        *[f"    F{i} = FT[{i}]" for i in range(q)],
        "    for a in range(m):",
        *[f"        p{i} = P[a, {i}]" for i in range(q)],
        "        a0 = 0.0",
        "        a1 = 0.0",
        "        a2 = 0.0",
        "        aq = 0.0",
        "        am = 0.0",
        "        for k in range(K):",
        *[f"            u{i} = p{i} * F{i}[k]" for i in range(q)],
        "            s = " + " + ".join(us),
        "            ss = " + " + ".join(f"{u} * {u}" for u in us),
        "            mx = u0",
        *[f"            mx = {u} if {u} > mx else mx" for u in us[1:]],
        "            inv = 1.0 / s",
        "            w = wy[k]",
        "            wv = w * u0 * inv",
        "            a0 += w",
        "            a1 += wv",
        "            a2 += wv * u0 * inv",
        "            aq += w * ss * inv * inv",
        "            am += w * mx * inv",
        "        out[a, 0] = a0",
        "        out[a, 1] = a1",
        "        out[a, 2] = a2",
        "        out[a, 3] = aq",
        "        out[a, 4] = am",
    ]
    return "\n".join(lines)


@functools.lru_cache(maxsize=None)
def sweep_kernel(q):
    """Per-state sums [sum w, sum w v1, sum w v1^2, sum w |v|^2, sum w max v]."""
    ns = {}
    exec(compile(_kernel_source(q), f"<sweep_q{q}>", "exec"), ns)
    return njit(fastmath=_FAST, error_model="numpy", nogil=True)(ns["sweep"])


def final_level_sums(P, pw, FT, wy, chunk=200_000):
    """Weighted sums over every (state, last child) pair.

    P: (m, q) normalised partial products over the first d-1 children.
    FT: (q, K) transposed factor vectors of the last child.
    Per-state sums are combined with exact-rounding summation, so the result
    does not depend on how states are chunked.
    """
    P = np.ascontiguousarray(P, dtype=float)
    FT = np.ascontiguousarray(FT, dtype=float)
    wy = np.ascontiguousarray(wy, dtype=float)
    kern = sweep_kernel(P.shape[1])
    parts = [[] for _ in range(5)]
    for a in range(0, P.shape[0], chunk):
        blk = P[a:a + chunk]
        out = np.empty((blk.shape[0], 5))
        kern(blk, FT, wy, out)
        out *= pw[a:a + chunk, None]
        for t in range(5):
            parts[t].append(math.fsum(out[:, t]))
    return np.array([math.fsum(p) for p in parts])
