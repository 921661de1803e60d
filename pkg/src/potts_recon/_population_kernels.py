"""Compiled inner loop of one population-dynamics level."""
import numpy as np
from numba import njit

_RESCALE_EVERY = 16


@njit(cache=True, nogil=True)
def evolve_block(prev, raw, start, count, d, batch_size, thr, a, lq, out):
    """Build samples ``start .. start+count`` of the next pool.

    raw holds ``count * stride`` uint64 draws with ``stride = d + q - 2``.
    Per sample, the first d serve the children: the upper 32 bits select the
    child's spin through the integer thresholds ``thr``, the lower 32 bits
    pick the child's posterior inside the sample's batch. The remaining q - 2
    shuffle spins 2..q of the finished sample. The shuffle leaves the target
    law unchanged (it is exchangeable in those spins) but stops sampling
    asymmetries from feeding back, which is unstable once d*lambda is large.
    Returns the number of samples whose product vanished identically.
    """
    q = prev.shape[1]
    stride = d + q - 2
    prod = np.empty(q)
    bad = 0
    for t in range(count):
        i = start + t
        base = (i // batch_size) * batch_size
        for k in range(q):
            prod[k] = 1.0
        for j in range(d):
            r = raw[t * stride + j]
            hi = r >> np.uint64(32)
            lo = r & np.uint64(0xFFFFFFFF)
            c = 0
            while c < q - 1 and hi >= thr[c]:
                c += 1
            src = base + np.int64((lo * np.uint64(batch_size)) >> np.uint64(32))
            y = prev[src]
            # the child's conditioned spin c plays the role of spin 1
            for k in range(q):
                kk = k
                if k == 0:
                    kk = c
                elif k == c:
                    kk = 0
                prod[k] *= a + lq * y[kk]
            if (j + 1) % _RESCALE_EVERY == 0:
                m = 0.0
                for k in range(q):
                    if prod[k] > m:
                        m = prod[k]
                if m > 0.0:
                    for k in range(q):
                        prod[k] /= m
        s = 0.0
        for k in range(q):
            s += prod[k]
        if s > 0.0:
            for k in range(q):
                prod[k] /= s
        else:
            bad += 1
            for k in range(q):
                prod[k] = 1.0 / q
        # Fisher-Yates over coordinates 1..q-1
        for k in range(q - 1, 1, -1):
            r = raw[t * stride + d + (q - 1 - k)] >> np.uint64(32)
            m = 1 + np.int64((r * np.uint64(k)) >> np.uint64(32))
            tmp = prod[k]
            prod[k] = prod[m]
            prod[m] = tmp
        for k in range(q):
            out[i, k] = prod[k]
    return bad


@njit(cache=True, nogil=True)
def batch_moments(pool, n_batches):
    """Per-batch sums of (v1 - 1/q), (v1 - 1/q)^2 and max v."""
    n, q = pool.shape
    bs = n // n_batches
    out = np.zeros((n_batches, 3))
    for b in range(n_batches):
        s1 = 0.0
        s2 = 0.0
        sm = 0.0
        for i in range(b * bs, (b + 1) * bs):
            dev = pool[i, 0] - 1.0 / q
            s1 += dev
            s2 += dev * dev
            m = pool[i, 0]
            for k in range(1, q):
                if pool[i, k] > m:
                    m = pool[i, k]
            sm += m
        out[b, 0] = s1
        out[b, 1] = s2
        out[b, 2] = sm
    return out
