"""Numba-jitted twins of the kernels in ``kernels_numpy``.

Compiled lazily with ``cache=True`` so repeat runs skip compilation.
Signatures and semantics match the numpy family exactly; see
``backend`` for how one family is selected.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv1d_fwd(x, kernels, bias):
    h, c_in = x.shape
    c_out, win, _ = kernels.shape
    r = (win - 1) // 2
    y = np.empty((h, c_out))
    for i in range(h):
        y[i, :] = bias
    for d in range(win):
        off = d - r
        lo = max(0, -off)
        hi = min(h, h - off)
        if lo < hi:
            # contiguous (c_in, c_out) slice so the matmul hits BLAS
            kdt = kernels[:, d, :].T.copy()
            y[lo:hi] += np.dot(x[lo + off : hi + off], kdt)
    return y


@njit(cache=True)
def conv1d_bwd(x, kernels, gout):
    h, c_in = x.shape
    c_out, win, _ = kernels.shape
    r = (win - 1) // 2
    gx = np.zeros((h, c_in))
    gk = np.zeros((c_out, win, c_in))
    gb = np.zeros(c_out)
    for i in range(h):
        gb += gout[i]
    for d in range(win):
        off = d - r
        lo = max(0, -off)
        hi = min(h, h - off)
        if lo < hi:
            kd = kernels[:, d, :].copy()
            gslice = gout[lo:hi]
            xslice = x[lo + off : hi + off]
            gx[lo + off : hi + off] += np.dot(gslice, kd)
            gk[:, d, :] += np.dot(gslice.T.copy(), xslice)
    return gx, gk, gb


@njit(cache=True)
def pool_max_fwd(x, width):
    h, c = x.shape
    r = (width - 1) // 2
    y = np.empty((h, c))
    idx = np.empty((h, c), dtype=np.int64)
    for i in range(h):
        lo = max(0, i - r)
        hi = min(h, i + r + 1)
        for j in range(c):
            best = x[lo, j]
            bi = lo
            for p in range(lo + 1, hi):
                if x[p, j] > best:
                    best = x[p, j]
                    bi = p
            y[i, j] = best
            idx[i, j] = bi
    return y, idx


@njit(cache=True)
def pool_max_bwd(gout, idx, h):
    hq, c = gout.shape
    gx = np.zeros((h, c))
    for i in range(hq):
        for j in range(c):
            gx[idx[i, j], j] += gout[i, j]
    return gx
