"""Pure-numpy implementations of the hot inner-loop kernels.

These are the fallback twins of the numba kernels in ``kernels_numba``;
``backend`` picks one family at import time (env var ``MRNN_BACKEND``).
Both families must agree to floating-point noise, which is pinned by the
parity tests.
"""

import numpy as np


def conv1d_fwd(x, kernels, bias):
    """Same-length 1d convolution, zero padded.

    x: (h, c_in), kernels: (c_out, win, c_in), bias: (c_out,) -> (h, c_out)
    """
    h, _ = x.shape
    _, win, _ = kernels.shape
    r = (win - 1) // 2
    y = np.tile(bias, (h, 1))
    for d in range(win):
        off = d - r
        lo = max(0, -off)
        hi = min(h, h - off)
        if lo < hi:
            y[lo:hi] += x[lo + off : hi + off] @ kernels[:, d, :].T
    return y


def conv1d_bwd(x, kernels, gout):
    """Gradients of conv1d_fwd w.r.t. input, kernels and bias."""
    h, c_in = x.shape
    c_out, win, _ = kernels.shape
    r = (win - 1) // 2
    gx = np.zeros_like(x)
    gk = np.zeros_like(kernels)
    for d in range(win):
        off = d - r
        lo = max(0, -off)
        hi = min(h, h - off)
        if lo < hi:
            gx[lo + off : hi + off] += gout[lo:hi] @ kernels[:, d, :]
            gk[:, d, :] += gout[lo:hi].T @ x[lo + off : hi + off]
    gb = gout.sum(axis=0)
    return gx, gk, gb


def pool_max_fwd(x, width):
    """Centered max pool with window clipped at the sequence edges.

    Returns the pooled matrix and the winning source row per cell
    (first maximum wins on ties, so the backward pass is deterministic).
    """
    h, c = x.shape
    r = (width - 1) // 2
    cols = np.arange(c)
    y = x.copy()
    idx = np.tile(np.arange(h)[:, None], (1, c))
    for i in range(h):
        lo = max(0, i - r)
        hi = min(h, i + r + 1)
        window = x[lo:hi]
        best = window.argmax(axis=0)
        y[i] = window[best, cols]
        idx[i] = best + lo
    return y, idx


def pool_max_bwd(gout, idx, h):
    """Scatter the upstream gradient back to the winning rows."""
    _, c = gout.shape
    gx = np.zeros((h, c))
    np.add.at(gx, (idx, np.tile(np.arange(c), (gout.shape[0], 1))), gout)
    return gx
