"""Compiled inner loops for projected Gauss-Seidel / SOR.

Unknowns are addressed by flat C-order indices into the stored field.  Bit
``k`` of ``zmask`` marks a node on the low face of a symmetric axis ``k``,
where the missing neighbour is the mirror image of the one above.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def psor_sweep(u, idx, zmask, lower, strides, rhs, omega):
    n = strides.shape[0]
    diag = 2.0 * n
    for t in range(idx.shape[0]):
        f = idx[t]
        m = zmask[t]
        s = 0.0
        for k in range(n):
            st = strides[k]
            if m & (1 << k):
                s += 2.0 * u[f + st]
            else:
                s += u[f + st] + u[f - st]
        gs = (s - rhs) / diag
        old = u[f]
        new = old + omega * (gs - old)
        if new < lower[t]:
            new = lower[t]
        u[f] = new


@njit(cache=True)
def minmap_residual(u, idx, zmask, lower, strides, rhs):
    """``max |min(u - lower, u - gs)|`` over the unknowns (``gs`` the Gauss-Seidel value)."""
    n = strides.shape[0]
    diag = 2.0 * n
    worst = 0.0
    for t in range(idx.shape[0]):
        f = idx[t]
        m = zmask[t]
        s = 0.0
        for k in range(n):
            st = strides[k]
            if m & (1 << k):
                s += 2.0 * u[f + st]
            else:
                s += u[f + st] + u[f - st]
        gs = (s - rhs) / diag
        r = u[f] - gs
        c = u[f] - lower[t]
        if c < r:
            r = c
        if r < 0.0:
            r = -r
        if r > worst:
            worst = r
    return worst


def empty_lower(n: int) -> np.ndarray:
    return np.full(n, -np.inf)
