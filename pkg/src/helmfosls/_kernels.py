"""Compiled inner loops."""
import numpy as np
from numba import njit


@njit(cache=True)
def patch_sweep(indptr, indices, data, f, x, pptr, pidx, iptr, inv, reverse):
    """Successive patch corrections x[idx] += A_idx^{-1} (f - M x)[idx].

    Patch ``i`` owns ``pidx[pptr[i]:pptr[i+1]]`` and the row-major inverse
    ``inv[iptr[i]:iptr[i+1]]``.  Updates ``x`` in place.
    """
    npatch = len(pptr) - 1
    maxn = 0
    for i in range(npatch):
        maxn = max(maxn, pptr[i + 1] - pptr[i])
    r = np.empty(maxn, dtype=np.complex128)
    for ii in range(npatch):
        i = npatch - 1 - ii if reverse else ii
        s, e = pptr[i], pptr[i + 1]
        n = e - s
        for a in range(n):
            row = pidx[s + a]
            acc = f[row]
            for k in range(indptr[row], indptr[row + 1]):
                acc -= data[k] * x[indices[k]]
            r[a] = acc
        base = iptr[i]
        for a in range(n):
            acc = 0j
            off = base + a * n
            for b in range(n):
                acc += inv[off + b] * r[b]
            x[pidx[s + a]] += acc
    return x
