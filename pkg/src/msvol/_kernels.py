"""numba kernels for the cost-volume hot loops.

Every kernel takes edge-padded planes (pad = window radius) so that window
reads never need bounds checks.  Outputs are (D, H, W) float64 with entries
x < d left at zero; the caller owns the validity mask.
"""
import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _pair(a, b, mode):
    if mode == 0:
        return a * b
    return abs(a - b)


@njit(parallel=True, cache=True)
def shifted_window_sum(A, B, d_max, r, mode):
    """sum over the window of f(A[q], B[q - d]); mode 0 = product, 1 = |diff|.

    Separable running sums: O(1) per output entry independent of r.
    """
    Hp, Wp = A.shape
    H = Hp - 2 * r
    W = Wp - 2 * r
    k = 2 * r + 1
    out = np.zeros((d_max, H, W))
    for d in prange(d_max):
        if d >= W:
            continue
        hs = np.zeros((Hp, W))
        for Y in range(Hp):
            s = 0.0
            for X in range(d, d + k - 1):
                s += _pair(A[Y, X], B[Y, X - d], mode)
            for x in range(d, W):
                X = x + k - 1
                s += _pair(A[Y, X], B[Y, X - d], mode)
                hs[Y, x] = s
                s -= _pair(A[Y, x], B[Y, x - d], mode)
        col = np.zeros(W)
        for Y in range(k - 1):
            for x in range(d, W):
                col[x] += hs[Y, x]
        for y in range(H):
            for x in range(d, W):
                col[x] += hs[y + k - 1, x]
                out[d, y, x] = col[x]
                col[x] -= hs[y, x]
    return out


@njit(parallel=True, cache=True)
def zsad(Lp, Rp, muL, muR, d_max, r):
    H, W = muL.shape
    k = 2 * r + 1
    out = np.zeros((d_max, H, W))
    for d in prange(d_max):
        for y in range(H):
            for x in range(d, W):
                off = muL[y, x] - muR[y, x - d]
                s = 0.0
                for j in range(k):
                    for i in range(k):
                        s += abs(Lp[y + j, x + i] - Rp[y + j, x - d + i] - off)
                out[d, y, x] = s
    return out


@njit(cache=True)
def _popcount64(v):
    v = v - ((v >> np.uint64(1)) & np.uint64(0x5555555555555555))
    v = (v & np.uint64(0x3333333333333333)) + ((v >> np.uint64(2)) & np.uint64(0x3333333333333333))
    v = (v + (v >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (v * np.uint64(0x0101010101010101)) >> np.uint64(56)


@njit(parallel=True, cache=True)
def census_codes(P, r, n_words):
    """Bit b (row-major neighbour order, centre skipped) = neighbour < centre."""
    Hp, Wp = P.shape
    H = Hp - 2 * r
    W = Wp - 2 * r
    k = 2 * r + 1
    codes = np.zeros((H, W, n_words), dtype=np.uint64)
    for y in prange(H):
        for x in range(W):
            c = P[y + r, x + r]
            b = 0
            for j in range(k):
                for i in range(k):
                    if j == r and i == r:
                        continue
                    if P[y + j, x + i] < c:
                        codes[y, x, b >> 6] |= np.uint64(1) << np.uint64(b & 63)
                    b += 1
    return codes


@njit(parallel=True, cache=True)
def hamming(cL, cR, d_max):
    H, W, n_words = cL.shape
    out = np.zeros((d_max, H, W))
    for d in prange(d_max):
        for y in range(H):
            for x in range(d, W):
                s = 0
                for w in range(n_words):
                    s += _popcount64(cL[y, x, w] ^ cR[y, x - d, w])
                out[d, y, x] = s
    return out


@njit(parallel=True, cache=True)
def likelihood(cost, valid, sigma):
    D, H, W = cost.shape
    out = np.zeros((D, H, W))
    inv = 1.0 / (2.0 * sigma * sigma)
    for y in prange(H):
        cmin = np.full(W, np.inf)
        for d in range(D):
            for x in range(W):
                if valid[d, y, x] and cost[d, y, x] < cmin[x]:
                    cmin[x] = cost[d, y, x]
        total = np.zeros(W)
        for d in range(D):
            for x in range(W):
                if valid[d, y, x]:
                    g = cost[d, y, x] - cmin[x]
                    e = np.exp(-g * g * inv)
                    out[d, y, x] = e
                    total[x] += e
        for d in range(D):
            for x in range(W):
                if total[x] > 0:
                    out[d, y, x] /= total[x]
    return out
