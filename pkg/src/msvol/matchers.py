"""Window matchers: NCC, ZSAD, CENSUS and horizontal-Sobel SAD cost volumes.

All costs follow the "lower is better" convention and are indexed
``cost[d, y, x]`` with the right-image pixel at ``x - d``.  Windows use
replicate (clamp) padding; hypotheses with ``x - d < 0`` are invalid and hold
cost 0.
"""
from dataclasses import dataclass

import numpy as np

from ._backend import get_backend
from .imagio import GrayImage

MATCHERS = ("ncc", "zsad", "census", "sobel")


@dataclass(frozen=True)
class MatcherConfig:
    ncc_radius: int = 1
    zsad_radius: int = 2
    census_radius: int = 5
    sobel_radius: int = 2
    variance_epsilon: float = 1e-6

    def __post_init__(self):
        for name in MATCHERS:
            if self.radius(name) < 0:
                raise ValueError(f"{name} window radius must be >= 0")
        if not self.variance_epsilon > 0:
            raise ValueError("variance_epsilon must be > 0")

    def radius(self, matcher):
        return getattr(self, f"{matcher}_radius")


@dataclass(frozen=True)
class CostVolume:
    cost: np.ndarray  # (D, H, W)
    valid: np.ndarray  # (D, H, W) bool

    @property
    def d_max(self):
        return self.cost.shape[0]

    @property
    def height(self):
        return self.cost.shape[1]

    @property
    def width(self):
        return self.cost.shape[2]


@dataclass(frozen=True)
class MatchingHypothesis:
    x_left: int
    y: int
    d: int

    @property
    def x_right(self):
        return self.x_left - self.d

    @property
    def is_valid(self):
        return self.d >= 0 and self.x_right >= 0


def validity_mask(d_max, height, width):
    """valid[d, y, x] = x - d >= 0."""
    x = np.arange(width)
    v = x[None, :] >= np.arange(d_max)[:, None]
    return np.ascontiguousarray(np.broadcast_to(v[:, None, :], (d_max, height, width)))


def _plane(img):
    if isinstance(img, GrayImage):
        return img.data
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D intensity plane")
    return arr


def _check(left, right, d_max):
    L, R = _plane(left), _plane(right)
    if L.shape != R.shape:
        raise ValueError(f"image size mismatch: {L.shape} vs {R.shape}")
    if int(d_max) != d_max or d_max < 1:
        raise ValueError("d_max must be a positive integer")
    return np.ascontiguousarray(L), np.ascontiguousarray(R), int(d_max)


def _pad(plane, r):
    return np.ascontiguousarray(np.pad(plane, r, mode="edge"))


def _window_sum_valid(padded, r):
    """Sum of every full (2r+1)^2 window of ``padded``; separable cumsums."""
    k = 2 * r + 1
    c = np.cumsum(padded, axis=-1)
    c = np.concatenate([np.zeros(c.shape[:-1] + (1,)), c], axis=-1)
    h = c[..., k:] - c[..., :-k]
    c = np.cumsum(h, axis=-2)
    c = np.concatenate([np.zeros(c.shape[:-2] + (1, c.shape[-1])), c], axis=-2)
    return c[..., k:, :] - c[..., :-k, :]


def box_sum(plane, radius):
    """Window sum over (2r+1)^2 with replicate padding; same shape as input."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    plane = np.asarray(plane, dtype=np.float64)
    if radius == 0:
        return plane.copy()
    return _window_sum_valid(_pad(plane, radius), radius)


def _shifted_window_sum_np(A, B, d_max, r, mode):
    Hp, Wp = A.shape
    H, W = Hp - 2 * r, Wp - 2 * r
    out = np.zeros((d_max, H, W))
    for d in range(min(d_max, W)):
        a, b = A[:, d:], B[:, : Wp - d]
        pair = a * b if mode == 0 else np.abs(a - b)
        out[d, :, d:] = _window_sum_valid(pair, r)
    return out


def _shifted(Ap, Bp, d_max, r, mode, backend):
    if get_backend(backend) == "numba":
        from . import _kernels

        return _kernels.shifted_window_sum(Ap, Bp, d_max, r, mode)
    return _shifted_window_sum_np(Ap, Bp, d_max, r, mode)


def _finish(cost, d_max):
    D, H, W = cost.shape
    valid = validity_mask(D, H, W)
    cost[~valid] = 0.0
    return CostVolume(cost, valid)


def _shift_right_plane(plane, d):
    """plane[:, x - d] aligned to left column x (only x >= d meaningful)."""
    out = np.zeros_like(plane)
    out[:, d:] = plane[:, : plane.shape[1] - d]
    return out


def cost_ncc(left, right, d_max, cfg=MatcherConfig(), backend=None):
    """1 - NCC; degenerate windows (variance < eps) score ncc = 0."""
    L, R, d_max = _check(left, right, d_max)
    r = cfg.ncc_radius
    n = (2 * r + 1) ** 2
    sL, sR = box_sum(L, r), box_sum(R, r)
    ssdL = np.maximum(box_sum(L * L, r) - sL * sL / n, 0.0)
    ssdR = np.maximum(box_sum(R * R, r) - sR * sR / n, 0.0)
    cross = _shifted(_pad(L, r), _pad(R, r), d_max, r, 0, backend)
    cost = np.ones_like(cross)
    for d in range(min(d_max, L.shape[1])):
        sRd, ssdRd = _shift_right_plane(sR, d), _shift_right_plane(ssdR, d)
        cov = cross[d] - sL * sRd / n
        ok = (ssdL >= cfg.variance_epsilon) & (ssdRd >= cfg.variance_epsilon)
        denom = np.sqrt(np.where(ok, ssdL * ssdRd, 1.0))
        ncc = np.where(ok, cov / denom, 0.0)
        cost[d] = 1.0 - np.clip(ncc, -1.0, 1.0)
    return _finish(cost, d_max)


def _zsad_np(Lp, Rp, muL, muR, d_max, r):
    H, W = muL.shape
    k = 2 * r + 1
    out = np.zeros((d_max, H, W))
    for d in range(min(d_max, W)):
        off = muL[:, d:] - muR[:, : W - d]
        acc = np.zeros((H, W - d))
        for j in range(k):
            for i in range(k):
                acc += np.abs(Lp[j : j + H, d + i : i + W] - Rp[j : j + H, i : i + W - d] - off)
        out[d, :, d:] = acc
    return out


def cost_zsad(left, right, d_max, cfg=MatcherConfig(), backend=None):
    """sum |(L - mean_L) - (R - mean_R)| over the window."""
    L, R, d_max = _check(left, right, d_max)
    r = cfg.zsad_radius
    n = (2 * r + 1) ** 2
    muL, muR = box_sum(L, r) / n, box_sum(R, r) / n
    Lp, Rp = _pad(L, r), _pad(R, r)
    if get_backend(backend) == "numba":
        from . import _kernels

        cost = _kernels.zsad(Lp, Rp, muL, muR, d_max, r)
    else:
        cost = _zsad_np(Lp, Rp, muL, muR, d_max, r)
    return _finish(cost, d_max)


def census_transform(plane, radius, backend=None):
    """Per-pixel census bitstrings packed into (H, W, n_words) uint64."""
    plane = np.ascontiguousarray(_plane(plane))
    n_bits = (2 * radius + 1) ** 2 - 1
    n_words = max(1, -(-n_bits // 64))
    P = _pad(plane, radius)
    if get_backend(backend) == "numba":
        from . import _kernels

        return _kernels.census_codes(P, radius, n_words)
    H, W = plane.shape
    k = 2 * radius + 1
    codes = np.zeros((H, W, n_words), dtype=np.uint64)
    b = 0
    for j in range(k):
        for i in range(k):
            if j == radius and i == radius:
                continue
            bit = (P[j : j + H, i : i + W] < plane).astype(np.uint64) << np.uint64(b % 64)
            codes[:, :, b // 64] |= bit
            b += 1
    return codes


def cost_census(left, right, d_max, cfg=MatcherConfig(), backend=None):
    """Hamming distance of census bitstrings (strict <, ties give 0)."""
    L, R, d_max = _check(left, right, d_max)
    r = cfg.census_radius
    cL = census_transform(L, r, backend)
    cR = census_transform(R, r, backend)
    if get_backend(backend) == "numba":
        from . import _kernels

        cost = _kernels.hamming(cL, cR, d_max)
    else:
        H, W = L.shape
        cost = np.zeros((d_max, H, W))
        for d in range(min(d_max, W)):
            x = np.bitwise_xor(cL[:, d:], cR[:, : W - d])
            cost[d, :, d:] = np.bitwise_count(x).sum(axis=-1)
    return _finish(cost, d_max)


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def sobel_x(plane):
    """3x3 horizontal Sobel response (cross-correlation, replicate padding)."""
    plane = np.asarray(plane, dtype=np.float64)
    H, W = plane.shape
    P = np.pad(plane, 1, mode="edge")
    out = np.zeros((H, W))
    for j in range(3):
        for i in range(3):
            if SOBEL_X[j, i]:
                out += SOBEL_X[j, i] * P[j : j + H, i : i + W]
    return out


def cost_sobel(left, right, d_max, cfg=MatcherConfig(), backend=None):
    """Window SAD of horizontal Sobel responses."""
    L, R, d_max = _check(left, right, d_max)
    r = cfg.sobel_radius
    gL, gR = _pad(sobel_x(L), r), _pad(sobel_x(R), r)
    return _finish(_shifted(gL, gR, d_max, r, 1, backend), d_max)


COST_FUNCTIONS = {
    "ncc": cost_ncc,
    "zsad": cost_zsad,
    "census": cost_census,
    "sobel": cost_sobel,
}
