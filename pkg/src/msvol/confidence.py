"""Cost curve -> per-disparity likelihood (Gaussian of the gap to the minimum)."""
from dataclasses import dataclass

import numpy as np

from ._backend import get_backend
from .matchers import CostVolume


@dataclass(frozen=True)
class SigmaConfig:
    sigma_ncc: float = 0.1
    sigma_zsad: float = 100.0
    sigma_census: float = 8.0
    sigma_sobel: float = 100.0

    def __post_init__(self):
        for name in ("ncc", "zsad", "census", "sobel"):
            if not self.sigma(name) > 0:
                raise ValueError(f"sigma_{name} must be > 0")

    def sigma(self, matcher):
        return getattr(self, f"sigma_{matcher}")


# LikelihoodVolume shares CostVolume's layout; ``cost`` holds probabilities.
LikelihoodVolume = CostVolume


def _likelihood_np(cost, valid, sigma):
    masked = np.where(valid, cost, np.inf)
    cmin = masked.min(axis=0, keepdims=True)
    has_any = np.isfinite(cmin)
    gap = np.where(valid, cost - np.where(has_any, cmin, 0.0), 0.0)
    w = np.where(valid, np.exp(-(gap * gap) / (2.0 * sigma * sigma)), 0.0)
    total = w.sum(axis=0, keepdims=True)
    return np.divide(w, total, out=np.zeros_like(w), where=total > 0)


def likelihood(costs, sigma, backend=None):
    """L(d) = exp(-(C(d)-Cmin)^2 / 2 sigma^2), normalised over valid d.

    Pixels with no valid disparity get an all-zero column.
    """
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    cost = np.ascontiguousarray(costs.cost, dtype=np.float64)
    valid = np.ascontiguousarray(costs.valid)
    if get_backend(backend) == "numba":
        from . import _kernels

        lik = _kernels.likelihood(cost, valid, float(sigma))
    else:
        lik = _likelihood_np(cost, valid, float(sigma))
    return LikelihoodVolume(lik, valid)
