"""Disparity regression (soft-argmin, WTA) and the supervised losses."""
from dataclasses import dataclass

import numpy as np

from .imagio import DisparityMap
from .matchers import CostVolume

# regularised volumes share the (D, H, W) cost + valid layout
RegCostVolume = CostVolume


class EvaluationError(ValueError):
    """No pixels to evaluate."""


@dataclass(frozen=True)
class LossWeights:
    w0: float = 0.5
    w1: float = 0.7
    w2: float = 1.0

    def __post_init__(self):
        if min(self.astuple()) < 0:
            raise ValueError("loss weights must be >= 0")

    def astuple(self):
        return (self.w0, self.w1, self.w2)


def _softmax_neg(cost, valid, sharpness):
    logits = np.where(valid, -sharpness * cost, -np.inf)
    top = logits.max(axis=0, keepdims=True)
    has_any = np.isfinite(top)
    e = np.where(valid, np.exp(logits - np.where(has_any, top, 0.0)), 0.0)
    total = e.sum(axis=0, keepdims=True)
    p = np.divide(e, total, out=np.zeros_like(e), where=total > 0)
    return p, has_any[0]


def soft_argmin(vol, sharpness=1.0):
    """Expected disparity under softmax(-sharpness * cost) over valid d."""
    if not sharpness > 0:
        raise ValueError("sharpness must be > 0")
    p, ok = _softmax_neg(np.asarray(vol.cost, dtype=np.float64), vol.valid, sharpness)
    return DisparityMap(np.where(ok, _expectation(p), 0.0), ok)


def _expectation(p):
    """sum_d d * p_d, accumulated outward from the centre index.

    Mirrored halves are summed in mirrored order, so a symmetric p yields the
    centre exactly.
    """
    D = p.shape[0]
    centre = (D - 1) / 2.0
    hi = np.arange(D // 2 + D % 2, D)
    lo = (D - 1) - hi
    up = ((hi - centre)[:, None, None] * p[hi]).sum(axis=0)
    down = ((centre - lo)[:, None, None] * p[lo]).sum(axis=0)
    # rounding can land a hair outside [0, D-1] when p is nearly one-hot
    return np.clip(centre + (up - down), 0.0, D - 1.0)


def soft_argmin_backward(vol, sharpness, grad_disp):
    """d loss / d cost given d loss / d disparity.

    d(dhat)/dC_k = -sharpness * p_k * (k - dhat).
    """
    p, ok = _softmax_neg(np.asarray(vol.cost, dtype=np.float64), vol.valid, sharpness)
    d = np.arange(p.shape[0], dtype=np.float64)[:, None, None]
    dhat = _expectation(p)[None]
    g = np.where(ok, grad_disp, 0.0)[None]
    return -sharpness * p * (d - dhat) * g


def wta(vol):
    """Integer argmin over valid disparities, first index on ties."""
    masked = np.where(vol.valid, vol.cost, np.inf)
    ok = vol.valid.any(axis=0)
    return DisparityMap(np.where(ok, masked.argmin(axis=0), 0).astype(np.float64), ok)


def _joint(pred, gt):
    if pred.disp.shape != gt.disp.shape:
        raise ValueError(f"shape mismatch: {pred.disp.shape} vs {gt.disp.shape}")
    mask = pred.valid & gt.valid
    n = int(mask.sum())
    if n == 0:
        raise EvaluationError("no jointly valid pixels")
    return gt.disp[mask] - pred.disp[mask], mask, n


def smooth_l1(x):
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def smooth_l1_grad(x):
    return np.where(np.abs(x) < 1.0, x, np.sign(x))


def loss_l1(pred, gt):
    err, _, _ = _joint(pred, gt)
    return float(np.abs(err).mean())


def loss_smooth_l1(pred, gt):
    err, _, _ = _joint(pred, gt)
    return float(smooth_l1(err).mean())


def loss_and_grad(pred, gt, kind):
    """Loss value and d loss / d pred.disp (zero off the joint-valid set)."""
    err, mask, n = _joint(pred, gt)
    grad = np.zeros(pred.disp.shape)
    if kind == "l1":
        val = np.abs(err).mean()
        grad[mask] = -np.sign(err) / n
    elif kind == "smooth_l1":
        val = smooth_l1(err).mean()
        grad[mask] = -smooth_l1_grad(err) / n
    else:
        raise ValueError(f"unknown loss {kind!r}")
    return float(val), grad


def total_loss(losses, w=LossWeights()):
    l0, l1, l2 = losses
    return w.w0 * l0 + w.w1 * l1 + w.w2 * l2


def combined_cost(vol):
    """Unweighted mean of the four normalised cost channels."""
    idx = [i for i, n in enumerate(vol.feature_names) if n.endswith("_cost")]
    cost = vol.data[..., idx].astype(np.float64).mean(axis=-1)
    return RegCostVolume(cost, vol.valid)
