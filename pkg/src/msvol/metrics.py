"""Benchmark-style disparity errors and a random-dot ground-truth generator."""
import csv
from dataclasses import asdict, dataclass

import numpy as np

from .imagio import DisparityMap, GrayImage
from .regress import EvaluationError

CSV_FIELDS = ("dataset", "pair_id", "threshold", "mask_mode", "bad_rate", "avg_err", "n_evaluated")


@dataclass(frozen=True)
class EvalResult:
    bad_rate: float  # percent
    avg_err: float  # pixels
    n_evaluated: int
    threshold: float
    mask_mode: str  # "noc" or "all"


def bad_x(pred, gt, x, noc_mask=None):
    """Percentage of evaluated pixels with |pred - gt| > x (strict).

    Evaluated = valid in gt and pred (and non-occluded when a mask is given).
    """
    if not x > 0:
        raise ValueError("threshold must be > 0")
    if pred.disp.shape != gt.disp.shape:
        raise ValueError(f"shape mismatch: pred {pred.disp.shape} vs gt {gt.disp.shape}")
    mask = gt.valid & pred.valid
    if noc_mask is not None:
        noc_mask = np.asarray(noc_mask, dtype=bool)
        if noc_mask.shape != mask.shape:
            raise ValueError("noc mask shape mismatch")
        mask &= noc_mask
    n = int(mask.sum())
    if n == 0:
        raise EvaluationError("no pixels to evaluate")
    err = np.abs(pred.disp[mask] - gt.disp[mask])
    return EvalResult(
        bad_rate=100.0 * np.count_nonzero(err > x) / n,
        avg_err=float(err.mean()),
        n_evaluated=n,
        threshold=float(x),
        mask_mode="all" if noc_mask is None else "noc",
    )


def write_csv_rows(rows, fh, header=True):
    """rows: iterables of (dataset, pair_id, EvalResult)."""
    w = csv.writer(fh)
    if header:
        w.writerow(CSV_FIELDS)
    for dataset, pair_id, res in rows:
        w.writerow([dataset, pair_id, f"{res.threshold:g}", res.mask_mode,
                    f"{res.bad_rate:.4f}", f"{res.avg_err:.4f}", res.n_evaluated])


def noc_mask_from_gt(gt):
    """Left pixels not hidden in the right view by a nearer (larger-d) pixel.

    A pixel is occluded when another pixel on its row lands on the same right
    column with a larger disparity.
    """
    H, W = gt.disp.shape
    noc = gt.valid.copy()
    for y in range(H):
        xs = np.flatnonzero(gt.valid[y])
        if xs.size == 0:
            continue
        d = gt.disp[y, xs]
        xr = np.rint(xs - d).astype(np.int64)
        nearest = np.full(W + int(d.max()) + 1, -np.inf)
        np.maximum.at(nearest, xr, d)
        noc[y, xs] = d >= nearest[xr]
    return noc


def random_dot_pair(width, height, d_max, seed=0, n_layers=3):
    """Binary random-dot stereo pair with piecewise-constant integer disparity.

    Background sits at a small disparity; up to ``n_layers`` rectangles float
    in front at larger disparities (all < d_max).  The right view is rendered
    far-to-near so nearer layers win; right pixels seen by no left pixel get
    fresh noise.  gt is invalid where the right-image source leaves the frame.
    """
    rng = np.random.default_rng(seed)
    left = (rng.random((height, width)) < 0.5) * 255.0
    disp = np.zeros((height, width), dtype=np.int64)
    if d_max > 1:
        bg_hi = max(1, d_max // 4)
        disp[:] = rng.integers(0, bg_hi)
        for _ in range(n_layers):
            d = int(rng.integers(max(bg_hi, d_max // 2), d_max))
            h = int(rng.integers(height // 4, height // 2 + 1))
            w = int(rng.integers(width // 4, width // 2 + 1))
            y0 = int(rng.integers(0, height - h + 1))
            x0 = int(rng.integers(0, width - w + 1))
            disp[y0 : y0 + h, x0 : x0 + w] = d
    right = (rng.random((height, width)) < 0.5) * 255.0
    xs = np.arange(width)
    for level in np.unique(disp):
        for y in range(height):
            sel = np.flatnonzero(disp[y] == level)
            xr = xs[sel] - level
            ok = xr >= 0
            right[y, xr[ok]] = left[y, sel[ok]]
    valid = (xs[None, :] - disp) >= 0
    return GrayImage(left), GrayImage(right), DisparityMap(disp.astype(np.float64), valid)
