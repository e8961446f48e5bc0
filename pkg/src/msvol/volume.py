"""The 8-feature matching volume and its MSV1 on-disk format."""
from dataclasses import dataclass, field
import struct
import time

import numpy as np

from .confidence import SigmaConfig, likelihood
from .imagio import FormatError, GrayImage
from .matchers import COST_FUNCTIONS, MATCHERS, MatcherConfig

FEATURE_NAMES = tuple(f"{m}_cost" for m in MATCHERS) + tuple(f"{m}_lik" for m in MATCHERS)
MSV_MAGIC = b"MSV1"


@dataclass(eq=False)
class MatchingVolume:
    data: np.ndarray  # (D, H, W, F) float32
    valid: np.ndarray  # (D, H, W) bool
    feature_names: tuple = FEATURE_NAMES
    # per-channel raw (min, max) before normalisation; not serialised
    stats: dict = field(default_factory=dict, compare=False)

    @property
    def d_max(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def n_features(self):
        return self.data.shape[3]

    def channel(self, name):
        return self.data[..., self.feature_names.index(name)]


def downsample2(img):
    """2x2 mean pooling; an odd trailing row/column is dropped."""
    data = img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    H, W = data.shape
    if H < 2 or W < 2:
        raise ValueError(f"cannot downsample a {H}x{W} image")
    h, w = H // 2, W // 2
    pooled = data[: 2 * h, : 2 * w].reshape(h, 2, w, 2).mean(axis=(1, 3))
    return GrayImage(pooled) if isinstance(img, GrayImage) else pooled


def minmax_normalize(cost, valid):
    """Map valid entries to [0, 1] per channel; a flat channel maps to 0."""
    vals = cost[valid]
    out = np.zeros_like(cost)
    if vals.size == 0:
        return out, (0.0, 0.0)
    lo, hi = float(vals.min()), float(vals.max())
    if hi > lo:
        out[valid] = (vals - lo) / (hi - lo)
    return out, (lo, hi)


def build_matching_volume(left, right, d_max, cfg=MatcherConfig(), sigma=SigmaConfig(),
                          half_res=False, backend=None):
    """Run all four matchers and likelihoods and stack the 8 features.

    With ``half_res`` both images are 2x mean-pooled and ``ceil(d_max / 2)``
    disparity levels are computed.
    """
    if half_res:
        left, right = downsample2(left), downsample2(right)
        d_max = -(-int(d_max) // 2)
    width = left.data.shape[1] if isinstance(left, GrayImage) else np.shape(left)[1]
    if d_max > width:
        raise ValueError(f"d_max={d_max} exceeds image width {width}")

    t0 = time.perf_counter()
    costs, liks, stats = [], [], {}
    for name in MATCHERS:
        cv = COST_FUNCTIONS[name](left, right, d_max, cfg, backend=backend)
        lik = likelihood(cv, sigma.sigma(name), backend=backend)
        norm, stats[f"{name}_cost"] = minmax_normalize(cv.cost, cv.valid)
        costs.append(norm)
        liks.append(lik.cost)
        valid = cv.valid
    data = np.stack(costs + liks, axis=-1).astype(np.float32)
    stats["feature_seconds"] = time.perf_counter() - t0
    return MatchingVolume(data, valid, FEATURE_NAMES, stats)


def write_msv(vol, path):
    D, H, W, F = vol.data.shape
    with open(path, "wb") as fh:
        fh.write(MSV_MAGIC)
        fh.write(struct.pack("<4I", D, H, W, F))
        for name in vol.feature_names:
            fh.write(name.encode("utf-8") + b"\0")
        fh.write(np.ascontiguousarray(vol.valid, dtype=np.uint8).tobytes())
        fh.write(np.ascontiguousarray(vol.data, dtype="<f4").tobytes())


def read_msv(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20 or raw[:4] != MSV_MAGIC:
        raise FormatError(f"{path}: not an MSV1 file")
    D, H, W, F = struct.unpack_from("<4I", raw, 4)
    pos = 20
    names = []
    for _ in range(F):
        end = raw.find(b"\0", pos)
        if end < 0:
            raise FormatError(f"{path}: truncated feature names")
        names.append(raw[pos:end].decode("utf-8"))
        pos = end + 1
    n = D * H * W
    if len(raw) != pos + n + 4 * n * F:
        raise FormatError(f"{path}: payload size mismatch")
    valid = np.frombuffer(raw, dtype=np.uint8, count=n, offset=pos).reshape(D, H, W) != 0
    data = np.frombuffer(raw, dtype="<f4", count=n * F, offset=pos + n)
    return MatchingVolume(data.reshape(D, H, W, F).astype(np.float32), valid, tuple(names))
