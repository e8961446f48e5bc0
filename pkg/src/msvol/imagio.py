"""Image and disparity-map I/O (PNG/PGM, PFM, KITTI uint16 PNG)."""
from dataclasses import dataclass
import os
import re

import numpy as np
from PIL import Image

DEFAULT_WEIGHTS = (0.299, 0.587, 0.114)


class FormatError(ValueError):
    """Raised for unreadable or unsupported file contents."""


@dataclass(frozen=True)
class GrayImage:
    """Grayscale image, intensities in 8-bit levels [0, 255]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("GrayImage data must be 2-D")
        if not np.all(np.isfinite(data)) or data.min(initial=0) < 0 or data.max(initial=0) > 255:
            raise ValueError("GrayImage values must be finite and within [0, 255]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class DisparityMap:
    """Disparities in pixels plus a validity mask of the same shape."""

    disp: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        disp = np.array(self.disp, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if disp.ndim != 2 or disp.shape != valid.shape:
            raise ValueError("disp and valid must be 2-D arrays of equal shape")
        valid &= np.isfinite(disp)
        if np.any(disp[valid] < 0):
            raise ValueError("valid disparities must be >= 0")
        disp.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "disp", disp)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def dense(cls, disp):
        disp = np.asarray(disp, dtype=np.float64)
        return cls(disp, np.isfinite(disp))

    @property
    def height(self):
        return self.disp.shape[0]

    @property
    def width(self):
        return self.disp.shape[1]


def to_gray(pixels, channel_weights=DEFAULT_WEIGHTS):
    """Weighted channel sum for (H, W, 3) arrays; (H, W) passes through."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim == 2:
        return pixels
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise FormatError(f"expected 1 or 3 channels, got shape {pixels.shape}")
    return pixels @ np.asarray(channel_weights, dtype=np.float64)


def _open(path):
    try:
        return Image.open(path)
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from exc


def load_gray(path, channel_weights=DEFAULT_WEIGHTS):
    """Load an 8-bit grayscale or RGB PNG/PGM as a GrayImage."""
    with _open(path) as im:
        if im.mode in ("L", "RGB"):
            arr = np.asarray(im)
        elif im.mode in ("RGBA", "P", "LA"):
            arr = np.asarray(im.convert("RGB" if im.mode != "LA" else "L"))
        else:
            raise FormatError(f"{path}: unsupported image mode {im.mode} (need 8-bit L or RGB)")
    gray = to_gray(arr, channel_weights)
    return GrayImage(np.clip(gray, 0.0, 255.0))


def save_gray(img, path):
    data = img.data if isinstance(img, GrayImage) else np.asarray(img)
    Image.fromarray(np.clip(np.rint(data), 0, 255).astype(np.uint8)).save(path)


_PFM_HEADER = re.compile(rb"^(\S+)\s+(\d+)\s+(\d+)\s+(\S+)\s")


def read_pfm(path):
    """Read a single-channel PFM; non-finite samples become invalid."""
    with open(path, "rb") as fh:
        raw = fh.read()
    m = _PFM_HEADER.match(raw)
    if m is None:
        raise FormatError(f"{path}: malformed PFM header")
    magic = m.group(1)
    if magic == b"PF":
        raise FormatError(f"{path}: 3-channel PFM is not supported")
    if magic != b"Pf":
        raise FormatError(f"{path}: bad PFM magic {magic!r}")
    width, height = int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError as exc:
        raise FormatError(f"{path}: bad PFM scale line") from exc
    dtype = "<f4" if scale < 0 else ">f4"
    payload = raw[m.end():]
    n = width * height
    if len(payload) < 4 * n:
        raise FormatError(f"{path}: truncated PFM payload")
    data = np.frombuffer(payload, dtype=dtype, count=n).reshape(height, width)
    disp = np.flipud(data).astype(np.float64)
    return DisparityMap(disp, np.isfinite(disp))


def write_pfm(dmap, path):
    """Write little-endian PFM; invalid pixels are stored as +inf."""
    disp = np.where(dmap.valid, dmap.disp, np.inf).astype("<f4")
    h, w = disp.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.flipud(disp).tobytes())


def read_kitti_png(path):
    """KITTI encoding: disparity = uint16 / 256, stored 0 = invalid."""
    with _open(path) as im:
        if im.mode not in ("I;16", "I;16B", "I"):
            raise FormatError(f"{path}: expected 16-bit PNG, got mode {im.mode}")
        raw = np.asarray(im).astype(np.int64)
    if raw.ndim != 2:
        raise FormatError(f"{path}: expected single-channel PNG")
    return DisparityMap(raw / 256.0, raw > 0)


def write_kitti_png(dmap, path):
    stored = np.rint(np.where(dmap.valid, dmap.disp, 0.0) * 256.0)
    stored = np.clip(stored, 0, 65535).astype(np.uint16)
    # valid disparities below 1/512 would round to the invalid marker
    stored[dmap.valid & (stored == 0)] = 1
    Image.fromarray(stored).save(path)


def read_disparity(path):
    """Dispatch on extension: .pfm or KITTI .png."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".pfm":
        return read_pfm(path)
    if ext == ".png":
        return read_kitti_png(path)
    raise FormatError(f"{path}: unknown disparity format {ext!r}")


def write_disparity(dmap, path):
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".pfm":
        write_pfm(dmap, path)
    elif ext == ".png":
        write_kitti_png(dmap, path)
    else:
        raise FormatError(f"{path}: unknown disparity format {ext!r}")


def read_mask(path):
    """Binary mask PNG; nonzero = True."""
    with _open(path) as im:
        return np.asarray(im) != 0
