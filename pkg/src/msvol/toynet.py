"""A miniature 3D encoder-decoder regulariser with hand-written gradients.

Activations are float64 arrays shaped (C, D, H, W).  Convolutions are 3x3x3
with zero padding 1; stride-2 convs halve each axis (ceil) and stride-2
transposed convs restore the skip tensor's shape.
"""
from dataclasses import dataclass
import struct

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imagio import FormatError
from .regress import (LossWeights, RegCostVolume, loss_and_grad, soft_argmin,
                      soft_argmin_backward, total_loss)

MSNP_MAGIC = b"MSNP"


# -- layers -----------------------------------------------------------------

def _im2col(x, stride, out_shape):
    """(C_in * 27, N) patch matrix; row order matches ``w.reshape(C_out, -1)``."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)))
    Do, Ho, Wo = out_shape
    s = stride
    cols = np.empty((x.shape[0], 3, 3, 3, Do, Ho, Wo))
    for a in range(3):
        for b in range(3):
            for c in range(3):
                cols[:, a, b, c] = xp[:, a : a + s * (Do - 1) + 1 : s,
                                      b : b + s * (Ho - 1) + 1 : s,
                                      c : c + s * (Wo - 1) + 1 : s]
    return cols.reshape(x.shape[0] * 27, Do * Ho * Wo)


def _conv_out_shape(shape, stride):
    return tuple(-(-n // stride) for n in shape)


def _check_conv(x, w):
    if x.ndim != 4 or w.ndim != 5 or w.shape[2:] != (3, 3, 3):
        raise ValueError(f"bad conv shapes x={x.shape} w={w.shape}")
    if w.shape[1] != x.shape[0]:
        raise ValueError(f"channel mismatch: input {x.shape[0]}, kernel {w.shape[1]}")


def _conv(x, w, b, stride, cols=None):
    out_shape = _conv_out_shape(x.shape[1:], stride)
    if cols is None:
        cols = _im2col(x, stride, out_shape)
    out = w.reshape(w.shape[0], -1) @ cols
    out += np.asarray(b)[:, None]
    return out.reshape((w.shape[0],) + out_shape), cols


def conv3d_forward(x, w, b, stride=1):
    """Cross-correlation: out[o] = b[o] + sum_i,k w[o, i, k] * x_pad[i, s*p + k]."""
    _check_conv(x, w)
    return _conv(x, w, b, stride)[0]


def _conv_input_grad(g, w, stride, in_shape):
    """Adjoint of conv3d_forward w.r.t. its input (spatial shape ``in_shape``)."""
    D, H, W = in_shape
    Do, Ho, Wo = g.shape[1:]
    ci = w.shape[1]
    cols = (w.reshape(w.shape[0], -1).T @ g.reshape(g.shape[0], -1))
    cols = cols.reshape(ci, 3, 3, 3, Do, Ho, Wo)
    gxp = np.zeros((ci, D + 2, H + 2, W + 2))
    s = stride
    for a in range(3):
        for b in range(3):
            for c in range(3):
                gxp[:, a : a + s * (Do - 1) + 1 : s,
                    b : b + s * (Ho - 1) + 1 : s,
                    c : c + s * (Wo - 1) + 1 : s] += cols[:, a, b, c]
    return gxp[:, 1 : D + 1, 1 : H + 1, 1 : W + 1]


def _conv_weight_grad(x, g, stride, cols=None):
    if cols is None:
        cols = _im2col(x, stride, g.shape[1:])
    gw = g.reshape(g.shape[0], -1) @ cols.T
    return gw.reshape(g.shape[0], x.shape[0], 3, 3, 3)


def conv3d_backward(x, w, grad_out, stride=1, cols=None, need_input_grad=True):
    """Returns (grad_x, grad_w, grad_b); ``cols`` may reuse the forward patches."""
    _check_conv(x, w)
    if grad_out.shape != (w.shape[0],) + _conv_out_shape(x.shape[1:], stride):
        raise ValueError(f"grad_out shape {grad_out.shape} inconsistent with forward")
    grad_x = _conv_input_grad(grad_out, w, stride, x.shape[1:]) if need_input_grad else None
    grad_w = _conv_weight_grad(x, grad_out, stride, cols)
    return grad_x, grad_w, grad_out.sum(axis=(1, 2, 3))


def _check_tconv(x, w, stride, out_shape):
    if x.ndim != 4 or w.ndim != 5 or w.shape[2:] != (3, 3, 3) or w.shape[0] != x.shape[0]:
        raise ValueError(f"bad transposed-conv shapes x={x.shape} w={w.shape}")
    if out_shape is None:
        out_shape = tuple(stride * n for n in x.shape[1:])
    out_shape = tuple(out_shape)
    if _conv_out_shape(out_shape, stride) != x.shape[1:]:
        raise ValueError(f"output shape {out_shape} incompatible with input {x.shape[1:]}")
    return out_shape


def transposed_conv3d_forward(x, w, b, stride=2, out_shape=None):
    """Adjoint of a stride-``stride`` conv; ``w`` is (C_in, C_out, 3, 3, 3).

    ``out_shape`` defaults to ``stride * input`` per axis.
    """
    out_shape = _check_tconv(x, w, stride, out_shape)
    return _conv_input_grad(x, w, stride, out_shape) + np.asarray(b)[:, None, None, None]


def transposed_conv3d_backward(x, w, grad_out, stride=2):
    """Returns (grad_x, grad_w, grad_b)."""
    _check_tconv(x, w, stride, grad_out.shape[1:])
    grad_x = conv3d_forward(grad_out, w, np.zeros(w.shape[0]), stride)
    grad_w = _conv_weight_grad(grad_out, x, stride)
    return grad_x, grad_w, grad_out.sum(axis=(1, 2, 3))


# -- network ----------------------------------------------------------------

@dataclass(frozen=True)
class ToyNetConfig:
    in_features: int = 8
    base_channels: int = 4
    levels: int = 2
    variant: str = "gc"  # "gc": one head, L1 loss; "psm": three hourglasses, smooth L1
    max_channels: int = 8
    sharpness: float = 1.0

    def __post_init__(self):
        if self.levels < 1 or self.base_channels < 1:
            raise ValueError("levels and base_channels must be >= 1")
        if self.variant not in ("gc", "psm"):
            raise ValueError(f"unknown variant {self.variant!r}")

    def channels(self, level):
        return min(self.base_channels * 2 ** level, max(self.max_channels, self.base_channels))

    @property
    def n_heads(self):
        return 1 if self.variant == "gc" else 3

    @property
    def loss(self):
        return "l1" if self.variant == "gc" else "smooth_l1"


class ParamStore:
    """Named float64 parameters with matching gradient buffers."""

    def __init__(self, seed=0):
        self.seed = seed
        self.params = {}
        self.grads = {}

    def add(self, name, value):
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        self.params[name] = np.asarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.params[name])

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.0

    def copy(self):
        out = ParamStore(self.seed)
        for k, v in self.params.items():
            out.add(k, v.copy())
        return out

    def n_values(self):
        return sum(v.size for v in self.params.values())


def _layers(cfg):
    """(name, kind, c_in, c_out, stride) in forward order."""
    C = cfg.channels
    layers = [("stem", "conv", cfg.in_features, C(0), 1)]
    for h in range(cfg.n_heads):
        for k in range(1, cfg.levels + 1):
            layers.append((f"hg{h}.down{k}", "conv", C(k - 1), C(k), 2))
        for k in range(cfg.levels, 0, -1):
            layers.append((f"hg{h}.up{k}", "tconv", C(k), C(k - 1), 2))
        layers.append((f"hg{h}.head", "conv", C(0), 1, 1))
    return layers


def init_params(cfg, seed=0):
    """Uniform(+-sqrt(1/fan_in)) weights and biases, seeded."""
    rng = np.random.default_rng(seed)
    net = ParamStore(seed)
    for name, kind, ci, co, _ in _layers(cfg):
        bound = np.sqrt(1.0 / (ci * 27))
        shape = (co, ci, 3, 3, 3) if kind == "conv" else (ci, co, 3, 3, 3)
        net.add(f"{name}.w", rng.uniform(-bound, bound, shape))
        net.add(f"{name}.b", rng.uniform(-bound, bound, co))
    return net


def _relu(x):
    return np.maximum(x, 0.0)


def _input_tensor(vol, cfg):
    if vol.n_features != cfg.in_features:
        raise ValueError(f"volume has {vol.n_features} features, net expects {cfg.in_features}")
    if min(vol.data.shape[:3]) < 2 ** cfg.levels:
        raise ValueError(f"volume {vol.data.shape[:3]} too small for {cfg.levels} levels")
    return np.moveaxis(vol.data.astype(np.float64), -1, 0)


def _run(net, cfg, x, valid, gt=None, weights=LossWeights(), backprop=False):
    """Forward pass; with ``gt`` also losses, and with ``backprop`` gradients.

    Returns (head_costs, total, per_head_losses).
    """
    L = cfg.levels
    z_stem, cols_stem = _conv(x, net["stem.w"], net["stem.b"], 1)
    h = _relu(z_stem)
    stages = []
    for hg in range(cfg.n_heads):
        p = f"hg{hg}."
        e, z_down = [h], []
        for k in range(1, L + 1):
            z = conv3d_forward(e[-1], net[f"{p}down{k}.w"], net[f"{p}down{k}.b"], 2)
            z_down.append(z)
            e.append(_relu(z))
        us, z_up = [e[L]], []
        for k in range(L, 0, -1):
            z = transposed_conv3d_forward(us[-1], net[f"{p}up{k}.w"], net[f"{p}up{k}.b"], 2,
                                          e[k - 1].shape[1:])
            z_up.append(z)
            us.append(_relu(z) + e[k - 1])
        h = us[-1]
        cost, head_cols = _conv(h, net[f"{p}head.w"], net[f"{p}head.b"], 1)
        stages.append((e, z_down, us, z_up, head_cols, cost[0]))
    heads = [s[-1] for s in stages]
    if gt is None:
        return heads, None, None

    losses, g_costs = [], []
    for cost in heads:
        vol = RegCostVolume(cost, valid)
        pred = soft_argmin(vol, cfg.sharpness)
        val, g_disp = loss_and_grad(pred, gt, cfg.loss)
        losses.append(val)
        g_costs.append(soft_argmin_backward(vol, cfg.sharpness, g_disp))
    w = weights.astuple() if cfg.n_heads == 3 else (1.0,)
    total = total_loss(losses, weights) if cfg.n_heads == 3 else losses[0]
    if not backprop:
        return heads, total, losses

    net.zero_grad()
    G = net.grads

    def acc(name, gw, gb):
        G[f"{name}.w"] += gw
        G[f"{name}.b"] += gb

    g_h = np.zeros_like(h)
    for hg in reversed(range(cfg.n_heads)):
        p = f"hg{hg}."
        e, z_down, us, z_up, head_cols, _ = stages[hg]
        gx, gw, gb = conv3d_backward(us[-1], net[f"{p}head.w"], w[hg] * g_costs[hg][None], 1,
                                     head_cols)
        acc(f"{p}head", gw, gb)
        g_u = g_h + gx
        g_e = [np.zeros_like(t) for t in e]
        for i in reversed(range(L)):
            k = L - i
            g_e[k - 1] += g_u
            g_z = g_u * (z_up[i] > 0)
            g_u, gw, gb = transposed_conv3d_backward(us[i], net[f"{p}up{k}.w"], g_z, 2)
            acc(f"{p}up{k}", gw, gb)
        g_e[L] += g_u
        for k in range(L, 0, -1):
            g_z = g_e[k] * (z_down[k - 1] > 0)
            gx, gw, gb = conv3d_backward(e[k - 1], net[f"{p}down{k}.w"], g_z, 2)
            acc(f"{p}down{k}", gw, gb)
            g_e[k - 1] += gx
        g_h = g_e[0]
    _, gw, gb = conv3d_backward(x, net["stem.w"], g_h * (z_stem > 0), 1, cols_stem,
                                need_input_grad=False)
    acc("stem", gw, gb)
    return heads, total, losses


def forward(net, cfg, vol):
    """Regularised (D, H, W) cost volumes: one for gc, three for psm."""
    heads, _, _ = _run(net, cfg, _input_tensor(vol, cfg), vol.valid)
    return [RegCostVolume(c, vol.valid) for c in heads]


def _check_gt(vol, gt):
    if gt.disp.shape != vol.data.shape[1:3]:
        raise ValueError(f"gt shape {gt.disp.shape} != volume {vol.data.shape[1:3]}")


def loss_and_gradients(net, cfg, vol, gt, weights=LossWeights()):
    """Total loss; per-parameter gradients are left in ``net.grads``."""
    _check_gt(vol, gt)
    _, total, _ = _run(net, cfg, _input_tensor(vol, cfg), vol.valid, gt, weights, backprop=True)
    return total


def evaluate_loss(net, cfg, vol, gt, weights=LossWeights()):
    _check_gt(vol, gt)
    _, total, _ = _run(net, cfg, _input_tensor(vol, cfg), vol.valid, gt, weights)
    return total


def train_step(net, cfg, vol, gt, lr, weights=LossWeights()):
    """One plain gradient-descent step in place; returns the pre-update loss."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    total = loss_and_gradients(net, cfg, vol, gt, weights)
    if lr > 0:
        for name, value in net.params.items():
            value -= lr * net.grads[name]
    return total


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(net, path):
    """MSNP: magic, u32 count, then per parameter name/dims/f64 payload (LE)."""
    with open(path, "wb") as fh:
        fh.write(MSNP_MAGIC)
        fh.write(struct.pack("<I", len(net)))
        for name, value in net.params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MSNP_MAGIC or len(raw) < 8:
        raise FormatError(f"{path}: not an MSNP checkpoint")
    try:
        (count,) = struct.unpack_from("<I", raw, 4)
        pos = 8
        net = ParamStore()
        for _ in range(count):
            (n,) = struct.unpack_from("<I", raw, pos)
            name = raw[pos + 4 : pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (ndim,) = struct.unpack_from("<I", raw, pos)
            dims = struct.unpack_from(f"<{ndim}I", raw, pos + 4)
            pos += 4 + 4 * ndim
            size = int(np.prod(dims)) if ndim else 1
            if pos + 8 * size > len(raw):
                raise FormatError(f"{path}: truncated payload for {name!r}")
            net.add(name, np.frombuffer(raw, "<f8", size, pos).reshape(dims).astype(np.float64))
            pos += 8 * size
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint") from exc
    if pos != len(raw):
        raise FormatError(f"{path}: trailing bytes")
    return net
