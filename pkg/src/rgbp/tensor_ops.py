"""Differentiable NCHW tensor primitives on plain numpy arrays.

There is no autograd tape. Every forward ``op(x, ...)`` has a companion
``op_backward(x, ..., grad_out)`` that recomputes what it needs from the
forward inputs and returns the vector-Jacobian product. Reductions run in
a fixed order so repeated calls are bit-identical.

Shape policy is strict: a convolution or pooling whose output size is not
an integer raises :class:`ShapeError` instead of flooring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

# ---------------------------------------------------------------- parameters


@dataclass
class ConvParams:
    """Convolution weights, always laid out as ``(C_out, C_in, k, k)``.

    With ``transposed=True`` the op is the adjoint of a strided convolution
    that maps ``C_out`` channels to ``C_in``. The layout is the same in both
    cases, so ``weight.shape[0]`` is always the output width.
    """

    weight: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    transposed: bool = False

    def __post_init__(self):
        w = self.weight
        if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] < 1:
            raise ShapeError(f"conv weight must be (C_out, C_in, k, k), got {w.shape}")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError(f"invalid stride/padding {self.stride}/{self.padding}")
        if self.bias is not None and self.bias.shape != (w.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match C_out={w.shape[0]}")

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    mode: str = "running"  # or "batch"

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.mode not in ("running", "batch"):
            raise ValueError(f"unknown batch-norm mode {self.mode!r}")

    @classmethod
    def identity(cls, channels: int, dtype=np.float64, eps: float = 1e-5) -> "BatchNormParams":
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
            eps=eps,
        )


@dataclass
class LinearParams:
    weight: np.ndarray  # (D_out, D_in)
    bias: np.ndarray  # (D_out,)


@dataclass
class ConvBlock:
    """Convolution, optional batch norm, optional SiLU, applied in that order."""

    conv: ConvParams
    bn: BatchNormParams | None = None
    act: bool = True


def conv_block(weight, bias=None, stride=1, padding=None, transposed=False, bn=True, act=True) -> ConvBlock:
    """Build a block with "same" padding ``(k - 1) // 2`` unless told otherwise."""
    k = weight.shape[2]
    if padding is None:
        padding = 0 if transposed else (k - 1) // 2
    conv = ConvParams(weight, bias, stride=stride, padding=padding, transposed=transposed)
    norm = BatchNormParams.identity(conv.out_channels, weight.dtype) if bn else None
    return ConvBlock(conv, norm, act)


# ---------------------------------------------------------------- helpers


def _check4(x: np.ndarray, name: str = "x") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be (N, C, H, W), got shape {x.shape}")


def _out_size(size: int, k: int, s: int, p: int, what: str) -> int:
    # A leftover that fits inside the trailing padding drops no input
    # pixel (3x3 stride 2 pad 1 on even sizes); any other leftover would.
    span = size + 2 * p - k
    if span < 0 or span % s > p:
        raise ShapeError(f"{what}: size {size} with k={k}, s={s}, p={p} would drop input pixels")
    return span // s + 1


def _pad(x: np.ndarray, p: int, value: float = 0.0) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=value)


def _windows(xp: np.ndarray, k: int, s: int) -> np.ndarray:
    """View of shape (N, C, Ho, Wo, k, k)."""
    return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]


def _fold(cols: np.ndarray, out_hw: tuple[int, int], s: int) -> np.ndarray:
    """Scatter-add (N, C, Ho, Wo, k, k) windows back onto an (N, C, H, W) grid."""
    n, c, ho, wo, k, _ = cols.shape
    out = np.zeros((n, c) + out_hw, dtype=cols.dtype)
    for ky in range(k):
        for kx in range(k):
            out[:, :, ky : ky + s * (ho - 1) + 1 : s, kx : kx + s * (wo - 1) + 1 : s] += cols[..., ky, kx]
    return out


def _unpad(x: np.ndarray, p: int) -> np.ndarray:
    return x if p == 0 else x[:, :, p:-p, p:-p]


# ---------------------------------------------------------------- convolution


def conv_output_hw(x_shape, p: ConvParams) -> tuple[int, int]:
    h, w = x_shape[2], x_shape[3]
    k, s, pad = p.kernel, p.stride, p.padding
    if p.transposed:
        ho, wo = (h - 1) * s - 2 * pad + k, (w - 1) * s - 2 * pad + k
        if ho < 1 or wo < 1:
            raise ShapeError(f"transposed conv output {ho}x{wo} is empty")
        return ho, wo
    return _out_size(h, k, s, pad, "conv2d"), _out_size(w, k, s, pad, "conv2d")


def _check_conv_input(x: np.ndarray, p: ConvParams) -> None:
    _check4(x)
    if x.shape[1] != p.in_channels:
        raise ShapeError(f"conv expects {p.in_channels} input channels, got {x.shape[1]}")


def conv2d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    _check_conv_input(x, p)
    ho, wo = conv_output_hw(x.shape, p)
    k, s, pad = p.kernel, p.stride, p.padding
    if p.transposed:
        cols = np.tensordot(x, p.weight, axes=([1], [1]))  # (N, H, W, Co, k, k)
        cols = cols.transpose(0, 3, 1, 2, 4, 5)
        full = _fold(cols, (ho + 2 * pad, wo + 2 * pad), s)
        out = np.ascontiguousarray(_unpad(full, pad))
    else:
        win = _windows(_pad(x, pad), k, s)
        out = np.tensordot(win, p.weight, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        out = np.ascontiguousarray(out)
    if p.bias is not None:
        out += p.bias[None, :, None, None]
    return out


def conv2d_backward(x: np.ndarray, p: ConvParams, grad_out: np.ndarray):
    """Returns ``(grad_x, grad_weight, grad_bias)``; ``grad_bias`` is None without bias."""
    _check_conv_input(x, p)
    k, s, pad = p.kernel, p.stride, p.padding
    gb = grad_out.sum(axis=(0, 2, 3)) if p.bias is not None else None
    if p.transposed:
        win = _windows(_pad(grad_out, pad), k, s)  # (N, Co, H, W, k, k)
        gx = np.tensordot(win, p.weight, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
        gw = np.tensordot(x, win, axes=([0, 2, 3], [0, 2, 3])).transpose(1, 0, 2, 3)
        return np.ascontiguousarray(gx), np.ascontiguousarray(gw), gb
    xp = _pad(x, pad)
    win = _windows(xp, k, s)
    gw = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))
    gcols = np.tensordot(grad_out, p.weight, axes=([1], [0]))  # (N, Ho, Wo, Ci, k, k)
    gxp = _fold(gcols.transpose(0, 3, 1, 2, 4, 5), xp.shape[2:], s)
    return np.ascontiguousarray(_unpad(gxp, pad)), gw, gb


# ---------------------------------------------------------------- batch norm


def _bn_stats(x: np.ndarray, p: BatchNormParams):
    if p.mode == "batch":
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
    else:
        mean, var = p.running_mean, p.running_var
    return mean, var


def batch_norm(x: np.ndarray, p: BatchNormParams) -> np.ndarray:
    _check4(x)
    if x.shape[1] != p.gamma.shape[0]:
        raise ShapeError(f"batch norm expects {p.gamma.shape[0]} channels, got {x.shape[1]}")
    mean, var = _bn_stats(x, p)
    inv = 1.0 / np.sqrt(var + p.eps)
    xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
    return xhat * p.gamma[None, :, None, None] + p.beta[None, :, None, None]


def batch_norm_backward(x: np.ndarray, p: BatchNormParams, grad_out: np.ndarray):
    """Returns ``(grad_x, grad_gamma, grad_beta)``."""
    mean, var = _bn_stats(x, p)
    inv = (1.0 / np.sqrt(var + p.eps))[None, :, None, None]
    xhat = (x - mean[None, :, None, None]) * inv
    g_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    g_beta = grad_out.sum(axis=(0, 2, 3))
    gamma = p.gamma[None, :, None, None]
    if p.mode == "running":
        return grad_out * gamma * inv, g_gamma, g_beta
    m = x.shape[0] * x.shape[2] * x.shape[3]
    gx = (gamma * inv / m) * (
        m * grad_out - g_beta[None, :, None, None] - xhat * g_gamma[None, :, None, None]
    )
    return gx, g_gamma, g_beta


# ---------------------------------------------------------------- activations


def sigmoid(x: np.ndarray) -> np.ndarray:
    # branch-free stable form: exp of a non-positive argument only
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return grad_out * s * (1.0 - s)


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def silu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return grad_out * (s + x * s * (1.0 - s))


def softmax_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two-way softmax taken elementwise across a pair of same-shaped arrays."""
    if a.shape != b.shape:
        raise ShapeError(f"softmax_pair needs equal shapes, got {a.shape} and {b.shape}")
    alpha = sigmoid(a - b)
    return alpha, 1.0 - alpha


def softmax_pair_backward(a, b, grad_alpha, grad_beta):
    alpha, beta = softmax_pair(a, b)
    d = alpha * beta * (grad_alpha - grad_beta)
    return d, -d


# ---------------------------------------------------------------- pooling


def max_pool(x: np.ndarray, k: int, s: int = 1, p: int = 0) -> np.ndarray:
    _check4(x)
    _out_size(x.shape[2], k, s, p, "max_pool")
    _out_size(x.shape[3], k, s, p, "max_pool")
    win = _windows(_pad(x, p, -np.inf), k, s)
    return win.max(axis=(4, 5))


def max_pool_backward(x: np.ndarray, k: int, s: int, p: int, grad_out: np.ndarray) -> np.ndarray:
    """Routes each output gradient to the first row-major maximum of its window."""
    xp = _pad(x, p, -np.inf)
    win = _windows(xp, k, s)
    n, c, ho, wo = win.shape[:4]
    idx = win.reshape(n, c, ho, wo, k * k).argmax(axis=-1)
    rows = np.arange(ho)[:, None] * s + idx // k
    cols = np.arange(wo)[None, :] * s + idx % k
    gxp = np.zeros(xp.shape, dtype=grad_out.dtype)
    ni, ci = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
    np.add.at(gxp, (ni[..., None, None], ci[..., None, None], rows, cols), grad_out)
    return _unpad(gxp, p)


def _avg_counts(shape, k, s, p, dtype):
    ones = _pad(np.ones((1, 1) + tuple(shape[2:]), dtype=dtype), p)
    return _windows(ones, k, s).sum(axis=(4, 5))


def avg_pool(x: np.ndarray, k: int, s: int = 1, p: int = 0) -> np.ndarray:
    """Average over the in-bounds part of each window (padding not counted)."""
    _check4(x)
    _out_size(x.shape[2], k, s, p, "avg_pool")
    _out_size(x.shape[3], k, s, p, "avg_pool")
    sums = _windows(_pad(x, p), k, s).sum(axis=(4, 5))
    return sums / _avg_counts(x.shape, k, s, p, x.dtype)


def avg_pool_backward(x: np.ndarray, k: int, s: int, p: int, grad_out: np.ndarray) -> np.ndarray:
    g = grad_out / _avg_counts(x.shape, k, s, p, x.dtype)
    cols = np.broadcast_to(g[..., None, None], g.shape + (k, k))
    hp, wp = x.shape[2] + 2 * p, x.shape[3] + 2 * p
    return np.ascontiguousarray(_unpad(_fold(cols, (hp, wp), s), p))


def channel_max(x: np.ndarray) -> np.ndarray:
    _check4(x)
    return x.max(axis=1, keepdims=True)


def channel_max_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    idx = x.argmax(axis=1)[:, None]
    gx = np.zeros_like(x)
    np.put_along_axis(gx, idx, grad_out, axis=1)
    return gx


def channel_avg(x: np.ndarray) -> np.ndarray:
    _check4(x)
    return x.mean(axis=1, keepdims=True)


def channel_avg_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.broadcast_to(grad_out / x.shape[1], x.shape).copy()


def global_max(x: np.ndarray) -> np.ndarray:
    _check4(x)
    return x.max(axis=(2, 3), keepdims=True)


def global_max_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    idx = x.reshape(n, c, h * w).argmax(axis=-1)[..., None]
    gx = np.zeros((n, c, h * w), dtype=grad_out.dtype)
    np.put_along_axis(gx, idx, grad_out.reshape(n, c, 1), axis=-1)
    return gx.reshape(x.shape)


def global_avg(x: np.ndarray) -> np.ndarray:
    _check4(x)
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.broadcast_to(grad_out / (x.shape[2] * x.shape[3]), x.shape).copy()


# ---------------------------------------------------------------- dense


def fully_connected(x: np.ndarray, p: LinearParams) -> np.ndarray:
    if x.shape[-1] != p.weight.shape[1]:
        raise ShapeError(f"fully_connected expects D_in={p.weight.shape[1]}, got {x.shape[-1]}")
    return x @ p.weight.T + p.bias


def fully_connected_backward(x: np.ndarray, p: LinearParams, grad_out: np.ndarray):
    """Returns ``(grad_x, grad_weight, grad_bias)``."""
    g2 = grad_out.reshape(-1, p.weight.shape[0])
    x2 = x.reshape(-1, p.weight.shape[1])
    return grad_out @ p.weight, g2.T @ x2, g2.sum(axis=0)


# ---------------------------------------------------------------- edges

SCHARR_X = np.array([[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]]) / 16.0
SCHARR_Y = SCHARR_X.T.copy()


def _scharr_grads(x: np.ndarray):
    h, w = x.shape[2], x.shape[3]
    if h < 2 or w < 2:
        raise ShapeError(f"scharr_edge needs at least 2x2 planes, got {h}x{w}")
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")
    gx = np.zeros_like(x)
    gy = np.zeros_like(x)
    for ky in range(3):
        for kx in range(3):
            patch = xp[:, :, ky : ky + h, kx : kx + w]
            if SCHARR_X[ky, kx]:
                gx += SCHARR_X[ky, kx] * patch
            if SCHARR_Y[ky, kx]:
                gy += SCHARR_Y[ky, kx] * patch
    return gx, gy


def scharr_edge(x: np.ndarray) -> np.ndarray:
    """Per-channel gradient magnitude with 1/16-scaled Scharr kernels, reflect padding."""
    _check4(x)
    gx, gy = _scharr_grads(x)
    return np.sqrt(gx * gx + gy * gy)


def _reflect_pad1_backward(gp: np.ndarray) -> np.ndarray:
    h, w = gp.shape[2] - 2, gp.shape[3] - 2
    t = gp[:, :, :, 1:-1].copy()
    t[..., 1] += gp[..., 0]
    t[..., w - 2] += gp[..., w + 1]
    out = t[:, :, 1:-1, :].copy()
    out[:, :, 1, :] += t[:, :, 0, :]
    out[:, :, h - 2, :] += t[:, :, h + 1, :]
    return out


def scharr_edge_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    gx, gy = _scharr_grads(x)
    mag = np.sqrt(gx * gx + gy * gy)
    nz = mag > 0
    safe = np.where(nz, mag, 1.0)
    dgx = np.where(nz, grad_out * gx / safe, 0.0)
    dgy = np.where(nz, grad_out * gy / safe, 0.0)
    h, w = x.shape[2], x.shape[3]
    gp = np.zeros(x.shape[:2] + (h + 2, w + 2), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            gp[:, :, ky : ky + h, kx : kx + w] += SCHARR_X[ky, kx] * dgx + SCHARR_Y[ky, kx] * dgy
    return _reflect_pad1_backward(gp)


# ---------------------------------------------------------------- structure


def concat_channels(xs) -> np.ndarray:
    xs = list(xs)
    for x in xs:
        _check4(x)
    base = xs[0].shape
    for x in xs[1:]:
        if x.shape[0] != base[0] or x.shape[2:] != base[2:]:
            raise ShapeError(f"cannot concatenate {base} with {x.shape} over channels")
    return np.concatenate(xs, axis=1)


def split_channels(x: np.ndarray, sizes) -> list[np.ndarray]:
    sizes = list(sizes)
    if sum(sizes) != x.shape[1]:
        raise ShapeError(f"split sizes {sizes} do not sum to {x.shape[1]} channels")
    bounds = np.cumsum(sizes)[:-1]
    return np.split(x, bounds, axis=1)


def _broadcast_shape(a: np.ndarray, b: np.ndarray) -> tuple[int, ...]:
    if a.ndim != b.ndim:
        raise ShapeError(f"rank mismatch: {a.shape} vs {b.shape}")
    out = []
    for i, (da, db) in enumerate(zip(a.shape, b.shape)):
        if da == db or (i > 0 and (da == 1 or db == 1)):
            out.append(max(da, db))
        else:
            raise ShapeError(f"shapes {a.shape} and {b.shape} do not broadcast")
    return tuple(out)


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product; size-1 channel or spatial axes broadcast."""
    _broadcast_shape(a, b)
    return a * b


def mul_backward(a, b, grad_out):
    return _reduce_to(grad_out * b, a.shape), _reduce_to(grad_out * a, b.shape)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _broadcast_shape(a, b)
    return a + b


def add_backward(a, b, grad_out):
    return _reduce_to(grad_out, a.shape), _reduce_to(grad_out, b.shape)


def scale(x: np.ndarray, k: float) -> np.ndarray:
    return x * k


# ---------------------------------------------------------------- blocks


def block_forward(x: np.ndarray, blk: ConvBlock):
    """Returns ``(y, cache)`` for conv -> batch norm -> SiLU."""
    z = conv2d(x, blk.conv)
    zn = batch_norm(z, blk.bn) if blk.bn is not None else z
    y = silu(zn) if blk.act else zn
    return y, (x, z, zn)


def block_backward(blk: ConvBlock, cache, grad_out):
    """Returns ``(grad_x, grads)`` with grads keyed like ``conv.weight``."""
    x, z, zn = cache
    g = silu_backward(zn, grad_out) if blk.act else grad_out
    grads = {}
    if blk.bn is not None:
        g, grads["bn.gamma"], grads["bn.beta"] = batch_norm_backward(z, blk.bn, g)
    gx, grads["conv.weight"], gb = conv2d_backward(x, blk.conv, g)
    if gb is not None:
        grads["conv.bias"] = gb
    return gx, grads


def apply_block(x: np.ndarray, blk: ConvBlock) -> np.ndarray:
    return block_forward(x, blk)[0]
