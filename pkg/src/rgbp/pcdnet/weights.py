"""Weight containers for the fusion modules and the toy twin encoder.

Every weight set is a tree of dataclasses. :func:`named_arrays` flattens
it to dotted names such as ``cddq.0.conv_mu.conv.weight``. Those names
key the gradient dicts returned by the backward passes and the entries of
``RGBPW`` files.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Union

import numpy as np

from ..containers import load_weights_file, save_weights_file
from ..errors import FormatError
from ..prng import SplitMix64
from ..tensor_ops import ConvBlock, ConvParams, LinearParams, conv_block
from .config import NetworkConfig

_NON_TRAINABLE = ("running_mean", "running_var")


@dataclass
class PiWeights:
    conv_attn: ConvBlock  # 2 -> 3 on channel avg/max of DoLP
    conv_pool: ConvBlock  # 3 -> 3 on DoLP, ahead of the 5x5 max pool
    conv_phi: ConvBlock  # 3 -> C_pi/2 on the filtered AoLP
    conv_edge: ConvBlock  # 3 -> C_pi/2 on DoLP plus its edges
    conv_out: ConvBlock  # C_pi -> C_pi


@dataclass
class MspWeights:
    down1: ConvBlock
    down2: ConvBlock
    up1: ConvBlock
    up2: ConvBlock
    variant: str = "spatial"


@dataclass
class McpWeights:
    down: ConvBlock
    mix: ConvBlock
    m1: LinearParams  # (C/r, C)
    m2: LinearParams  # (C, C/r)
    up: ConvBlock
    variant: str = "channel"


MpWeights = Union[MspWeights, McpWeights]


@dataclass
class CddqWeights:
    conv_eta_max: ConvBlock  # 1x1, no batch norm
    conv_eta_avg: ConvBlock  # 1x1, no batch norm
    conv_mu: ConvBlock  # 7x7, 2 -> 1
    conv_pol_gate: ConvBlock  # 3x3, 1 -> C
    fc1: LinearParams  # (hidden, 2C)
    fc2: LinearParams  # (2C, hidden)
    conv_fuse: ConvBlock  # 1x1, 2C -> C_out


@dataclass
class StageWeights:
    down: ConvBlock  # 3x3 stride 2
    mix: ConvBlock  # 3x3 stride 1


@dataclass
class NetworkWeights:
    pi: PiWeights
    rgb_stages: list[StageWeights]
    pol_stages: list[StageWeights]
    mp: list[MpWeights | None]
    cddq: list[CddqWeights | None]
    head: list[ConvParams]


# ---------------------------------------------------------------- builders


def _w(cout, cin, k, dtype):
    return np.zeros((cout, cin, k, k), dtype=dtype)


def _blk(cout, cin, k, dtype, stride=1, transposed=False, bn=True):
    bias = None if bn else np.zeros(cout, dtype)
    return conv_block(_w(cout, cin, k, dtype), bias, stride=stride, transposed=transposed, bn=bn)


def _lin(dout, din, dtype):
    return LinearParams(np.zeros((dout, din), dtype), np.zeros(dout, dtype))


def make_pi(c_pi: int, dtype=np.float64) -> PiWeights:
    half = c_pi // 2
    return PiWeights(
        conv_attn=_blk(3, 2, 3, dtype),
        conv_pool=_blk(3, 3, 3, dtype),
        conv_phi=_blk(half, 3, 3, dtype),
        conv_edge=_blk(half, 3, 3, dtype),
        conv_out=_blk(c_pi, c_pi, 3, dtype),
    )


def make_msp(c: int, dtype=np.float64) -> MspWeights:
    return MspWeights(
        down1=_blk(c, c, 3, dtype, stride=2),
        down2=_blk(c, c, 3, dtype, stride=2),
        up1=_blk(c, c, 2, dtype, stride=2, transposed=True),
        up2=_blk(c, c, 2, dtype, stride=2, transposed=True),
    )


def make_mcp(c: int, reduction: int = 4, dtype=np.float64) -> McpWeights:
    hidden = max(1, c // reduction)
    return McpWeights(
        down=_blk(c, c, 3, dtype, stride=2),
        mix=_blk(c, c, 1, dtype),
        m1=_lin(hidden, c, dtype),
        m2=_lin(c, hidden, dtype),
        up=_blk(c, c, 2, dtype, stride=2, transposed=True),
    )


def make_cddq(c: int, c_out: int | None = None, hidden: int | None = None, dtype=np.float64) -> CddqWeights:
    c_out = c if c_out is None else c_out
    hidden = c if not hidden else hidden
    return CddqWeights(
        conv_eta_max=_blk(c, c, 1, dtype, bn=False),
        conv_eta_avg=_blk(c, c, 1, dtype, bn=False),
        conv_mu=_blk(1, 2, 7, dtype),
        conv_pol_gate=_blk(c, 1, 3, dtype),
        fc1=_lin(hidden, 2 * c, dtype),
        fc2=_lin(2 * c, hidden, dtype),
        conv_fuse=_blk(c_out, 2 * c, 1, dtype),
    )


def make_network(cfg: NetworkConfig, dtype=np.float64) -> NetworkWeights:
    rgb, pol, mp, cddq, head = [], [], [], [], []
    c_rgb, c_pol = 3, cfg.c_pi
    for i, width in enumerate(cfg.widths):
        rgb.append(StageWeights(_blk(width, c_rgb, 3, dtype, stride=2), _blk(width, width, 3, dtype)))
        pol.append(StageWeights(_blk(width, c_pol, 3, dtype, stride=2), _blk(width, width, 3, dtype)))
        kind = cfg.mp_assignment[i]
        mp.append(make_msp(width, dtype) if kind == "S" else make_mcp(width, cfg.mp_reduction, dtype) if kind == "C" else None)
        fused = (i + 1) in cfg.fusion_stages
        cddq.append(make_cddq(width, hidden=cfg.cwda_hidden or width, dtype=dtype) if fused else None)
        head.append(ConvParams(_w(5 * cfg.num_anchors, width, 1, dtype), np.zeros(5 * cfg.num_anchors, dtype)))
        c_rgb = c_pol = width
    return NetworkWeights(make_pi(cfg.c_pi, dtype), rgb, pol, mp, cddq, head)


# ---------------------------------------------------------------- flattening


def named_arrays(obj, prefix: str = "", trainable_only: bool = False) -> dict[str, np.ndarray]:
    """Flatten a weight tree to ``{dotted name: array}``; arrays are not copied."""
    out: dict[str, np.ndarray] = {}

    def walk(node, path):
        if node is None:
            return
        if isinstance(node, np.ndarray):
            if trainable_only and path.rsplit(".", 1)[-1] in _NON_TRAINABLE:
                return
            out[path] = node
        elif dataclasses.is_dataclass(node):
            for f in dataclasses.fields(node):
                walk(getattr(node, f.name), f"{path}.{f.name}" if path else f.name)
        elif isinstance(node, (list, tuple)):
            for i, item in enumerate(node):
                walk(item, f"{path}.{i}" if path else str(i))

    walk(obj, prefix)
    return out


def prefixed(prefix: str, grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in grads.items()}


def set_bn_mode(obj, mode: str) -> None:
    """Switch every batch norm in a weight tree to ``batch`` or ``running`` statistics."""
    if isinstance(obj, ConvBlock):
        if obj.bn is not None:
            obj.bn.mode = mode
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            set_bn_mode(getattr(obj, f.name), mode)
    elif isinstance(obj, (list, tuple)):
        for item in obj:
            set_bn_mode(item, mode)


def randomize(obj, seed: int) -> None:
    """Kaiming-uniform fill of every conv and linear weight, in place.

    Weights are visited in :func:`named_arrays` order and each takes the
    next ``size`` draws of one SplitMix64 stream, scaled to
    ``U(-b, b)`` with ``b = sqrt(6 / fan_in)``. Biases and batch-norm
    buffers keep their zero/identity values.
    """
    rng = SplitMix64(seed)
    for name, arr in named_arrays(obj).items():
        if not name.endswith("weight"):
            continue
        fan_in = int(np.prod(arr.shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        arr[...] = rng.uniform(arr.size, -bound, bound).reshape(arr.shape)


def init_weights(cfg: NetworkConfig, seed: int | None = None, dtype=np.float64) -> NetworkWeights:
    w = make_network(cfg, dtype)
    randomize(w, cfg.seed if seed is None else seed)
    return w


def save_weights(path, weights: NetworkWeights) -> None:
    save_weights_file(path, named_arrays(weights))


def load_weights(path, cfg: NetworkConfig, dtype=None) -> NetworkWeights:
    """Read an ``RGBPW`` file into the structure that ``cfg`` describes.

    Without ``dtype`` the arrays keep the float type they were stored with.
    """
    data = load_weights_file(path)
    if dtype is None:
        dtype = next(iter(data.values())).dtype if data else np.float64
    w = make_network(cfg, dtype)
    slots = named_arrays(w)
    for name in data:
        if name not in slots:
            raise FormatError(f"entry {name!r} does not belong to this network config", name)
    for name, slot in slots.items():
        if name not in data:
            raise FormatError(f"missing entry {name!r}", name)
        arr = data[name]
        if arr.shape != slot.shape:
            raise FormatError(f"entry {name!r} has shape {arr.shape}, expected {slot.shape}", name)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"entry {name!r} contains non-finite values", name)
        slot[...] = arr
    return w
