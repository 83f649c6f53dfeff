"""Seeded gradient-check cases for every primitive and composite module.

``CASES[name](seed)`` returns a :class:`~rgbp.gradcheck.GradCase`. The
``MODULE_GROUPS`` mapping tells the CLI which cases one ``--module``
covers. Composite cases switch batch norm to batch statistics and jitter
its affine parameters so every backward term is exercised.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor_ops as T
from .gradcheck import GradCase, GradReport, grad_check
from .pcdnet import modules as M
from .pcdnet.config import NetworkConfig
from .pcdnet.network import network_forward, network_vjp
from .pcdnet.weights import (
    make_cddq,
    make_mcp,
    make_msp,
    make_network,
    make_pi,
    named_arrays,
    randomize,
    set_bn_mode,
)


def _rng(seed):
    return np.random.default_rng(seed)


def _prepare(weights, seed):
    randomize(weights, seed)
    set_bn_mode(weights, "batch")
    rng = _rng(seed + 1000)
    for name, arr in named_arrays(weights).items():
        if name.endswith("bn.gamma"):
            arr[...] = rng.uniform(0.5, 1.5, arr.shape)
        elif name.endswith(("bn.beta", "bias")):
            arr[...] = rng.uniform(-0.2, 0.2, arr.shape)
    return named_arrays(weights, trainable_only=True)


# ---------------------------------------------------------------- primitives


def _conv_case(seed, transposed=False):
    rng = _rng(seed)
    if transposed:
        x = rng.standard_normal((2, 3, 4, 5))
        p = T.ConvParams(rng.standard_normal((4, 3, 3, 3)) * 0.3, rng.standard_normal(4), stride=2, padding=1, transposed=True)
    else:
        x = rng.standard_normal((2, 3, 7, 6))
        p = T.ConvParams(rng.standard_normal((4, 3, 3, 3)) * 0.3, rng.standard_normal(4), stride=2, padding=1)
    arrays = {"x": x, "weight": p.weight, "bias": p.bias}

    def backward(cots):
        gx, gw, gb = T.conv2d_backward(x, p, cots[0])
        return {"x": gx, "weight": gw, "bias": gb}

    return GradCase("conv_transpose2d" if transposed else "conv2d", arrays, lambda: T.conv2d(x, p), backward)


def _bn_case(seed, mode="batch"):
    rng = _rng(seed)
    x = rng.standard_normal((3, 4, 5, 5)) * 2 + 1
    p = T.BatchNormParams(rng.uniform(0.5, 1.5, 4), rng.standard_normal(4), rng.standard_normal(4),
                          rng.uniform(0.5, 2, 4), mode=mode)
    arrays = {"x": x, "gamma": p.gamma, "beta": p.beta}

    def backward(cots):
        gx, gg, gb = T.batch_norm_backward(x, p, cots[0])
        return {"x": gx, "gamma": gg, "beta": gb}

    return GradCase(f"batch_norm_{mode}", arrays, lambda: T.batch_norm(x, p), backward)


def _fc_case(seed):
    rng = _rng(seed)
    x = rng.standard_normal((3, 5))
    p = T.LinearParams(rng.standard_normal((4, 5)), rng.standard_normal(4))
    arrays = {"x": x, "weight": p.weight, "bias": p.bias}

    def backward(cots):
        gx, gw, gb = T.fully_connected_backward(x, p, cots[0])
        return {"x": gx, "weight": gw, "bias": gb}

    return GradCase("fully_connected", arrays, lambda: T.fully_connected(x, p), backward)


def _unary_case(name, fwd, bwd, shape=(2, 3, 5, 6), scale=2.0):
    def build(seed):
        x = _rng(seed).standard_normal(shape) * scale
        return GradCase(name, {"x": x}, lambda: fwd(x), lambda cots: {"x": bwd(x, cots[0])})

    return build


def _softmax_case(seed):
    rng = _rng(seed)
    a, b = rng.standard_normal((2, 4, 3, 3)), rng.standard_normal((2, 4, 3, 3))

    def backward(cots):
        ga, gb = T.softmax_pair_backward(a, b, cots[0], cots[1])
        return {"a": ga, "b": gb}

    return GradCase("softmax_pair", {"a": a, "b": b}, lambda: T.softmax_pair(a, b), backward)


def _pool_case(name, fwd, bwd, k, s, p):
    def build(seed):
        x = _rng(seed).standard_normal((2, 3, 7, 7))
        return GradCase(name, {"x": x}, lambda: fwd(x, k, s, p), lambda cots: {"x": bwd(x, k, s, p, cots[0])})

    return build


def _mul_case(seed):
    rng = _rng(seed)
    a = rng.standard_normal((2, 1, 4, 5))
    b = rng.standard_normal((2, 3, 4, 5))
    c = rng.standard_normal((2, 3, 1, 1))

    def fwd():
        return T.mul(c, T.mul(a, b))

    def backward(cots):
        ab = a * b
        gc, gab = T.mul_backward(c, ab, cots[0])
        ga, gb = T.mul_backward(a, b, gab)
        return {"a": ga, "b": gb, "c": gc}

    return GradCase("broadcast_mul", {"a": a, "b": b, "c": c}, fwd, backward)


# ---------------------------------------------------------------- composites


def _pi_case(seed):
    rng = _rng(seed)
    w = make_pi(4)
    params = _prepare(w, seed)
    aolp, dolp = rng.uniform(0, 1, (2, 3, 8, 8)), rng.uniform(0, 1, (2, 3, 8, 8))
    arrays = {"aolp": aolp, "dolp": dolp, **params}

    def backward(cots):
        ga, gd, grads = M.pi_vjp(aolp, dolp, w, cots[0])
        return {"aolp": ga, "dolp": gd, **grads}

    return GradCase("pi", arrays, lambda: M.pi_forward(aolp, dolp, w), backward, max_per_array=8)


def _msp_case(seed):
    rng = _rng(seed)
    w = make_msp(3)
    params = _prepare(w, seed)
    f = rng.standard_normal((2, 3, 8, 8))

    def backward(cots):
        gf, grads = M.msp_vjp(f, w, cots[0])
        return {"f": gf, **grads}

    return GradCase("msp", {"f": f, **params}, lambda: M.msp_forward(f, w), backward, max_per_array=8)


def _mcp_case(seed):
    rng = _rng(seed)
    w = make_mcp(8, reduction=4)
    params = _prepare(w, seed)
    f = rng.standard_normal((2, 8, 6, 6))

    def backward(cots):
        gf, grads = M.mcp_vjp(f, w, cots[0])
        return {"f": gf, **grads}

    return GradCase("mcp", {"f": f, **params}, lambda: M.mcp_forward(f, w), backward, max_per_array=8)


def _cddq_weights(seed, c=4):
    w = make_cddq(c)
    return w, _prepare(w, seed)


def _sdmd_case(seed):
    rng = _rng(seed)
    w, params = _cddq_weights(seed)
    sub = {k: v for k, v in params.items() if not k.startswith(("fc1", "fc2", "conv_fuse"))}
    f_rgb, f_pol = rng.standard_normal((2, 4, 6, 6)), rng.standard_normal((2, 4, 6, 6))

    def backward(cots):
        g_rgb, g_pol, grads = M.sdmd_vjp(f_rgb, f_pol, w, *cots)
        return {"f_rgb": g_rgb, "f_pol": g_pol, **grads}

    return GradCase("sdmd", {"f_rgb": f_rgb, "f_pol": f_pol, **sub},
                    lambda: M.sdmd_forward(f_rgb, f_pol, w), backward, max_per_array=8)


def _cwda_case(seed):
    rng = _rng(seed)
    w, params = _cddq_weights(seed)
    sub = {k: v for k, v in params.items() if k.startswith(("fc1", "fc2", "conv_fuse"))}
    r, p = rng.standard_normal((2, 4, 5, 5)), rng.standard_normal((2, 4, 5, 5))

    def backward(cots):
        g_r, g_p, grads = M.cwda_vjp(r, p, w, *cots)
        return {"rgb_star": g_r, "pol_star": g_p, **grads}

    return GradCase("cwda", {"rgb_star": r, "pol_star": p, **sub},
                    lambda: M.cwda_forward(r, p, w), backward, max_per_array=8)


def _cddq_case(seed):
    rng = _rng(seed)
    w, params = _cddq_weights(seed)
    f_rgb, f_pol = rng.standard_normal((2, 4, 6, 6)), rng.standard_normal((2, 4, 6, 6))

    def backward(cots):
        g_rgb, g_pol, grads = M.cddq_vjp(f_rgb, f_pol, w, cots[0])
        return {"f_rgb": g_rgb, "f_pol": g_pol, **grads}

    return GradCase("cddq", {"f_rgb": f_rgb, "f_pol": f_pol, **params},
                    lambda: M.cddq_forward(f_rgb, f_pol, w)[0], backward, max_per_array=6)


def network_case(seed, cfg: NetworkConfig | None = None, size: int = 32) -> GradCase:
    cfg = cfg or NetworkConfig()
    rng = _rng(seed)
    w = make_network(cfg)
    params = _prepare(w, seed)
    rgb = rng.uniform(0, 1, (1, 3, size, size))
    aolp = rng.uniform(0, 1, (1, 3, size, size))
    dolp = rng.uniform(0, 1, (1, 3, size, size))

    def backward(cots):
        g_rgb, g_a, g_d, grads = network_vjp(rgb, aolp, dolp, cfg, w, cots)
        return {"rgb": g_rgb, "aolp": g_a, "dolp": g_d, **grads}

    return GradCase("network", {"rgb": rgb, "aolp": aolp, "dolp": dolp, **params},
                    lambda: network_forward(rgb, aolp, dolp, cfg, w), backward, max_per_array=3)


CASES: dict[str, Callable[[int], GradCase]] = {
    "conv2d": _conv_case,
    "conv_transpose2d": lambda seed: _conv_case(seed, transposed=True),
    "batch_norm": _bn_case,
    "batch_norm_running": lambda seed: _bn_case(seed, "running"),
    "fully_connected": _fc_case,
    "silu": _unary_case("silu", T.silu, T.silu_backward),
    "sigmoid": _unary_case("sigmoid", T.sigmoid, T.sigmoid_backward),
    "softmax_pair": _softmax_case,
    "max_pool": _pool_case("max_pool", T.max_pool, T.max_pool_backward, 3, 2, 1),
    "max_pool5": _pool_case("max_pool5", T.max_pool, T.max_pool_backward, 5, 1, 2),
    "avg_pool": _pool_case("avg_pool", T.avg_pool, T.avg_pool_backward, 3, 1, 1),
    "channel_max": _unary_case("channel_max", T.channel_max, T.channel_max_backward),
    "channel_avg": _unary_case("channel_avg", T.channel_avg, T.channel_avg_backward),
    "global_max": _unary_case("global_max", T.global_max, T.global_max_backward),
    "global_avg": _unary_case("global_avg", T.global_avg, T.global_avg_backward),
    "scharr_edge": _unary_case("scharr_edge", T.scharr_edge, T.scharr_edge_backward, (2, 2, 6, 7)),
    "broadcast_mul": _mul_case,
    "pi": _pi_case,
    "msp": _msp_case,
    "mcp": _mcp_case,
    "sdmd": _sdmd_case,
    "cwda": _cwda_case,
    "cddq": _cddq_case,
    "network": network_case,
}

PRIMITIVES = [n for n in CASES if n not in ("pi", "msp", "mcp", "sdmd", "cwda", "cddq", "network")]

MODULE_GROUPS: dict[str, list[str]] = {
    "tensor_ops": PRIMITIVES,
    "pi": ["pi"],
    "mp": ["msp", "mcp"],
    "msp": ["msp"],
    "mcp": ["mcp"],
    "sdmd": ["sdmd"],
    "cwda": ["cwda"],
    "cddq": ["sdmd", "cwda", "cddq"],
    "network": ["network"],
    "all": list(CASES),
}
MODULE_GROUPS.update({n: [n] for n in CASES if n not in MODULE_GROUPS})


def run_group(module: str, seed: int) -> list[GradReport]:
    return [grad_check(CASES[name](seed), seed=seed) for name in MODULE_GROUPS[module]]
