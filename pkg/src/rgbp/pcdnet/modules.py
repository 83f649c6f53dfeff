"""Polarization integration, material perception and cross-domain fusion.

Each module has a public ``*_forward`` and a ``*_vjp`` that recomputes the
forward and returns gradients. The private ``_*_fwd`` / ``_*_bwd`` pairs
pass caches so the network backward can chain them without recomputing.
Parameter gradients are keyed by the dotted names from
:func:`~rgbp.pcdnet.weights.named_arrays`.
"""

from __future__ import annotations

import numpy as np

from .. import tensor_ops as T
from ..errors import ShapeError
from .weights import CddqWeights, McpWeights, MspWeights, PiWeights, prefixed

MAXPOOL_K = 5
GATE_POOL_K = 3


def _merge(*dicts) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for d in dicts:
        for k, v in d.items():
            out[k] = out[k] + v if k in out else v
    return out


# ---------------------------------------------------------------- PI


def _pi_fwd(aolp: np.ndarray, dolp: np.ndarray, w: PiWeights):
    for name, t in (("aolp", aolp), ("dolp", dolp)):
        if t.ndim != 4 or t.shape[1] != 3:
            raise ShapeError(f"{name} must be (N, 3, H, W), got {t.shape}", name)
    if aolp.shape != dolp.shape:
        raise ShapeError(f"aolp {aolp.shape} and dolp {dolp.shape} differ")
    if aolp.shape[2] < MAXPOOL_K or aolp.shape[3] < MAXPOOL_K:
        raise ShapeError(f"PI needs H, W >= {MAXPOOL_K}, got {aolp.shape[2:]}")
    rho, phi = dolp, aolp
    pooled = T.concat_channels([T.channel_avg(rho), T.channel_max(rho)])
    t_attn, c_attn = T.block_forward(pooled, w.conv_attn)
    t_pool, c_pool = T.block_forward(rho, w.conv_pool)
    t_max = T.max_pool(t_pool, MAXPOOL_K, 1, MAXPOOL_K // 2)
    gate = t_attn + T.sigmoid(t_max)
    f_phirho = T.mul(phi, gate)
    edged = rho + T.scharr_edge(rho)
    u_phi, c_phi = T.block_forward(f_phirho, w.conv_phi)
    u_edge, c_edge = T.block_forward(edged, w.conv_edge)
    out, c_out = T.block_forward(T.concat_channels([u_phi, u_edge]), w.conv_out)
    cache = (rho, phi, c_attn, c_pool, t_pool, t_max, gate, f_phirho, c_phi, c_edge, c_out)
    return out, cache


def _pi_bwd(w: PiWeights, cache, g_out):
    rho, phi, c_attn, c_pool, t_pool, t_max, gate, f_phirho, c_phi, c_edge, c_out = cache
    g_cat, gr_out = T.block_backward(w.conv_out, c_out, g_out)
    half = g_cat.shape[1] // 2
    g_uphi, g_uedge = T.split_channels(g_cat, [half, half])
    g_f, gr_phi = T.block_backward(w.conv_phi, c_phi, g_uphi)
    g_edged, gr_edge = T.block_backward(w.conv_edge, c_edge, g_uedge)
    g_rho = g_edged + T.scharr_edge_backward(rho, g_edged)
    g_phi, g_gate = T.mul_backward(phi, gate, g_f)
    g_tmax = T.sigmoid_backward(t_max, g_gate)
    g_tpool = T.max_pool_backward(t_pool, MAXPOOL_K, 1, MAXPOOL_K // 2, g_tmax)
    g_rho_pool, gr_pool = T.block_backward(w.conv_pool, c_pool, g_tpool)
    g_pooled, gr_attn = T.block_backward(w.conv_attn, c_attn, g_gate)
    g_avg, g_max = T.split_channels(g_pooled, [1, 1])
    g_rho = g_rho + g_rho_pool + T.channel_avg_backward(rho, g_avg) + T.channel_max_backward(rho, g_max)
    grads = _merge(
        prefixed("conv_out", gr_out),
        prefixed("conv_phi", gr_phi),
        prefixed("conv_edge", gr_edge),
        prefixed("conv_pool", gr_pool),
        prefixed("conv_attn", gr_attn),
    )
    return g_phi, g_rho, grads


def pi_forward(aolp: np.ndarray, dolp: np.ndarray, w: PiWeights) -> np.ndarray:
    """Fuse AoLP (already divided by pi) and DoLP into one polarization feature.

    The AoLP is gated by two DoLP-driven maps: a conv over the channel
    average/maximum of DoLP, and a sigmoid of a 5x5 max-pooled conv of
    DoLP. The gated angle and DoLP-plus-Scharr-edges each pass through a
    3x3 block; a final 3x3 block mixes their concatenation.
    """
    return _pi_fwd(aolp, dolp, w)[0]


def pi_vjp(aolp, dolp, w: PiWeights, g_out):
    """Returns ``(grad_aolp, grad_dolp, param_grads)``."""
    _, cache = _pi_fwd(aolp, dolp, w)
    return _pi_bwd(w, cache, g_out)


# ---------------------------------------------------------------- MSP / MCP


def _check_div(f: np.ndarray, d: int, what: str) -> None:
    if f.ndim != 4:
        raise ShapeError(f"{what} input must be (N, C, H, W), got {f.shape}")
    if f.shape[2] % d or f.shape[3] % d:
        raise ShapeError(f"{what} needs H and W divisible by {d}, got {f.shape[2]}x{f.shape[3]}")


def _msp_fwd(f: np.ndarray, w: MspWeights):
    _check_div(f, 4, "MSP")
    caches = []
    x = f
    for blk in (w.down1, w.down2, w.up1, w.up2):
        x, c = T.block_forward(x, blk)
        caches.append(c)
    return x, caches


def _msp_bwd(w: MspWeights, caches, g):
    grads = {}
    for name, blk, c in reversed(list(zip(("down1", "down2", "up1", "up2"), (w.down1, w.down2, w.up1, w.up2), caches))):
        g, gr = T.block_backward(blk, c, g)
        grads.update(prefixed(name, gr))
    return g, grads


def msp_forward(f: np.ndarray, w: MspWeights) -> np.ndarray:
    """Two stride-2 convs down to a quarter size, two stride-2 transposed convs back."""
    return _msp_fwd(f, w)[0]


def msp_vjp(f, w: MspWeights, g_out):
    _, caches = _msp_fwd(f, w)
    return _msp_bwd(w, caches, g_out)


def _mcp_fwd(f: np.ndarray, w: McpWeights):
    _check_div(f, 2, "MCP")
    x1, c_down = T.block_forward(f, w.down)
    x2, c_mix = T.block_forward(x1, w.mix)
    n, c = x2.shape[:2]
    v = T.global_avg(x2).reshape(n, c)
    h = T.fully_connected(v, w.m1)
    z = T.fully_connected(h, w.m2)
    gate = T.sigmoid(z).reshape(n, c, 1, 1)
    m = x2 + T.mul(x2, gate)
    out, c_up = T.block_forward(m, w.up)
    return out, (c_down, c_mix, x2, v, h, z, gate, c_up)


def _mcp_bwd(w: McpWeights, cache, g):
    c_down, c_mix, x2, v, h, z, gate, c_up = cache
    n, c = x2.shape[:2]
    g_m, gr_up = T.block_backward(w.up, c_up, g)
    g_x2a, g_gate = T.mul_backward(x2, gate, g_m)
    g_z = T.sigmoid_backward(z, g_gate.reshape(n, c))
    g_h, g_m2w, g_m2b = T.fully_connected_backward(h, w.m2, g_z)
    g_v, g_m1w, g_m1b = T.fully_connected_backward(v, w.m1, g_h)
    g_x2 = g_m + g_x2a + T.global_avg_backward(x2, g_v.reshape(n, c, 1, 1))
    g_x1, gr_mix = T.block_backward(w.mix, c_mix, g_x2)
    g_f, gr_down = T.block_backward(w.down, c_down, g_x1)
    grads = _merge(
        prefixed("up", gr_up),
        prefixed("mix", gr_mix),
        prefixed("down", gr_down),
        {"m1.weight": g_m1w, "m1.bias": g_m1b, "m2.weight": g_m2w, "m2.bias": g_m2b},
    )
    return g_f, grads


def mcp_forward(f: np.ndarray, w: McpWeights) -> np.ndarray:
    """Stride-2 conv, 1x1 conv, the residual perception gate, then a transposed conv back up.

    The gate is ``x + x * sigmoid(m2(m1(global_avg(x))))`` with the sigmoid
    broadcast over space.
    """
    return _mcp_fwd(f, w)[0]


def mcp_vjp(f, w: McpWeights, g_out):
    _, cache = _mcp_fwd(f, w)
    return _mcp_bwd(w, cache, g_out)


def mp_forward(f, w):
    return msp_forward(f, w) if isinstance(w, MspWeights) else mcp_forward(f, w)


def _mp_fwd(f, w):
    return _msp_fwd(f, w) if isinstance(w, MspWeights) else _mcp_fwd(f, w)


def _mp_bwd(w, cache, g):
    return _msp_bwd(w, cache, g) if isinstance(w, MspWeights) else _mcp_bwd(w, cache, g)


# ---------------------------------------------------------------- SDMD


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim != 4 or a.shape != b.shape:
        raise ShapeError(f"RGB feature {a.shape} and polarization feature {b.shape} must match")


def _sdmd_fwd(f_rgb: np.ndarray, f_pol: np.ndarray, w: CddqWeights):
    _check_pair(f_rgb, f_pol)
    gmax, gavg = T.global_max(f_rgb), T.global_avg(f_rgb)
    e_max, c_emax = T.block_forward(gmax, w.conv_eta_max)
    e_avg, c_eavg = T.block_forward(gavg, w.conv_eta_avg)
    s = e_max + e_avg
    eta = T.sigmoid(s)
    f_prime = T.mul(eta, f_rgb)
    q = T.concat_channels([T.channel_avg(f_prime), T.channel_max(f_prime)])
    mu_pre, c_mu = T.block_forward(q, w.conv_mu)
    mu = T.sigmoid(mu_pre)
    rgb_star = f_rgb + T.mul(mu, f_prime)
    mu_pooled = T.avg_pool(mu, GATE_POOL_K, 1, GATE_POOL_K // 2)
    pol_gate, c_gate = T.block_forward(mu_pooled, w.conv_pol_gate)
    pol_star = f_pol + T.mul(pol_gate, f_pol)
    cache = (f_rgb, f_pol, c_emax, c_eavg, s, eta, f_prime, c_mu, mu_pre, mu, pol_gate, c_gate)
    return (rgb_star, pol_star, mu, eta), cache


def _sdmd_bwd(w: CddqWeights, cache, g_rgb_star, g_pol_star, g_mu=None, g_eta=None):
    f_rgb, f_pol, c_emax, c_eavg, s, eta, f_prime, c_mu, mu_pre, mu, pol_gate, c_gate = cache
    g_gate, g_pol_a = T.mul_backward(pol_gate, f_pol, g_pol_star)
    g_pol = g_pol_star + g_pol_a
    g_mupool, gr_gate = T.block_backward(w.conv_pol_gate, c_gate, g_gate)
    g_mu_total = T.avg_pool_backward(mu, GATE_POOL_K, 1, GATE_POOL_K // 2, g_mupool)
    if g_mu is not None:
        g_mu_total = g_mu_total + g_mu
    g_mu_b, g_fprime = T.mul_backward(mu, f_prime, g_rgb_star)
    g_mu_total = g_mu_total + g_mu_b
    g_q, gr_mu = T.block_backward(w.conv_mu, c_mu, T.sigmoid_backward(mu_pre, g_mu_total))
    g_qa, g_qm = T.split_channels(g_q, [1, 1])
    g_fprime = g_fprime + T.channel_avg_backward(f_prime, g_qa) + T.channel_max_backward(f_prime, g_qm)
    g_eta_b, g_rgb_b = T.mul_backward(eta, f_rgb, g_fprime)
    if g_eta is not None:
        g_eta_b = g_eta_b + g_eta
    g_s = T.sigmoid_backward(s, g_eta_b)
    g_gmax, gr_emax = T.block_backward(w.conv_eta_max, c_emax, g_s)
    g_gavg, gr_eavg = T.block_backward(w.conv_eta_avg, c_eavg, g_s)
    g_rgb = (
        g_rgb_star
        + g_rgb_b
        + T.global_max_backward(f_rgb, g_gmax)
        + T.global_avg_backward(f_rgb, g_gavg)
    )
    grads = _merge(
        prefixed("conv_pol_gate", gr_gate),
        prefixed("conv_mu", gr_mu),
        prefixed("conv_eta_max", gr_emax),
        prefixed("conv_eta_avg", gr_eavg),
    )
    return g_rgb, g_pol, grads


def sdmd_forward(f_rgb, f_pol, w: CddqWeights):
    """Spatial demand map delivery.

    Returns ``(f_rgb_star, f_pol_star, mu, eta)``: the channel attention
    ``eta`` is (N, C, 1, 1) and the spatial demand map ``mu`` is (N, 1, H, W).
    """
    return _sdmd_fwd(f_rgb, f_pol, w)[0]


def sdmd_vjp(f_rgb, f_pol, w: CddqWeights, g_rgb_star, g_pol_star, g_mu=None, g_eta=None):
    _, cache = _sdmd_fwd(f_rgb, f_pol, w)
    return _sdmd_bwd(w, cache, g_rgb_star, g_pol_star, g_mu, g_eta)


# ---------------------------------------------------------------- CWDA


def _cwda_fwd(rgb_star: np.ndarray, pol_star: np.ndarray, w: CddqWeights):
    _check_pair(rgb_star, pol_star)
    n, c = rgb_star.shape[:2]
    pooled = np.concatenate(
        [T.global_avg(rgb_star).reshape(n, c), T.global_avg(pol_star).reshape(n, c)], axis=1
    )
    h1 = T.fully_connected(pooled, w.fc1)
    h2 = T.silu(h1)
    z = T.fully_connected(h2, w.fc2)
    sz = T.sigmoid(z)
    za, zb = sz[:, :c], sz[:, c:]
    alpha, beta = T.softmax_pair(za, zb)
    a4, b4 = alpha.reshape(n, c, 1, 1), beta.reshape(n, c, 1, 1)
    cat = T.concat_channels([T.mul(a4, rgb_star), T.mul(b4, pol_star)])
    fused, c_fuse = T.block_forward(cat, w.conv_fuse)
    cache = (rgb_star, pol_star, pooled, h1, h2, z, za, zb, a4, b4, c_fuse)
    return (fused, a4, b4), cache


def _cwda_bwd(w: CddqWeights, cache, g_fused, g_alpha=None, g_beta=None):
    rgb_star, pol_star, pooled, h1, h2, z, za, zb, a4, b4, c_fuse = cache
    n, c = rgb_star.shape[:2]
    g_cat, gr_fuse = T.block_backward(w.conv_fuse, c_fuse, g_fused)
    g_a, g_b = T.split_channels(g_cat, [c, c])
    g_a4, g_rgb = T.mul_backward(a4, rgb_star, g_a)
    g_b4, g_pol = T.mul_backward(b4, pol_star, g_b)
    if g_alpha is not None:
        g_a4 = g_a4 + g_alpha
    if g_beta is not None:
        g_b4 = g_b4 + g_beta
    g_za, g_zb = T.softmax_pair_backward(za, zb, g_a4.reshape(n, c), g_b4.reshape(n, c))
    g_z = T.sigmoid_backward(z, np.concatenate([g_za, g_zb], axis=1))
    g_h2, g_fc2w, g_fc2b = T.fully_connected_backward(h2, w.fc2, g_z)
    g_h1 = T.silu_backward(h1, g_h2)
    g_pooled, g_fc1w, g_fc1b = T.fully_connected_backward(pooled, w.fc1, g_h1)
    g_rgb = g_rgb + T.global_avg_backward(rgb_star, g_pooled[:, :c].reshape(n, c, 1, 1))
    g_pol = g_pol + T.global_avg_backward(pol_star, g_pooled[:, c:].reshape(n, c, 1, 1))
    grads = _merge(
        prefixed("conv_fuse", gr_fuse),
        {"fc1.weight": g_fc1w, "fc1.bias": g_fc1b, "fc2.weight": g_fc2w, "fc2.bias": g_fc2b},
    )
    return g_rgb, g_pol, grads


def cwda_forward(rgb_star, pol_star, w: CddqWeights):
    """Channel weight dynamic assignment.

    Returns ``(f_fused, alpha, beta)`` with per-channel weights of shape
    (N, C, 1, 1). The activation order is fc, SiLU, fc, sigmoid, split,
    then a two-way softmax across the split halves.
    """
    return _cwda_fwd(rgb_star, pol_star, w)[0]


def cwda_vjp(rgb_star, pol_star, w: CddqWeights, g_fused, g_alpha=None, g_beta=None):
    _, cache = _cwda_fwd(rgb_star, pol_star, w)
    return _cwda_bwd(w, cache, g_fused, g_alpha, g_beta)


# ---------------------------------------------------------------- CDDQ


def _cddq_fwd(f_rgb, f_pol, w: CddqWeights, use_sdmd: bool = True, use_cwda: bool = True):
    _check_pair(f_rgb, f_pol)
    diag = {"mu": None, "eta": None, "alpha": None, "beta": None}
    sd_cache = cw_cache = None
    if use_sdmd:
        (rgb_star, pol_star, diag["mu"], diag["eta"]), sd_cache = _sdmd_fwd(f_rgb, f_pol, w)
    else:
        rgb_star, pol_star = f_rgb, f_pol
    if use_cwda:
        (fused, diag["alpha"], diag["beta"]), cw_cache = _cwda_fwd(rgb_star, pol_star, w)
    else:
        fused, cw_cache = T.block_forward(T.concat_channels([rgb_star, pol_star]), w.conv_fuse)
    return (fused, diag), (sd_cache, cw_cache, use_sdmd, use_cwda, f_rgb.shape[1])


def _cddq_bwd(w: CddqWeights, cache, g_fused):
    sd_cache, cw_cache, use_sdmd, use_cwda, c = cache
    if use_cwda:
        g_rs, g_ps, grads = _cwda_bwd(w, cw_cache, g_fused)
    else:
        g_cat, gr = T.block_backward(w.conv_fuse, cw_cache, g_fused)
        g_rs, g_ps = T.split_channels(g_cat, [c, c])
        grads = prefixed("conv_fuse", gr)
    if use_sdmd:
        g_rgb, g_pol, gr_sd = _sdmd_bwd(w, sd_cache, g_rs, g_ps)
        grads = _merge(grads, gr_sd)
    else:
        g_rgb, g_pol = g_rs, g_ps
    return g_rgb, g_pol, grads


def cddq_forward(f_rgb, f_pol, w: CddqWeights, use_sdmd: bool = True, use_cwda: bool = True):
    """SDMD followed by CWDA; returns ``(f_fused, diagnostics)``.

    ``use_sdmd=False`` feeds the raw features to CWDA. ``use_cwda=False``
    replaces the weighted concatenation by a plain one. Diagnostics of a
    disabled block are ``None``.
    """
    return _cddq_fwd(f_rgb, f_pol, w, use_sdmd, use_cwda)[0]


def cddq_vjp(f_rgb, f_pol, w: CddqWeights, g_fused, use_sdmd=True, use_cwda=True):
    _, cache = _cddq_fwd(f_rgb, f_pol, w, use_sdmd, use_cwda)
    return _cddq_bwd(w, cache, g_fused)
