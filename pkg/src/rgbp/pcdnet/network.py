"""Toy twin encoder, single-class anchor head, NMS and the end-to-end forward.

Both branches run ``stages`` plain stages (3x3 stride-2 block, then a
3x3 block). After each stage the polarization feature may pass through
MSP or MCP and replace the branch feature. Fusion at a stage produces
that level's pyramid entry. The branches themselves continue on their
own features.
"""

from __future__ import annotations

from typing import Hashable, Sequence

import numpy as np

from .. import tensor_ops as T
from ..detect_eval import Detection, iou_matrix
from ..errors import ShapeError
from .config import NetworkConfig
from .modules import _cddq_bwd, _cddq_fwd, _merge, _mp_bwd, _mp_fwd, _pi_bwd, _pi_fwd
from .weights import NetworkWeights, prefixed

TW_CLAMP = 4.0


def check_input_size(h: int, w: int, cfg: NetworkConfig) -> None:
    d = cfg.min_divisor
    if h % d or w % d:
        raise ShapeError(f"input {h}x{w} must be divisible by {d} for {cfg.stages} stages")


# ---------------------------------------------------------------- backbone


def _backbone_fwd(rgb, pol, cfg: NetworkConfig, w: NetworkWeights):
    check_input_size(rgb.shape[2], rgb.shape[3], cfg)
    if rgb.shape[1] != 3:
        raise ShapeError(f"rgb must have 3 channels, got {rgb.shape[1]}")
    xr, xp = rgb, pol
    pyramid, caches = [], []
    for i in range(cfg.stages):
        sr, sp = w.rgb_stages[i], w.pol_stages[i]
        xr, c_rd = T.block_forward(xr, sr.down)
        xr, c_rm = T.block_forward(xr, sr.mix)
        xp, c_pd = T.block_forward(xp, sp.down)
        xp, c_pm = T.block_forward(xp, sp.mix)
        c_mp = None
        if w.mp[i] is not None:
            xp, c_mp = _mp_fwd(xp, w.mp[i])
        c_fuse = None
        if w.cddq[i] is not None:
            (fused, _), c_fuse = _cddq_fwd(xr, xp, w.cddq[i], cfg.use_sdmd, cfg.use_cwda)
        else:
            fused = xr
        pyramid.append(fused)
        caches.append((c_rd, c_rm, c_pd, c_pm, c_mp, c_fuse))
    return pyramid, caches


def _backbone_bwd(cfg: NetworkConfig, w: NetworkWeights, caches, g_pyramid):
    g_xr = g_xp = None
    grads: dict[str, np.ndarray] = {}
    for i in reversed(range(cfg.stages)):
        c_rd, c_rm, c_pd, c_pm, c_mp, c_fuse = caches[i]
        g_fused = g_pyramid[i]
        if c_fuse is not None:
            g_r, g_p, gr = _cddq_bwd(w.cddq[i], c_fuse, g_fused)
            grads = _merge(grads, prefixed(f"cddq.{i}", gr))
        else:
            g_r, g_p = g_fused, None
        g_xr = g_r if g_xr is None else g_xr + g_r
        if g_p is not None:
            g_xp = g_p if g_xp is None else g_xp + g_p
        if g_xp is None:
            # nothing downstream consumed the polarization branch
            g_xp = np.zeros_like(c_pm[1])
        if c_mp is not None:
            g_xp, gr = _mp_bwd(w.mp[i], c_mp, g_xp)
            grads = _merge(grads, prefixed(f"mp.{i}", gr))
        sr, sp = w.rgb_stages[i], w.pol_stages[i]
        g_xr, gr_rm = T.block_backward(sr.mix, c_rm, g_xr)
        g_xr, gr_rd = T.block_backward(sr.down, c_rd, g_xr)
        g_xp, gr_pm = T.block_backward(sp.mix, c_pm, g_xp)
        g_xp, gr_pd = T.block_backward(sp.down, c_pd, g_xp)
        grads = _merge(
            grads,
            prefixed(f"rgb_stages.{i}.mix", gr_rm),
            prefixed(f"rgb_stages.{i}.down", gr_rd),
            prefixed(f"pol_stages.{i}.mix", gr_pm),
            prefixed(f"pol_stages.{i}.down", gr_pd),
        )
    return g_xr, g_xp, grads


def backbone_forward(rgb, pol, cfg: NetworkConfig, weights: NetworkWeights) -> list[np.ndarray]:
    """Fused feature pyramid; level ``i`` has shape (N, widths[i], H / 2**(i+1), W / 2**(i+1))."""
    return _backbone_fwd(rgb, pol, cfg, weights)[0]


def backbone_vjp(rgb, pol, cfg, weights, g_pyramid):
    _, caches = _backbone_fwd(rgb, pol, cfg, weights)
    return _backbone_bwd(cfg, weights, caches, g_pyramid)


# ---------------------------------------------------------------- full network


def _network_fwd(rgb, aolp_norm, dolp, cfg: NetworkConfig, w: NetworkWeights):
    pol, c_pi = _pi_fwd(aolp_norm, dolp, w.pi)
    pyramid, c_bb = _backbone_fwd(rgb, pol, cfg, w)
    raws = [T.conv2d(f, hp) for f, hp in zip(pyramid, w.head)]
    return raws, (c_pi, c_bb, pyramid)


def _network_bwd(cfg, w: NetworkWeights, cache, g_raws):
    c_pi, c_bb, pyramid = cache
    grads: dict[str, np.ndarray] = {}
    g_pyr = []
    for i, (f, hp, g) in enumerate(zip(pyramid, w.head, g_raws)):
        gf, gw, gb = T.conv2d_backward(f, hp, g)
        grads[f"head.{i}.weight"] = gw
        grads[f"head.{i}.bias"] = gb
        g_pyr.append(gf)
    g_rgb, g_pol, gr = _backbone_bwd(cfg, w, c_bb, g_pyr)
    g_aolp, g_dolp, gr_pi = _pi_bwd(w.pi, c_pi, g_pol)
    grads = _merge(grads, gr, prefixed("pi", gr_pi))
    return g_rgb, g_aolp, g_dolp, grads


def network_forward(rgb, aolp_norm, dolp, cfg: NetworkConfig, weights: NetworkWeights) -> list[np.ndarray]:
    """Raw head maps, one (N, 5 * anchors, h, w) array per pyramid level."""
    return _network_fwd(rgb, aolp_norm, dolp, cfg, weights)[0]


def network_vjp(rgb, aolp_norm, dolp, cfg, weights, g_raws):
    """Returns ``(grad_rgb, grad_aolp, grad_dolp, param_grads)``."""
    _, cache = _network_fwd(rgb, aolp_norm, dolp, cfg, weights)
    return _network_bwd(cfg, weights, cache, g_raws)


# ---------------------------------------------------------------- head


def decode_level(raw: np.ndarray, anchors, stride: float, score_thresh: float,
                 image_ids: Sequence[Hashable]) -> list[Detection]:
    """Decode one level of raw head output into detections above ``score_thresh``.

    Per anchor and cell the five channels are ``tx, ty, tw, th, obj``;
    the center is ``(sigmoid(t) + cell) * stride`` and the extent is the
    anchor size times ``exp(t)`` with ``t`` clamped to +-4.
    """
    n, ch, h, w = raw.shape
    a = len(anchors)
    if ch != 5 * a:
        raise ShapeError(f"head output has {ch} channels, expected {5 * a}")
    r = raw.reshape(n, a, 5, h, w).astype(np.float64)
    score = T.sigmoid(r[:, :, 4])
    gy, gx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cx = (T.sigmoid(r[:, :, 0]) + gx) * stride
    cy = (T.sigmoid(r[:, :, 1]) + gy) * stride
    aw = np.array([an[0] for an in anchors])[None, :, None, None]
    ah = np.array([an[1] for an in anchors])[None, :, None, None]
    bw = aw * np.exp(np.clip(r[:, :, 2], -TW_CLAMP, TW_CLAMP))
    bh = ah * np.exp(np.clip(r[:, :, 3], -TW_CLAMP, TW_CLAMP))
    dets = []
    # order: image, row, column, anchor
    keep = np.argwhere(score.transpose(0, 2, 3, 1) >= score_thresh)
    for b, yy, xx, k in keep:
        dets.append(
            Detection(
                box=(float(cx[b, k, yy, xx] - bw[b, k, yy, xx] / 2), float(cy[b, k, yy, xx] - bh[b, k, yy, xx] / 2),
                     float(bw[b, k, yy, xx]), float(bh[b, k, yy, xx])),
                score=float(score[b, k, yy, xx]),
                image_id=image_ids[b],
            )
        )
    return dets


def head_decode(pyramid, cfg: NetworkConfig, head_weights, image_ids=None, input_hw=None) -> list[Detection]:
    """Run the 1x1 head convs on a fused pyramid and decode all levels (pre-NMS)."""
    n = pyramid[0].shape[0]
    image_ids = list(range(n)) if image_ids is None else list(image_ids)
    dets = []
    for i, (f, hp) in enumerate(zip(pyramid, head_weights)):
        raw = T.conv2d(f, hp)
        stride = input_hw[0] / f.shape[2] if input_hw else 2.0 ** (i + 1)
        dets.extend(decode_level(raw, cfg.anchors[i], stride, cfg.score_thresh, image_ids))
    return dets


def nms(dets: Sequence[Detection], iou_thresh: float, max_det: int | None = None) -> list[Detection]:
    """Greedy per-image suppression in score order (ties by input order).

    A detection survives if its IoU with every already-kept detection of
    the same image is below ``iou_thresh``. Output follows keep order;
    ``max_det`` caps the survivors per image.
    """
    if not dets:
        return []
    scores = np.array([d.score for d in dets])
    order = np.argsort(-scores, kind="stable")
    boxes = np.array([d.box for d in dets], dtype=np.float64)
    keep = np.zeros(len(dets), dtype=bool)
    groups: dict = {}
    for idx in order:
        groups.setdefault(dets[idx].image_id, []).append(idx)
    for idxs in groups.values():
        remaining = np.array(idxs)
        kept = 0
        while remaining.size and (max_det is None or kept < max_det):
            i = remaining[0]
            keep[i] = True
            kept += 1
            rest = remaining[1:]
            if rest.size == 0:
                break
            ious = iou_matrix(boxes[i : i + 1], boxes[rest])[0]
            remaining = rest[ious < iou_thresh]
    return [dets[i] for i in order if keep[i]]


def detect(rgb, aolp, dolp, cfg: NetworkConfig, weights: NetworkWeights, image_ids=None) -> list[Detection]:
    """End to end: PI, backbone, head, NMS.

    ``aolp`` is in radians and gets divided by pi here; inputs are cast to
    the weights' dtype.
    """
    dtype = weights.pi.conv_out.conv.weight.dtype
    rgb, aolp, dolp = (np.asarray(t, dtype=dtype) for t in (rgb, aolp, dolp))
    raws = network_forward(rgb, aolp / np.pi, dolp, cfg, weights)
    n = rgb.shape[0]
    image_ids = list(range(n)) if image_ids is None else list(image_ids)
    dets = []
    for i, raw in enumerate(raws):
        stride = rgb.shape[2] / raw.shape[2]
        dets.extend(decode_level(raw, cfg.anchors[i], stride, cfg.score_thresh, image_ids))
    return nms(dets, cfg.nms_iou, cfg.max_det)
