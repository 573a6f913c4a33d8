"""Bilinear backward warping kernels.

``out[c, y, x] = bilinear(feat[c], y + flow[1, y, x], x + flow[0, y, x])``

Flow channel 0 is the horizontal displacement, channel 1 the vertical one.
Two boundary modes:

* replicate (``zero_pad=False``): the sample location is clamped to the
  image rectangle before interpolation; the flow gradient is zero where
  clamping is active.
* zero (``zero_pad=True``): taps outside the image read as 0.
"""

from __future__ import annotations

import math

import numpy as np

from .scan import njit


# --------------------------------------------------------------------------
# numpy path
# --------------------------------------------------------------------------


def _taps(flow, H, W, zero_pad):
    ys, xs = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    sx = xs + flow[0]
    sy = ys + flow[1]
    if zero_pad:
        cx = np.ones_like(sx)
        cy = np.ones_like(sy)
    else:
        # derivative mask: 1 where the sample is strictly inside the clamp range
        cx = ((sx >= 0.0) & (sx <= W - 1)).astype(np.float64)
        cy = ((sy >= 0.0) & (sy <= H - 1)).astype(np.float64)
        sx = np.clip(sx, 0.0, W - 1)
        sy = np.clip(sy, 0.0, H - 1)
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    wx = sx - x0
    wy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1
    if not zero_pad:
        x1 = np.minimum(x1, W - 1)
        y1 = np.minimum(y1, H - 1)
    return x0, x1, y0, y1, wx, wy, cx, cy


def _gather(feat, yy, xx, H, W):
    inside = (xx >= 0) & (xx < W) & (yy >= 0) & (yy < H)
    vals = feat[:, np.clip(yy, 0, H - 1), np.clip(xx, 0, W - 1)]
    return vals * inside[None], inside


def warp_fwd_numpy(feat, flow, zero_pad=False):
    _, H, W = feat.shape
    x0, x1, y0, y1, wx, wy, _, _ = _taps(flow, H, W, zero_pad)
    v00, _ = _gather(feat, y0, x0, H, W)
    v01, _ = _gather(feat, y0, x1, H, W)
    v10, _ = _gather(feat, y1, x0, H, W)
    v11, _ = _gather(feat, y1, x1, H, W)
    return (
        v00 * ((1.0 - wy) * (1.0 - wx))
        + v01 * ((1.0 - wy) * wx)
        + v10 * (wy * (1.0 - wx))
        + v11 * (wy * wx)
    )


def warp_bwd_numpy(grad_out, feat, flow, zero_pad=False):
    """Returns (grad_feat, grad_flow)."""
    Cn, H, W = feat.shape
    x0, x1, y0, y1, wx, wy, cx, cy = _taps(flow, H, W, zero_pad)
    grad_feat = np.zeros(Cn * H * W)
    offsets = (np.arange(Cn) * (H * W))[:, None, None]
    vals = {}
    for (yy, xx, w, key) in (
        (y0, x0, (1.0 - wy) * (1.0 - wx), "00"),
        (y0, x1, (1.0 - wy) * wx, "01"),
        (y1, x0, wy * (1.0 - wx), "10"),
        (y1, x1, wy * wx, "11"),
    ):
        v, inside = _gather(feat, yy, xx, H, W)
        vals[key] = v
        lin = offsets + (np.clip(yy, 0, H - 1) * W + np.clip(xx, 0, W - 1))[None]
        contrib = grad_out * (w * inside)[None]
        grad_feat += np.bincount(lin.ravel(), weights=contrib.ravel(), minlength=Cn * H * W)
    d_sx = (1.0 - wy)[None] * (vals["01"] - vals["00"]) + wy[None] * (vals["11"] - vals["10"])
    d_sy = (1.0 - wx)[None] * (vals["10"] - vals["00"]) + wx[None] * (vals["11"] - vals["01"])
    grad_flow = np.stack(
        [np.sum(grad_out * d_sx, axis=0) * cx, np.sum(grad_out * d_sy, axis=0) * cy]
    )
    return grad_feat.reshape(Cn, H, W), grad_flow


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------


@njit(cache=True)
def _tap_nb(s, n, zero_pad):
    """Returns (i0, i1, weight, deriv_mask) along one axis."""
    c = 1.0
    if not zero_pad:
        if s < 0.0:
            s = 0.0
            c = 0.0
        elif s > n - 1:
            s = n - 1.0
            c = 0.0
    f = math.floor(s)
    i0 = int(f)
    i1 = i0 + 1
    if not zero_pad and i1 > n - 1:
        i1 = n - 1
    return i0, i1, s - f, c


@njit(cache=True)
def _warp_fwd_nb(feat, flow, zero_pad):
    Cn, H, W = feat.shape
    out = np.zeros((Cn, H, W))
    for y in range(H):
        for x in range(W):
            x0, x1, wx, _ = _tap_nb(x + flow[0, y, x], W, zero_pad)
            y0, y1, wy, _ = _tap_nb(y + flow[1, y, x], H, zero_pad)
            ok_x0 = 0 <= x0 < W
            ok_x1 = 0 <= x1 < W
            ok_y0 = 0 <= y0 < H
            ok_y1 = 0 <= y1 < H
            w00 = (1.0 - wy) * (1.0 - wx)
            w01 = (1.0 - wy) * wx
            w10 = wy * (1.0 - wx)
            w11 = wy * wx
            for c in range(Cn):
                acc = 0.0
                if ok_y0 and ok_x0:
                    acc += feat[c, y0, x0] * w00
                if ok_y0 and ok_x1:
                    acc += feat[c, y0, x1] * w01
                if ok_y1 and ok_x0:
                    acc += feat[c, y1, x0] * w10
                if ok_y1 and ok_x1:
                    acc += feat[c, y1, x1] * w11
                out[c, y, x] = acc
    return out


@njit(cache=True)
def _warp_bwd_nb(grad_out, feat, flow, zero_pad):
    Cn, H, W = feat.shape
    grad_feat = np.zeros((Cn, H, W))
    grad_flow = np.zeros((2, H, W))
    for y in range(H):
        for x in range(W):
            x0, x1, wx, cx = _tap_nb(x + flow[0, y, x], W, zero_pad)
            y0, y1, wy, cy = _tap_nb(y + flow[1, y, x], H, zero_pad)
            ok_x0 = 0 <= x0 < W
            ok_x1 = 0 <= x1 < W
            ok_y0 = 0 <= y0 < H
            ok_y1 = 0 <= y1 < H
            w00 = (1.0 - wy) * (1.0 - wx)
            w01 = (1.0 - wy) * wx
            w10 = wy * (1.0 - wx)
            w11 = wy * wx
            gsx = 0.0
            gsy = 0.0
            for c in range(Cn):
                g = grad_out[c, y, x]
                v00 = 0.0
                v01 = 0.0
                v10 = 0.0
                v11 = 0.0
                if ok_y0 and ok_x0:
                    v00 = feat[c, y0, x0]
                    grad_feat[c, y0, x0] += g * w00
                if ok_y0 and ok_x1:
                    v01 = feat[c, y0, x1]
                    grad_feat[c, y0, x1] += g * w01
                if ok_y1 and ok_x0:
                    v10 = feat[c, y1, x0]
                    grad_feat[c, y1, x0] += g * w10
                if ok_y1 and ok_x1:
                    v11 = feat[c, y1, x1]
                    grad_feat[c, y1, x1] += g * w11
                gsx += g * ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10))
                gsy += g * ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01))
            grad_flow[0, y, x] = gsx * cx
            grad_flow[1, y, x] = gsy * cy
    return grad_feat, grad_flow


def warp_fwd_numba(feat, flow, zero_pad=False):
    return _warp_fwd_nb(
        np.ascontiguousarray(feat, dtype=np.float64),
        np.ascontiguousarray(flow, dtype=np.float64),
        bool(zero_pad),
    )


def warp_bwd_numba(grad_out, feat, flow, zero_pad=False):
    return _warp_bwd_nb(
        np.ascontiguousarray(grad_out, dtype=np.float64),
        np.ascontiguousarray(feat, dtype=np.float64),
        np.ascontiguousarray(flow, dtype=np.float64),
        bool(zero_pad),
    )
