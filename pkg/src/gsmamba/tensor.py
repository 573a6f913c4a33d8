"""Dense float64 array primitives.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C order.
The helpers here are the non-differentiable reference implementations; the
autodiff layer reuses them for forward values.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .errors import ShapeError


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64, order="C")  # keeps rank 0, unlike ascontiguousarray


def row_major_strides(shape) -> tuple[int, ...]:
    """Element strides for a C-ordered array of ``shape``."""
    strides = []
    acc = 1
    for extent in reversed(tuple(shape)):
        strides.append(acc)
        acc *= int(extent)
    return tuple(reversed(strides))


def flat_index(index, shape) -> int:
    if len(index) != len(shape):
        raise ShapeError(f"index rank {len(index)} != tensor rank {len(shape)}")
    for i, n in zip(index, shape):
        if not 0 <= i < n:
            raise IndexError(f"index {tuple(index)} out of range for shape {tuple(shape)}")
    return sum(int(i) * s for i, s in zip(index, row_major_strides(shape)))


# --------------------------------------------------------------------------
# sub-pixel rearrangement
# --------------------------------------------------------------------------


def pixel_shuffle(t: np.ndarray, s: int) -> np.ndarray:
    """(..., C*s*s, H, W) -> (..., C, H*s, W*s).

    ``out[c, s*h + dy, s*w + dx] = in[c*s*s + dy*s + dx, h, w]``.
    """
    s = int(s)
    if s < 1:
        raise ShapeError(f"upscale factor must be >= 1, got {s}")
    *lead, cs, H, W = t.shape
    if cs % (s * s):
        raise ShapeError(f"channel extent {cs} is not divisible by s^2 = {s * s}")
    c = cs // (s * s)
    x = t.reshape(*lead, c, s, s, H, W)
    n = len(lead)
    x = x.transpose(*range(n), n, n + 3, n + 1, n + 4, n + 2)
    return np.ascontiguousarray(x.reshape(*lead, c, H * s, W * s))


def pixel_unshuffle(t: np.ndarray, s: int) -> np.ndarray:
    """Inverse of :func:`pixel_shuffle`."""
    s = int(s)
    *lead, c, Hs, Ws = t.shape
    if Hs % s or Ws % s:
        raise ShapeError(f"spatial extents {(Hs, Ws)} are not divisible by {s}")
    H, W = Hs // s, Ws // s
    x = t.reshape(*lead, c, H, s, W, s)
    n = len(lead)
    x = x.transpose(*range(n), n, n + 2, n + 4, n + 1, n + 3)
    return np.ascontiguousarray(x.reshape(*lead, c * s * s, H, W))


# --------------------------------------------------------------------------
# bicubic resampling
# --------------------------------------------------------------------------


def cubic_kernel(x, a: float = -0.5):
    """Keys cubic convolution kernel; a = -0.5 is Catmull-Rom."""
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    near = (a + 2.0) * ax3 - (a + 3.0) * ax2 + 1.0
    far = a * ax3 - 5.0 * a * ax2 + 8.0 * a * ax - 4.0 * a
    return np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))


def resize_weights(n_in: int, n_out: int, scale: float) -> np.ndarray:
    """(n_out, n_in) interpolation matrix along one axis.

    Pixel-center alignment, replicate edges, and MATLAB-style antialiasing
    (kernel stretched by 1/scale) when shrinking. Rows sum to 1.
    """
    out_idx = np.arange(n_out, dtype=np.float64)
    centers = (out_idx + 0.5) / scale - 0.5
    stretch = min(scale, 1.0)
    width = 4.0 / stretch
    left = np.floor(centers - width / 2.0).astype(np.int64)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = stretch * cubic_kernel(stretch * (centers[:, None] - idx))
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, n_in - 1)
    mat = np.zeros((n_out, n_in))
    np.add.at(mat, (np.repeat(np.arange(n_out), taps), idx.ravel()), w.ravel())
    return mat


def output_extent(n: int, scale) -> int:
    return int(round(n * Fraction(scale).limit_denominator(1 << 20)))


def bicubic_resize(img: np.ndarray, scale) -> np.ndarray:
    """Resize the last two axes of ``img`` by ``scale`` (e.g. 4 or Fraction(1, 4))."""
    if float(scale) <= 0:
        raise ShapeError(f"scale must be positive, got {scale}")
    *_, H, W = img.shape
    Ho, Wo = output_extent(H, scale), output_extent(W, scale)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"resize of {(H, W)} by {scale} gives empty output {(Ho, Wo)}")
    # use the realized ratio so pixel centers line up exactly
    wy = resize_weights(H, Ho, Ho / H)
    wx = resize_weights(W, Wo, Wo / W)
    return np.einsum("ih,...hw,jw->...ij", wy, as_tensor(img), wx, optimize=True)


# --------------------------------------------------------------------------
# neural primitives
# --------------------------------------------------------------------------


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"input features {x.shape[-1]} != weight columns {weight.shape[1]}")
    y = x @ weight.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
        y = y + bias
    return y


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = np.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps) * gamma + beta


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    """x such that softplus(x) == y, for y > 0."""
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x):
    """tanh approximation of GELU."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """'same' zero-padded stride-1 convolution, x: (B, Cin, H, W), weight: (Cout, Cin, k, k)."""
    cols = im2col(x, weight.shape[-1])
    y = cols @ weight.reshape(weight.shape[0], -1).T  # (B, H, W, Cout)
    if bias is not None:
        y = y + bias
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, C, H, W) -> (B, H, W, C*k*k) patches with zero padding k//2."""
    if k % 2 != 1:
        raise ShapeError(f"kernel size must be odd, got {k}")
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))  # B,C,H,W,k,k
    B, C, H, W = x.shape
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(B, H, W, C * k * k)


def col2im(cols: np.ndarray, shape, k: int) -> np.ndarray:
    """Adjoint of :func:`im2col`."""
    B, C, H, W = shape
    p = k // 2
    g = cols.reshape(B, H, W, C, k, k)
    out = np.zeros((B, C, H + 2 * p, W + 2 * p))
    for dy in range(k):
        for dx in range(k):
            out[:, :, dy : dy + H, dx : dx + W] += g[:, :, :, :, dy, dx].transpose(0, 3, 1, 2)
    return out[:, :, p : p + H, p : p + W]
