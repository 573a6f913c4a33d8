"""Optical-flow fields, backward warping and synthetic ground-truth motion.

Flow convention: ``flow[0]`` is the horizontal displacement (dx), ``flow[1]``
the vertical one (dy). Backward warping samples the source at ``p + flow(p)``
to produce the value at target pixel ``p``.

A flow ``O_{i->k}`` therefore aligns frame k onto frame i's grid:
``warp(f_k, O_{i->k})[p] ~= f_i[p]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeError


@dataclass
class FlowField:
    """(2, H, W) displacement field tagged with its source and target frame."""

    data: np.ndarray
    src: int = 0
    dst: int = 0

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[0] != 2:
            raise ShapeError(f"flow must be (2, H, W), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("flow contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @classmethod
    def zeros(cls, H: int, W: int, src: int = 0, dst: int = 0) -> "FlowField":
        return cls(np.zeros((2, H, W)), src, dst)

    def within_sanity_bound(self) -> bool:
        return bool(np.all(np.abs(self.data[0]) < self.width) and np.all(np.abs(self.data[1]) < self.height))


def _flow_array(flow):
    if isinstance(flow, FlowField):
        return flow.data
    return flow


def warp_backward(feat, flow, boundary: str = "replicate"):
    """Bilinearly sample (C, H, W) features at ``p + flow(p)``.

    Returns a numpy array for numpy input and a :class:`~gsmamba.autodiff.Var`
    when either argument is a Var.
    """
    if boundary not in ("replicate", "zero"):
        raise ValueError(f"boundary must be 'replicate' or 'zero', got {boundary!r}")
    flow = _flow_array(flow)
    fshape = feat.shape
    if len(fshape) != 3 or tuple(flow.shape) != (2,) + tuple(fshape[1:]):
        raise ShapeError(f"flow {tuple(flow.shape)} does not match features {tuple(fshape)}")
    out = ad.warp(feat, flow, zero_pad=boundary == "zero")
    if isinstance(feat, ad.Var) or isinstance(flow, ad.Var):
        return out
    return out.value


def validity_mask(flow) -> np.ndarray:
    """True where the sample location lies inside [0, W-1] x [0, H-1]."""
    data = _flow_array(flow)
    data = data.value if isinstance(data, ad.Var) else data
    _, H, W = data.shape
    ys, xs = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    sx = xs + data[0]
    sy = ys + data[1]
    return (sx >= 0) & (sx <= W - 1) & (sy >= 0) & (sy <= H - 1)


# --------------------------------------------------------------------------
# parametric motions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Translate:
    dx: float
    dy: float

    def power(self, n: int) -> "Translate":
        return Translate(self.dx * n, self.dy * n)

    def rescale(self, factor: float) -> "Translate":
        """Same motion expressed on a grid resized by ``factor`` (pixel-center aligned)."""
        return Translate(self.dx * factor, self.dy * factor)

    def apply(self, x, y):
        return x + self.dx, y + self.dy

    def magnitude(self, H: int, W: int) -> float:
        return float(np.hypot(self.dx, self.dy))


@dataclass(frozen=True)
class Rotate:
    """Rotation by ``angle`` radians about (cx, cy).

    A point moves to ``c + R (p - c)`` with ``R = [[cos, sin], [-sin, cos]]``
    in (x, y) pixel coordinates, so for small angles the displacement is
    ``(angle*(y-cy), -angle*(x-cx))``.
    """

    cx: float
    cy: float
    angle: float

    def power(self, n: int) -> "Rotate":
        return Rotate(self.cx, self.cy, self.angle * n)

    def rescale(self, factor: float) -> "Rotate":
        return Rotate((self.cx + 0.5) * factor - 0.5, (self.cy + 0.5) * factor - 0.5, self.angle)

    def apply(self, x, y):
        c, s = np.cos(self.angle), np.sin(self.angle)
        rx, ry = x - self.cx, y - self.cy
        return self.cx + c * rx + s * ry, self.cy - s * rx + c * ry

    def magnitude(self, H: int, W: int) -> float:
        # largest displacement over the grid corners
        xs = np.array([0, W - 1, 0, W - 1], dtype=np.float64)
        ys = np.array([0, 0, H - 1, H - 1], dtype=np.float64)
        mx, my = self.apply(xs, ys)
        return float(np.max(np.hypot(mx - xs, my - ys)))


def synth_flow(motion, H: int, W: int, src: int = 0, dst: int = 0) -> FlowField:
    """Exact flow ``m(p) - p``: warping the moved image with it recovers the reference."""
    if motion.magnitude(H, W) >= min(H, W) / 2.0:
        raise ValueError(f"motion {motion} too large for a {H}x{W} grid (limit {min(H, W) / 2})")
    ys, xs = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    mx, my = motion.apply(xs, ys)
    return FlowField(np.stack([mx - xs, my - ys]), src, dst)
