"""Gather-scatter temporal propagation.

A window of K frames is aligned onto its anchor (gather), flattened so the K
samples of every pixel are adjacent (temporal-first), mixed by a sequence
model, split back into per-frame residuals, and each residual is warped back
onto its own frame and added (scatter). Sliding the anchor over the clip in
both directions gives the window propagation module.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .align import validity_mask
from .errors import ContractError, ShapeError
from .ssm import ScanDirectionSet, SequenceLayout, init_mixer, multi_direction_scan


class AnchorStrategy(enum.Enum):
    FORWARD = "forward"  # anchor is the last frame of the window
    CENTER = "center"  # anchor is the middle frame

    @classmethod
    def parse(cls, value) -> "AnchorStrategy":
        return value if isinstance(value, cls) else cls(str(value).lower())


@dataclass
class FeatureWindow:
    """K per-frame feature maps (C, H, W) with flows to and from the anchor.

    ``flows_to[k]`` is O_{i->k} (aligns frame k onto the anchor grid),
    ``flows_from[k]`` is O_{k->i} (maps anchor-grid residuals back onto frame k).
    """

    frames: list
    anchor: int
    flows_to: list
    flows_from: list
    indices: list[int] = field(default_factory=list)

    def __post_init__(self):
        K = len(self.frames)
        if K < 1:
            raise ContractError("window needs at least one frame")
        if not 0 <= self.anchor < K:
            raise ContractError(f"anchor {self.anchor} outside window of {K} frames")
        shapes = {tuple(f.shape) for f in self.frames}
        if len(shapes) != 1:
            raise ShapeError(f"window frames differ in shape: {sorted(shapes)}")
        if not self.indices:
            self.indices = list(range(K))

    @property
    def K(self) -> int:
        return len(self.frames)

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        return tuple(self.frames[0].shape)

    def masks(self) -> list[np.ndarray]:
        """Per-frame validity of the gather warp (all true for the anchor)."""
        _, H, W = self.feature_shape
        out = []
        for k, flow in enumerate(self.flows_to):
            if k == self.anchor or flow is None:
                out.append(np.ones((H, W), dtype=bool))
            else:
                out.append(validity_mask(flow))
        return out


def _is_identity(flow) -> bool:
    return not np.any(flow)


def _warp(feat, flow, boundary: str):
    # zero flow is an exact identity for bilinear sampling; skip the kernel
    if _is_identity(flow):
        return ad.as_var(feat)
    return ad.warp(feat, flow, zero_pad=boundary == "zero")


def gather(window: FeatureWindow, frames=None, boundary: str = "replicate") -> ad.Var:
    """Stack of anchor-aligned features, shape (K, H, W, C).

    ``frames`` optionally replaces ``window.frames`` (e.g. normalized copies).
    """
    frames = window.frames if frames is None else frames
    aligned = []
    for k, f in enumerate(frames):
        if k == window.anchor:
            aligned.append(ad.as_var(f))
            continue
        flow = window.flows_to[k] if k < len(window.flows_to) else None
        if flow is None:
            raise ContractError(f"missing flow O_(anchor->{k}) for window position {k}")
        aligned.append(_warp(f, flow, boundary))
    return ad.transpose(ad.stack(aligned, axis=0), (0, 2, 3, 1))


def flatten_temporal(G, order: str = "temporal") -> ad.Var:
    """(K, H, W, C) -> (H*W*K, C).

    Temporal-first position of (k, h, w) is ``(h*W + w)*K + k``; the spatial
    order ``k*H*W + h*W + w`` is kept for ablations.
    """
    G = ad.as_var(G)
    K, H, W, C = G.shape
    if order == "temporal":
        return ad.reshape(ad.transpose(G, (1, 2, 0, 3)), (H * W * K, C))
    if order == "spatial":
        return ad.reshape(G, (K * H * W, C))
    raise ValueError(f"unknown flatten order {order!r}")


def unflatten_temporal(seq, K: int, H: int, W: int, order: str = "temporal") -> list:
    """Inverse of :func:`flatten_temporal`, split into K residuals of shape (C, H, W)."""
    seq = ad.as_var(seq)
    L, C = seq.shape
    if K < 1 or L % K:
        raise ShapeError(f"sequence length {L} is not divisible by K={K}")
    if L != K * H * W:
        raise ShapeError(f"sequence length {L} != K*H*W = {K * H * W}")
    if order == "temporal":
        stack = ad.transpose(ad.reshape(seq, (H, W, K, C)), (2, 3, 0, 1))
    elif order == "spatial":
        stack = ad.transpose(ad.reshape(seq, (K, H, W, C)), (0, 3, 1, 2))
    else:
        raise ValueError(f"unknown flatten order {order!r}")
    if K == 1:
        return [ad.reshape(stack, (C, H, W))]
    return [ad.getitem(stack, k) for k in range(K)]


def scatter_residuals(residuals: Sequence, window: FeatureWindow, scatter_on: bool = True,
                      boundary: str = "replicate") -> list:
    """Warp anchor-grid residuals back onto each frame; None where no update happens."""
    out = []
    for k, r in enumerate(residuals):
        if k == window.anchor:
            out.append(ad.as_var(r))
            continue
        if not scatter_on:
            out.append(None)
            continue
        flow = window.flows_from[k] if k < len(window.flows_from) else None
        if flow is None:
            raise ContractError(f"missing inverse flow O_({k}->anchor) for window position {k}")
        out.append(_warp(r, flow, boundary))
    return out


def scatter(residuals: Sequence, window: FeatureWindow, scatter_on: bool = True,
            boundary: str = "replicate") -> list:
    """Updated frames ``f_k + warp(r_k->i, O_k->i)`` for every window position."""
    warped = scatter_residuals(residuals, window, scatter_on, boundary)
    return [ad.as_var(f) if r is None else ad.add(f, r) for f, r in zip(window.frames, warped)]


# --------------------------------------------------------------------------
# the block
# --------------------------------------------------------------------------

Mixer = Callable[[ad.Var, SequenceLayout], ad.Var]


def init_gsm_block(rng, prefix: str, dim: int, d_state: int, directions: ScanDirectionSet,
                   dt_min: float = 1e-3, dt_max: float = 1e-1):
    params = {prefix + "ln_g": np.ones(dim), prefix + "ln_b": np.zeros(dim)}
    params.update(init_mixer(rng, prefix + "mix.", dim, d_state, directions, dt_min, dt_max))
    return params


def scan_mixer(p: Mapping[str, ad.Var], prefix: str, directions: ScanDirectionSet) -> Mixer:
    def mix(seq, layout):
        return multi_direction_scan(seq, p, prefix + "mix.", directions, layout)

    return mix


def gsm_residuals(window: FeatureWindow, mixer: Mixer, norm=None, order: str = "temporal",
                  scatter_on: bool = True, boundary: str = "replicate") -> list:
    """Per-position residuals (already scattered back to their frames)."""
    C, H, W = window.feature_shape
    if norm is not None:
        gamma, beta = norm
        frames = [
            ad.transpose(ad.layer_norm(ad.transpose(f, (1, 2, 0)), gamma, beta), (2, 0, 1))
            for f in window.frames
        ]
    else:
        frames = window.frames
    G = gather(window, frames, boundary)
    layout = SequenceLayout(window.K, H, W, order)
    mixed = mixer(flatten_temporal(G, order), layout)
    residuals = unflatten_temporal(mixed, window.K, H, W, order)
    return scatter_residuals(residuals, window, scatter_on, boundary)


def gsm_block(window: FeatureWindow, mixer: Mixer, norm=None, order: str = "temporal",
              scatter_on: bool = True, boundary: str = "replicate") -> list:
    """Updated frames of one window (residual connection on every frame)."""
    res = gsm_residuals(window, mixer, norm, order, scatter_on, boundary)
    return [ad.as_var(f) if r is None else ad.add(f, r) for f, r in zip(window.frames, res)]


# --------------------------------------------------------------------------
# sliding-window propagation
# --------------------------------------------------------------------------


def window_indices(i: int, K: int, T: int, strategy, direction: str = "forward") -> tuple[list[int], int]:
    """Clamped clip indices of the window around anchor ``i`` and the anchor position.

    Windows are listed in traversal order, so for a backward pass the
    forward-anchored window reaches into the future.
    """
    strategy = AnchorStrategy.parse(strategy)
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    sign = 1 if direction == "forward" else -1
    if strategy is AnchorStrategy.CENTER:
        if K % 2 != 1:
            raise ContractError(f"center anchoring needs odd K, got {K}")
        half = K // 2
        offsets, pos = range(-half, half + 1), half
    else:
        offsets, pos = range(-(K - 1), 1), K - 1
    return [min(max(i + sign * o, 0), T - 1) for o in offsets], pos


FlowFn = Callable[[int, int], np.ndarray]


def window_propagate(frames: Sequence, flow_fn: FlowFn, K: int, strategy, blocks: Sequence[Callable],
                     scatter_on: bool = True, direction: str = "forward") -> list:
    """Slide the anchor over the clip, applying each block's residuals in turn.

    ``flow_fn(i, k)`` returns O_{i->k} as a (2, H, W) array. ``blocks`` are
    callables ``(window, scatter_on) -> residual list`` (see :func:`gsm_residuals`).
    Updates are applied sequentially, so later windows see earlier updates.
    """
    frames = list(frames)
    T = len(frames)
    if T < 1:
        raise ContractError("window propagation needs at least one frame")
    anchors = range(T) if direction == "forward" else range(T - 1, -1, -1)
    for i in anchors:
        idxs, pos = window_indices(i, K, T, strategy, direction)
        flows_to = [flow_fn(i, j) for j in idxs]
        flows_from = [flow_fn(j, i) for j in idxs]
        for block in blocks:
            window = FeatureWindow([frames[j] for j in idxs], pos, flows_to, flows_from, list(idxs))
            for j, r in zip(idxs, block(window, scatter_on)):
                if r is not None:
                    frames[j] = ad.add(frames[j], r)
    return frames
