"""Shifted-window multi-head self-attention over (T, H, W, C) token grids."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .errors import ConfigError


@dataclass(frozen=True)
class WindowSpec:
    window: tuple[int, int, int] = (2, 8, 8)
    shift: tuple[int, int, int] = (0, 0, 0)
    heads: int = 8

    def __post_init__(self):
        if len(self.window) != 3 or len(self.shift) != 3:
            raise ConfigError("window and shift need three extents (t, h, w)")
        for w, s in zip(self.window, self.shift):
            if w < 1 or not 0 <= s < w:
                raise ConfigError(f"need 0 <= shift < window per axis, got window={self.window} shift={self.shift}")
        if self.heads < 1:
            raise ConfigError(f"heads must be >= 1, got {self.heads}")

    def shifted(self) -> "WindowSpec":
        return WindowSpec(self.window, tuple(w // 2 for w in self.window), self.heads)

    def fit(self, extents) -> "WindowSpec":
        """Clamp window extents to the grid; no shift along axes the window covers."""
        window = tuple(min(w, n) for w, n in zip(self.window, extents))
        shift = tuple(0 if w >= n else s for w, s, n in zip(self.window, self.shift, extents))
        return WindowSpec(window, shift, self.heads)


@dataclass(frozen=True)
class Partition:
    extents: tuple[int, int, int]
    padded: tuple[int, int, int]
    spec: WindowSpec


def window_partition(x, spec: WindowSpec):
    """(T, H, W, C) -> ((n_windows, t*h*w, C), Partition).

    Extents are replicate-padded up to multiples of the window and the grid
    is cyclically rolled by ``-shift`` before cutting windows.
    """
    x = ad.as_var(x)
    T, H, W, C = x.shape
    t, h, w = spec.window
    pads = [(0, (-n) % m) for n, m in zip((T, H, W), (t, h, w))] + [(0, 0)]
    if any(p[1] for p in pads):
        x = ad.pad_edge(x, pads)
    Tp, Hp, Wp = (n + p[1] for n, p in zip((T, H, W), pads))
    if any(spec.shift):
        x = ad.roll(x, tuple(-s for s in spec.shift), (0, 1, 2))
    x = ad.reshape(x, (Tp // t, t, Hp // h, h, Wp // w, w, C))
    x = ad.transpose(x, (0, 2, 4, 1, 3, 5, 6))
    blocks = ad.reshape(x, (-1, t * h * w, C))
    return blocks, Partition((T, H, W), (Tp, Hp, Wp), spec)


def window_reverse(blocks, part: Partition) -> ad.Var:
    """Exact inverse of :func:`window_partition`."""
    blocks = ad.as_var(blocks)
    t, h, w = part.spec.window
    Tp, Hp, Wp = part.padded
    C = blocks.shape[-1]
    x = ad.reshape(blocks, (Tp // t, Hp // h, Wp // w, t, h, w, C))
    x = ad.transpose(x, (0, 3, 1, 4, 2, 5, 6))
    x = ad.reshape(x, (Tp, Hp, Wp, C))
    if any(part.spec.shift):
        x = ad.roll(x, tuple(part.spec.shift), (0, 1, 2))
    T, H, W = part.extents
    if (T, H, W) != (Tp, Hp, Wp):
        x = ad.getitem(x, (slice(0, T), slice(0, H), slice(0, W)))
    return x


# --------------------------------------------------------------------------
# attention
# --------------------------------------------------------------------------


def relative_position_index(window, table_window=None) -> np.ndarray:
    """(n, n) index into a ((2t-1)(2h-1)(2w-1),) bias table sized for ``table_window``."""
    t, h, w = window
    tt, th, tw = table_window or window
    coords = np.stack(np.meshgrid(np.arange(t), np.arange(h), np.arange(w), indexing="ij")).reshape(3, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    rel = rel + np.array([tt - 1, th - 1, tw - 1])[:, None, None]
    return rel[0] * (2 * th - 1) * (2 * tw - 1) + rel[1] * (2 * tw - 1) + rel[2]


def init_attention(rng, prefix: str, dim: int, heads: int, window=None, rel_pos_bias: bool = False):
    if dim % heads:
        raise ConfigError(f"feature dim {dim} is not divisible by {heads} heads")
    bound = 1.0 / np.sqrt(dim)
    p = {}
    for name in ("q", "k", "v", "o"):
        p[f"{prefix}W{name}"] = rng.uniform(-bound, bound, (dim, dim))
        p[f"{prefix}b{name}"] = np.zeros(dim)
    if rel_pos_bias:
        t, h, w = window
        p[prefix + "rpb"] = rng.normal(0.0, 0.02, ((2 * t - 1) * (2 * h - 1) * (2 * w - 1), heads))
    return p


def mhsa(tokens, p: Mapping[str, ad.Var], prefix: str, heads: int, window=None, return_attn: bool = False,
         table_window=None):
    """Scaled dot-product attention per head over (..., n, C) token blocks."""
    tokens = ad.as_var(tokens)
    *lead, n, C = tokens.shape
    if C % heads:
        raise ConfigError(f"feature dim {C} is not divisible by {heads} heads")
    dh = C // heads
    x = ad.reshape(tokens, (-1, n, C))
    B = x.shape[0]

    def split(name):
        y = ad.linear(x, p[f"{prefix}W{name}"], p[f"{prefix}b{name}"])
        return ad.transpose(ad.reshape(y, (B, n, heads, dh)), (0, 2, 1, 3))

    q, k, v = split("q"), split("k"), split("v")
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    if prefix + "rpb" in p:
        idx = relative_position_index(window, table_window)
        bias = ad.transpose(ad.take(p[prefix + "rpb"], idx.ravel(), axis=0), (1, 0))
        scores = ad.add(scores, ad.reshape(bias, (1, heads, n, n)))
    attn = ad.softmax(scores, axis=-1)
    out = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (B, n, C))
    out = ad.reshape(ad.linear(out, p[prefix + "Wo"], p[prefix + "bo"]), tuple(lead) + (n, C))
    if return_attn:
        return out, attn
    return out


# --------------------------------------------------------------------------
# transformer block
# --------------------------------------------------------------------------


def init_swsa_block(rng, prefix: str, dim: int, spec: WindowSpec, mlp_ratio: int = 2, rel_pos_bias: bool = False):
    hidden = int(mlp_ratio * dim)
    p = {
        prefix + "ln1_g": np.ones(dim),
        prefix + "ln1_b": np.zeros(dim),
        prefix + "ln2_g": np.ones(dim),
        prefix + "ln2_b": np.zeros(dim),
        prefix + "mlp_W1": rng.uniform(-1 / np.sqrt(dim), 1 / np.sqrt(dim), (hidden, dim)),
        prefix + "mlp_b1": np.zeros(hidden),
        prefix + "mlp_W2": rng.uniform(-1 / np.sqrt(hidden), 1 / np.sqrt(hidden), (dim, hidden)),
        prefix + "mlp_b2": np.zeros(dim),
    }
    p.update(init_attention(rng, prefix + "attn.", dim, spec.heads, spec.window, rel_pos_bias))
    return p


def mlp(x, p: Mapping[str, ad.Var], prefix: str):
    hdn = ad.gelu(ad.linear(x, p[prefix + "mlp_W1"], p[prefix + "mlp_b1"]))
    return ad.linear(hdn, p[prefix + "mlp_W2"], p[prefix + "mlp_b2"])


def swsa_block(x, p: Mapping[str, ad.Var], prefix: str, spec: WindowSpec) -> ad.Var:
    """Pre-norm block: ``x + attn(LN(x))`` then ``+ MLP(LN(x))`` on (T, H, W, C)."""
    x = ad.as_var(x)
    fitted = spec.fit(x.shape[:3])
    h = ad.layer_norm(x, p[prefix + "ln1_g"], p[prefix + "ln1_b"])
    blocks, part = window_partition(h, fitted)
    attn = mhsa(blocks, p, prefix + "attn.", spec.heads, fitted.window, table_window=spec.window)
    x = ad.add(x, window_reverse(attn, part))
    h = ad.layer_norm(x, p[prefix + "ln2_g"], p[prefix + "ln2_b"])
    return ad.add(x, mlp(h, p, prefix))


SCORE_BLOCK_ENTRIES = 1 << 20


def mhsa_blocked(tokens: np.ndarray, p: Mapping[str, np.ndarray], prefix: str, heads: int,
                 block: int | None = None) -> np.ndarray:
    """Forward-only full attention over (n, C) tokens, ``block`` query rows at a time.

    Same result as :func:`mhsa` without relative bias, but the (n, n) score
    matrix never exists at once, so long sequences fit in memory. Work is
    still quadratic in n. By default the score block holds about 2^20
    entries whatever n is, which keeps its memory traffic per entry flat.
    """
    x = np.asarray(tokens, dtype=np.float64)
    n, C = x.shape
    if C % heads:
        raise ConfigError(f"feature dim {C} is not divisible by {heads} heads")
    dh = C // heads
    if block is None:
        block = max(1, SCORE_BLOCK_ENTRIES // (heads * n))

    def proj(name):
        y = x @ np.asarray(p[f"{prefix}W{name}"]).T + np.asarray(p[f"{prefix}b{name}"])
        return np.ascontiguousarray(y.reshape(n, heads, dh).transpose(1, 0, 2))

    q, k, v = proj("q"), proj("k"), proj("v")
    kt = np.ascontiguousarray(k.transpose(0, 2, 1))
    out = np.empty((heads, n, dh))
    scale = 1.0 / np.sqrt(dh)
    for s in range(0, n, block):
        scores = (q[:, s:s + block] @ kt) * scale
        scores -= scores.max(axis=-1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=-1, keepdims=True)
        out[:, s:s + block] = scores @ v
    merged = out.transpose(1, 0, 2).reshape(n, C)
    return merged @ np.asarray(p[prefix + "Wo"]).T + np.asarray(p[prefix + "bo"])
