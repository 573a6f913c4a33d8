"""The end-to-end video super-resolution network.

Layout: 3x3 conv shallow features -> per stage {shifted-window attention
blocks -> forward window propagation -> backward window propagation} ->
long skip -> conv, GELU, conv, pixel shuffle -> plus bicubic upsampling of
the input. The final conv starts at zero, so an untrained network returns
the bicubic upsample exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .attention import WindowSpec, init_swsa_block, swsa_block
from .errors import ConfigError
from .gsm import AnchorStrategy, gsm_residuals, init_gsm_block, scan_mixer, window_propagate
from .ssm import DIRECTIONS, ScanDirectionSet
from .tensor import bicubic_resize


@dataclass
class ModelConfig:
    embed_dim: int = 32
    num_stages: int = 1
    swsa_blocks: int = 1
    gsm_blocks: int = 1
    heads: int = 4
    window: tuple[int, int, int] = (2, 4, 4)
    K: int = 3
    d_state: int = 8
    dt_min: float = 1e-3
    dt_max: float = 1e-1
    scale: int = 4
    anchor: str = "center"
    scatter: bool = True
    directions: tuple[str, ...] = ("forward", "reverse")
    flatten_order: str = "temporal"
    align: bool = True
    mlp_ratio: int = 2
    rel_pos_bias: bool = False
    boundary: str = "replicate"
    in_channels: int = 3
    preset: str = "toy"

    def __post_init__(self):
        self.window = tuple(int(w) for w in self.window)
        self.directions = tuple(self.directions)
        self.validate()

    def validate(self) -> None:
        if self.K < 1 or self.K % 2 != 1:
            raise ConfigError(f"K: temporal window must be odd and >= 1, got {self.K}")
        if self.scale < 1:
            raise ConfigError(f"scale: must be >= 1, got {self.scale}")
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim: {self.embed_dim} not divisible by heads={self.heads}")
        if self.anchor not in ("center", "forward"):
            raise ConfigError(f"anchor: must be 'center' or 'forward', got {self.anchor!r}")
        if self.flatten_order not in ("temporal", "spatial"):
            raise ConfigError(f"flatten_order: must be 'temporal' or 'spatial', got {self.flatten_order!r}")
        if self.boundary not in ("replicate", "zero"):
            raise ConfigError(f"boundary: must be 'replicate' or 'zero', got {self.boundary!r}")
        if not 0 < self.dt_min <= self.dt_max:
            raise ConfigError(f"dt_min/dt_max: need 0 < dt_min <= dt_max, got {self.dt_min}, {self.dt_max}")
        for d in self.directions:
            if d not in DIRECTIONS:
                raise ConfigError(f"directions: unknown direction {d!r}")
        WindowSpec(self.window, (0, 0, 0), self.heads)

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        return cls(**overrides)

    @classmethod
    def full(cls, **overrides) -> "ModelConfig":
        base = dict(embed_dim=192, num_stages=4, swsa_blocks=2, gsm_blocks=2, heads=8, window=(2, 8, 8),
                    K=5, d_state=16, preset="full")
        base.update(overrides)
        return cls(**base)

    @classmethod
    def preset_named(cls, name: str, **overrides) -> "ModelConfig":
        if name == "toy":
            return cls.toy(**overrides)
        if name == "full":
            return cls.full(**overrides)
        raise ConfigError(f"preset: unknown preset {name!r}; choose 'toy' or 'full'")

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def direction_set(self) -> ScanDirectionSet:
        return ScanDirectionSet(self.directions)

    @property
    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.window, (0, 0, 0), self.heads)


MODEL_FIELDS = tuple(f.name for f in fields(ModelConfig))


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    C, cin, s = cfg.embed_dim, cfg.in_channels, cfg.scale
    p: dict[str, np.ndarray] = {}
    b0 = 1.0 / np.sqrt(cin * 9)
    p["shallow.W"] = rng.uniform(-b0, b0, (C, cin, 3, 3))
    p["shallow.b"] = np.zeros(C)
    for st in range(cfg.num_stages):
        for b in range(cfg.swsa_blocks):
            p.update(init_swsa_block(rng, f"s{st}.swsa{b}.", C, cfg.window_spec, cfg.mlp_ratio, cfg.rel_pos_bias))
        for b in range(cfg.gsm_blocks):
            p.update(init_gsm_block(rng, f"s{st}.gsm{b}.", C, cfg.d_state, cfg.direction_set,
                                     cfg.dt_min, cfg.dt_max))
    b1 = 1.0 / np.sqrt(C * 9)
    p["recon.W1"] = rng.uniform(-b1, b1, (C, C, 3, 3))
    p["recon.b1"] = np.zeros(C)
    p["recon.W2"] = np.zeros((cin * s * s, C, 3, 3))
    p["recon.b2"] = np.zeros(cin * s * s)
    return p


def bicubic_upsample(lr: np.ndarray, scale: int) -> np.ndarray:
    return bicubic_resize(lr, scale)


def _flow_fn(flows, cfg: ModelConfig, H: int, W: int):
    zero = np.zeros((2, H, W))
    if flows is None or not cfg.align:
        return lambda i, k: zero
    if callable(flows):
        return flows
    return lambda i, k: zero if i == k else flows[i, k]


def forward(p: Mapping[str, ad.Var], lr: np.ndarray, flows, cfg: ModelConfig, upsampled: np.ndarray | None = None):
    """Super-resolve a (T, C, H, W) clip; returns a Var of shape (T, C, sH, sW).

    ``flows`` is a (T, T, 2, H, W) array with ``flows[i, k] = O_{i->k}``, a
    callable ``(i, k) -> (2, H, W)``, or None for zero motion.
    """
    lr = np.asarray(lr, dtype=np.float64)
    T, _, H, W = lr.shape
    flow_fn = _flow_fn(flows, cfg, H, W)
    strategy = AnchorStrategy.parse(cfg.anchor)
    feat0 = ad.conv2d(lr, p["shallow.W"], p["shallow.b"])
    x = feat0
    for st in range(cfg.num_stages):
        xs = ad.transpose(x, (0, 2, 3, 1))
        for b in range(cfg.swsa_blocks):
            spec = cfg.window_spec.shifted() if b % 2 else cfg.window_spec
            xs = swsa_block(xs, p, f"s{st}.swsa{b}.", spec)
        frames_all = ad.transpose(xs, (0, 3, 1, 2))
        frames = [ad.getitem(frames_all, t) for t in range(T)]
        blocks = [_block_fn(p, f"s{st}.gsm{b}.", cfg) for b in range(cfg.gsm_blocks)]
        for direction in ("forward", "backward"):
            frames = window_propagate(frames, flow_fn, cfg.K, strategy, blocks, cfg.scatter, direction)
        x = ad.stack(frames, axis=0)
    feat = ad.add(feat0, x)
    h = ad.gelu(ad.conv2d(feat, p["recon.W1"], p["recon.b1"]))
    r = ad.pixel_shuffle(ad.conv2d(h, p["recon.W2"], p["recon.b2"]), cfg.scale)
    up = bicubic_upsample(lr, cfg.scale) if upsampled is None else upsampled
    return ad.add(r, up)


def _block_fn(p, prefix: str, cfg: ModelConfig):
    mixer = scan_mixer(p, prefix, cfg.direction_set)
    norm = (p[prefix + "ln_g"], p[prefix + "ln_b"])

    def block(window, scatter_on):
        return gsm_residuals(window, mixer, norm, cfg.flatten_order, scatter_on, cfg.boundary)

    return block


@dataclass
class GSMambaVSR:
    """Parameters plus config; call with a LR clip to get an SR clip (numpy)."""

    cfg: ModelConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if not self.params:
            self.params = init_params(self.cfg, self.seed)

    def __call__(self, lr, flows=None) -> np.ndarray:
        vars_ = {k: ad.Var(v) for k, v in self.params.items()}
        return forward(vars_, lr, flows, self.cfg).value

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))
