"""Synthetic moving-pattern clips with exact ground-truth flow.

HR frames are rendered analytically at every time step (frame t shows the
base pattern moved t times by the motion), LR frames are bicubic
downsamples, and LR-grid flows follow from the motion in closed form.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .align import Rotate, Translate
from .errors import ConfigError, DecodeError
from .io import ImageU8, read_gstn, write_gstn, write_ppm
from .tensor import bicubic_resize

PATTERNS = ("fourier", "checker", "blobs")
MOTIONS = ("translate", "rotate", "static")


@dataclass
class SynthSpec:
    """Recipe for one clip. Motion amounts are per frame, in HR pixels / radians."""

    pattern: str = "fourier"
    motion: str = "translate"
    dx: float = 2.0
    dy: float = 1.0
    angle: float = 0.02
    frames: int = 6
    lr_height: int = 16
    lr_width: int = 16
    scale: int = 4
    seed: int = 0
    randomize_direction: bool = False
    noise_sigma: float = 0.0
    max_freq: float = 0.2  # cycles per HR pixel for the Fourier texture
    flow_error: float = 0.0  # LR px of smooth flow error per frame of temporal distance

    def validate(self) -> None:
        if self.pattern not in PATTERNS:
            raise ConfigError(f"pattern: unknown value {self.pattern!r}; choose from {PATTERNS}")
        if self.motion not in MOTIONS:
            raise ConfigError(f"motion: unknown value {self.motion!r}; choose from {MOTIONS}")
        if self.frames < 1:
            raise ConfigError(f"frames: must be >= 1, got {self.frames}")
        if self.lr_height < 1 or self.lr_width < 1:
            raise ConfigError("lr_height/lr_width: must be >= 1")
        if self.scale < 1:
            raise ConfigError(f"scale: must be >= 1, got {self.scale}")
        if self.noise_sigma < 0 or self.flow_error < 0:
            raise ConfigError("noise_sigma/flow_error: must be >= 0")
        H, W = self.hr_size
        limit = min(H, W) / 2.0
        if self.motion == "translate" and np.hypot(self.dx, self.dy) >= limit:
            raise ConfigError(f"motion_dx/motion_dy: per-frame motion {np.hypot(self.dx, self.dy):.3g} px "
                              f"exceeds half the HR extent ({limit:g} px)")
        if self.motion == "rotate":
            mag = Rotate((W - 1) / 2, (H - 1) / 2, self.angle).magnitude(H, W)
            if mag >= limit:
                raise ConfigError(f"motion_angle: per-frame rotation moves corners {mag:.3g} px, "
                                  f"exceeding half the HR extent ({limit:g} px)")

    @property
    def hr_size(self) -> tuple[int, int]:
        return self.lr_height * self.scale, self.lr_width * self.scale

    def motion_model(self, rng: np.random.Generator | None = None):
        H, W = self.hr_size
        if self.motion == "static":
            return Translate(0.0, 0.0)
        if self.motion == "rotate":
            return Rotate((W - 1) / 2.0, (H - 1) / 2.0, self.angle)
        dx, dy = self.dx, self.dy
        if self.randomize_direction and rng is not None:
            phi = rng.uniform(0, 2 * np.pi)
            c, s = np.cos(phi), np.sin(phi)
            dx, dy = c * dx - s * dy, s * dx + c * dy
        return Translate(float(dx), float(dy))


@dataclass
class ClipSample:
    lr: np.ndarray  # (T, 3, H, W)
    hr: np.ndarray  # (T, 3, sH, sW)
    flows: np.ndarray  # (T, T, 2, H, W); flows[i, k] = O_{i->k} on the LR grid
    meta: dict = field(default_factory=dict)

    @property
    def frames(self) -> int:
        return self.lr.shape[0]

    @property
    def scale(self) -> int:
        return self.hr.shape[-1] // self.lr.shape[-1]

    def flow(self, i: int, k: int) -> np.ndarray:
        return self.flows[i, k]


# --------------------------------------------------------------------------
# analytic patterns: callables (x, y) -> (3, ...) in [0, 1]
# --------------------------------------------------------------------------


def _fourier(rng, max_freq: float, n_waves: int = 24):
    radius = rng.uniform(0.02, max_freq, n_waves)
    theta = rng.uniform(0, np.pi, n_waves)
    fx, fy = radius * np.cos(theta), radius * np.sin(theta)
    phase = rng.uniform(0, 2 * np.pi, n_waves)
    amp = rng.uniform(0.5, 1.0, n_waves)
    amp *= 0.42 / amp.sum()
    tint = rng.uniform(0.6, 1.0, (3, n_waves))

    def render(x, y):
        arg = 2 * np.pi * (fx[:, None, None] * x + fy[:, None, None] * y) + phase[:, None, None]
        waves = amp[:, None, None] * np.cos(arg)
        return 0.5 + np.tensordot(tint, waves, axes=(1, 0))

    return render


def _checker(rng, max_freq: float):
    period = rng.uniform(1.0 / max_freq, 3.0 / max_freq)
    rot = rng.uniform(0, np.pi / 2)
    c0, c1 = rng.uniform(0.1, 0.45, 3), rng.uniform(0.55, 0.9, 3)
    sharp = 4.0

    def render(x, y):
        u = np.cos(rot) * x + np.sin(rot) * y
        v = -np.sin(rot) * x + np.cos(rot) * y
        s = np.tanh(sharp * np.sin(np.pi * u / period) * np.sin(np.pi * v / period))
        w = 0.5 * (1.0 + s)
        return c0[:, None, None] * (1 - w) + c1[:, None, None] * w

    return render


def _blobs(rng, extent: float, n_blobs: int = 40):
    cx = rng.uniform(-0.5 * extent, 1.5 * extent, n_blobs)
    cy = rng.uniform(-0.5 * extent, 1.5 * extent, n_blobs)
    sig = rng.uniform(0.03, 0.1, n_blobs) * extent
    col = rng.uniform(-0.3, 0.3, (3, n_blobs))

    def render(x, y):
        g = np.exp(-((x - cx[:, None, None]) ** 2 + (y - cy[:, None, None]) ** 2) / (2 * sig[:, None, None] ** 2))
        return np.clip(0.5 + np.tensordot(col, g, axes=(1, 0)), 0.0, 1.0)

    return render


def make_pattern(spec: SynthSpec, rng: np.random.Generator):
    if spec.pattern == "fourier":
        return _fourier(rng, spec.max_freq)
    if spec.pattern == "checker":
        return _checker(rng, spec.max_freq)
    return _blobs(rng, float(max(spec.hr_size)))


def render_frame(pattern, motion, t: int, H: int, W: int) -> np.ndarray:
    """Frame t shows the base pattern moved t times: I_t(p) = I_0(m^{-t}(p))."""
    ys, xs = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    qx, qy = motion.power(-t).apply(xs, ys)
    return pattern(qx, qy)


def lr_flows(motion, T: int, scale: int, H: int, W: int) -> np.ndarray:
    """flows[i, k] = m_lr^(k-i)(p) - p on the LR grid."""
    m_lr = motion.rescale(1.0 / scale)
    ys, xs = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    flows = np.zeros((T, T, 2, H, W))
    for i in range(T):
        for k in range(T):
            if i != k:
                mx, my = m_lr.power(k - i).apply(xs, ys)
                flows[i, k, 0] = mx - xs
                flows[i, k, 1] = my - ys
    return flows


def flow_errors(rng: np.random.Generator, T: int, H: int, W: int, per_frame: float) -> np.ndarray:
    """Smooth random flow errors whose size grows with the frame gap |k - i|.

    Mimics an estimator that is less accurate over longer motion paths:
    each ordered pair gets a coarse 3x3 random field, bicubically upsampled,
    scaled to ``per_frame * |k - i|`` px RMS.
    """
    err = np.zeros((T, T, 2, H, W))
    for i in range(T):
        for k in range(T):
            if i == k:
                continue
            coarse = rng.standard_normal((2, 3, 3))
            field = bicubic_resize(coarse, Fraction(max(H, W), 3))[:, :H, :W]
            field /= max(np.sqrt(np.mean(field**2)), 1e-12)
            err[i, k] = per_frame * abs(k - i) * field
    return err


def gen_synthetic(spec: SynthSpec) -> ClipSample:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    pattern = make_pattern(spec, rng)
    motion = spec.motion_model(rng)
    Hh, Wh = spec.hr_size
    hr = np.stack([render_frame(pattern, motion, t, Hh, Wh) for t in range(spec.frames)])
    lr = bicubic_resize(hr, Fraction(1, spec.scale))
    if spec.noise_sigma > 0:
        lr = lr + rng.normal(0.0, spec.noise_sigma, lr.shape)
    flows = lr_flows(motion, spec.frames, spec.scale, spec.lr_height, spec.lr_width)
    if spec.flow_error > 0:
        flows = flows + flow_errors(rng, spec.frames, spec.lr_height, spec.lr_width, spec.flow_error)
    meta = asdict(spec)
    meta["motion_model"] = {"type": type(motion).__name__, **asdict(motion)}
    return ClipSample(lr, hr, flows, meta)


# --------------------------------------------------------------------------
# on-disk datasets
# --------------------------------------------------------------------------


def save_clip(directory, clip: ClipSample, name: str, previews: bool = True) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {"lr": f"{name}_lr.gstn", "hr": f"{name}_hr.gstn", "flows": f"{name}_flows.gstn"}
    write_gstn(d / files["lr"], clip.lr)
    write_gstn(d / files["hr"], clip.hr)
    write_gstn(d / files["flows"], clip.flows)
    if previews:
        write_ppm(d / f"{name}_lr0.ppm", ImageU8.from_float(clip.lr[0]))
        write_ppm(d / f"{name}_hr0.ppm", ImageU8.from_float(clip.hr[0]))
    return {"id": name, **files, "meta": clip.meta}


def write_manifest(directory, entries: list[dict]) -> None:
    text = json.dumps({"clips": entries}, indent=2, sort_keys=True)
    (Path(directory) / "manifest.json").write_text(text + "\n")


def load_dataset(directory) -> list[tuple[str, ClipSample]]:
    d = Path(directory)
    try:
        entries = json.loads((d / "manifest.json").read_text())["clips"]
        files = [(e["id"], e["lr"], e["hr"], e["flows"], e.get("meta", {})) for e in entries]
    except (ValueError, KeyError, TypeError) as exc:
        raise DecodeError(f"{d / 'manifest.json'}: malformed manifest ({exc})", getattr(exc, "pos", 0)) from None
    out = []
    for cid, lr, hr, flows, meta in files:
        out.append((cid, ClipSample(read_gstn(d / lr), read_gstn(d / hr), read_gstn(d / flows), meta)))
    return out
