"""Training, evaluation and checkpoints."""

from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .data import ClipSample
from .errors import ContractError, DecodeError
from .io import decode_gstn, encode_gstn
from .metrics import frame_metrics
from .model import GSMambaVSR, ModelConfig, bicubic_upsample, forward

CHARBONNIER_EPS = 1e-6


def charbonnier(sr, hr, eps: float = CHARBONNIER_EPS) -> ad.Var:
    """mean(sqrt((sr - hr)^2 + eps^2))."""
    d = ad.sub(sr, hr)
    return ad.mean(ad.sqrt(ad.add(ad.mul(d, d), eps * eps)))


def cosine_lr(step: int, total: int, base: float, minimum: float = 0.0, warmup: int = 0) -> float:
    """Linear warmup over ``warmup`` steps, then cosine annealing to ``minimum``."""
    if warmup > 0 and step < warmup:
        return base * (step + 1) / warmup
    if total <= warmup:
        return base
    t = min(step - warmup, total - warmup) / (total - warmup)
    return minimum + 0.5 * (base - minimum) * (1.0 + math.cos(math.pi * t))


@dataclass
class Adam:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.99)
    eps: float = 1e-8
    total_steps: int = 0
    lr_min: float = 0.0
    warmup: int = 0
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def current_lr(self) -> float:
        return cosine_lr(self.step_count, self.total_steps, self.lr, self.lr_min, self.warmup)

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        lr = self.current_lr()
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for name, g in grads.items():
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_loss(model: GSMambaVSR, clip: ClipSample, tape: ad.Tape, upsampled=None):
    pv = tape.params_from(model.params)
    sr = forward(pv, clip.lr, clip.flows, model.cfg, upsampled)
    return charbonnier(sr, clip.hr)


def train_step(model: GSMambaVSR, batch: Sequence[ClipSample], opt: Adam, upsampled=None) -> float:
    """One Adam step on the mean Charbonnier loss of ``batch``; returns the loss."""
    total = None
    losses = []
    for j, clip in enumerate(batch):
        with ad.Tape() as tape:
            loss = clip_loss(model, clip, tape, None if upsampled is None else upsampled[j])
        g = ad.backward(tape, loss)
        losses.append(float(loss.value))
        # fixed accumulation order keeps runs reproducible
        total = g if total is None else {k: total[k] + g[k] for k in total}
    loss_val = float(np.mean(losses))
    grads = {k: v / len(batch) for k, v in total.items()}
    if not np.isfinite(loss_val):
        bad = next((k for k, v in grads.items() if not np.all(np.isfinite(v))), None)
        raise FloatingPointError(f"non-finite loss {loss_val}; first non-finite gradient: {bad}")
    bad = next((k for k, v in grads.items() if not np.all(np.isfinite(v))), None)
    if bad is not None:
        raise FloatingPointError(f"non-finite gradient in parameter {bad!r}")
    opt.update(model.params, grads)
    return loss_val


def fit(model: GSMambaVSR, clips: Sequence[ClipSample], steps: int, lr: float = 1e-3, batch_size: int = 1,
        seed: int = 0, warmup: int = 0, log=None) -> list[float]:
    """Train for ``steps`` Adam steps over ``clips``; returns the loss curve."""
    opt = Adam(lr=lr, total_steps=steps, warmup=warmup)
    rng = np.random.default_rng(seed)
    ups = [bicubic_upsample(c.lr, model.cfg.scale) for c in clips]
    curve = []
    for step in range(steps):
        idx = rng.choice(len(clips), size=min(batch_size, len(clips)), replace=False) if len(clips) > 1 else [0]
        loss = train_step(model, [clips[i] for i in idx], opt, [ups[i] for i in idx])
        curve.append(loss)
        if log is not None:
            log(step, loss, opt)
    return curve


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------


@dataclass
class ClipScore:
    clip_id: str
    psnr: float
    ssim: float
    psnr_bicubic: float
    ssim_bicubic: float

    @property
    def psnr_delta(self) -> float:
        return self.psnr - self.psnr_bicubic

    @property
    def ssim_delta(self) -> float:
        return self.ssim - self.ssim_bicubic


@dataclass
class EvalReport:
    rows: list[ClipScore]

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr for r in self.rows]))

    @property
    def mean_psnr_delta(self) -> float:
        return float(np.mean([r.psnr_delta for r in self.rows]))

    def to_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["clip_id", "psnr", "ssim", "psnr_bicubic", "ssim_bicubic"])
        for r in self.rows:
            w.writerow([r.clip_id, f"{r.psnr:.6f}", f"{r.ssim:.6f}", f"{r.psnr_bicubic:.6f}", f"{r.ssim_bicubic:.6f}"])
        return buf.getvalue()

    def to_table(self) -> str:
        head = f"{'clip':<12} {'PSNR':>8} {'SSIM':>7} {'bic PSNR':>9} {'bic SSIM':>9} {'dPSNR':>7}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.clip_id:<12} {r.psnr:8.3f} {r.ssim:7.4f} {r.psnr_bicubic:9.3f} "
                         f"{r.ssim_bicubic:9.4f} {r.psnr_delta:+7.3f}")
        lines.append(f"{'mean':<12} {self.mean_psnr:8.3f} {'':7} {'':9} {'':9} {self.mean_psnr_delta:+7.3f}")
        return "\n".join(lines)


def score_clip(clip_id: str, sr: np.ndarray, hr: np.ndarray, bicubic: np.ndarray) -> ClipScore:
    p, s = frame_metrics(sr, hr)
    pb, sb = frame_metrics(bicubic, hr)
    return ClipScore(clip_id, p, s, pb, sb)


def evaluate(model: GSMambaVSR, clips: Sequence[tuple[str, ClipSample]]) -> EvalReport:
    rows = []
    for clip_id, clip in clips:
        sr = model(clip.lr, clip.flows)
        rows.append(score_clip(clip_id, sr, clip.hr, bicubic_upsample(clip.lr, model.cfg.scale)))
    return EvalReport(rows)


# --------------------------------------------------------------------------
# checkpoints: concatenated GSTN blobs + plain-text manifest
# --------------------------------------------------------------------------


def save_checkpoint(directory, model: GSMambaVSR) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    blob = bytearray()
    lines = []
    for name in sorted(model.params):
        t = model.params[name]
        lines.append(f"{name} {len(blob)} {'x'.join(map(str, t.shape)) or 'scalar'}")
        blob += encode_gstn(t)
    (d / "weights.gstn").write_bytes(bytes(blob))
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")
    (d / "model.json").write_text(json.dumps(model.cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def load_checkpoint(directory) -> GSMambaVSR:
    d = Path(directory)
    for f in ("weights.gstn", "manifest.txt", "model.json"):
        if not (d / f).exists():
            raise FileNotFoundError(f"checkpoint file missing: {d / f}")
    cfg_dict = json.loads((d / "model.json").read_text())
    cfg = ModelConfig(**cfg_dict)
    blob = (d / "weights.gstn").read_bytes()
    params = {}
    for line in (d / "manifest.txt").read_text().splitlines():
        if not line.strip():
            continue
        name, offset, shape = line.split()
        t, _ = decode_gstn(blob, int(offset))
        expect = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
        if t.shape != expect:
            raise DecodeError(f"tensor {name!r} has shape {t.shape}, manifest says {expect}", int(offset))
        params[name] = t
    expected = set(GSMambaVSR(cfg, seed=0).params)
    if set(params) != expected:
        raise ContractError(f"checkpoint parameters do not match the model config: "
                            f"missing {sorted(expected - set(params))[:3]}, extra {sorted(set(params) - expected)[:3]}")
    return GSMambaVSR(cfg, params)
