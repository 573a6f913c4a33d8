"""Scan-order / alignment / anchor / scatter ablation on a fixed synthetic benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import SynthSpec, gen_synthetic
from .model import GSMambaVSR, ModelConfig, bicubic_upsample
from .metrics import frame_metrics
from .train import fit

# name -> model overrides. No-align variants keep the window machinery but
# feed zero flows; they use center windows without scatter, so on static
# data "no-align temporal-first" and "align+center" are the same network.
VARIANTS = {
    "no-align spatial-first": dict(align=False, flatten_order="spatial", anchor="center", scatter=False),
    "no-align temporal-first": dict(align=False, flatten_order="temporal", anchor="center", scatter=False),
    "align+forward": dict(align=True, flatten_order="temporal", anchor="forward", scatter=False),
    "align+center": dict(align=True, flatten_order="temporal", anchor="center", scatter=False),
    "align+center+scatter": dict(align=True, flatten_order="temporal", anchor="center", scatter=True),
    "align+center+no-scatter": dict(align=True, flatten_order="temporal", anchor="center", scatter=False),
}
ALIGNED = ("align+forward", "align+center", "align+center+scatter", "align+center+no-scatter")
UNALIGNED = ("no-align spatial-first", "no-align temporal-first")
ORDER_CHAIN = ("align+center+scatter", "align+center", "align+forward")


@dataclass
class AblationSettings:
    train_clips: int = 6
    test_clips: int = 3
    steps: int = 200
    lr: float = 3e-3
    warmup: int = 20
    seed: int = 0
    motion: str = "translate"
    pattern: str = "fourier"
    dx: float = 5.0
    dy: float = 3.0
    angle: float = 0.02
    frames: int = 5
    lr_height: int = 16
    lr_width: int = 16
    noise_sigma: float = 0.0
    flow_error: float = 0.0

    def clip_spec(self, seed: int) -> SynthSpec:
        return SynthSpec(pattern=self.pattern, motion=self.motion, dx=self.dx, dy=self.dy, angle=self.angle,
                         frames=self.frames, lr_height=self.lr_height, lr_width=self.lr_width, seed=seed,
                         randomize_direction=self.motion == "translate", noise_sigma=self.noise_sigma,
                         flow_error=self.flow_error)


@dataclass
class AblationRow:
    variant: str
    psnr: float
    ssim: float
    psnr_bicubic: float
    final_loss: float
    seconds: float


@dataclass
class AblationResult:
    rows: list[AblationRow] = field(default_factory=list)

    def by_name(self) -> dict[str, AblationRow]:
        return {r.variant: r for r in self.rows}

    def ranked(self) -> list[AblationRow]:
        return sorted(self.rows, key=lambda r: -r.psnr)

    def best_unaligned(self) -> float:
        d = self.by_name()
        return max(d[n].psnr for n in UNALIGNED if n in d)

    def alignment_gap(self) -> float:
        """Weakest aligned variant minus strongest unaligned one (dB)."""
        d = self.by_name()
        return min(d[n].psnr for n in ALIGNED if n in d) - self.best_unaligned()

    def ordering_holds(self) -> bool:
        d = self.by_name()
        chain = [d[n].psnr for n in ORDER_CHAIN] + [self.best_unaligned()]
        return all(a >= b for a, b in zip(chain, chain[1:]))

    def to_table(self) -> str:
        head = f"{'rank':>4}  {'variant':<26} {'PSNR':>8} {'SSIM':>7} {'vs bicubic':>11} {'loss':>8}"
        lines = [head, "-" * len(head)]
        for i, r in enumerate(self.ranked(), 1):
            lines.append(f"{i:>4}  {r.variant:<26} {r.psnr:8.3f} {r.ssim:7.4f} {r.psnr - r.psnr_bicubic:+11.3f} "
                         f"{r.final_loss:8.5f}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["rank,variant,psnr,ssim,psnr_bicubic,final_loss,seconds"]
        for i, r in enumerate(self.ranked(), 1):
            lines.append(f"{i},{r.variant},{r.psnr:.6f},{r.ssim:.6f},{r.psnr_bicubic:.6f},{r.final_loss:.8f},"
                         f"{r.seconds:.2f}")
        return "\n".join(lines) + "\n"


def benchmark_clips(settings: AblationSettings):
    base = 1000 * (settings.seed + 1)
    train = [gen_synthetic(settings.clip_spec(base + j)) for j in range(settings.train_clips)]
    test = [gen_synthetic(settings.clip_spec(base + 500 + j)) for j in range(settings.test_clips)]
    return train, test


def run_ablation(settings: AblationSettings, base_cfg: ModelConfig | None = None, variants=None,
                 log=None) -> AblationResult:
    """Train every variant from the same init seed on the same clips; score held-out clips."""
    base_cfg = base_cfg or ModelConfig.toy()
    train, test = benchmark_clips(settings)
    names = list(variants or VARIANTS)
    result = AblationResult()
    cache: dict[tuple, AblationRow] = {}
    for name in names:
        overrides = VARIANTS[name]
        key = tuple(sorted(overrides.items()))
        if key in cache:
            r = cache[key]
            result.rows.append(AblationRow(name, r.psnr, r.ssim, r.psnr_bicubic, r.final_loss, 0.0))
            continue
        t0 = time.perf_counter()
        model = GSMambaVSR(base_cfg.with_(**overrides), seed=settings.seed)
        curve = fit(model, train, settings.steps, lr=settings.lr, warmup=settings.warmup, seed=settings.seed)
        scores = [frame_metrics(model(c.lr, c.flows), c.hr) for c in test]
        bic = [frame_metrics(bicubic_upsample(c.lr, base_cfg.scale), c.hr)[0] for c in test]
        row = AblationRow(name, float(np.mean([s[0] for s in scores])), float(np.mean([s[1] for s in scores])),
                          float(np.mean(bic)), float(np.mean(curve[-10:])), time.perf_counter() - t0)
        cache[key] = row
        result.rows.append(row)
        if log is not None:
            log(row)
    return result
