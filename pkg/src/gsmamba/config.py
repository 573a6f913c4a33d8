"""Flat ``key = value`` run configuration.

One key per line, ``#`` starts a comment, blank lines are ignored. Later
sources win: built-in defaults < preset < config file < ``--set`` overrides.
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable

from .errors import ConfigError
from .model import ModelConfig


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _words(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _show(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str


_MODEL_DEFAULTS = ModelConfig.toy()

SCHEMA: dict[str, Key] = {
    # run
    "seed": Key(int, 0, "global seed"),
    "preset": Key(str, "toy", "model preset: toy | full"),
    # model (preset values apply unless overridden)
    "embed_dim": Key(int, _MODEL_DEFAULTS.embed_dim, "feature channels"),
    "num_stages": Key(int, _MODEL_DEFAULTS.num_stages, "attention + propagation stages"),
    "swsa_blocks": Key(int, _MODEL_DEFAULTS.swsa_blocks, "attention blocks per stage"),
    "gsm_blocks": Key(int, _MODEL_DEFAULTS.gsm_blocks, "gather-scatter blocks per stage"),
    "heads": Key(int, _MODEL_DEFAULTS.heads, "attention heads"),
    "window": Key(_ints, _MODEL_DEFAULTS.window, "attention window t,h,w"),
    "K": Key(int, _MODEL_DEFAULTS.K, "frames per propagation window (odd)"),
    "d_state": Key(int, _MODEL_DEFAULTS.d_state, "SSM state size"),
    "dt_min": Key(float, _MODEL_DEFAULTS.dt_min, "lower end of the initial step-size range"),
    "dt_max": Key(float, _MODEL_DEFAULTS.dt_max, "upper end of the initial step-size range"),
    "scale": Key(int, _MODEL_DEFAULTS.scale, "upsampling factor"),
    "anchor": Key(str, _MODEL_DEFAULTS.anchor, "center | forward"),
    "scatter": Key(_bool, _MODEL_DEFAULTS.scatter, "redistribute residuals to all window frames"),
    "directions": Key(_words, _MODEL_DEFAULTS.directions, "scan directions"),
    "flatten_order": Key(str, _MODEL_DEFAULTS.flatten_order, "temporal | spatial"),
    "align": Key(_bool, _MODEL_DEFAULTS.align, "warp window frames with flow"),
    "mlp_ratio": Key(int, _MODEL_DEFAULTS.mlp_ratio, "attention MLP width ratio"),
    "rel_pos_bias": Key(_bool, _MODEL_DEFAULTS.rel_pos_bias, "relative position bias in attention"),
    "boundary": Key(str, _MODEL_DEFAULTS.boundary, "warp boundary: replicate | zero"),
    # synthetic data
    "clips": Key(int, 4, "clips written by gen"),
    "frames": Key(int, 6, "frames per clip"),
    "lr_height": Key(int, 16, "LR frame height"),
    "lr_width": Key(int, 16, "LR frame width"),
    "pattern": Key(str, "fourier", "fourier | checker | blobs"),
    "motion": Key(str, "translate", "translate | rotate | static"),
    "motion_dx": Key(float, 2.0, "HR pixels per frame along x"),
    "motion_dy": Key(float, 1.0, "HR pixels per frame along y"),
    "motion_angle": Key(float, 0.02, "radians per frame for rotate"),
    "randomize_direction": Key(_bool, False, "rotate the translation direction per clip"),
    "noise_sigma": Key(float, 0.0, "Gaussian noise added to LR frames"),
    "max_freq": Key(float, 0.2, "texture bandwidth in cycles per HR pixel"),
    "previews": Key(_bool, True, "write PPM previews"),
    # training / inference
    "data": Key(str, "", "dataset directory (train, sr)"),
    "steps": Key(int, 200, "training steps"),
    "lr": Key(float, 1e-3, "peak learning rate"),
    "lr_min": Key(float, 0.0, "final learning rate of the cosine schedule"),
    "warmup": Key(int, 0, "linear warmup steps"),
    "batch_size": Key(int, 1, "clips per step"),
    "checkpoint": Key(str, "", "checkpoint directory (sr)"),
    "input": Key(str, "", "input LR clip as GSTN (sr); default: every clip in data"),
    # ablation
    "ablate_steps": Key(int, 300, "training steps per ablation variant"),
    "ablate_train_clips": Key(int, 16, "training clips in the ablation benchmark"),
    "ablate_test_clips": Key(int, 4, "held-out clips in the ablation benchmark"),
    "ablate_lr": Key(float, 3e-3, "ablation learning rate"),
    "ablate_warmup": Key(int, 20, "ablation warmup steps"),
    "ablate_variants": Key(_words, (), "subset of variants (default: all six)"),
    "ablate_motion": Key(str, "translate", "ablation clip motion"),
    "ablate_motion_dx": Key(float, 8.0, "ablation HR pixels per frame along x"),
    "ablate_motion_dy": Key(float, 4.0, "ablation HR pixels per frame along y"),
    "ablate_frames": Key(int, 5, "frames per ablation clip"),
    "ablate_noise_sigma": Key(float, 0.05, "LR noise in ablation clips"),
    "ablate_flow_error": Key(float, 0.25, "flow estimator error per frame of distance"),
    "ablate_dt_min": Key(float, 0.1, "step-size init range used by ablation models"),
    "ablate_dt_max": Key(float, 1.0, "step-size init range used by ablation models"),
    # benchmark
    "bench_lengths": Key(_ints, (1024, 2048, 4096, 8192, 16384, 32768, 65536), "sequence lengths"),
    "bench_repeats": Key(int, 15, "timing repeats (min is reported)"),
    "bench_repeat_budget": Key(float, 10.0, "seconds per measurement after which repeats stop"),
    "bench_channels": Key(int, 16, "scan channels D"),
    "bench_state": Key(int, 16, "scan state size N"),
    "bench_attn_dim": Key(int, 16, "mhsa feature dim"),
    "bench_attn_max": Key(int, 65536, "skip mhsa above this length"),
    "bench_parallel_max": Key(int, 65536, "skip the parallel scan above this length"),
    # check
    "suite": Key(_words, (), "invariant suites to run (default: all)"),
    "fault": Key(str, "", "inject a named fault (test hook)"),
}

MODEL_KEYS = tuple(k for k in SCHEMA if k in ModelConfig.__dataclass_fields__ and k != "preset")


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value text`` pairs; unknown keys and malformed lines raise ConfigError."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        _check_key(key, f"{source}:{lineno}")
        out[key] = value
    return out


def parse_overrides(items: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        _check_key(key, "--set")
        out[key] = value
    return out


def _check_key(key: str, where: str) -> None:
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown key {key!r}")


class RunConfig(dict):
    """Resolved configuration: every schema key mapped to a typed value."""

    @classmethod
    def resolve(cls, file_text: str | None = None, overrides: Iterable[str] = (), seed: int | None = None,
                preset: str | None = None, source: str = "<config>") -> "RunConfig":
        raw = parse_text(file_text, source) if file_text else {}
        raw.update(parse_overrides(overrides))
        if seed is not None:
            raw["seed"] = str(seed)
        if preset is not None:
            raw["preset"] = preset
        cfg = cls((k, key.default) for k, key in SCHEMA.items())
        preset_name = raw.get("preset", cfg["preset"])
        base = ModelConfig.preset_named(preset_name)
        for k in MODEL_KEYS:
            cfg[k] = getattr(base, k)
        for k, text in raw.items():
            try:
                cfg[k] = SCHEMA[k].parse(text)
            except ValueError as exc:
                raise ConfigError(f"{k}: cannot parse {text!r} ({exc})") from None
        cfg.model()  # validates model keys early
        return cfg

    @classmethod
    def from_file(cls, path, overrides: Iterable[str] = (), seed: int | None = None,
                  preset: str | None = None) -> "RunConfig":
        text = Path(path).read_text()
        return cls.resolve(text, overrides, seed, preset, source=str(path))

    def model(self) -> ModelConfig:
        return ModelConfig(preset=self["preset"], **{k: self[k] for k in MODEL_KEYS})

    def to_text(self) -> str:
        lines = ["# resolved configuration; feed back with --config to reproduce this run"]
        lines += [f"{k} = {_show(v)}" for k, v in self.items()]
        return "\n".join(lines) + "\n"

    def write_snapshot(self, directory) -> Path:
        path = Path(directory) / "config.resolved"
        path.write_text(self.to_text())
        return path
