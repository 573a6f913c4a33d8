"""``gsmamba`` command line: gen | check | train | sr | ablate | bench.

Exit codes: 0 success, 1 validation or assertion failure, 2 I/O error.
Every subcommand writes only inside ``--out`` and leaves a
``config.resolved`` snapshot there.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .errors import ConfigError, ContractError, DecodeError, ShapeError

log = logging.getLogger("gsmamba")

EXIT_OK, EXIT_FAIL, EXIT_IO = 0, 1, 2
COMMANDS = ("gen", "check", "train", "sr", "ablate", "bench")


class StartupError(OSError):
    """A required input (dataset, checkpoint, clip) is missing."""


def _require_dir(path: str, what: str) -> Path:
    if not path:
        raise StartupError(f"{what} not given (use --set {what}=DIR)")
    p = Path(path)
    if not p.is_dir():
        raise StartupError(f"{what} directory not found: {p}")
    return p


def _prepare_out(cfg: RunConfig, out: str) -> Path:
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    cfg.write_snapshot(d)
    return d


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_gen(cfg: RunConfig, out: Path) -> int:
    from .data import SynthSpec, gen_synthetic, save_clip, write_manifest

    entries = []
    for j in range(cfg["clips"]):
        spec = SynthSpec(pattern=cfg["pattern"], motion=cfg["motion"], dx=cfg["motion_dx"], dy=cfg["motion_dy"],
                         angle=cfg["motion_angle"], frames=cfg["frames"], lr_height=cfg["lr_height"],
                         lr_width=cfg["lr_width"], scale=cfg["scale"], seed=cfg["seed"] * 1000 + j,
                         randomize_direction=cfg["randomize_direction"], noise_sigma=cfg["noise_sigma"],
                         max_freq=cfg["max_freq"])
        spec.validate()
        entries.append(save_clip(out, gen_synthetic(spec), f"clip{j:03d}", cfg["previews"]))
    write_manifest(out, entries)
    print(f"wrote {len(entries)} clips to {out}")
    return EXIT_OK


def cmd_check(cfg: RunConfig, out: Path) -> int:
    from .checks import format_results, run_checks

    try:
        results = run_checks(cfg["suite"] or None, cfg["fault"])
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    table = format_results(results)
    print(table)
    (out / "check.txt").write_text(table + "\n")
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"FAILED {r.suite}: {r.name}: {r.detail}", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_train(cfg: RunConfig, out: Path) -> int:
    from .data import load_dataset
    from .model import GSMambaVSR
    from .train import evaluate, fit, save_checkpoint

    clips = load_dataset(_require_dir(cfg["data"], "data"))
    if not clips:
        raise StartupError(f"dataset {cfg['data']} lists no clips")
    model = GSMambaVSR(cfg.model(), seed=cfg["seed"])

    def progress(step, loss, opt):
        if step % 10 == 0 or step == cfg["steps"] - 1:
            log.info("step %d loss %.6f lr %.2e", step, loss, opt.current_lr())

    curve = fit(model, [c for _, c in clips], cfg["steps"], lr=cfg["lr"], batch_size=cfg["batch_size"],
                seed=cfg["seed"], warmup=cfg["warmup"], log=progress)
    save_checkpoint(out / "checkpoint", model)
    (out / "loss_curve.csv").write_text("step,loss\n" + "".join(f"{i},{v:.8e}\n" for i, v in enumerate(curve)))
    report = evaluate(model, clips)
    (out / "eval.csv").write_text(report.to_csv())
    (out / "eval.txt").write_text(report.to_table() + "\n")
    print(report.to_table())
    return EXIT_OK


def cmd_sr(cfg: RunConfig, out: Path) -> int:
    from .data import ClipSample, load_dataset
    from .io import ImageU8, read_gstn, write_gstn, write_ppm
    from .model import bicubic_upsample
    from .train import EvalReport, load_checkpoint, score_clip

    model = load_checkpoint(_require_dir(cfg["checkpoint"], "checkpoint"))
    if cfg["input"]:
        path = Path(cfg["input"])
        if not path.is_file():
            raise StartupError(f"input clip not found: {path}")
        lr = read_gstn(path)
        clips = [(path.stem, ClipSample(lr, None, None))]
    else:
        clips = load_dataset(_require_dir(cfg["data"], "data"))
    rows = []
    for clip_id, clip in clips:
        sr = model(clip.lr, clip.flows)
        write_gstn(out / f"{clip_id}_sr.gstn", sr)
        for t, frame in enumerate(sr):
            write_ppm(out / f"{clip_id}_sr{t:02d}.ppm", ImageU8.from_float(frame))
        if clip.hr is not None:
            rows.append(score_clip(clip_id, sr, clip.hr, bicubic_upsample(clip.lr, model.cfg.scale)))
    if rows:
        report = EvalReport(rows)
        (out / "metrics.csv").write_text(report.to_csv())
        print(report.to_table())
    else:
        print(f"super-resolved {len(clips)} clip(s) into {out} (no HR reference, metrics skipped)")
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, out: Path) -> int:
    from .ablation import VARIANTS, AblationSettings, run_ablation

    settings = AblationSettings(
        train_clips=cfg["ablate_train_clips"], test_clips=cfg["ablate_test_clips"], steps=cfg["ablate_steps"],
        lr=cfg["ablate_lr"], warmup=cfg["ablate_warmup"], seed=cfg["seed"], motion=cfg["ablate_motion"],
        pattern=cfg["pattern"], dx=cfg["ablate_motion_dx"], dy=cfg["ablate_motion_dy"], angle=cfg["motion_angle"],
        frames=cfg["ablate_frames"], lr_height=cfg["lr_height"], lr_width=cfg["lr_width"],
        noise_sigma=cfg["ablate_noise_sigma"], flow_error=cfg["ablate_flow_error"])
    variants = cfg["ablate_variants"] or tuple(VARIANTS)
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ConfigError(f"ablate_variants: unknown variant(s) {unknown}; choose from {list(VARIANTS)}")
    base = cfg.model().with_(dt_min=cfg["ablate_dt_min"], dt_max=cfg["ablate_dt_max"])
    result = run_ablation(settings, base, variants,
                          log=lambda r: log.info("%s: %.3f dB (%.0f s)", r.variant, r.psnr, r.seconds))
    (out / "ablation.csv").write_text(result.to_csv())
    table = result.to_table()
    if len(variants) == len(VARIANTS):
        table += (f"\n\naligned-vs-unaligned gap: {result.alignment_gap():+.3f} dB"
                  f"\nordering scatter >= center >= forward >= best no-align: "
                  f"{'holds' if result.ordering_holds() else 'does not hold'}")
    (out / "ablation.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def cmd_bench(cfg: RunConfig, out: Path) -> int:
    from .bench import BenchSettings, run_bench

    settings = BenchSettings(lengths=cfg["bench_lengths"], repeats=cfg["bench_repeats"],
                             repeat_budget=cfg["bench_repeat_budget"],
                             channels=cfg["bench_channels"], state=cfg["bench_state"],
                             attn_dim=cfg["bench_attn_dim"], attn_max=cfg["bench_attn_max"],
                             parallel_max=cfg["bench_parallel_max"], seed=cfg["seed"])
    result = run_bench(settings, log=lambda k, L, t: log.info("%s L=%d %.4e s", k, L, t))
    (out / "bench.csv").write_text(result.to_csv())
    (out / "exponents.csv").write_text(result.exponents_csv())
    print(result.to_table())
    return EXIT_OK


HANDLERS = {"gen": cmd_gen, "check": cmd_check, "train": cmd_train, "sr": cmd_sr, "ablate": cmd_ablate,
            "bench": cmd_bench}
SUMMARIES = {
    "gen": "write a synthetic clip dataset with ground-truth flows",
    "check": "run the invariant and gradient suites",
    "train": "train a model on a generated dataset",
    "sr": "super-resolve clips with a saved checkpoint",
    "ablate": "train and rank the alignment / anchoring variants",
    "bench": "time scan and attention kernels against sequence length",
}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsmamba", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="progress logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=SUMMARIES[name])
        p.add_argument("--config", metavar="PATH", help="key = value config file")
        p.add_argument("--out", metavar="DIR", default=None, help="output directory (default: ./gsmamba-<command>)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                       help="override one config key (repeatable)")
        p.add_argument("--preset", choices=("toy", "full"), default=None)
        p.add_argument("-v", "--verbose", action="store_true", help="progress logging to stderr")
        if name == "check":
            p.add_argument("--suite", action="append", default=[], help="run only this suite (repeatable)")
            p.add_argument("--fault", default=None, help="inject a named fault (test hook)")
    return parser


def _resolve(args) -> RunConfig:
    overrides = list(args.overrides)
    if getattr(args, "suite", None):
        overrides.append("suite=" + ",".join(args.suite))
    if getattr(args, "fault", None):
        overrides.append("fault=" + args.fault)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise StartupError(f"config file not found: {path}")
        return RunConfig.from_file(path, overrides, args.seed, args.preset)
    return RunConfig.resolve(None, overrides, args.seed, args.preset)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                        stream=sys.stderr)
    try:
        cfg = _resolve(args)
        out = _prepare_out(cfg, args.out or f"gsmamba-{args.command}")
        return HANDLERS[args.command](cfg, out)
    except (ConfigError, ContractError, ShapeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (OSError, DecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
