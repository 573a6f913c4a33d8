import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from gsmamba.cli import main
from gsmamba.config import RunConfig, parse_text
from gsmamba.errors import ConfigError
from gsmamba.io import read_gstn, write_gstn
from gsmamba.model import bicubic_upsample

TINY_MODEL = ["embed_dim=4", "heads=2", "d_state=2", "window=2,4,4"]
TINY_DATA = ["clips=2", "frames=3", "lr_height=8", "lr_width=8", "previews=false"]


def run(cmd, out, *sets, extra=()):
    argv = [cmd, "--out", str(out), *extra]
    for s in sets:
        argv += ["--set", s]
    return main(argv)


# ---------------------------------------------------------------- config

def test_parse_comments_and_blanks():
    raw = parse_text("# header\n\nseed = 3  # trailing\nlr=0.01\n")
    assert raw == {"seed": "3", "lr": "0.01"}


def test_unknown_key_names_line():
    with pytest.raises(ConfigError, match=r"cfg:2: unknown key 'stepz'"):
        parse_text("seed = 1\nstepz = 3\n", "cfg")


def test_malformed_line_and_bad_value():
    with pytest.raises(ConfigError, match="key = value"):
        parse_text("justtext\n")
    with pytest.raises(ConfigError, match="steps"):
        RunConfig.resolve("steps = many\n")


def test_precedence_defaults_preset_file_overrides():
    cfg = RunConfig.resolve(None)
    assert cfg["embed_dim"] == 32 and cfg["seed"] == 0
    cfg = RunConfig.resolve("preset = full\n")
    assert cfg["embed_dim"] == 192
    cfg = RunConfig.resolve("preset = full\nembed_dim = 64\n")
    assert cfg["embed_dim"] == 64
    cfg = RunConfig.resolve("embed_dim = 64\nseed = 1\n", ["embed_dim=16"], seed=9)
    assert cfg["embed_dim"] == 16 and cfg["seed"] == 9


def test_model_keys_validated_at_resolve():
    with pytest.raises(ConfigError, match="K"):
        RunConfig.resolve(None, ["K=2"])


def test_snapshot_reproduces_config(tmp_path):
    cfg = RunConfig.resolve("lr = 0.02\n", ["directions=forward", "window=1,2,2", "align=false"])
    path = cfg.write_snapshot(tmp_path)
    assert RunConfig.from_file(path) == cfg


# ---------------------------------------------------------------- exit codes and outputs

def test_gen_is_deterministic(tmp_path):
    assert run("gen", tmp_path / "a", *TINY_DATA, extra=["--seed", "5"]) == 0
    assert run("gen", tmp_path / "b", *TINY_DATA, extra=["--seed", "5"]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "manifest.json" in files and "config.resolved" in files
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_exit_codes(tmp_path, capsys):
    assert run("gen", tmp_path / "x", "nonsense=1") == 1
    assert run("train", tmp_path / "t", "data=" + str(tmp_path / "missing")) == 2
    assert main(["gen", "--out", str(tmp_path / "y"), "--config", str(tmp_path / "nope.cfg")]) == 2
    assert run("check", tmp_path / "c", extra=["--suite", "nosuch"]) == 1
    assert "error" in capsys.readouterr().err


def test_malformed_manifest_is_io_error(tmp_path):
    d = tmp_path / "data"
    d.mkdir()
    (d / "manifest.json").write_text("{not json")
    assert run("train", tmp_path / "t", "data=" + str(d)) == 2


def test_check_suite_and_fault(tmp_path, capsys):
    assert run("check", tmp_path / "ok", extra=["--suite", "ssm"]) == 0
    table = (tmp_path / "ok" / "check.txt").read_text()
    assert "ssm" in table and "attention" not in table
    capsys.readouterr()
    assert run("check", tmp_path / "bad", extra=["--suite", "ssm", "--fault", "flip_scan_sign"]) == 1
    assert "FAILED" in capsys.readouterr().err


def test_outputs_stay_inside_out(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run("gen", tmp_path / "only", *TINY_DATA) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["only"]


def test_train_then_sr(tmp_path):
    assert run("gen", tmp_path / "data", *TINY_DATA) == 0
    assert run("train", tmp_path / "run", *TINY_MODEL, "data=" + str(tmp_path / "data"), "steps=3") == 0
    rows = list(csv.DictReader(open(tmp_path / "run" / "loss_curve.csv")))
    assert len(rows) == 3
    ck = tmp_path / "run" / "checkpoint"
    assert run("sr", tmp_path / "sr", "checkpoint=" + str(ck), "data=" + str(tmp_path / "data")) == 0
    assert (tmp_path / "sr" / "clip000_sr.gstn").exists() and (tmp_path / "sr" / "clip001_sr02.ppm").exists()
    assert (tmp_path / "sr" / "metrics.csv").exists()


def test_sr_with_untrained_checkpoint_is_bicubic(tmp_path):
    assert run("gen", tmp_path / "data", *TINY_DATA) == 0
    assert run("train", tmp_path / "run", *TINY_MODEL, "data=" + str(tmp_path / "data"), "steps=0") == 0
    lr = read_gstn(tmp_path / "data" / "clip000_lr.gstn")
    write_gstn(tmp_path / "in.gstn", lr)
    assert run("sr", tmp_path / "sr", "checkpoint=" + str(tmp_path / "run" / "checkpoint"),
               "input=" + str(tmp_path / "in.gstn")) == 0
    assert np.array_equal(read_gstn(tmp_path / "sr" / "in_sr.gstn"), bicubic_upsample(lr, 4))
    assert not (tmp_path / "sr" / "metrics.csv").exists()


def test_sr_missing_checkpoint(tmp_path):
    assert run("sr", tmp_path / "sr", "checkpoint=" + str(tmp_path / "none")) == 2


def test_ablate_static_motion_ties_aligned_and_unaligned(tmp_path):
    sets = [*TINY_MODEL, "lr_height=8", "lr_width=8", "ablate_frames=3", "ablate_steps=2", "ablate_warmup=0",
            "ablate_train_clips=1", "ablate_test_clips=1", "ablate_motion=static", "ablate_flow_error=0",
            "ablate_variants=align+center,no-align temporal-first,align+forward"]
    assert run("ablate", tmp_path / "abl", *sets) == 0
    rows = {r["variant"]: r for r in csv.DictReader(open(tmp_path / "abl" / "ablation.csv"))}
    assert rows["align+center"]["psnr"] == rows["no-align temporal-first"]["psnr"]
    assert "align+forward" in rows


def test_ablate_unknown_variant(tmp_path):
    assert run("ablate", tmp_path / "abl", "ablate_variants=align+magic") == 1


def test_bench_small(tmp_path):
    assert run("bench", tmp_path / "b", "bench_lengths=256,512,1024", "bench_repeats=1", "bench_channels=2",
               "bench_state=2", "bench_attn_dim=4") == 0
    rows = list(csv.DictReader(open(tmp_path / "b" / "bench.csv")))
    assert {r["kernel"] for r in rows} == {"scan_sequential", "scan_sequential_numpy", "scan_parallel", "mhsa"}
    assert (tmp_path / "b" / "exponents.csv").exists()


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "gsmamba.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("gen", "check", "train", "sr", "ablate", "bench"):
        assert cmd in out.stdout


def test_gen_defaults(tmp_path):
    assert run("gen", tmp_path / "d") == 0
    entries = json.loads((tmp_path / "d" / "manifest.json").read_text())["clips"]
    assert len(entries) == 4
    assert read_gstn(tmp_path / "d" / entries[0]["lr"]).shape == (6, 3, 16, 16)
    assert read_gstn(tmp_path / "d" / entries[0]["hr"]).shape == (6, 3, 64, 64)
