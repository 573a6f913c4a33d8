import time

import numpy as np
import pytest

from gsmamba import autodiff as ad
from gsmamba.data import ClipSample, SynthSpec, gen_synthetic
from gsmamba.errors import ConfigError, ContractError, DecodeError
from gsmamba.model import GSMambaVSR, ModelConfig, bicubic_upsample, forward
from gsmamba.train import Adam, charbonnier, cosine_lr, evaluate, fit, load_checkpoint, save_checkpoint, \
    train_step


def tiny_cfg(**kw):
    base = dict(embed_dim=4, heads=2, window=(2, 4, 4), d_state=2, K=3)
    base.update(kw)
    return ModelConfig.toy(**base)


def trained_like(cfg, seed=0):
    """A model whose reconstruction head is no longer zero."""
    m = GSMambaVSR(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    m.params["recon.W2"] = rng.normal(0, 0.05, m.params["recon.W2"].shape)
    return m


# ---------------------------------------------------------------- data

def test_static_clip_has_identical_frames_and_zero_flow():
    clip = gen_synthetic(SynthSpec(motion="translate", dx=0, dy=0, frames=3, lr_height=6, lr_width=6))
    assert np.array_equal(clip.hr[0], clip.hr[2]) and not np.any(clip.flows)


def test_half_pixel_translation_moves_one_pixel_in_two_frames():
    clip = gen_synthetic(SynthSpec(dx=0.5, dy=0.0, frames=3, lr_height=6, lr_width=6, seed=2))
    assert np.max(np.abs(clip.hr[2][:, :, 1:] - clip.hr[0][:, :, :-1])) < 1e-12
    # LR flow O_{0->2} is the HR displacement divided by the scale
    assert np.allclose(clip.flows[0, 2, 0], 0.25) and np.allclose(clip.flows[0, 2, 1], 0.0)


def test_generation_is_deterministic():
    spec = SynthSpec(frames=3, lr_height=6, lr_width=6, seed=11, noise_sigma=0.01, flow_error=0.1)
    a, b = gen_synthetic(spec), gen_synthetic(spec)
    assert a.lr.tobytes() == b.lr.tobytes() and a.flows.tobytes() == b.flows.tobytes()


@pytest.mark.parametrize("field, kw", [
    ("pattern", dict(pattern="zebra")),
    ("frames", dict(frames=0)),
    ("motion_dx", dict(dx=40.0)),
    ("motion", dict(motion="wobble")),
])
def test_invalid_spec_names_the_field(field, kw):
    with pytest.raises(ConfigError, match=field):
        gen_synthetic(SynthSpec(lr_height=4, lr_width=4, **kw))


# ---------------------------------------------------------------- forward

def test_zero_initialized_model_is_bicubic():
    clip = gen_synthetic(SynthSpec(frames=3, lr_height=8, lr_width=8))
    out = GSMambaVSR(ModelConfig.toy(), seed=0)(clip.lr, clip.flows)
    assert np.array_equal(out, bicubic_upsample(clip.lr, 4))


def test_single_frame_clip():
    clip = gen_synthetic(SynthSpec(frames=1, lr_height=8, lr_width=8))
    out = trained_like(ModelConfig.toy())(clip.lr, clip.flows)
    assert out.shape == (1, 3, 32, 32) and np.all(np.isfinite(out))


def test_toy_forward_shape_and_time():
    clip = gen_synthetic(SynthSpec(frames=3, lr_height=16, lr_width=16))
    model = trained_like(ModelConfig.toy())
    t0 = time.perf_counter()
    out = model(clip.lr, clip.flows)
    assert time.perf_counter() - t0 < 5.0
    assert out.shape == (3, 3, 64, 64)


def test_flow_formats_agree():
    clip = gen_synthetic(SynthSpec(frames=3, lr_height=8, lr_width=8, dx=1.0))
    m = trained_like(tiny_cfg())
    a = m(clip.lr, clip.flows)
    b = m(clip.lr, lambda i, k: clip.flows[i, k])
    assert np.array_equal(a, b)


def test_no_align_ignores_flows():
    clip = gen_synthetic(SynthSpec(frames=3, lr_height=8, lr_width=8, dx=1.0))
    m = trained_like(tiny_cfg(align=False))
    assert np.array_equal(m(clip.lr, clip.flows), m(clip.lr, None))


def test_full_model_gradients():
    clip = gen_synthetic(SynthSpec(frames=3, lr_height=8, lr_width=8, dx=1.0, seed=4))
    model = trained_like(tiny_cfg(dt_min=0.1, dt_max=1.0))
    r = ad.grad_check(lambda p: charbonnier(forward(p, clip.lr, clip.flows, model.cfg), clip.hr),
                      model.params, tol=1e-3, max_coords=4, name="full model")
    assert r.passed, r.row()


def test_config_validation():
    with pytest.raises(ConfigError, match="K"):
        ModelConfig.toy(K=4)
    with pytest.raises(ConfigError, match="heads"):
        ModelConfig.toy(embed_dim=30, heads=4)
    with pytest.raises(ConfigError, match="preset"):
        ModelConfig.preset_named("huge")


# ---------------------------------------------------------------- training

def test_charbonnier_floor_is_eps():
    hr = np.random.default_rng(0).random((2, 3, 4, 4))
    assert abs(charbonnier(hr, hr).value - 1e-6) < 1e-18


def test_zero_learning_rate_keeps_params():
    clip = gen_synthetic(SynthSpec(frames=2, lr_height=8, lr_width=8))
    m = GSMambaVSR(tiny_cfg())
    before = {k: v.copy() for k, v in m.params.items()}
    train_step(m, [clip], Adam(lr=0.0, total_steps=1))
    assert all(np.array_equal(before[k], m.params[k]) for k in before)


def test_training_reduces_loss():
    clip = gen_synthetic(SynthSpec(frames=2, lr_height=8, lr_width=8))
    curve = fit(GSMambaVSR(tiny_cfg()), [clip], steps=15, lr=3e-3, warmup=3)
    assert curve[-1] < curve[0]


def test_non_finite_loss_is_diagnosed():
    clip = gen_synthetic(SynthSpec(frames=2, lr_height=8, lr_width=8))
    bad = ClipSample(clip.lr, np.full_like(clip.hr, np.nan), clip.flows)
    with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError, match="non-finite"):
        train_step(GSMambaVSR(tiny_cfg()), [bad], Adam())


def test_cosine_schedule():
    assert cosine_lr(0, 100, 1.0) == 1.0
    assert abs(cosine_lr(50, 100, 1.0) - 0.5) < 1e-12
    assert abs(cosine_lr(100, 100, 1.0, 0.1) - 0.1) < 1e-12
    assert [cosine_lr(s, 100, 1.0, warmup=4) for s in range(4)] == [0.25, 0.5, 0.75, 1.0]
    assert cosine_lr(4, 100, 1.0, warmup=4) == 1.0


def test_adam_first_step_moves_by_lr():
    params = {"w": np.array([1.0, -2.0, 0.0])}
    Adam(lr=0.1).update(params, {"w": np.array([3.0, -0.5, 0.0])})
    assert np.allclose(params["w"], [0.9, -1.9, 0.0], atol=1e-7)


# ---------------------------------------------------------------- evaluation and checkpoints

def test_evaluate_zero_init_has_no_gain():
    clip = gen_synthetic(SynthSpec(frames=2, lr_height=8, lr_width=8))
    rep = evaluate(GSMambaVSR(tiny_cfg()), [("c0", clip)])
    assert rep.rows[0].psnr_delta == 0.0 and rep.rows[0].ssim_delta == 0.0
    assert "c0" in rep.to_csv() and "mean" in rep.to_table()


def test_evaluate_perfect_reconstruction():
    clip = gen_synthetic(SynthSpec(frames=2, lr_height=8, lr_width=8))
    perfect = ClipSample(clip.lr, bicubic_upsample(clip.lr, 4), clip.flows)
    row = evaluate(GSMambaVSR(tiny_cfg()), [("p", perfect)]).rows[0]
    assert row.psnr == 100.0 and abs(row.ssim - 1.0) < 1e-12


def test_checkpoint_round_trip(tmp_path):
    clip = gen_synthetic(SynthSpec(frames=2, lr_height=8, lr_width=8))
    m = trained_like(tiny_cfg())
    save_checkpoint(tmp_path / "ck", m)
    back = load_checkpoint(tmp_path / "ck")
    assert back.cfg == m.cfg
    assert all(back.params[k].tobytes() == m.params[k].tobytes() for k in m.params)
    assert np.array_equal(back(clip.lr, clip.flows), m(clip.lr, clip.flows))


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "none")
    m = GSMambaVSR(tiny_cfg())
    save_checkpoint(tmp_path / "ck", m)
    (tmp_path / "ck" / "model.json").write_text((tmp_path / "ck" / "model.json").read_text()
                                                .replace('"gsm_blocks": 1', '"gsm_blocks": 2'))
    with pytest.raises(ContractError, match="missing"):
        load_checkpoint(tmp_path / "ck")
    save_checkpoint(tmp_path / "ck2", m)
    w = tmp_path / "ck2" / "weights.gstn"
    w.write_bytes(w.read_bytes()[:-8])
    with pytest.raises(DecodeError):
        load_checkpoint(tmp_path / "ck2")


def test_training_trajectory_is_deterministic():
    clips = [gen_synthetic(SynthSpec(frames=2, lr_height=8, lr_width=8, seed=s)) for s in range(3)]
    runs = []
    for _ in range(2):
        m = GSMambaVSR(tiny_cfg(), seed=4)
        curve = fit(m, clips, steps=4, lr=3e-3, seed=1)
        runs.append((curve, m.params))
    assert runs[0][0] == runs[1][0]
    assert all(runs[0][1][k].tobytes() == runs[1][1][k].tobytes() for k in runs[0][1])
