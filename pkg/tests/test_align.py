import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsmamba import autodiff as ad
from gsmamba.align import FlowField, Rotate, Translate, synth_flow, validity_mask, warp_backward
from gsmamba.errors import ShapeError

from oracles import bilinear_loops


def shifted(img, dx, dy):
    """moved(p) = img(p - d) on the overlap, zeros elsewhere."""
    _, H, W = img.shape
    out = np.zeros_like(img)
    out[:, max(dy, 0):H + min(dy, 0), max(dx, 0):W + min(dx, 0)] = \
        img[:, max(-dy, 0):H + min(-dy, 0), max(-dx, 0):W + min(-dx, 0)]
    return out


def test_zero_flow_bit_exact():
    f = np.random.default_rng(0).standard_normal((3, 6, 7))
    assert np.array_equal(warp_backward(f, np.zeros((2, 6, 7))), f)


def test_integer_flow_on_index_ramp():
    W = 6
    ramp = np.tile(np.arange(W, dtype=float), (1, 4, 1))
    flow = np.zeros((2, 4, W))
    flow[0] = 1.0
    out = warp_backward(ramp, flow, "replicate")
    assert np.array_equal(out[0], np.tile(np.minimum(np.arange(W) + 1, W - 1), (4, 1)))


def test_half_pixel_flow_on_linear_ramp():
    W = 8
    ramp = np.tile(np.arange(W, dtype=float), (1, 3, 1))
    flow = np.zeros((2, 3, W))
    flow[0] = 0.5
    out = warp_backward(ramp, flow)
    assert np.max(np.abs(out[0, :, :-1] - (np.arange(W - 1) + 0.5))) < 1e-12


@pytest.mark.parametrize("boundary", ["replicate", "zero"])
def test_warp_vs_loops(boundary):
    rng = np.random.default_rng(1)
    feat = rng.standard_normal((2, 5, 6))
    flow = rng.uniform(-2.5, 2.5, (2, 5, 6))
    ref = np.array(bilinear_loops(feat.tolist(), flow.tolist(), zero_pad=boundary == "zero"))
    assert np.max(np.abs(warp_backward(feat, flow, boundary) - ref)) < 1e-12


def test_warp_shape_mismatch():
    with pytest.raises(ShapeError):
        warp_backward(np.zeros((1, 4, 4)), np.zeros((2, 4, 5)))


def test_validity_mask_examples():
    assert validity_mask(np.zeros((2, 3, 8))).all()
    far = np.zeros((2, 3, 8))
    far[0] = 8
    assert not validity_mask(far).any()
    two = np.zeros((2, 3, 8))
    two[0] = 2
    m = validity_mask(two)
    assert m[:, :6].all() and not m[:, 6:].any()


def test_synth_translate():
    assert not np.any(synth_flow(Translate(0, 0), 5, 5).data)
    f = synth_flow(Translate(3, -1), 8, 8).data
    assert np.all(f[0] == 3) and np.all(f[1] == -1)


def test_synth_rotate_small_angle():
    H = W = 9
    eps = 1e-3
    cx, cy = 4.0, 4.0
    f = synth_flow(Rotate(cx, cy, eps), H, W).data
    ys, xs = np.mgrid[0:H, 0:W].astype(float)
    # first-order displacement; second-order remainder is eps^2 * r / 2 ~ 3e-6 at the corners,
    # so compare where it stays below the stated bound
    first = np.stack([eps * (ys - cy), -eps * (xs - cx)])
    r2 = (xs - cx) ** 2 + (ys - cy) ** 2
    inner = eps**2 * np.sqrt(r2) / 2 < 1e-6
    assert np.max(np.abs(f - first)[:, inner]) < 1e-6
    # and the full field matches the exact second-order expansion everywhere
    second = first - np.stack([eps**2 / 2 * (xs - cx), eps**2 / 2 * (ys - cy)])
    assert np.max(np.abs(f - second)) < 1e-8


def test_synth_rejects_large_motion():
    with pytest.raises(ValueError):
        synth_flow(Translate(5, 0), 8, 8)


def test_flow_field_validation():
    with pytest.raises(ShapeError):
        FlowField(np.zeros((3, 4, 4)))
    with pytest.raises(ValueError):
        FlowField(np.full((2, 2, 2), np.nan))
    assert FlowField.zeros(3, 4).within_sanity_bound()


@settings(max_examples=40, deadline=None)
@given(st.integers(-3, 3), st.integers(-3, 3), st.integers(0, 2**31 - 1))
def test_integer_translation_recovers_reference(dx, dy, seed):
    ref = np.random.default_rng(seed).standard_normal((2, 10, 10))
    flow = synth_flow(Translate(dx, dy), 10, 10)
    out = warp_backward(shifted(ref, dx, dy), flow)
    mask = validity_mask(flow)
    assert np.array_equal(out[:, mask], ref[:, mask])


def test_subpixel_translation_error_is_small_for_smooth_images():
    H = W = 24
    ys, xs = np.mgrid[0:H, 0:W].astype(float)
    img = lambda x, y: np.sin(0.3 * x + 0.2 * y)[None]  # noqa: E731
    dx, dy = 0.4, -0.7
    moved = img(xs - dx, ys - dy)
    out = warp_backward(moved, synth_flow(Translate(dx, dy), H, W))
    inner = (slice(None), slice(2, -2), slice(2, -2))
    # bilinear error <= (h^2/8) * max|f''| per axis with unit spacing
    bound = (0.3**2 + 0.2**2) / 8 * 2
    assert np.max(np.abs(out - img(xs, ys))[inner]) < bound


@settings(max_examples=30, deadline=None)
@given(st.integers(-2, 2), st.integers(-2, 2), st.integers(-2, 2), st.integers(-2, 2))
def test_composition_of_integer_translations(a, b, c, d):
    f = np.random.default_rng(3).standard_normal((1, 9, 9))
    t1 = synth_flow(Translate(a, b), 9, 9).data
    t2 = synth_flow(Translate(c, d), 9, 9).data
    twice = warp_backward(warp_backward(f, t2, "zero"), t1, "zero")
    once = warp_backward(f, t1 + t2, "zero")
    mask = validity_mask(t1 + t2) & validity_mask(t1)
    assert np.array_equal(twice[:, mask], once[:, mask])


def test_warp_gradients_away_from_cell_edges():
    rng = np.random.default_rng(4)
    flow = np.zeros((2, 6, 6))
    # fractional parts in [0.1, 0.9]
    flow[0] = rng.integers(-2, 2, (6, 6)) + rng.uniform(0.1, 0.9, (6, 6))
    flow[1] = rng.integers(-2, 2, (6, 6)) + rng.uniform(0.1, 0.9, (6, 6))
    w = rng.standard_normal((3, 6, 6))
    feat = rng.standard_normal((3, 6, 6))
    for boundary in ("replicate", "zero"):
        r = ad.grad_check(lambda p: ad.sum(ad.mul(warp_backward(p["f"], flow, boundary), w)), {"f": feat})
        assert r.passed, r.row()
    r = ad.grad_check(lambda p: ad.sum(ad.mul(ad.warp(feat, p["flow"]), w)), {"flow": flow}, name="warp flow")
    assert r.passed, r.row()
