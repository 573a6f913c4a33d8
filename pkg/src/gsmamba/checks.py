"""Fast invariant suites behind ``gsmamba check``.

Each check returns ``(passed, detail)``; a suite passes when all of its
checks do. Suites use small fixed-seed instances so a full run takes
seconds, not minutes; the pytest suite covers the same ground more deeply.
"""

from __future__ import annotations

import contextlib
import time
import traceback
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import ssm
from .align import Translate, synth_flow, validity_mask, warp_backward
from .attention import WindowSpec, init_swsa_block, mhsa, init_attention, swsa_block, window_partition, window_reverse
from .gsm import AnchorStrategy, FeatureWindow, flatten_temporal, gather, gsm_block, init_gsm_block, scan_mixer, \
    unflatten_temporal, window_indices
from .io import ImageU8, decode_gstn, decode_ppm, encode_gstn, encode_ppm
from .metrics import psnr, ssim
from .model import GSMambaVSR, ModelConfig, bicubic_upsample
from .tensor import flat_index, layer_norm, pixel_shuffle, pixel_unshuffle, row_major_strides, softmax

SUITES = ("tensor-core", "autodiff", "ssm", "align", "gsm", "attention", "pipeline")
FAULTS = ("flip_scan_sign",)

_REGISTRY: dict[str, list[tuple[str, Callable[[], tuple[bool, str]]]]] = {s: [] for s in SUITES}


def check(suite: str, name: str):
    def deco(fn):
        _REGISTRY[suite].append((name, fn))
        return fn

    return deco


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str
    seconds: float


def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


# --------------------------------------------------------------------------
# tensor-core
# --------------------------------------------------------------------------


@check("tensor-core", "row-major index algebra")
def _index_algebra():
    rng = np.random.default_rng(0)
    for _ in range(50):
        shape = tuple(int(s) for s in rng.integers(1, 6, size=rng.integers(1, 5)))
        arr = np.arange(int(np.prod(shape))).reshape(shape)
        idx = tuple(int(rng.integers(0, s)) for s in shape)
        if flat_index(idx, shape) != arr[idx]:
            return False, f"flat index mismatch at {idx} in {shape}"
        if tuple(s // 8 for s in arr.strides) != row_major_strides(shape):
            return False, f"stride mismatch for {shape}"
    return True, "50 random shapes"


@check("tensor-core", "pixel shuffle round trip")
def _shuffle():
    t = np.random.default_rng(1).standard_normal((8, 4, 4))
    ok = np.array_equal(pixel_unshuffle(pixel_shuffle(t, 2), 2), t)
    return ok, "8x4x4, s=2"


@check("tensor-core", "PPM / GSTN round trips")
def _file_round_trips():
    rng = np.random.default_rng(2)
    for _ in range(100):
        img = ImageU8(rng.integers(0, 256, (int(rng.integers(1, 9)), int(rng.integers(1, 9)), 3), dtype=np.uint8))
        if not np.array_equal(decode_ppm(encode_ppm(img)).data, img.data):
            return False, "PPM mismatch"
        t = rng.standard_normal(tuple(int(s) for s in rng.integers(1, 4, size=rng.integers(0, 4))))
        back, _ = decode_gstn(encode_gstn(t))
        if back.shape != t.shape or back.tobytes() != t.tobytes():
            return False, "GSTN mismatch"
    return True, "100 instances each"


@check("tensor-core", "softmax / layer norm / metrics closed forms")
def _closed_forms():
    x = np.random.default_rng(3).standard_normal((5, 7))
    s = softmax(x, axis=-1)
    if np.max(np.abs(s.sum(-1) - 1)) > 1e-12:
        return False, "softmax rows do not sum to 1"
    y = layer_norm(x, np.ones(7), np.zeros(7))
    if np.max(np.abs(y.mean(-1))) > 1e-10 or np.max(np.abs(y.var(-1) - 1)) > 1e-4:
        return False, "layer norm does not standardize"
    a = np.zeros((8, 8))
    if abs(psnr(a, a + 0.1) - 20.0) > 1e-9 or psnr(a, a) != 100.0:
        return False, "psnr closed form"
    c1 = 0.01**2
    if abs(ssim(np.zeros((8, 8)), np.ones((8, 8))) - c1 / (1 + c1)) > 1e-8:
        return False, "ssim closed form"
    return True, "ok"


# --------------------------------------------------------------------------
# autodiff
# --------------------------------------------------------------------------


@check("autodiff", "polynomial and fan-out gradients")
def _poly():
    x = np.array([1.0, 2.0, 3.0])
    with ad.Tape() as tape:
        xv = tape.param("x", x)
        loss = ad.sum(ad.mul(xv, xv))
    g = ad.backward(tape, loss)["x"]
    if not np.allclose(g, 2 * x, rtol=0, atol=1e-15):
        return False, f"d sum(x^2) = {g}"
    with ad.Tape() as tape:
        xv = tape.param("x", x)
        loss = ad.add(ad.sum(ad.exp(xv)), ad.sum(ad.mul(xv, 3.0)))
    g = ad.backward(tape, loss)["x"]
    if np.max(np.abs(g - (np.exp(x) + 3.0))) > 1e-12:
        return False, "fan-out gradient is not the sum of branches"
    return True, "ok"


@check("autodiff", "2-layer MLP vs central differences")
def _mlp_fd():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((5, 4))
    params = {"W1": rng.standard_normal((6, 4)), "b1": rng.standard_normal(6),
              "W2": rng.standard_normal((1, 6)), "b2": rng.standard_normal(1)}

    def f(p):
        return ad.sum(ad.linear(ad.gelu(ad.linear(x, p["W1"], p["b1"])), p["W2"], p["b2"]))

    r = ad.grad_check(f, params, tol=1e-6, name="mlp")
    return r.passed, f"max rel err {r.max_rel_err:.2e}"


# --------------------------------------------------------------------------
# ssm
# --------------------------------------------------------------------------


def _scan_instance(rng, L, D, N):
    return (rng.standard_normal((L, D)), rng.uniform(1e-3, 0.5, (L, D)), -rng.uniform(0.1, 2.0, (D, N)),
            rng.standard_normal((L, N)), rng.standard_normal((L, N)), rng.standard_normal(D))


@check("ssm", "recurrence / convolution duality")
def _duality():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        N, L = int(rng.integers(1, 17)), int(rng.integers(1, 257))
        a_bar, b_bar = ssm.discretize_zoh(-rng.uniform(0.05, 2, N), rng.standard_normal(N), rng.uniform(0.01, 1, N))
        c = rng.standard_normal(N)
        x = rng.standard_normal(L)
        worst = max(worst, _rel(ssm.causal_conv(x, ssm.lti_kernel(a_bar, b_bar, c, L)), ssm.lti_scan(x, a_bar, b_bar, c)))
    return worst < 1e-9, f"max rel err {worst:.2e}"


@check("ssm", "selective scan reduces to LTI for constant parameters")
def _lti_reduction():
    rng = np.random.default_rng(6)
    L, N = 64, 6
    x = rng.standard_normal((L, 1))
    a, b, c, dt = -rng.uniform(0.1, 2, (1, N)), rng.standard_normal(N), rng.standard_normal(N), 0.3
    y = ssm.selective_scan(x, np.full((L, 1), dt), a, np.tile(b, (L, 1)), np.tile(c, (L, 1)), np.array([0.7]))
    a_bar, b_bar = ssm.discretize_zoh(a[0], b, dt)
    ref = ssm.lti_scan(x[:, 0], a_bar, b_bar, c) + 0.7 * x[:, 0]
    err = _rel(y[:, 0], ref)
    return err < 1e-12, f"max rel err {err:.2e}"


@check("ssm", "parallel scan equals sequential")
def _parallel():
    rng = np.random.default_rng(7)
    worst = 0.0
    for L in (1, 7, 64, 513):
        args = _scan_instance(rng, L, 4, 8)
        worst = max(worst, _rel(ssm.selective_scan_parallel(*args), ssm.selective_scan(*args)))
    return worst < 1e-8, f"max rel err {worst:.2e}"


@check("ssm", "combine operator is associative")
def _assoc():
    rng = np.random.default_rng(8)
    p, q, r = ((rng.standard_normal(16), rng.standard_normal(16)) for _ in range(3))
    left = ssm.combine(ssm.combine(p, q), r)
    right = ssm.combine(p, ssm.combine(q, r))
    err = max(np.max(np.abs(left[0] - right[0])), np.max(np.abs(left[1] - right[1])))
    return err < 1e-12, f"max abs err {err:.2e}"


@check("ssm", "bounded state over a long sequence")
def _stability():
    rng = np.random.default_rng(9)
    L = 1 << 16
    x = rng.uniform(-1, 1, (L, 1))
    y = ssm.selective_scan(x, np.full((L, 1), 0.05), np.array([[-0.5, -1.0]]), np.ones((L, 2)), np.ones((L, 2)))
    a_bar, b_bar = ssm.discretize_zoh(np.array([-0.5, -1.0]), np.ones(2), 0.05)
    bound = float(np.sum(b_bar / (1 - a_bar)))
    ok = bool(np.all(np.isfinite(y)) and np.max(np.abs(y)) <= bound * (1 + 1e-12))
    return ok, f"max |y| {np.max(np.abs(y)):.3f} <= {bound:.3f}"


@check("ssm", "selective scan gradients")
def _scan_grad():
    rng = np.random.default_rng(10)
    L, D, N = 6, 3, 4
    x = rng.standard_normal((L, D))
    params = ssm.init_selective(rng, "", D, N)

    def f(p):
        return ad.sum(ad.mul(ssm.scan_tokens(p["x"], p), np.linspace(-1, 1, L * D).reshape(L, D)))

    r = ad.grad_check(f, {"x": x, "theta": params["theta"], "A_log": params["A_log"],
                          **{k: v for k, v in params.items() if k not in ("theta", "A_log")}}, name="scan")
    return r.passed, f"max rel err {r.max_rel_err:.2e}"


# --------------------------------------------------------------------------
# align
# --------------------------------------------------------------------------


@check("align", "zero flow is the identity")
def _zero_flow():
    f = np.random.default_rng(11).standard_normal((3, 7, 9))
    return np.array_equal(warp_backward(f, np.zeros((2, 7, 9))), f), "bit-exact"


@check("align", "integer translation recovers the reference")
def _translate_recover():
    rng = np.random.default_rng(12)
    ref = rng.standard_normal((2, 12, 12))
    dx, dy = 2, -1
    moved = np.zeros_like(ref)
    # moved(p) = ref(p - d)
    moved[:, max(dy, 0):12 + min(dy, 0), max(dx, 0):12 + min(dx, 0)] = \
        ref[:, max(-dy, 0):12 + min(-dy, 0), max(-dx, 0):12 + min(-dx, 0)]
    flow = synth_flow(Translate(dx, dy), 12, 12)
    out = warp_backward(moved, flow)
    mask = validity_mask(flow)
    err = float(np.max(np.abs(out - ref)[:, mask]))
    return err == 0.0, f"max abs err on mask {err:.1e}"


@check("align", "composition of integer translations")
def _compose():
    f = np.random.default_rng(13).standard_normal((1, 10, 10))
    t1, t2 = np.zeros((2, 10, 10)), np.zeros((2, 10, 10))
    t1[0], t2[1] = 1.0, 2.0
    twice = warp_backward(warp_backward(f, t2, "zero"), t1, "zero")
    once = warp_backward(f, t1 + t2, "zero")
    mask = validity_mask(t1 + t2)
    return bool(np.array_equal(twice[:, mask], once[:, mask])), "exact on joint mask"


@check("align", "warp feature gradient")
def _warp_grad():
    rng = np.random.default_rng(14)
    flow = np.full((2, 5, 5), 0.0)
    flow[0] = rng.uniform(0.2, 0.8, (5, 5))
    flow[1] = rng.uniform(-0.8, -0.2, (5, 5))
    w = rng.standard_normal((2, 5, 5))
    r = ad.grad_check(lambda p: ad.sum(ad.mul(ad.warp(p["f"], flow), w)), {"f": rng.standard_normal((2, 5, 5))},
                      name="warp")
    return r.passed, f"max rel err {r.max_rel_err:.2e}"


# --------------------------------------------------------------------------
# gsm
# --------------------------------------------------------------------------


@check("gsm", "flatten / unflatten inverse and temporal adjacency")
def _flatten():
    rng = np.random.default_rng(15)
    G = rng.standard_normal((3, 4, 5, 2))
    seq = flatten_temporal(G).value
    back = np.stack([r.value.transpose(1, 2, 0) for r in unflatten_temporal(seq, 3, 4, 5)])
    if not np.array_equal(back, G):
        return False, "round trip is not exact"
    h, w = 2, 3
    block = seq[(h * 5 + w) * 3:(h * 5 + w) * 3 + 3]
    return bool(np.array_equal(block, G[:, h, w, :])), "site samples are consecutive"


@check("gsm", "gather exactness on integer motion")
def _gather_exact():
    rng = np.random.default_rng(16)
    H = W = 10
    base = rng.standard_normal((2, H + 8, W + 8))
    shifts = [(-1, 0), (0, 0), (1, 0)]
    frames = [base[:, 4 - dy:4 - dy + H, 4 - dx:4 - dx + W] for dx, dy in shifts]  # f_k(p) = base(p - k*d)
    flows_to = [synth_flow(Translate(dx, dy), H, W).data for dx, dy in shifts]
    win = FeatureWindow(frames, 1, flows_to, [-f for f in flows_to])
    G = gather(win).value
    mask = np.logical_and.reduce([validity_mask(f) for f in flows_to])
    err = max(float(np.max(np.abs(G[k][mask] - frames[1].transpose(1, 2, 0)[mask]))) for k in range(3))
    return err < 1e-9, f"max abs err {err:.1e}"


@check("gsm", "anchor-only updates without scatter")
def _no_scatter():
    from .gsm import window_propagate

    rng = np.random.default_rng(17)
    frames = [rng.standard_normal((2, 4, 4)) for _ in range(5)]

    # every window position proposes a distinct constant residual
    def block(window, scatter_on):
        res = [np.full((2, 4, 4), 10.0 ** k) for k in range(window.K)]
        return [r if (scatter_on or k == window.anchor) else None for k, r in enumerate(res)]

    zero = np.zeros((2, 4, 4))
    out = window_propagate(frames, lambda i, k: zero, 3, AnchorStrategy.FORWARD, [block], False, "forward")
    delta = [float(np.max(np.abs(ad.value(o) - f - 100.0))) for o, f in zip(out, frames)]
    return max(delta) < 1e-12, "each frame received only its own anchor residual"


@check("gsm", "gsm block gradients")
def _gsm_grad():
    rng = np.random.default_rng(18)
    C, H, W = 3, 6, 6
    dirs = ssm.ScanDirectionSet()
    params = init_gsm_block(rng, "", C, 4, dirs, 0.1, 1.0)
    frames = [rng.standard_normal((C, H, W)) for _ in range(3)]
    flow = np.zeros((2, H, W))
    flow[0] = 0.35
    flows_to = [flow, np.zeros((2, H, W)), -flow]
    weights = [rng.standard_normal((C, H, W)) for _ in range(3)]

    def f(p):
        win = FeatureWindow(frames, 1, flows_to, [-g for g in flows_to])
        out = gsm_block(win, scan_mixer(p, "", dirs), (p["ln_g"], p["ln_b"]))
        return ad.sum(ad.stack([ad.sum(ad.mul(o, w)) for o, w in zip(out, weights)]))

    r = ad.grad_check(f, params, tol=1e-4, max_coords=16, name="gsm_block")
    return r.passed, f"max rel err {r.max_rel_err:.2e}"


# --------------------------------------------------------------------------
# attention
# --------------------------------------------------------------------------


@check("attention", "window partition round trip")
def _partition():
    rng = np.random.default_rng(19)
    for shape, spec in (((4, 8, 8, 3), WindowSpec((2, 4, 4), (1, 2, 2), 1)), ((3, 5, 7, 2), WindowSpec((2, 4, 4)))):
        x = rng.standard_normal(shape)
        blocks, part = window_partition(x, spec)
        if not np.array_equal(window_reverse(blocks, part).value, x):
            return False, f"round trip failed for {shape}"
    return True, "exact"


@check("attention", "row-stochastic attention and permutation equivariance")
def _attn_props():
    rng = np.random.default_rng(20)
    p = init_attention(rng, "", 8, 2)
    x = rng.standard_normal((6, 8))
    out, attn = mhsa(x, p, "", 2, return_attn=True)
    if np.max(np.abs(attn.value.sum(-1) - 1)) > 1e-12:
        return False, "attention rows do not sum to 1"
    perm = rng.permutation(6)
    out_p = mhsa(x[perm], p, "", 2).value
    err = float(np.max(np.abs(out_p - out.value[perm])))
    return err < 1e-12, f"equivariance err {err:.1e}"


@check("attention", "swsa block gradients")
def _swsa_grad():
    rng = np.random.default_rng(21)
    spec = WindowSpec((2, 2, 2), (0, 0, 0), 2)
    params = init_swsa_block(rng, "", 4, spec)
    x = rng.standard_normal((2, 4, 4, 4))
    w = rng.standard_normal(x.shape)
    r = ad.grad_check(lambda p: ad.sum(ad.mul(swsa_block(x, p, "", spec.shifted()), w)), params, max_coords=16,
                      name="swsa")
    return r.passed, f"max rel err {r.max_rel_err:.2e}"


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------


@check("pipeline", "zero-initialized head returns bicubic")
def _global_skip():
    from .data import SynthSpec, gen_synthetic

    clip = gen_synthetic(SynthSpec(frames=3, lr_height=8, lr_width=8))
    model = GSMambaVSR(ModelConfig.toy(), seed=0)
    out = model(clip.lr, clip.flows)
    return bool(np.array_equal(out, bicubic_upsample(clip.lr, 4))), "bit-exact"


@check("pipeline", "deterministic forward")
def _determinism():
    from .data import SynthSpec, gen_synthetic

    clip = gen_synthetic(SynthSpec(frames=3, lr_height=8, lr_width=8, seed=3))
    cfg = ModelConfig.toy()
    m1 = GSMambaVSR(cfg, seed=5)
    m1.params["recon.W2"] = np.random.default_rng(0).standard_normal(m1.params["recon.W2"].shape) * 0.01
    m2 = GSMambaVSR(cfg, {k: v.copy() for k, v in m1.params.items()})
    return bool(np.array_equal(m1(clip.lr, clip.flows), m2(clip.lr, clip.flows))), "bit-identical"


# --------------------------------------------------------------------------
# runner
# --------------------------------------------------------------------------


def run_checks(suites=None, fault: str = "") -> list[CheckResult]:
    names = list(suites) if suites else list(SUITES)
    for s in names:
        if s not in _REGISTRY:
            raise KeyError(f"unknown suite {s!r}; choose from {SUITES}")
    if fault and fault not in FAULTS:
        raise KeyError(f"unknown fault {fault!r}; choose from {FAULTS}")
    ctx = ssm.injected_fault(fault) if fault else contextlib.nullcontext()
    results = []
    with ctx:
        for s in names:
            for name, fn in _REGISTRY[s]:
                t0 = time.perf_counter()
                try:
                    ok, detail = fn()
                except Exception as exc:  # a crash is a failure of that check, not of the runner
                    ok, detail = False, f"{type(exc).__name__}: {exc}"
                    detail += "\n" + traceback.format_exc(limit=2)
                results.append(CheckResult(s, name, bool(ok), detail, time.perf_counter() - t0))
    return results


def format_results(results: list[CheckResult]) -> str:
    lines = [f"{'suite':<12} {'check':<52} {'result':<6} detail", "-" * 96]
    for r in results:
        first = r.detail.splitlines()[0] if r.detail else ""
        lines.append(f"{r.suite:<12} {r.name:<52} {'pass' if r.passed else 'FAIL':<6} {first}")
    by_suite: dict[str, list[bool]] = {}
    for r in results:
        by_suite.setdefault(r.suite, []).append(r.passed)
    lines.append("")
    lines += [f"{s:<12} {sum(v)}/{len(v)} passed" for s, v in by_suite.items()]
    return "\n".join(lines)
