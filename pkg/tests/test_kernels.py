"""numba and numpy kernel paths must agree; the env flag must pick the path."""

import os
import subprocess
import sys

import numpy as np
import pytest

from gsmamba import kernels

needs_numba = pytest.mark.skipif(not kernels.HAS_NUMBA, reason="numba not installed")


def scan_args(rng, L=33, D=4, N=5):
    return (rng.standard_normal((L, D)), rng.uniform(1e-9, 0.8, (L, D)), -rng.uniform(0.0, 2.0, (D, N)),
            rng.standard_normal((L, N)), rng.standard_normal((L, N)), rng.standard_normal(D))


@needs_numba
def test_scan_forward_backends_agree():
    args = scan_args(np.random.default_rng(0))
    y_np, s_np = kernels.IMPLS["numpy"]["scan_fwd"](*args, True)
    y_nb, s_nb = kernels.IMPLS["numba"]["scan_fwd"](*args, True)
    assert np.max(np.abs(y_np - y_nb)) < 1e-13
    assert np.max(np.abs(s_np - s_nb)) < 1e-13


@needs_numba
def test_scan_backward_backends_agree():
    rng = np.random.default_rng(1)
    args = scan_args(rng)
    _, states = kernels.IMPLS["numpy"]["scan_fwd"](*args, True)
    dy = rng.standard_normal(args[0].shape)
    g_np = kernels.IMPLS["numpy"]["scan_bwd"](dy, *args, states)
    g_nb = kernels.IMPLS["numba"]["scan_bwd"](dy, *args, states)
    for a, b in zip(g_np, g_nb):
        assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(a)))


@needs_numba
@pytest.mark.parametrize("zero_pad", [False, True])
def test_warp_backends_agree(zero_pad):
    rng = np.random.default_rng(2)
    feat = rng.standard_normal((3, 9, 11))
    flow = rng.uniform(-3, 3, (2, 9, 11))
    out_np = kernels.IMPLS["numpy"]["warp_fwd"](feat, flow, zero_pad)
    out_nb = kernels.IMPLS["numba"]["warp_fwd"](feat, flow, zero_pad)
    assert np.max(np.abs(out_np - out_nb)) < 1e-14
    g = rng.standard_normal(feat.shape)
    for a, b in zip(kernels.IMPLS["numpy"]["warp_bwd"](g, feat, flow, zero_pad),
                    kernels.IMPLS["numba"]["warp_bwd"](g, feat, flow, zero_pad)):
        assert np.max(np.abs(a - b)) < 1e-12


def _backend_in_subprocess(**env):
    full = {k: v for k, v in os.environ.items() if not k.startswith("GSMAMBA_")}
    full.update(env)
    out = subprocess.run([sys.executable, "-c", "import gsmamba.kernels as k; print(k.BACKEND)"],
                         env=full, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_env_flag_selects_numpy():
    assert _backend_in_subprocess(GSMAMBA_BACKEND="numpy") == "numpy"
    assert _backend_in_subprocess(GSMAMBA_DISABLE_NUMBA="1") == "numpy"


@needs_numba
def test_env_flag_selects_numba():
    assert _backend_in_subprocess(GSMAMBA_BACKEND="numba") == "numba"
    assert _backend_in_subprocess() == "numba"


def test_bad_backend_name_fails_loudly():
    env = {**os.environ, "GSMAMBA_BACKEND": "cuda"}
    out = subprocess.run([sys.executable, "-c", "import gsmamba.kernels"], env=env, capture_output=True, text=True)
    assert out.returncode != 0 and "GSMAMBA_BACKEND" in out.stderr


def test_zoh_series_and_closed_form_meet():
    dt = np.array([1.0, 1.0])
    a = np.array([-0.999e-8, -1.001e-8])
    a_bar, phi = kernels.zoh_coefficients(dt, a)
    assert np.allclose(phi, np.expm1(a) / a, rtol=1e-15, atol=0)
    assert np.array_equal(a_bar, np.exp(a))
