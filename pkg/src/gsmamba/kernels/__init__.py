"""Hot inner loops with a numba path and a pure-numpy fallback.

The backend is picked once at import time from ``GSMAMBA_BACKEND``
(``numba`` or ``numpy``). ``GSMAMBA_DISABLE_NUMBA=1`` is accepted as a
shorthand for the numpy path. If numba fails to import, numpy is used.

Both implementations stay importable through :data:`IMPLS` so the benchmark
and the equivalence tests can call either one directly.
"""

from __future__ import annotations

import os

from . import scan, warp

try:  # pragma: no cover - depends on the environment
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False


def _resolve_backend() -> str:
    requested = os.environ.get("GSMAMBA_BACKEND", "").strip().lower()
    if os.environ.get("GSMAMBA_DISABLE_NUMBA", "") not in ("", "0"):
        requested = "numpy"
    if requested not in ("", "numba", "numpy"):
        raise ValueError(f"GSMAMBA_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numpy" or not HAS_NUMBA:
        return "numpy"
    return "numba"


BACKEND = _resolve_backend()

IMPLS = {
    "numpy": {
        "scan_fwd": scan.scan_fwd_numpy,
        "scan_bwd": scan.scan_bwd_numpy,
        "warp_fwd": warp.warp_fwd_numpy,
        "warp_bwd": warp.warp_bwd_numpy,
    },
}
if HAS_NUMBA:
    IMPLS["numba"] = {
        "scan_fwd": scan.scan_fwd_numba,
        "scan_bwd": scan.scan_bwd_numba,
        "warp_fwd": warp.warp_fwd_numba,
        "warp_bwd": warp.warp_bwd_numba,
    }

_active = IMPLS[BACKEND]


def scan_fwd(x, delta, A, B, C, d_skip, keep_states=False):
    return _active["scan_fwd"](x, delta, A, B, C, d_skip, keep_states)


def scan_bwd(dy, x, delta, A, B, C, d_skip, states):
    return _active["scan_bwd"](dy, x, delta, A, B, C, d_skip, states)


def warp_fwd(feat, flow, zero_pad=False):
    return _active["warp_fwd"](feat, flow, zero_pad)


def warp_bwd(grad_out, feat, flow, zero_pad=False):
    return _active["warp_bwd"](grad_out, feat, flow, zero_pad)


zoh_coefficients = scan.zoh_coefficients

__all__ = [
    "BACKEND",
    "HAS_NUMBA",
    "IMPLS",
    "scan_fwd",
    "scan_bwd",
    "warp_fwd",
    "warp_bwd",
    "zoh_coefficients",
]
