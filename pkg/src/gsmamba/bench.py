"""Sequence-length scaling of the scans versus full attention.

Each kernel is timed at every length (best of ``repeats``), and a line is
fitted to log(time) against log(L); its slope is the empirical exponent.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .attention import init_attention, mhsa_blocked
from .ssm import selective_scan_parallel

KERNELS = ("scan_sequential", "scan_sequential_numpy", "scan_parallel", "mhsa")


@dataclass
class BenchSettings:
    lengths: tuple[int, ...] = (1024, 2048, 4096, 8192, 16384, 32768, 65536)
    repeats: int = 15
    repeat_budget: float = 10.0  # seconds per measurement before repeats stop
    channels: int = 16
    state: int = 16
    attn_dim: int = 16
    heads: int = 1
    attn_max: int = 65536
    parallel_max: int = 65536
    numpy_max: int = 16384
    kernels: tuple[str, ...] = KERNELS
    seed: int = 0


@dataclass
class BenchResult:
    rows: list[tuple[str, int, float]] = field(default_factory=list)

    def times(self, kernel: str) -> tuple[np.ndarray, np.ndarray]:
        pts = [(L, t) for k, L, t in self.rows if k == kernel]
        return np.array([p[0] for p in pts], dtype=float), np.array([p[1] for p in pts])

    def exponent(self, kernel: str, min_length: int = 0) -> float:
        L, t = self.times(kernel)
        keep = L >= min_length
        if keep.sum() < 2:
            return float("nan")
        slope, _ = np.polyfit(np.log(L[keep]), np.log(t[keep]), 1)
        return float(slope)

    def ratio(self, kernel: str, L0: int, L1: int) -> float:
        d = {L: t for k, L, t in self.rows if k == kernel}
        return d[L1] / d[L0]

    def kernels(self) -> list[str]:
        return list(dict.fromkeys(k for k, _, _ in self.rows))

    def to_csv(self) -> str:
        lines = ["kernel,length,seconds"] + [f"{k},{L},{t:.6e}" for k, L, t in self.rows]
        return "\n".join(lines) + "\n"

    def exponents_csv(self) -> str:
        lines = ["kernel,exponent"] + [f"{k},{self.exponent(k):.4f}" for k in self.kernels()]
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        ks = self.kernels()
        lengths = sorted({L for _, L, _ in self.rows})
        head = f"{'L':>7} " + " ".join(f"{k:>22}" for k in ks)
        lines = [head, "-" * len(head)]
        for L in lengths:
            d = {k: t for k, LL, t in self.rows if LL == L}
            lines.append(f"{L:>7} " + " ".join(f"{d[k]:22.4e}" if k in d else f"{'-':>22}" for k in ks))
        lines.append(f"{'slope':>7} " + " ".join(f"{self.exponent(k):22.3f}" for k in ks))
        return "\n".join(lines)


def scan_inputs(rng: np.random.Generator, L: int, D: int, N: int):
    x = rng.standard_normal((L, D))
    delta = rng.uniform(1e-3, 1e-1, (L, D))
    A = -np.tile(np.arange(1, N + 1, dtype=float), (D, 1))
    B = rng.standard_normal((L, N))
    C = rng.standard_normal((L, N))
    return x, delta, A, B, C, np.ones(D)


def run_bench(settings: BenchSettings, log=None) -> BenchResult:
    """Time every (kernel, length) pair; the reported time is the best run.

    Repeats go round-robin over all pairs, so a slow phase of the machine
    hits every length alike instead of bending one point of the fit. A pair
    stops repeating once it has used ``repeat_budget`` seconds.
    """
    rng = np.random.default_rng(settings.seed)
    nb_fwd = kernels.IMPLS["numba"]["scan_fwd"] if kernels.HAS_NUMBA else None
    np_fwd = kernels.IMPLS["numpy"]["scan_fwd"]
    attn = init_attention(rng, "", settings.attn_dim, settings.heads)
    if nb_fwd is not None:
        nb_fwd(*scan_inputs(rng, 4, settings.channels, settings.state))  # compile outside the timings

    jobs = []
    for L in settings.lengths:
        args = scan_inputs(rng, L, settings.channels, settings.state)
        if "scan_sequential" in settings.kernels:
            fwd = nb_fwd or np_fwd
            jobs.append(("scan_sequential", L, lambda fwd=fwd, args=args: fwd(*args)))
        if "scan_sequential_numpy" in settings.kernels and L <= settings.numpy_max:
            jobs.append(("scan_sequential_numpy", L, lambda args=args: np_fwd(*args)))
        if "scan_parallel" in settings.kernels and L <= settings.parallel_max:
            jobs.append(("scan_parallel", L, lambda args=args: selective_scan_parallel(*args)))
        if "mhsa" in settings.kernels and L <= settings.attn_max:
            tokens = rng.standard_normal((L, settings.attn_dim))
            jobs.append(("mhsa", L, lambda tokens=tokens: mhsa_blocked(tokens, attn, "", settings.heads)))

    best = [float("inf")] * len(jobs)
    spent = [0.0] * len(jobs)
    for _ in range(max(1, settings.repeats)):
        for j, (_, _, fn) in enumerate(jobs):
            if spent[j] >= settings.repeat_budget:
                continue
            t0 = time.perf_counter()
            fn()
            dt = time.perf_counter() - t0
            best[j] = min(best[j], dt)
            spent[j] += dt

    res = BenchResult()
    for (kernel, L, _), t in zip(jobs, best):
        res.rows.append((kernel, L, t))
        if log is not None:
            log(kernel, L, t)
    return res
