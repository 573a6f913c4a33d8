"""Tape-based reverse-mode differentiation.

Usage::

    with Tape() as tape:
        w = tape.param("w", w0)
        loss = ad.sum(ad.mul(w, w))
    grads = backward(tape, loss)      # {"w": 2 * w0}

Every op accepts :class:`Var` or array-likes and returns a :class:`Var`.
Outside an active tape (or when no input is tracked) ops only compute values,
so the same model code serves inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ContractError, ShapeError

_TAPES: list["Tape"] = []


class Var:
    __slots__ = ("value", "parents", "grad_fn", "tape", "index", "op")

    def __init__(self, value, parents=(), grad_fn=None, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.grad_fn = grad_fn
        self.tape = None
        self.index = None
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


class Tape:
    """Records tracked nodes in creation (= topological) order."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.params: dict[str, int] = {}

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def _record(self, v: Var) -> Var:
        v.tape = self
        v.index = len(self.nodes)
        self.nodes.append(v)
        return v

    def param(self, name: str, value) -> Var:
        """Register a named leaf whose gradient :func:`backward` reports."""
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        v = self._record(Var(np.array(value, dtype=np.float64, copy=True), op="param"))
        self.params[name] = v.index
        return v

    def params_from(self, values: Mapping[str, np.ndarray]) -> dict[str, Var]:
        return {k: self.param(k, v) for k, v in values.items()}


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x, op="const")


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _node(val, parents: Sequence[Var], grad_fn: Callable, op: str) -> Var:
    tape = active_tape()
    if tape is not None and any(p.tape is tape for p in parents):
        return tape._record(Var(val, tuple(parents), grad_fn, op))
    # untracked: drop the closure so intermediate arrays can be freed
    return Var(val, op=op)


def backward(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    """Gradients of the scalar ``loss`` with respect to every registered parameter."""
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if loss.tape is not tape:
        raise ContractError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
    param_ids = {i: name for name, i in tape.params.items()}
    out = {name: np.zeros_like(tape.nodes[i].value) for name, i in tape.params.items()}
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = grads.pop(node.index, None)
        if g is None:
            continue
        if node.index in param_ids:
            out[param_ids[node.index]] = g
        if node.grad_fn is None:
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if pg is None or parent.tape is not tape:
                continue
            if pg.shape != parent.value.shape:
                raise ContractError(
                    f"{node.op}: gradient shape {pg.shape} != input shape {parent.value.shape}"
                )
            if parent.index in grads:
                grads[parent.index] = grads[parent.index] + pg
            else:
                grads[parent.index] = pg
    return out


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    sa, sb = a.shape, b.shape
    return _node(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    return _node(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
        "mul",
    )


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    return _node(
        av / bv,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * av / (bv * bv), bv.shape)),
        "div",
    )


def _unary(x, fwd, dfdx, op) -> Var:
    x = as_var(x)
    xv = x.value
    y = fwd(xv)
    return _node(y, (x,), lambda g: (g * dfdx(xv, y),), op)


def exp(x) -> Var:
    return _unary(x, np.exp, lambda x, y: y, "exp")


def log(x) -> Var:
    return _unary(x, np.log, lambda x, y: 1.0 / x, "log")


def sqrt(x) -> Var:
    return _unary(x, np.sqrt, lambda x, y: 0.5 / y, "sqrt")


def sigmoid(x) -> Var:
    return _unary(x, T.sigmoid, lambda x, y: y * (1.0 - y), "sigmoid")


def softplus(x) -> Var:
    return _unary(x, T.softplus, lambda x, y: T.sigmoid(x), "softplus")


def _gelu_grad(x, y):
    c = T._GELU_C
    inner = c * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * c * (1.0 + 3 * 0.044715 * x * x)


def gelu(x) -> Var:
    return _unary(x, T.gelu, _gelu_grad, "gelu")


# --------------------------------------------------------------------------
# reductions and shape ops
# --------------------------------------------------------------------------


def sum(x, axis=None, keepdims=False) -> Var:  # noqa: A001 - mirrors numpy
    x = as_var(x)
    shape = x.shape

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.sum(x.value, axis=axis, keepdims=keepdims), (x,), grad, "sum")


def mean(x, axis=None, keepdims=False) -> Var:
    x = as_var(x)
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x, shape) -> Var:
    x = as_var(x)
    old = x.shape
    return _node(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes) -> Var:
    x = as_var(x)
    inv = np.argsort(axes)
    return _node(
        np.ascontiguousarray(x.value.transpose(axes)),
        (x,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
        "transpose",
    )


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in parts)


def getitem(x, idx) -> Var:
    x = as_var(x)
    shape = x.shape
    # basic indexing never repeats an element, so plain assignment is exact
    basic = _is_basic_index(idx)

    def grad(g):
        out = np.zeros(shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _node(np.array(x.value[idx]), (x,), grad, "getitem")


def take(x, indices, axis=0) -> Var:
    """Gather along ``axis``; indices may repeat."""
    x = as_var(x)
    indices = np.asarray(indices, dtype=np.int64)
    shape = x.shape
    unique = np.unique(indices).size == indices.size

    def grad(g):
        out = np.zeros(shape)
        moved = np.moveaxis(out, axis, 0)
        if unique:
            moved[indices] = np.moveaxis(g, axis, 0)
        else:
            np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (out,)

    return _node(np.take(x.value, indices, axis=axis), (x,), grad, "take")


def stack(xs, axis=0) -> Var:
    xs = [as_var(x) for x in xs]
    val = np.stack([x.value for x in xs], axis=axis)

    def grad(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return _node(val, xs, grad, "stack")


def concat(xs, axis=0) -> Var:
    xs = [as_var(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    val = np.concatenate([x.value for x in xs], axis=axis)

    def grad(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return _node(val, xs, grad, "concat")


def pad_edge(x, pad_width) -> Var:
    """Replicate padding; ``pad_width`` as for ``numpy.pad``."""
    x = as_var(x)
    shape = x.shape
    pad_width = [tuple(p) for p in pad_width]

    def grad(g):
        # fold each padded band back onto its edge slice, axis by axis
        for ax, (lo, hi) in enumerate(pad_width):
            if lo == 0 and hi == 0:
                continue
            n = shape[ax]
            core = np.take(g, np.arange(lo, lo + n), axis=ax).copy()
            if lo:
                band = np.take(g, np.arange(0, lo), axis=ax).sum(axis=ax, keepdims=True)
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(0, 1)
                core[tuple(sl)] += band
            if hi:
                band = np.take(g, np.arange(lo + n, lo + n + hi), axis=ax).sum(axis=ax, keepdims=True)
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(n - 1, n)
                core[tuple(sl)] += band
            g = core
        return (g,)

    return _node(np.pad(x.value, pad_width, mode="edge"), (x,), grad, "pad_edge")


def roll(x, shift, axis) -> Var:
    x = as_var(x)
    neg = tuple(-s for s in shift) if isinstance(shift, tuple) else -shift
    return _node(np.roll(x.value, shift, axis), (x,), lambda g: (np.roll(g, neg, axis),), "roll")


# --------------------------------------------------------------------------
# linear algebra and neural primitives
# --------------------------------------------------------------------------


def matmul(a, b) -> Var:
    """Batched ``a @ b`` with numpy broadcasting over leading axes."""
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")

    def grad(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _node(av @ bv, (a, b), grad, "matmul")


def linear(x, weight, bias=None) -> Var:
    """``x @ weight.T + bias`` over the last axis."""
    x, weight = as_var(x), as_var(weight)
    parents = [x, weight]
    if bias is not None:
        bias = as_var(bias)
        parents.append(bias)
    xv, wv = x.value, weight.value
    y = T.linear(xv, wv, None if bias is None else bias.value)

    def grad(g):
        gx = g @ wv
        gw = g.reshape(-1, g.shape[-1]).T @ xv.reshape(-1, xv.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return _node(y, parents, grad, "linear")


def softmax(x, axis=-1) -> Var:
    x = as_var(x)
    y = T.softmax(x.value, axis)

    def grad(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _node(y, (x,), grad, "softmax")


def layer_norm(x, gamma, beta, eps=1e-5) -> Var:
    x, gamma, beta = as_var(x), as_var(gamma), as_var(beta)
    xv = x.value
    mu = np.mean(xv, axis=-1, keepdims=True)
    xc = xv - mu
    inv = 1.0 / np.sqrt(np.mean(xc * xc, axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gv = gamma.value
    y = xhat * gv + beta.value
    D = xv.shape[-1]

    def grad(g):
        flat = g.reshape(-1, D)
        g_gamma = np.sum(flat * xhat.reshape(-1, D), axis=0)
        g_beta = np.sum(flat, axis=0)
        gh = g * gv
        gx = inv * (gh - np.mean(gh, axis=-1, keepdims=True) - xhat * np.mean(gh * xhat, axis=-1, keepdims=True))
        return gx, g_gamma, g_beta

    return _node(y, (x, gamma, beta), grad, "layer_norm")


def conv2d(x, weight, bias=None) -> Var:
    """'same' zero-padded 2-D convolution; x (B, Cin, H, W), weight (Cout, Cin, k, k)."""
    x, weight = as_var(x), as_var(weight)
    parents = [x, weight]
    if bias is not None:
        bias = as_var(bias)
        parents.append(bias)
    k = weight.shape[-1]
    cols = T.im2col(x.value, k)
    wmat = weight.value.reshape(weight.shape[0], -1)
    y = cols @ wmat.T
    if bias is not None:
        y = y + bias.value
    xshape, wshape = x.shape, weight.shape

    def grad(g):
        gt = g.transpose(0, 2, 3, 1)  # B, H, W, Cout
        gw = gt.reshape(-1, gt.shape[-1]).T @ cols.reshape(-1, cols.shape[-1])
        gx = T.col2im(gt @ wmat, xshape, k)
        if bias is None:
            return gx, gw.reshape(wshape)
        return gx, gw.reshape(wshape), gt.reshape(-1, gt.shape[-1]).sum(axis=0)

    return _node(np.ascontiguousarray(y.transpose(0, 3, 1, 2)), parents, grad, "conv2d")


def pixel_shuffle(x, s: int) -> Var:
    x = as_var(x)
    return _node(T.pixel_shuffle(x.value, s), (x,), lambda g: (T.pixel_unshuffle(g, s),), "pixel_shuffle")


def warp(feat, flow, zero_pad=False) -> Var:
    """Bilinear backward warp of (C, H, W) features by a (2, H, W) flow."""
    feat, flow = as_var(feat), as_var(flow)
    if feat.ndim != 3 or flow.shape != (2,) + feat.shape[1:]:
        raise ShapeError(f"warp: feature {feat.shape} and flow {flow.shape} extents do not match")
    fv, ov = feat.value, flow.value

    def grad(g):
        gf, go = kernels.warp_bwd(g, fv, ov, zero_pad)
        return gf, go

    return _node(kernels.warp_fwd(fv, ov, zero_pad), (feat, flow), grad, "warp")


def selective_scan(x, delta, A, B, C, d_skip) -> Var:
    """Selective SSM scan over one (L, D) sequence; see :mod:`gsmamba.kernels.scan`."""
    args = [as_var(v) for v in (x, delta, A, B, C, d_skip)]
    vals = [a.value for a in args]
    tape = active_tape()
    track = tape is not None and any(a.tape is tape for a in args)
    y, states = kernels.scan_fwd(*vals, keep_states=track)

    def grad(g):
        return kernels.scan_bwd(g, *vals, states)

    return _node(y, args, grad, "selective_scan")


# --------------------------------------------------------------------------
# finite-difference checking
# --------------------------------------------------------------------------


@dataclass
class GradReport:
    name: str
    max_rel_err: float
    worst: tuple[str, tuple[int, ...]] | None
    tol: float
    coords_checked: int
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def row(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"{self.name:<28} {self.max_rel_err:>12.3e} {self.tol:>9.1e}  {status}"


def format_reports(reports: Sequence[GradReport]) -> str:
    lines = [f"{'op':<28} {'max rel err':>12} {'tol':>9}  result", "-" * 60]
    lines += [r.row() for r in reports]
    return "\n".join(lines)


def grad_check(
    fn: Callable[[Mapping[str, Var]], Var],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int = 256,
    seed: int = 0,
    name: str = "f",
) -> GradReport:
    """Compare tape gradients of scalar ``fn`` with central differences.

    ``fn`` receives a mapping of parameter name -> Var and returns a scalar
    Var. Relative error per coordinate is
    ``|g_a - g_n| / max(1, |g_a|, |g_n|)``. Parameters with more than
    ``max_coords`` entries are probed on a random subset.
    """
    params = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}

    def evaluate(vals) -> float:
        out = fn({k: Var(v) for k, v in vals.items()}).value
        f = float(np.asarray(out).reshape(()))
        if not np.isfinite(f):
            raise ContractError(f"{name}: non-finite function value at probe point")
        return f

    evaluate(params)
    with Tape() as tape:
        pv = tape.params_from(params)
        loss = fn(pv)
    analytic = backward(tape, loss)

    rng = np.random.default_rng(seed)
    worst, worst_err, count = None, 0.0, 0
    per_param = {}
    for pname, arr in params.items():
        flat_n = arr.size
        coords = np.arange(flat_n) if flat_n <= max_coords else rng.choice(flat_n, max_coords, replace=False)
        p_err = 0.0
        for c in coords:
            idx = np.unravel_index(int(c), arr.shape)
            orig = arr[idx]
            arr[idx] = orig + h
            fp = evaluate(params)
            arr[idx] = orig - h
            fm = evaluate(params)
            arr[idx] = orig
            gn = (fp - fm) / (2.0 * h)
            ga = float(analytic[pname][idx])
            err = abs(ga - gn) / max(1.0, abs(ga), abs(gn))
            count += 1
            p_err = max(p_err, err)
            if err >= worst_err:
                worst_err, worst = err, (pname, tuple(int(i) for i in idx))
        per_param[pname] = p_err
    return GradReport(name, worst_err, worst, tol, count, per_param)
