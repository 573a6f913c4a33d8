import numpy as np
import pytest

from gsmamba import autodiff as ad
from gsmamba.errors import ContractError


def grads(fn, **params):
    with ad.Tape() as tape:
        pv = tape.params_from(params)
        loss = fn(**pv)
    return ad.backward(tape, loss)


def test_sum_of_squares():
    g = grads(lambda x: ad.sum(ad.mul(x, x)), x=np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(g["x"], [2.0, 4.0, 6.0])


def test_linear_bias_gradient_is_ones():
    x = np.random.default_rng(0).standard_normal((4, 3))
    g = grads(lambda W, b: ad.sum(ad.linear(x, W, b)), W=np.ones((2, 3)), b=np.zeros(2))
    assert np.array_equal(g["b"], [4.0, 4.0])


def test_fan_out_adds_branch_gradients():
    x0 = np.array([0.3, -1.2, 2.0])
    both = grads(lambda x: ad.add(ad.sum(ad.exp(x)), ad.sum(ad.mul(x, x))), x=x0)["x"]
    left = grads(lambda x: ad.sum(ad.exp(x)), x=x0)["x"]
    right = grads(lambda x: ad.sum(ad.mul(x, x)), x=x0)["x"]
    assert np.max(np.abs(both - (left + right))) < 1e-15


def test_non_scalar_loss_rejected():
    with ad.Tape() as tape:
        x = tape.param("x", np.ones(3))
        y = ad.mul(x, 2.0)
    with pytest.raises(ContractError, match="scalar"):
        ad.backward(tape, y)


def test_unregistered_leaves_are_skipped():
    c = np.ones(3)
    g = grads(lambda x: ad.sum(ad.mul(x, c)), x=np.arange(3.0))
    assert list(g) == ["x"]


def test_duplicate_param_rejected():
    with ad.Tape() as tape:
        tape.param("w", 1.0)
        with pytest.raises(ContractError):
            tape.param("w", 2.0)


def test_each_node_visited_once():
    calls = []
    with ad.Tape() as tape:
        x = tape.param("x", np.array(2.0))
        y = ad.mul(x, x)
        orig = y.grad_fn

        def counting(g):
            calls.append(1)
            return orig(g)

        y.grad_fn = counting
        loss = ad.add(ad.add(y, y), y)
    g = ad.backward(tape, loss)["x"]
    assert len(calls) == 1 and g == 12.0


def test_untracked_ops_do_not_grow_the_tape():
    with ad.Tape() as tape:
        ad.mul(np.ones(3), 2.0)
    assert tape.nodes == []


# ---------------------------------------------------------------- grad_check

def test_grad_check_square():
    r = ad.grad_check(lambda p: ad.mul(p["x"], p["x"]), {"x": np.array(3.0)}, tol=1e-9)
    assert r.passed and r.max_rel_err < 1e-9


def test_grad_check_mlp_at_1e6():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((5, 4))
    params = {"W1": rng.standard_normal((6, 4)), "b1": rng.standard_normal(6),
              "W2": rng.standard_normal((1, 6)), "b2": rng.standard_normal(1)}
    r = ad.grad_check(lambda p: ad.sum(ad.linear(ad.gelu(ad.linear(x, p["W1"], p["b1"])), p["W2"], p["b2"])),
                      params, tol=1e-6)
    assert r.passed, r.row()


def test_grad_check_log_mse():
    rng = np.random.default_rng(2)
    b = rng.random((4, 4))

    def f(p):
        d = ad.sub(p["a"], b)
        return ad.mul(ad.log(ad.mean(ad.mul(d, d))), -10.0 / np.log(10.0))

    assert ad.grad_check(f, {"a": rng.random((4, 4))}, tol=1e-6).passed


def test_grad_check_detects_wrong_gradient():
    # a node whose grad_fn lies must be caught
    def f(p):
        y = ad.mul(p["x"], p["x"])
        y.grad_fn = lambda g: (g * 0.0, g * 0.0)
        return ad.sum(y)

    r = ad.grad_check(f, {"x": np.array([1.0, 2.0])})
    assert not r.passed and r.worst[0] == "x"


def test_grad_check_non_finite_probe():
    with np.errstate(invalid="ignore"), pytest.raises(ContractError, match="non-finite"):
        ad.grad_check(lambda p: ad.sum(ad.log(p["x"])), {"x": np.array([-1.0])})


def test_grad_check_subsamples_large_params():
    r = ad.grad_check(lambda p: ad.sum(ad.mul(p["x"], p["x"])), {"x": np.ones(1000)}, max_coords=10)
    assert r.coords_checked == 10


def test_report_table():
    r = ad.grad_check(lambda p: ad.sum(p["x"]), {"x": np.ones(2)}, name="sum")
    table = ad.format_reports([r])
    assert "sum" in table and "pass" in table


@pytest.mark.parametrize("name, fn, shape", [
    ("softmax", lambda x: ad.softmax(x, axis=-1), (3, 5)),
    ("layer_norm", lambda x: ad.layer_norm(x, np.linspace(0.5, 1.5, 5), np.linspace(-1, 1, 5)), (3, 5)),
    ("gelu", ad.gelu, (7,)),
    ("softplus", ad.softplus, (7,)),
    ("sigmoid", ad.sigmoid, (7,)),
    ("sqrt", lambda x: ad.sqrt(ad.add(ad.mul(x, x), 1.0)), (7,)),
    ("div", lambda x: ad.div(x, ad.add(ad.mul(x, x), 2.0)), (7,)),
    ("transpose", lambda x: ad.transpose(x, (1, 0)), (3, 4)),
    ("getitem", lambda x: x[1:, ::2], (3, 4)),
    ("fancy getitem", lambda x: x[[0, 0, 2]], (3, 4)),
    ("take", lambda x: ad.take(x, np.array([2, 0, 2]), axis=0), (3, 4)),
    ("concat", lambda x: ad.concat([x, ad.mul(x, 2.0)], axis=1), (3, 4)),
    ("pad_edge", lambda x: ad.pad_edge(x, [(1, 2), (0, 1)]), (3, 4)),
    ("roll", lambda x: ad.roll(x, (1, -1), (0, 1)), (3, 4)),
    ("matmul", lambda x: ad.matmul(x, ad.transpose(x, (1, 0))), (3, 4)),
    ("mean", lambda x: ad.mean(x, axis=0, keepdims=True), (3, 4)),
    ("pixel_shuffle", lambda x: ad.pixel_shuffle(x, 2), (8, 2, 3)),
])
def test_primitive_gradients(name, fn, shape):
    rng = np.random.default_rng(3)
    x = rng.standard_normal(shape)
    w = rng.standard_normal(fn(ad.Var(x)).shape)
    r = ad.grad_check(lambda p: ad.sum(ad.mul(fn(p["x"]), w)), {"x": x}, name=name)
    assert r.passed, r.row()


def test_conv2d_gradients():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 5, 4))
    params = {"x": x, "W": rng.standard_normal((4, 3, 3, 3)), "b": rng.standard_normal(4)}
    weight = rng.standard_normal((2, 4, 5, 4))
    r = ad.grad_check(lambda p: ad.sum(ad.mul(ad.conv2d(p["x"], p["W"], p["b"]), weight)), params, name="conv2d")
    assert r.passed, r.row()
