import numpy as np
import pytest

from maginet import tensor as T
from maginet.gradcheck import NondeterministicError, grad_check, relative_error
from maginet.params import ParamStore


def test_half_squared_norm():
    p = ParamStore({"p": np.random.default_rng(0).normal(size=(4, 5))})
    rep = grad_check(lambda q: T.tsum(T.square(q["p"])) * 0.5, p)
    assert rep.worst < 1e-6


def test_constant_objective_has_zero_gradient():
    p = ParamStore({"p": np.ones(3)})
    rep = grad_check(lambda q: T.tsum(q["p"] * 0.0) + 2.0, p)
    assert rep.passed and rep.worst == 0.0


def test_nondeterministic_objective_rejected():
    p = ParamStore({"p": np.ones(3)})
    rng = np.random.default_rng(0)
    with pytest.raises(NondeterministicError):
        grad_check(lambda q: T.tsum(q["p"] * float(rng.normal())), p)


def test_wrong_gradient_is_caught():
    p = ParamStore({"p": np.linspace(0.5, 2.0, 5)})

    def f(q):
        x = q["p"]
        # forward value x**3 but backward of x**2
        y = T.tsum(T.square(x))
        y.data = np.asarray(np.sum(x.data**3), dtype=y.data.dtype)
        return y

    assert not grad_check(f, p).passed


def test_two_layer_conv_net():
    rng = np.random.default_rng(1)
    p = ParamStore(
        {
            "c1.w": rng.normal(size=(4, 3, 3, 3)) * 0.3,
            "c1.b": rng.normal(size=(4,)) * 0.1,
            "c2.w": rng.normal(size=(2, 4, 3, 3)) * 0.3,
            "c2.b": np.zeros(2),
        }
    )
    x = T.Tensor(rng.normal(size=(2, 3, 6, 6)))
    target = rng.normal(size=(2, 2, 6, 6))

    def f(q):
        h = T.relu(T.conv2d(x, q["c1.w"], q["c1.b"], pad=1))
        y = T.conv2d(h, q["c2.w"], q["c2.b"], pad=1)
        return T.mean(T.square(y - target))

    rep = grad_check(f, p)
    assert rep.passed, rep.lines()
    assert set(rep.checked) == set(p.names())


def test_params_restored_after_check():
    p = ParamStore({"p": np.arange(4.0)})
    before = p["p"].data.copy()
    grad_check(lambda q: T.tsum(T.square(q["p"])), p)
    assert p["p"].data.dtype == np.float32 and p["p"].data.tobytes() == before.tobytes()
    assert p["p"].grad is None


def test_relative_error_floor():
    assert relative_error(1e-9, 0.0, floor=1e-6) == pytest.approx(1e-3)
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)
