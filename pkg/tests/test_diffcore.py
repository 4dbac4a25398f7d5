import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from monohdr import diffcore as dc

RNG = np.random.default_rng(1234)


def away_from_zero(shape, lo=0.2, hi=1.5):
    mag = RNG.uniform(lo, hi, size=shape)
    return mag * RNG.choice([-1.0, 1.0], size=shape)


# (name, function of Tensor -> scalar, input point)
UNARY_CASES = [
    ("relu", lambda x: dc.sum_(dc.relu(x)), away_from_zero((3, 4))),
    ("softplus", lambda x: dc.sum_(dc.softplus(x)), RNG.normal(size=(3, 4))),
    ("tanh", lambda x: dc.sum_(dc.tanh(x)), RNG.normal(size=(3, 4))),
    ("sigmoid", lambda x: dc.sum_(dc.sigmoid(x)), RNG.normal(size=(3, 4))),
    ("exp", lambda x: dc.sum_(dc.exp(x)), RNG.normal(size=(5,))),
    ("log", lambda x: dc.sum_(dc.log(x)), RNG.uniform(0.5, 2.0, size=(5,))),
    ("abs", lambda x: dc.sum_(dc.abs_(x)), away_from_zero((5,))),
    ("square", lambda x: dc.sum_(dc.square(x)), RNG.normal(size=(5,))),
    ("neg", lambda x: dc.sum_(dc.mul(dc.neg(x), x)), RNG.normal(size=(5,))),
    ("sum_axis", lambda x: dc.sum_(dc.square(dc.sum_(x, axis=1))), RNG.normal(size=(3, 4))),
    ("mean", lambda x: dc.square(dc.mean(x)), RNG.normal(size=(3, 4))),
    ("mean_axis", lambda x: dc.sum_(dc.square(dc.mean(x, axis=0))), RNG.normal(size=(3, 4))),
    ("min", lambda x: dc.square(dc.min_(x)), np.array([0.3, -1.2, 0.8, 2.0])),
    ("max", lambda x: dc.square(dc.max_(x)), np.array([0.3, -1.2, 0.8, 2.0])),
    ("clamp", lambda x: dc.sum_(dc.square(dc.clamp(x, -0.5, 0.5))), np.array([-1.0, -0.2, 0.1, 0.9, 0.3])),
    ("reshape", lambda x: dc.sum_(dc.mul(dc.reshape(x, (4, 3)), np.arange(12.0).reshape(4, 3))),
     RNG.normal(size=(3, 4))),
    ("transpose", lambda x: dc.sum_(dc.mul(dc.transpose(x, (1, 0)), np.arange(12.0).reshape(4, 3))),
     RNG.normal(size=(3, 4))),
    ("broadcast_to", lambda x: dc.sum_(dc.square(dc.broadcast_to(x, (4, 3)))), RNG.normal(size=(1, 3))),
    ("index", lambda x: dc.sum_(dc.square(dc.index(x, (slice(1, 3), 2)))), RNG.normal(size=(3, 4))),
    ("cumsum", lambda x: dc.sum_(dc.square(dc.cumsum(x, axis=1))), RNG.normal(size=(2, 5))),
    ("cumsum_excl", lambda x: dc.sum_(dc.square(dc.cumsum(x, axis=1, exclusive=True))), RNG.normal(size=(2, 5))),
    ("stop_gradient", lambda x: dc.sum_(dc.mul(dc.stop_gradient(x), x)), RNG.normal(size=(4,))),
]


@pytest.mark.parametrize("name,f,x", UNARY_CASES, ids=[c[0] for c in UNARY_CASES])
def test_unary_gradients(name, f, x):
    if name == "stop_gradient":
        # d/dx [sg(x) * x] = sg(x): only the second factor carries gradient
        tape = dc.Tape()
        t = tape.param(x)
        g = tape.backward(f(t))[t]
        np.testing.assert_allclose(g, x)
        return
    assert dc.gradient_check(f, x) < 1e-4


BINARY_CASES = [
    ("add", lambda p: dc.sum_(dc.square(dc.add(p["a"], p["b"])))),
    ("sub", lambda p: dc.sum_(dc.square(dc.sub(p["a"], p["b"])))),
    ("mul", lambda p: dc.sum_(dc.mul(p["a"], p["b"]))),
    ("div", lambda p: dc.sum_(dc.div(p["a"], dc.add(dc.square(p["b"]), 1.0)))),
    ("concat", lambda p: dc.sum_(dc.square(dc.concat([p["a"], dc.mul(p["b"], 2.0)], axis=0)))),
]


@pytest.mark.parametrize("name,f", BINARY_CASES, ids=[c[0] for c in BINARY_CASES])
def test_binary_gradients(name, f):
    point = {"a": RNG.normal(size=(3, 2)), "b": RNG.normal(size=(3, 2))}
    assert dc.gradient_check(f, point) < 1e-4


def test_scalar_broadcast_gradients():
    f = lambda p: dc.sum_(dc.mul(dc.add(p["s"], p["x"]), p["x"]))
    assert dc.gradient_check(f, {"s": np.array(0.7), "x": RNG.normal(size=(4,))}) < 1e-4


def test_matmul_gradients_2d_and_batched():
    f = lambda p: dc.sum_(dc.square(dc.matmul(p["a"], p["b"])))
    assert dc.gradient_check(f, {"a": RNG.normal(size=(3, 4)), "b": RNG.normal(size=(4, 2))}) < 1e-4
    assert dc.gradient_check(f, {"a": RNG.normal(size=(2, 3, 4)), "b": RNG.normal(size=(2, 4, 2))}) < 1e-4


def test_spmm_gradient_and_value():
    a = sp.random(5, 4, density=0.5, random_state=3, format="csr")
    x = RNG.normal(size=(4, 2))
    out = dc.spmm(a, x)
    np.testing.assert_allclose(out.data, a.toarray() @ x, rtol=0, atol=1e-14)
    assert dc.gradient_check(lambda t: dc.sum_(dc.square(dc.spmm(a, t))), x) < 1e-4


def test_square_example():
    tape = dc.Tape()
    x = tape.param(3.0)
    grads = tape.backward(dc.mul(x, x))
    assert grads[x] == pytest.approx(6.0)


def test_relu_gradient_example():
    tape = dc.Tape()
    x = tape.param([-1.0, 2.0])
    g = tape.backward(dc.sum_(dc.relu(x)))[x]
    np.testing.assert_array_equal(g, [0.0, 1.0])


def test_min_max_gradient_goes_to_first_extremum():
    tape = dc.Tape()
    x = tape.param([1.0, 3.0, 3.0, 0.0, 0.0])
    g = tape.backward(dc.add(dc.max_(x), dc.min_(x)))[x]
    np.testing.assert_array_equal(g, [0, 1, 0, 1, 0])


def test_unused_parameter_gets_zero_gradient():
    tape = dc.Tape()
    x, y = tape.param([1.0, 2.0]), tape.param([5.0])
    g = tape.backward(dc.sum_(x))
    np.testing.assert_array_equal(g[y], [0.0])


def test_shape_mismatch_raises():
    with pytest.raises(dc.ShapeError):
        dc.add(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(dc.ShapeError):
        dc.matmul(np.ones((2, 3)), np.ones((2, 3)))


@pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
def test_nonfinite_raises_naming_op():
    with pytest.raises(dc.NonFiniteError, match="log"):
        dc.log(np.array([0.0, 1.0]))
    with pytest.raises(dc.NonFiniteError):
        dc.exp(np.array([1e4]))


def test_backward_requires_scalar():
    tape = dc.Tape()
    x = tape.param([1.0, 2.0])
    with pytest.raises(dc.ShapeError):
        tape.backward(dc.mul(x, 2.0))


def test_op_kinds_cover_core_list():
    assert set(dc.OP_KINDS) >= {"add", "mul", "matmul", "relu", "softplus", "tanh", "sigmoid", "exp", "log",
                                "sum", "mean", "min", "max", "clamp"}


finite = st.floats(-10, 10, allow_nan=False, width=64)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 6), elements=finite),
       hnp.arrays(np.float64, st.integers(1, 6), elements=finite))
def test_add_mul_commute(a, b):
    n = min(a.size, b.size)
    a, b = a[:n], b[:n]
    np.testing.assert_array_equal(dc.add(a, b).data, dc.add(b, a).data)
    np.testing.assert_array_equal(dc.mul(a, b).data, dc.mul(b, a).data)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, st.integers(2, 8), elements=st.floats(-5, 5, width=64)))
def test_linear_functional_gradient_is_exact(w):
    # d/dx sum(w * x) == w exactly, whatever the point
    tape = dc.Tape()
    x = tape.param(np.zeros_like(w))
    np.testing.assert_array_equal(tape.backward(dc.sum_(dc.mul(x, w)))[x], w)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 6)), elements=finite))
def test_exclusive_cumsum_shifts_inclusive(x):
    inc = dc.cumsum(x, axis=1).data
    exc = dc.cumsum(x, axis=1, exclusive=True).data
    np.testing.assert_allclose(exc[:, 1:], inc[:, :-1], atol=1e-12)
    np.testing.assert_array_equal(exc[:, 0], 0.0)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 20), elements=st.floats(-30, 30, width=64)))
def test_sigmoid_in_unit_interval_and_softplus_positive(x):
    s = dc.sigmoid(x).data
    assert np.all((s >= 0) & (s <= 1))
    assert np.all(dc.softplus(x).data >= 0)
