import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fognet import numerics as nx
from fognet.errors import DegenerateInputError, DimensionError, EvaluationError
from fognet.numerics import Tensor, grad_check

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def mat(rows=st.integers(1, 5), cols=st.integers(1, 5), elements=finite):
    return st.tuples(rows, cols).flatmap(lambda s: arrays(np.float64, s, elements=elements))


def param(a):
    return Tensor(np.array(a, dtype=np.float64), requires_grad=True)


# -- matmul -------------------------------------------------------------------


def test_matmul_hand_oracle():
    out = nx.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_identity_and_zeros():
    A = np.random.default_rng(0).standard_normal((2, 2))
    np.testing.assert_array_equal(nx.matmul(Tensor(np.eye(2)), Tensor(A)).data, A)
    np.testing.assert_array_equal(nx.matmul(Tensor(np.zeros((2, 2))), Tensor(A)).data, np.zeros((2, 2)))


def test_matmul_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_batched_gradients():
    rng = np.random.default_rng(1)
    a, b = param(rng.standard_normal((2, 3, 4))), param(rng.standard_normal((4, 2)))
    assert grad_check(lambda: nx.sum(nx.tanh(nx.matmul(a, b))), [a, b]).passed


# -- softmax ------------------------------------------------------------------


def test_softmax_examples():
    np.testing.assert_allclose(nx.softmax_rows(Tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3], rtol=0, atol=1e-15)
    np.testing.assert_allclose(nx.softmax_rows(Tensor([[1.0, 3.0]])).data, [[0.11920292, 0.88079708]], atol=1e-8)
    np.testing.assert_array_equal(nx.softmax_rows(Tensor([[1000.0, 1000.0]])).data, [[0.5, 0.5]])


@settings(max_examples=60, deadline=None)
@given(mat(elements=st.floats(-1e3, 1e3)))
def test_softmax_rows_sum_to_one(x):
    out = nx.softmax_rows(Tensor(x)).data
    assert np.all(out >= 0)
    assert np.all(np.abs(out.sum(axis=-1) - 1.0) <= 1e-12)


@settings(max_examples=40, deadline=None)
@given(mat(elements=st.floats(-1e3, 1e3)))
def test_log_softmax_is_finite_and_consistent(x):
    ls = nx.log_softmax_rows(Tensor(x)).data
    assert np.all(np.isfinite(ls))
    np.testing.assert_allclose(np.exp(ls), nx.softmax_rows(Tensor(x)).data, atol=1e-12)


def test_sum_of_softmax_has_zero_gradient():
    x = param(np.random.default_rng(2).standard_normal((3, 4)))
    nx.sum(nx.softmax_rows(x)).backward()
    np.testing.assert_allclose(x.grad, 0.0, atol=1e-15)


# -- concat / chunk -----------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_chunk2_concat_roundtrip_bit_exact(T, d, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((T, d)), rng.standard_normal((T, d))
    first, second = nx.chunk2(nx.concat_rows(Tensor(a), Tensor(b)))
    assert np.array_equal(first.data, a) and np.array_equal(second.data, b)


def test_concat_rows_scalars():
    np.testing.assert_array_equal(nx.concat_rows(Tensor([[2.0]]), Tensor([[5.0]])).data, [[2.0], [5.0]])


def test_chunk2_odd_rows_rejected():
    with pytest.raises(DimensionError):
        nx.chunk2(Tensor(np.zeros((3, 2))))


def test_chunk2_gradient_routes_to_first_half():
    x = param(np.random.default_rng(3).standard_normal((6, 2)))
    nx.sum(nx.chunk2(x)[0]).backward()
    expected = np.vstack([np.ones((3, 2)), np.zeros((3, 2))])
    np.testing.assert_array_equal(x.grad, expected)
    assert grad_check(lambda: nx.sum(nx.chunk2(x)[0]), [x]).passed


# -- cosine / normalization ---------------------------------------------------


def test_cosine_examples():
    np.testing.assert_allclose(nx.cosine_sim_matrix(Tensor(np.eye(3)), Tensor(np.eye(3))).data, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(nx.cosine_sim_matrix(Tensor([[1.0, 0.0]]), Tensor([[3.0, 0.0]])).data, [[1.0]])
    np.testing.assert_allclose(nx.cosine_sim_matrix(Tensor([[1.0, 1.0]]), Tensor([[1.0, 0.0]])).data, [[0.70710678]], atol=1e-8)


def test_cosine_zero_row_raises():
    with pytest.raises(DegenerateInputError):
        nx.cosine_sim_matrix(Tensor([[0.0, 0.0]]), Tensor([[1.0, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(mat(elements=st.floats(-10, 10)), mat(elements=st.floats(-10, 10)))
def test_cosine_entries_bounded(a, b):
    if a.shape[1] != b.shape[1]:
        b = np.resize(b, (b.shape[0], a.shape[1]))
    if np.any(np.linalg.norm(a, axis=1) <= 1e-6) or np.any(np.linalg.norm(b, axis=1) <= 1e-6):
        return
    s = nx.cosine_sim_matrix(Tensor(a), Tensor(b)).data
    assert np.all(np.abs(s) <= 1.0 + 1e-12)


@settings(max_examples=50, deadline=None)
@given(mat(elements=st.floats(-10, 10)))
def test_l2_normalize_unit_rows(x):
    if np.any(np.linalg.norm(x, axis=1) <= 1e-6):
        return
    norms = np.linalg.norm(nx.l2_normalize_rows(Tensor(x)).data, axis=1)
    assert np.all(np.abs(norms - 1.0) <= 1e-12)


# -- gradients of every primitive ---------------------------------------------


def _unary_cases():
    return {
        "exp": lambda x: nx.sum(nx.exp(x)),
        "log": lambda x: nx.sum(nx.log(nx.exp(x) + 1.0)),
        "tanh": lambda x: nx.sum(nx.tanh(x)),
        "mean": lambda x: nx.mean(nx.mul(x, x)),
        "mean_rows": lambda x: nx.sum(nx.tanh(nx.mean_rows(x))),
        "transpose": lambda x: nx.sum(nx.matmul(nx.transpose(x), nx.tanh(x))),
        "scale": lambda x: nx.sum(nx.tanh(nx.scale(x, -2.5))),
        "sub": lambda x: nx.sum(nx.tanh(x - nx.exp(x))),
        "l2_normalize": lambda x: nx.sum(nx.mul(nx.l2_normalize_rows(x), Tensor(np.arange(12.0).reshape(3, 4)))),
        "cosine": lambda x: nx.sum(nx.exp(nx.cosine_sim_matrix(x, nx.tanh(x)))),
        "log_softmax": lambda x: nx.sum(nx.mul(nx.log_softmax_rows(x), Tensor(np.arange(12.0).reshape(3, 4)))),
        "softmax": lambda x: nx.sum(nx.mul(nx.softmax_rows(x), Tensor(np.arange(12.0).reshape(3, 4)))),
        "cols": lambda x: nx.sum(nx.exp(nx.concat_cols([nx.cols(x, 2, 4), nx.cols(x, 0, 1)]))),
        "reshape": lambda x: nx.sum(nx.tanh(nx.reshape(x, (4, 3)))),
    }


@pytest.mark.parametrize("name", sorted(_unary_cases()))
def test_primitive_gradients(name):
    x = param(np.random.default_rng(4).standard_normal((3, 4)))
    report = grad_check(lambda: _unary_cases()[name](x), [x])
    assert report.passed, (name, report.max_error)


def test_broadcast_add_gradient():
    rng = np.random.default_rng(5)
    a, b = param(rng.standard_normal((2, 3, 4))), param(rng.standard_normal(4))
    assert grad_check(lambda: nx.sum(nx.tanh(a + b)), [a, b]).passed


def test_argmax_rows_ties_lowest_index():
    np.testing.assert_array_equal(nx.argmax_rows(np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 2.0]])), [0, 1])


# -- grad_check itself --------------------------------------------------------


def test_grad_check_square():
    x = param([3.0])
    report = grad_check(lambda: nx.sum(nx.mul(x, x)), [x])
    assert report.max_error < 1e-9


def test_grad_check_detects_wrong_gradient():
    x = param([1.0, 2.0])

    def bad(a):
        return nx._result(a.data**2, [a], lambda g: (g * 3.0 * a.data,), "bad")

    assert not grad_check(lambda: nx.sum(bad(x)), [x]).passed


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grad_check_non_finite_raises():
    x = param([0.0])
    with pytest.raises(EvaluationError):
        grad_check(lambda: nx.sum(nx.log(x)), [x])


def test_relative_error_formula():
    np.testing.assert_allclose(nx.relative_error(np.array([2.0, 0.0]), np.array([1.0, 1e-10])), [0.5, 1e-2])


# -- determinism, immutability, file format -----------------------------------


def test_operations_deterministic():
    x = np.random.default_rng(6).standard_normal((4, 5))
    f = lambda: nx.log_softmax_rows(nx.matmul(Tensor(x), nx.transpose(Tensor(x)))).data
    assert np.array_equal(f(), f())


def test_constant_tensors_are_read_only():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_fvt_roundtrip(tmp_path):
    arr = np.random.default_rng(7).uniform(size=(3, 4, 5))
    nx.write_fvt(tmp_path / "a.fvt", arr)
    raw = (tmp_path / "a.fvt").read_bytes()
    assert raw[:4] == b"FVT1"
    assert int.from_bytes(raw[4:8], "little") == 3
    assert len(raw) == 8 + 12 + 4 * arr.size
    back = nx.read_fvt(tmp_path / "a.fvt")
    assert back.dtype == np.float64
    np.testing.assert_array_equal(back, arr.astype(np.float32))


def test_fvt_rejects_bad_magic(tmp_path):
    (tmp_path / "x.fvt").write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(ValueError):
        nx.read_fvt(tmp_path / "x.fvt")


def test_exp_overflow_free_on_log_softmax():
    out = nx.log_softmax_rows(Tensor([[1e4, 0.0]])).data
    assert np.all(np.isfinite(out))
    assert out[0, 0] == 0.0 and math.isclose(out[0, 1], -1e4)
