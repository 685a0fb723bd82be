import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hpk import numeric as nm
from hpk.gradcheck import check_gradients, numeric_grad, relative_error
from hpk.nn import MultiHeadCrossAttention
from hpk.numeric import Tensor

from oracles import loop_conv2d, loop_layer_norm, loop_matmul, randomize


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def leaf(a):
    return Tensor(a, requires_grad=True)


def fd_check(make_loss, tensors, rng, entries=6):
    reports = check_gradients(make_loss, tensors, rng, entries=entries)
    for r in reports:
        assert r.rel_error < 1e-4, (r.name, r.analytic, r.numeric)


def test_matmul_identity(rng):
    b = rng.normal(size=(3, 4))
    assert np.array_equal((Tensor(np.eye(3)) @ Tensor(b)).data, b)


def test_matmul_small_example():
    a, b = [[1, 2], [3, 4]], [[0], [1]]
    expected = loop_matmul(a, b)
    np.testing.assert_array_equal(expected, [[2], [4]])
    np.testing.assert_array_equal((Tensor(a) @ Tensor(b)).data, expected)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(nm.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


@pytest.mark.parametrize("seed", range(5))
def test_matmul_matches_loop_oracle(seed):
    r = np.random.default_rng(seed)
    m, k, n = r.integers(1, 9, size=3)
    a, b = r.normal(size=(m, k)), r.normal(size=(k, n))
    np.testing.assert_allclose((Tensor(a) @ Tensor(b)).data, loop_matmul(a, b), rtol=0, atol=1e-12)


def test_matmul_gradient(rng):
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
    fd_check(lambda: (a @ b).sum(), {"a": a, "b": b}, rng)


def test_softmax_uniform_and_stable():
    np.testing.assert_allclose(nm.softmax(Tensor([0.0, 0.0, 0.0]), 0).data, [1 / 3] * 3)
    y = nm.softmax(Tensor([1000.0, 0.0]), 0).data
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y, [1.0, 0.0], atol=1e-300)


def test_softmax_jacobian_rows_sum_to_zero(rng):
    x = rng.normal(size=5)
    y = nm.softmax(Tensor(x), 0).data
    jac = np.diag(y) - np.outer(y, y)
    np.testing.assert_allclose(jac.sum(axis=0), 0.0, atol=1e-15)
    # the tape's vector-Jacobian product agrees with the closed form
    for i in range(5):
        xt = leaf(x)
        nm.backward(nm.softmax(xt, 0)[i])
        np.testing.assert_allclose(xt.grad, jac[i], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-1e3, 1e3)))
def test_softmax_on_simplex(x):
    y = nm.softmax(Tensor(x), axis=1).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, rtol=1e-12)


def test_softmax_gradient(rng):
    x = leaf(rng.normal(size=(3, 4)))
    w = Tensor(rng.normal(size=(3, 4)))
    fd_check(lambda: (nm.softmax(x, 1) * w).sum(), {"x": x}, rng)


def test_layer_norm_cases(rng):
    np.testing.assert_array_equal(nm.layer_norm(Tensor([[2.0, 2.0, 2.0]])).data, [[0.0, 0.0, 0.0]])
    np.testing.assert_allclose(nm.layer_norm(Tensor([[1.0, 3.0]]), eps=0.0).data, [[-1.0, 1.0]])
    y = nm.layer_norm(Tensor(rng.normal(size=(10, 7)))).data
    assert np.abs(y.mean(axis=1)).max() < 1e-9
    x = rng.normal(size=(4, 6))
    np.testing.assert_allclose(nm.layer_norm(Tensor(x)).data, loop_layer_norm(x), atol=1e-12)


def test_layer_norm_gradient(rng):
    x = leaf(rng.normal(size=(3, 5)))
    w = Tensor(rng.normal(size=(3, 5)))
    fd_check(lambda: (nm.layer_norm(x) * w).sum(), {"x": x}, rng)


def test_conv2d_identity_and_constant(rng):
    img = rng.normal(size=(1, 5, 6))
    one = Tensor(np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(nm.conv2d(Tensor(img), one).data, img)
    flat = np.full((1, 6, 6), 3.5)
    avg = Tensor(np.full((1, 1, 3, 3), 1 / 9))
    out = nm.conv2d(Tensor(flat), avg).data
    np.testing.assert_allclose(out[0, 1:-1, 1:-1], 3.5, rtol=1e-14)


def test_conv2d_even_kernel_rejected():
    with pytest.raises(ValueError, match="odd"):
        nm.conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))))


@pytest.mark.parametrize("seed", range(3))
def test_conv2d_matches_loop_oracle(seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(2, 6, 5))
    k = r.normal(size=(3, 2, 5, 5))
    b = r.normal(size=3)
    np.testing.assert_allclose(nm.conv2d(Tensor(x), Tensor(k), Tensor(b)).data,
                               loop_conv2d(x, k, b), rtol=0, atol=1e-12)


def test_conv2d_gradient(rng):
    x = leaf(rng.normal(size=(2, 4, 4)))
    k = leaf(rng.normal(size=(3, 2, 3, 3)))
    b = leaf(rng.normal(size=3))
    w = Tensor(rng.normal(size=(3, 4, 4)))
    fd_check(lambda: (nm.conv2d(x, k, b) * w).sum(), {"x": x, "k": k, "b": b}, rng)


def test_silu_values_and_gradient(rng):
    assert nm.silu(Tensor([0.0])).data[0] == 0.0
    big = nm.silu(Tensor([50.0, -50.0])).data
    assert abs(big[0] - 50.0) < 1e-12 and abs(big[1]) < 1e-18
    x = leaf(rng.normal(size=(4, 3)) * 3)
    fd_check(lambda: nm.silu(x).sum(), {"x": x}, rng)


def test_backward_square_and_reuse(rng):
    xv = rng.normal(size=(3, 2))
    x = leaf(xv)
    nm.backward((x * x).sum())
    np.testing.assert_allclose(x.grad, 2 * xv)
    y = leaf(xv)
    nm.backward((y + y).sum() + y.sum())
    np.testing.assert_allclose(y.grad, np.full(xv.shape, 3.0))


def test_backward_errors():
    x = leaf([1.0, 2.0])
    loss = (x * x).sum()
    nm.backward(loss)
    with pytest.raises(nm.GraphError, match="consumed"):
        nm.backward(loss)
    with pytest.raises(nm.DimensionError, match="scalar"):
        nm.backward(x * x)
    with pytest.raises(nm.GraphError, match="detached"):
        nm.backward(Tensor([1.0, 2.0]).sum())


def test_tensor_data_is_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_mhca_block_gradient(rng):
    attn = MultiHeadCrossAttention(6, 5, 8, 2, rng)
    randomize(attn, rng)
    q, kv = leaf(rng.normal(size=(3, 6))), leaf(rng.normal(size=(4, 5)))
    w = Tensor(rng.normal(size=(3, 8)))
    params = dict(attn.named_parameters())
    params.update(q=q, kv=kv)
    fd_check(lambda: (attn(q, kv, kv) * w).sum(), params, rng, entries=4)


def test_clip_grad_norm():
    p = leaf(np.zeros(2))
    p.grad = np.array([0.3, 0.4])
    assert nm.clip_grad_norm([p], 0.99) == 1.0
    np.testing.assert_array_equal(p.grad, [0.3, 0.4])

    a, b = leaf(np.zeros(2)), leaf(np.zeros(1))
    a.grad, b.grad = np.array([5.94, 0.0]), np.array([7.92])  # norm 9.9
    before = np.concatenate([a.grad, b.grad])
    factor = nm.clip_grad_norm([a, b], 0.99)
    after = np.concatenate([a.grad, b.grad])
    np.testing.assert_allclose(factor, 0.99 / np.linalg.norm(before))
    np.testing.assert_allclose(factor, 0.1)
    np.testing.assert_allclose(np.linalg.norm(after), 0.99)
    np.testing.assert_allclose(after / np.linalg.norm(after), before / np.linalg.norm(before))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 10), elements=st.floats(-100, 100)))
def test_clip_never_increases_norm(g):
    p = leaf(np.zeros_like(g))
    p.grad = g.copy()
    nm.clip_grad_norm([p], 0.99)
    assert np.linalg.norm(p.grad) <= max(np.linalg.norm(g), 0.99) * (1 + 1e-12)
    if np.linalg.norm(g) <= 0.99:
        np.testing.assert_array_equal(p.grad, g)


def test_bias_broadcast_only():
    m = Tensor(np.ones((2, 3)))
    assert (m + Tensor([1.0, 2.0, 3.0])).shape == (2, 3)
    with pytest.raises(nm.DimensionError):
        m + Tensor([1.0, 2.0])


def test_fd_helpers_restore_parameters(rng):
    x = leaf(rng.normal(size=4))
    before = x.data.copy()
    numeric_grad(lambda: (x * x).sum(), x, [0, 2])
    np.testing.assert_array_equal(x.data, before)
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
