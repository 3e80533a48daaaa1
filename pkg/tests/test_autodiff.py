"""Gradient checks for every differentiable primitive."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import finite_difference_gradient, max_relative_error
from rmio import autodiff as ad
from rmio.autodiff import Tensor
from rmio.errors import DimensionError


def check_op(build, *shapes, seed=0, tol=1e-4):
    """FD-check gradient of sum(build(*tensors)) against every input."""
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(s) for s in shapes]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = ad.tsum(build(*tensors))
    loss.backward()
    for arr, t in zip(arrays, tensors):
        fd = finite_difference_gradient(lambda: float(ad.tsum(build(*[Tensor(a) for a in arrays])).data), arr)
        assert max_relative_error(t.grad, fd) < tol, build


@pytest.mark.parametrize(
    "build,shapes",
    [
        (lambda a, b: a + b, [(3, 4), (3, 4)]),
        (lambda a, b: a + b, [(3, 4), (4,)]),  # broadcast bias
        (lambda a, b: a * b, [(3, 4), (3, 4)]),
        (lambda a, b: a / b, [(3, 4), (3, 4)]),
        (lambda a, b: a @ b, [(3, 4), (4, 5)]),
        (lambda a, b: a @ b, [(2, 3, 4), (4, 5)]),  # batched matmul
        (lambda a, b: a @ b, [(2, 2, 3, 4), (2, 2, 4, 3)]),
        (lambda a: ad.tanh(a), [(3, 4)]),
        (lambda a: ad.sigmoid(a), [(3, 4)]),
        (lambda a: ad.relu(a) * ad.relu(a), [(3, 4)]),
        (lambda a: ad.elu(a), [(3, 4)]),
        (lambda a: ad.exp(a), [(3, 4)]),
        (lambda a: ad.log(a * a + 1.0), [(3, 4)]),
        (lambda a: a**3.0, [(3, 4)]),
        (lambda a: ad.tsum(a, axis=1) * 2.0, [(3, 4)]),
        (lambda a: ad.tmean(a, axis=0), [(3, 4)]),
        (lambda a: ad.softmax(a, axis=-1) ** 2.0, [(3, 4)]),
        (lambda a: ad.log_softmax(a, axis=-1) * 0.5, [(3, 4)]),
        (lambda a: ad.clip(a, -0.5, 0.5), [(3, 4)]),
        (lambda a, b: ad.minimum(a, b), [(3, 4), (3, 4)]),
        (lambda a, b: ad.concatenate([a, b], axis=-1) ** 2.0, [(3, 4), (3, 2)]),
        (lambda a: ad.reshape(a, (4, 3)), [(3, 4)]),
        (lambda a: ad.swapaxes(a, -1, -2) @ a, [(3, 4)]),
        (lambda a: a[1:, ::2] * 3.0, [(3, 4)]),
        (lambda a: a[np.array([0, 2, 0])] * 2.0, [(3, 4)]),  # repeated fancy index
    ],
)
def test_primitive_gradients(build, shapes):
    check_op(build, *shapes)


def test_relu_values():
    out = ad.relu(Tensor(np.array([1.0, -1.0])))
    assert np.array_equal(out.data, [1.0, 0.0])


def test_grad_accumulates_over_reuse():
    x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    loss = ad.tsum(x * x + x)
    loss.backward()
    assert np.allclose(x.grad, 2.0 * x.data + 1.0)


def test_no_grad_skips_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = ad.tanh(x) * 2.0
    assert y._parents == () and not y.requires_grad


def test_matmul_rejects_vectors():
    with pytest.raises(DimensionError):
        ad.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(DimensionError):
        (x * 2.0).backward()


def test_detach_blocks_gradient():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = ad.tsum(x.detach() * x)
    loss.backward()
    assert np.allclose(x.grad, x.data)  # only the non-detached factor


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=5), st.integers(min_value=1, max_value=5), st.integers(0, 2**31 - 1))
def test_softmax_rows_sum_to_one(rows, cols, seed):
    rng = np.random.default_rng(seed)
    p = ad.softmax(Tensor(rng.standard_normal((rows, cols)) * 10.0)).data
    assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    assert (p >= 0).all()


def test_determinism_bit_identical():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((4, 4))
    def run():
        t = Tensor(x.copy(), requires_grad=True)
        loss = ad.tsum(ad.softmax(ad.tanh(t @ t) * 3.0))
        loss.backward()
        return loss.data.copy(), t.grad.copy()
    l1, g1 = run()
    l2, g2 = run()
    assert l1.tobytes() == l2.tobytes()
    assert g1.tobytes() == g2.tobytes()
