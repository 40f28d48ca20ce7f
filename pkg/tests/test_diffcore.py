import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cameltrack import diffcore as dc

FLOOR = 1e-3
TOL = 1e-5


def check(fn, *arrays, n=60):
    params = [dc.Tensor(a, requires_grad=True) for a in arrays]
    err, count = dc.gradcheck(lambda: fn(*params), params, n_samples=n, floor=FLOOR)
    assert count > 0
    assert err < TOL, err


def weighted(y, seed=7):
    """Scalar with non-uniform upstream gradient."""
    w = np.random.default_rng(seed).normal(size=y.shape)
    return dc.sum_(dc.mul(y, w))


# ---------------------------------------------------------------- per-op gradients


def test_grad_add_broadcast(rng):
    check(lambda a, b: weighted(dc.add(a, b)), rng.normal(size=(3, 4)), rng.normal(size=(4,)))


def test_grad_mul_broadcast(rng):
    check(lambda a, b: weighted(dc.mul(a, b)), rng.normal(size=(2, 3, 4)), rng.normal(size=(3, 1)))


def test_grad_matmul_batched(rng):
    check(lambda a, b: weighted(dc.matmul(a, b)), rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4, 5)))


def test_grad_linear(rng):
    check(lambda x, w, b: weighted(dc.linear(x, w, b)), rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5)), rng.normal(size=5))


def test_grad_softmax(rng):
    check(lambda x: weighted(dc.softmax_lastdim(x)), rng.normal(size=(3, 5)))


def test_grad_log_softmax(rng):
    check(lambda x: weighted(dc.log_softmax_lastdim(x)), rng.normal(size=(3, 5)))


def test_grad_layer_norm(rng):
    check(lambda x, g, b: weighted(dc.layer_norm(x, g, b)), rng.normal(size=(4, 6)), rng.normal(size=6), rng.normal(size=6))


def test_grad_gelu(rng):
    check(lambda x: weighted(dc.gelu(x)), rng.normal(size=(4, 5)) * 2)


def test_grad_concat_slice(rng):
    check(
        lambda a, b: weighted(dc.concat([a, b], axis=1)[:, 1:4]),
        rng.normal(size=(2, 3)), rng.normal(size=(2, 2)),
    )


def test_grad_advanced_index_repeats(rng):
    # repeated indices must accumulate
    check(lambda a: weighted(a[np.array([0, 2, 0, 1])]), rng.normal(size=(3, 4)))


def test_grad_mean_sum(rng):
    check(lambda a: dc.add(weighted(dc.mean(a, axis=1)), dc.sum_(dc.mul(a, a))), rng.normal(size=(3, 4)))


def test_grad_l2_normalize(rng):
    check(lambda a: weighted(dc.l2_normalize_lastdim(a)), rng.normal(size=(3, 4)))


def test_grad_reshape_transpose(rng):
    check(lambda a: weighted(dc.transpose(dc.reshape(a, (2, 3, 2)), (2, 0, 1))), rng.normal(size=(3, 4)))


# ---------------------------------------------------------------- forward values against numpy


def test_softmax_matches_formula(rng):
    x = rng.normal(size=(4, 7)) * 10
    e = np.exp(x - x.max(axis=1, keepdims=True))
    np.testing.assert_allclose(dc.softmax_lastdim(x).data, e / e.sum(axis=1, keepdims=True), rtol=1e-12)
    np.testing.assert_allclose(dc.log_softmax_lastdim(x).data, np.log(e / e.sum(axis=1, keepdims=True)), atol=1e-12)


def test_softmax_large_logits_stay_finite():
    y = dc.softmax_lastdim(np.array([[1000.0, 0.0, -1000.0]]))
    np.testing.assert_allclose(y.data, [[1.0, 0.0, 0.0]])


def test_layer_norm_statistics(rng):
    y = dc.layer_norm(rng.normal(3.0, 5.0, size=(5, 16))).data
    np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=1), 1.0, rtol=1e-3)


def test_gelu_tanh_form():
    x = np.linspace(-4, 4, 9)
    ref = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x**3)))
    np.testing.assert_allclose(dc.gelu(x).data, ref, rtol=1e-12)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=8).filter(lambda v: np.linalg.norm(v) > 1e-3))
@settings(max_examples=60, deadline=None)
def test_l2_normalize_unit_norm(values):
    y = dc.l2_normalize_lastdim(np.array([values])).data
    assert abs(np.linalg.norm(y) - 1.0) <= 1e-9


def test_l2_normalize_zero_vector_warns():
    with pytest.warns(dc.ZeroNormWarning):
        y = dc.l2_normalize_lastdim(np.zeros((1, 3)))
    assert np.all(y.data == 0)


# ---------------------------------------------------------------- tape semantics


def test_backward_accumulates_and_zero_fills():
    a = dc.Tensor([1.0, 2.0], requires_grad=True)
    unused = dc.Tensor([5.0], requires_grad=True)
    with dc.Tape() as tape:
        loss = dc.sum_(dc.add(dc.mul(a, a), dc.mul(unused, 0.0)))
    dc.backward(tape, loss)
    np.testing.assert_array_equal(a.grad, [2.0, 4.0])
    np.testing.assert_array_equal(unused.grad, [0.0])
    with dc.Tape() as tape:
        loss = dc.sum_(a)
    dc.backward(tape, loss)
    np.testing.assert_array_equal(a.grad, [3.0, 5.0])


def test_reused_tensor_gets_summed_gradient():
    a = dc.Tensor([3.0], requires_grad=True)
    with dc.Tape() as tape:
        loss = dc.sum_(dc.add(a, dc.add(a, a)))
    dc.backward(tape, loss)
    assert a.grad[0] == 3.0


def test_tape_consumed_twice():
    a = dc.Tensor([1.0], requires_grad=True)
    with dc.Tape() as tape:
        loss = dc.sum_(a)
    dc.backward(tape, loss)
    with pytest.raises(dc.TapeConsumed):
        dc.backward(tape, loss)


def test_non_scalar_loss():
    a = dc.Tensor([1.0, 2.0], requires_grad=True)
    with dc.Tape() as tape:
        y = dc.mul(a, 2.0)
    with pytest.raises(dc.NonScalarLoss):
        dc.backward(tape, y)


def test_no_tape_records_nothing():
    a = dc.Tensor([1.0], requires_grad=True)
    y = dc.mul(a, 2.0)
    assert not y.requires_grad


def test_shape_mismatch():
    with pytest.raises(dc.ShapeMismatch):
        dc.add(np.zeros((2, 3)), np.zeros((4,)))
    with pytest.raises(dc.ShapeMismatch):
        dc.matmul(np.zeros((2, 3)), np.zeros((4, 2)))


def test_non_finite_raises():
    with pytest.raises(dc.NonFiniteValue), np.errstate(over="ignore"):
        dc.mul(np.array([1e308]), 1e10)


def test_forward_op_dispatch(rng):
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 2))
    np.testing.assert_array_equal(dc.forward_op("matmul", [a, b]).data, dc.matmul(a, b).data)
    with pytest.raises(ValueError):
        dc.forward_op("conv", [a])


def test_row_invariant_matmul_is_position_independent(rng):
    w = rng.normal(size=(33, 17))
    x = rng.normal(size=(40, 33))
    perm = rng.permutation(40)
    with dc.row_invariant_matmul():
        y = dc.matmul(x, w).data
        yp = dc.matmul(x[perm], w).data
    assert np.array_equal(y[perm], yp)


# ---------------------------------------------------------------- Adam


def test_adam_first_steps_match_hand_computation():
    p = dc.Tensor([1.0, -2.0], requires_grad=True)
    state = dc.AdamState(lr=0.1)
    g1, g2 = np.array([0.5, -1.0]), np.array([0.1, 0.3])
    dc.adam_step(state, [p], [g1])
    # first step moves by lr * g / (|g| + eps)
    np.testing.assert_allclose(p.data, [1.0 - 0.1 * 0.5 / (0.5 + 1e-8), -2.0 + 0.1 * 1.0 / (1.0 + 1e-8)])
    before = p.data.copy()
    dc.adam_step(state, [p], [g2])
    m = 0.9 * (0.1 * g1) + 0.1 * g2
    v = 0.999 * (0.001 * g1**2) + 0.001 * g2**2
    mhat, vhat = m / (1 - 0.9**2), v / (1 - 0.999**2)
    np.testing.assert_allclose(p.data, before - 0.1 * mhat / (np.sqrt(vhat) + 1e-8), rtol=1e-12)


def test_adam_rejects_shape_changes():
    p = dc.Tensor(np.zeros(3), requires_grad=True)
    state = dc.AdamState()
    with pytest.raises(dc.ShapeMismatch):
        dc.adam_step(state, [p], [np.zeros(2)])
    dc.adam_step(state, [p], [np.ones(3)])
    with pytest.raises(dc.ShapeMismatch):
        dc.adam_step(state, [p, p], [np.ones(3), np.ones(3)])


def test_adam_minimizes_quadratic():
    p = dc.Tensor([4.0, -3.0], requires_grad=True)
    state = dc.AdamState(lr=0.1)
    for _ in range(500):
        dc.adam_step(state, [p], [2 * p.data])
    assert np.all(np.abs(p.data) < 1e-2)


def test_gradcheck_catches_a_wrong_gradient():
    a = dc.Tensor([0.3, 0.7], requires_grad=True)

    def wrong():
        y = dc.mul(a, a)
        # sever the graph for the second entry: analytic gradient becomes partial
        return dc.add(dc.sum_(y), float(np.sum(a.data**3)))

    err, _ = dc.gradcheck(wrong, [a], n_samples=2, floor=FLOOR)
    assert err > 0.1
