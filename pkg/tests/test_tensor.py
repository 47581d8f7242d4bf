import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ordernet import tensor as T
from ordernet.tensor import Tensor

from conftest import numeric_grad, rel_error


def param(a):
    return Tensor(np.asarray(a), requires_grad=True)


def check_grads(build, arrays, tol=1e-4):
    """``build(*tensors) -> scalar Tensor``; compare backward with central differences."""
    tensors = [param(a) for a in arrays]
    build(*tensors).backward()
    analytic = [t.grad for t in tensors]

    def value():
        with T.no_grad():
            return build(*[Tensor(t.data) for t in tensors]).item()

    numeric = numeric_grad(value, [t.data for t in tensors])
    for a, n in zip(analytic, numeric):
        assert rel_error(a, n) <= tol


def weighted_sum(out, seed=0):
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return (out * Tensor(w)).sum()


# -- pointwise_linear -----------------------------------------------------


def test_pointwise_linear_identity():
    out = T.pointwise_linear(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
    np.testing.assert_array_equal(out.data, [[1, 2]])


def test_pointwise_linear_sum():
    out = T.pointwise_linear(Tensor([[1.0, 1.0]]), Tensor([[2.0], [3.0]]), Tensor([1.0]))
    np.testing.assert_array_equal(out.data, [[6]])


def test_pointwise_linear_matches_loops(rng):
    x = rng.standard_normal((3, 4, 5)).astype(np.float32)
    w = rng.standard_normal((5, 6)).astype(np.float32)
    b = rng.standard_normal(6).astype(np.float32)
    ref = np.zeros((3, 4, 6))
    for i in range(3):
        for j in range(4):
            for c in range(6):
                ref[i, j, c] = sum(float(x[i, j, k]) * float(w[k, c]) for k in range(5)) + b[c]
    out = T.pointwise_linear(Tensor(x), Tensor(w), Tensor(b))
    np.testing.assert_allclose(out.data, ref, atol=1e-6 * 10)


def test_pointwise_linear_shape_error():
    with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        T.pointwise_linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), Tensor(np.ones(2)))


def test_pointwise_linear_grad(f64, rng):
    check_grads(lambda x, w, b: weighted_sum(T.pointwise_linear(x, w, b)),
                [rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5)), rng.standard_normal(5)])


# -- causal_conv_1x3 ------------------------------------------------------


def _delta_kernel(tap):
    k = np.zeros((3, 1, 1))
    k[tap, 0, 0] = 1.0
    return Tensor(k)


def test_causal_conv_identity_tap(rng):
    x = rng.standard_normal((2, 5, 1)).astype(np.float32)
    out = T.causal_conv_1x3(Tensor(x), _delta_kernel(2), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x)


def test_causal_conv_shift_tap(rng):
    x = rng.standard_normal((2, 5, 1)).astype(np.float32)
    out = T.causal_conv_1x3(Tensor(x), _delta_kernel(1), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data[:, 0], 0)
    np.testing.assert_array_equal(out.data[:, 1:], x[:, :-1])


def test_causal_conv_matches_padded_loop(rng):
    x = rng.standard_normal((3, 6, 4))
    k = rng.standard_normal((3, 4, 2))
    b = rng.standard_normal(2)
    padded = np.concatenate([np.zeros((3, 2, 4)), x], axis=1)
    ref = np.zeros((3, 6, 2))
    for i in range(3):
        for t in range(6):
            ref[i, t] = padded[i, t] @ k[0] + padded[i, t + 1] @ k[1] + padded[i, t + 2] @ k[2] + b
    with T.precision("float64"):
        out = T.causal_conv_1x3(Tensor(x), Tensor(k), Tensor(b))
    np.testing.assert_allclose(out.data, ref, atol=1e-12)


def test_causal_conv_is_causal(rng):
    x = rng.standard_normal((4, 7, 3)).astype(np.float32)
    k = Tensor(rng.standard_normal((3, 3, 5)))
    b = Tensor(rng.standard_normal(5))
    for t0 in range(7):
        y = x.copy()
        y[2, t0:] += rng.standard_normal((7 - t0, 3)).astype(np.float32)
        a = T.causal_conv_1x3(Tensor(x), k, b).data
        c = T.causal_conv_1x3(Tensor(y), k, b).data
        np.testing.assert_array_equal(a[:, :t0], c[:, :t0])


@pytest.mark.parametrize("steps", [1, 2, 5])
def test_causal_conv_grad(f64, rng, steps):
    check_grads(lambda x, k, b: weighted_sum(T.causal_conv_1x3(x, k, b)),
                [rng.standard_normal((2, steps, 3)), rng.standard_normal((3, 3, 2)), rng.standard_normal(2)])


def test_causal_conv_rejects_wide_kernel():
    with pytest.raises(T.ShapeError):
        T.causal_conv_1x3(Tensor(np.ones((1, 4, 2))), Tensor(np.ones((5, 2, 2))), Tensor(np.ones(2)))


# -- batch norm -----------------------------------------------------------


def _bn_params(c, rng=None):
    if rng is None:
        return Tensor(np.ones(c)), Tensor(np.zeros(c))
    return Tensor(rng.standard_normal(c)), Tensor(rng.standard_normal(c))


def test_batch_norm_constant_input_gives_shift():
    state = T.BatchNormState.fresh(3)
    shift = Tensor([0.5, -1.0, 2.0])
    out = T.batch_norm(Tensor(np.full((4, 5, 3), 7.0)), Tensor(np.full(3, 3.0)), shift, state, training=True)
    np.testing.assert_allclose(out.data, np.broadcast_to(shift.data, (4, 5, 3)), atol=1e-6)


def test_batch_norm_standardises(rng):
    x = rng.normal(5.0, 2.0, size=(64, 8, 2))
    with T.precision("float64"):
        out = T.batch_norm(Tensor(x), *_bn_params(2), T.BatchNormState.fresh(2), training=True).data
    flat = out.reshape(-1, 2)
    np.testing.assert_allclose(flat.mean(axis=0), 0, atol=1e-4)
    np.testing.assert_allclose(flat.std(axis=0), 1, atol=1e-4)


def test_batch_norm_eval_is_affine(rng):
    state = T.BatchNormState(rng.standard_normal(3), rng.random(3) + 0.5)
    gamma, beta = _bn_params(3, rng)
    f = lambda a: T.batch_norm(Tensor(a), gamma, beta, state, training=False).data.astype(np.float64)
    a, b = rng.standard_normal((2, 5, 3)), rng.standard_normal((2, 5, 3))
    origin = f(np.zeros((2, 5, 3)))
    np.testing.assert_allclose(f(a + b) - origin, (f(a) - origin) + (f(b) - origin), atol=1e-5)
    np.testing.assert_allclose(f(2 * a) - origin, 2 * (f(a) - origin), atol=1e-5)


def test_batch_norm_eval_before_training_uses_identity_stats(rng):
    x = rng.standard_normal((3, 4, 2)).astype(np.float32)
    out = T.batch_norm(Tensor(x), *_bn_params(2), T.BatchNormState.fresh(2), training=False)
    np.testing.assert_allclose(out.data, x / np.sqrt(1 + 1e-5), rtol=1e-6)


def test_batch_norm_running_stats_momentum(rng):
    x = rng.normal(3.0, 2.0, size=(50, 4))
    state = T.BatchNormState.fresh(4)
    with T.precision("float64"):
        T.batch_norm(Tensor(x), *_bn_params(4), state, training=True)
    np.testing.assert_allclose(state.mean, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(state.var, 0.9 + 0.1 * x.var(axis=0, ddof=1))


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_grad(f64, rng, training):
    state = T.BatchNormState(rng.standard_normal(3), rng.random(3) + 0.5)
    check_grads(lambda x, g, b: weighted_sum(T.batch_norm(x, g, b, state, training)),
                [rng.standard_normal((4, 5, 3)), rng.standard_normal(3), rng.standard_normal(3)])


@pytest.mark.parametrize("training", [True, False])
@pytest.mark.parametrize("precision", ["float32", "float64"])
def test_fused_relu_bn_matches_composition(rng, training, precision):
    x = rng.standard_normal((6, 7, 5))
    gamma, beta = rng.standard_normal(5), rng.standard_normal(5)
    g = rng.standard_normal((6, 7, 5))
    results = []
    with T.precision(precision):
        for fused in (True, False):
            state = T.BatchNormState(np.full(5, 0.3), np.full(5, 1.7))
            xt, gt, bt = param(x), param(gamma), param(beta)
            if fused:
                out = T.relu_batch_norm(xt, gt, bt, state, training)
            else:
                out = T.batch_norm(T.relu(xt), gt, bt, state, training)
            (out * Tensor(g)).sum().backward()
            results.append((out.data, xt.grad, gt.grad, bt.grad, state.mean, state.var))
    tol = 1e-4 if precision == "float32" else 1e-10
    for a, b in zip(*results):
        np.testing.assert_allclose(a, b, atol=tol, rtol=tol)


def test_fused_relu_bn_grad(f64, rng):
    state = T.BatchNormState.fresh(3)
    check_grads(lambda x, g, b: weighted_sum(T.relu_batch_norm(x, g, b, state, True)),
                [rng.standard_normal((4, 6, 3)), rng.standard_normal(3), rng.standard_normal(3)])


# -- pooling --------------------------------------------------------------


def test_max_pool_value():
    assert T.pool_over_axis(Tensor([1.0, 5.0, 3.0]), axis=0, kind="max").item() == 5


def test_avg_pool_with_mask():
    out = T.pool_over_axis(Tensor([1.0, 5.0, 3.0]), axis=0, kind="avg", exclude_mask=np.array([False, True, False]))
    assert out.item() == 2


def test_max_pool_gradient_goes_to_argmax(f64):
    x = param([1.0, 5.0, 3.0])
    T.pool_over_axis(x, axis=0, kind="max").backward()
    np.testing.assert_array_equal(x.grad, [0, 1, 0])
    numeric = numeric_grad(lambda: float(np.max(x.data)), [x.data])[0]
    np.testing.assert_allclose(x.grad, numeric, atol=1e-8)


def test_max_pool_ties_route_to_first():
    x = param([2.0, 7.0, 7.0, 1.0])
    T.pool_over_axis(x, axis=0, kind="max").backward()
    np.testing.assert_array_equal(x.grad, [0, 1, 0, 0])


def test_fully_masked_fiber_raises():
    with pytest.raises(T.DegeneratePoolError):
        T.pool_over_axis(Tensor(np.ones((2, 3))), axis=1, kind="avg", exclude_mask=np.array([[False] * 3, [True] * 3]))


@pytest.mark.parametrize("kind", ["max", "avg"])
def test_pool_grads(f64, rng, kind):
    mask = np.zeros((1, 5, 1), dtype=bool)
    mask[0, 2] = True
    check_grads(lambda x: weighted_sum(T.pool_over_axis(x, axis=1, kind=kind, exclude_mask=mask)),
                [rng.standard_normal((3, 5, 4))])


# -- plumbing ops ---------------------------------------------------------


def test_relu_values():
    np.testing.assert_array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])


def test_zero_diagonal_exact_cells(rng):
    z = rng.standard_normal((2, 2, 3)).astype(np.float32) + 10
    out = T.zero_diagonal(Tensor(z)).data
    np.testing.assert_array_equal(out[0, 0], 0)
    np.testing.assert_array_equal(out[1, 1], 0)
    np.testing.assert_array_equal(out[0, 1], z[0, 1])
    np.testing.assert_array_equal(out[1, 0], z[1, 0])


def test_zero_diagonal_blocks_gradient(rng):
    z = param(rng.standard_normal((3, 3, 2)))
    T.zero_diagonal(z).sum().backward()
    for i in range(3):
        np.testing.assert_array_equal(z.grad[i, i], 0)
    assert z.grad.sum() == 12


def test_gather_rows_composition(rng):
    x = rng.standard_normal((3, 2)).astype(np.float32)
    out = T.gather_rows(T.gather_rows(Tensor(x), [2, 0]), [1, 0]).data
    np.testing.assert_array_equal(out, x[[2, 0]][[1, 0]])
    np.testing.assert_array_equal(out, x[[0, 2]])


def test_gather_rows_out_of_range_names_index_and_extent():
    with pytest.raises(IndexError, match="index 5 .* extent 3"):
        T.gather_rows(Tensor(np.ones((3, 2))), [0, 5])


def test_gather_rows_scatters_gradient():
    x = param(np.arange(6.0).reshape(3, 2))
    T.gather_rows(x, [2, 2, 0]).sum().backward()
    np.testing.assert_array_equal(x.grad, [[1, 1], [0, 0], [2, 2]])


def test_batched_gather(f64, rng):
    idx = np.array([[1, 0], [2, 2]])
    check_grads(lambda x: weighted_sum(T.gather_rows(x, idx)), [rng.standard_normal((2, 3, 4))])


def test_broadcast_and_concat_grads(f64, rng):
    check_grads(lambda a, b: weighted_sum(T.concat_last_axis([T.broadcast_over_axis(a, 1, 4), b])),
                [rng.standard_normal((2, 1, 3)), rng.standard_normal((2, 4, 5))])


def test_pair_tensor_definition():
    a, b = [1.0, 2.0], [3.0, 4.0]
    z = T.pair_tensor(Tensor([a, b])).data
    np.testing.assert_array_equal(z, [[a + a, a + b], [b + a, b + b]])


def test_pair_tensor_shape_and_equivariance(rng):
    x = rng.random((128, 20, 2)).astype(np.float32)
    z = T.pair_tensor(Tensor(x)).data
    assert z.shape == (128, 20, 20, 4)
    perm = rng.permutation(20)
    np.testing.assert_array_equal(T.pair_tensor(Tensor(x[:, perm])).data, z[:, perm][:, :, perm])


def test_pair_linear_equals_pair_tensor_then_linear(f64, rng):
    x, w, b = rng.standard_normal((2, 5, 3)), rng.standard_normal((6, 4)), rng.standard_normal(4)
    fused = T.pair_linear(Tensor(x), Tensor(w), Tensor(b)).data
    plain = T.pointwise_linear(T.pair_tensor(Tensor(x)), Tensor(w), Tensor(b)).data
    np.testing.assert_allclose(fused, plain, atol=1e-12)
    check_grads(lambda x, w, b: weighted_sum(T.pair_linear(x, w, b)), [x, w, b])


# -- cross entropy --------------------------------------------------------


def test_uniform_logits_loss_is_log_i():
    loss = T.masked_softmax_cross_entropy(Tensor(np.zeros((3, 4))), [0, 3, 1])
    assert math.isclose(loss.item(), math.log(4), rel_tol=1e-6)


def test_saturated_softmax_loss():
    with T.precision("float64"):
        logits = np.full((1, 4), -20.0)
        logits[0, 2] = 20.0
        assert T.masked_softmax_cross_entropy(Tensor(logits), [2]).item() < 1e-8


def test_cross_entropy_gradient_identity(f64, rng):
    logits = rng.standard_normal((3, 5))
    target = np.array([4, 0, 2])
    x = param(logits)
    T.masked_softmax_cross_entropy(x, target).backward()
    soft = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(x.grad, (soft - np.eye(5)[target]) / 3, atol=1e-12)
    check_grads(lambda z: T.masked_softmax_cross_entropy(z, target), [logits])


def test_cross_entropy_mask(f64, rng):
    logits = rng.standard_normal((2, 4))
    mask = np.array([[False, True, False, False], [True, True, False, False]])
    loss = T.masked_softmax_cross_entropy(Tensor(logits), [0, 3], mask).item()
    ref = 0.0
    for t, tgt in enumerate([0, 3]):
        keep = ~mask[t]
        ref -= logits[t, tgt] - np.log(np.exp(logits[t, keep]).sum())
    assert math.isclose(loss, ref / 2, rel_tol=1e-12)
    check_grads(lambda z: T.masked_softmax_cross_entropy(z, [0, 3], mask), [logits])


def test_cross_entropy_masked_target_is_violation():
    with pytest.raises(ValueError, match="masked"):
        T.masked_softmax_cross_entropy(Tensor(np.zeros((1, 3))), [1], np.array([[False, True, False]]))


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (3, 6), elements=st.floats(-30, 30)), st.floats(-100, 100))
def test_cross_entropy_shift_invariant(logits, shift):
    target = [0, 5, 2]
    with T.precision("float64"):
        a = T.masked_softmax_cross_entropy(Tensor(logits), target).item()
        b = T.masked_softmax_cross_entropy(Tensor(logits + shift), target).item()
    assert abs(a - b) < 1e-6


# -- backward -------------------------------------------------------------


def test_backward_sum_gives_ones():
    x = param([1.0, 2.0, 3.0])
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, [1, 1, 1])


def test_backward_square():
    x = param([1.0, 2.0])
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2, 4])


def test_backward_accumulates_without_zeroing():
    x = param([1.0, 2.0])
    (x * x).sum().backward()
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [4, 8])


def test_backward_rejects_non_scalar():
    with pytest.raises(T.ShapeError):
        (param([1.0, 2.0]) * 2.0).backward()


def test_default_precision_is_float32():
    assert Tensor([1.0]).data.dtype == np.float32
    with T.precision("float64"):
        assert Tensor([1.0]).data.dtype == np.float64


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_composed_ops_deterministic(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 4, 4, 3)).astype(np.float32)

    def run():
        z = T.zero_diagonal(Tensor(x))
        return T.gather_rows(T.pool_over_axis(z, axis=2, kind="max"), np.array([[3, 0], [1, 1]])).data

    np.testing.assert_array_equal(run(), run())


# -- Adam -----------------------------------------------------------------


def test_adam_first_step_magnitude():
    store = T.ParamStore()
    w = store.add("w", np.array([1.0, -2.0, 0.5]))
    w.grad = np.array([0.3, -4.0, 1e-3], dtype=np.float32)
    before = w.data.copy()
    state = T.AdamState(lr=0.01)
    T.adam_step(store, state)
    np.testing.assert_allclose(before - w.data, 0.01 * np.sign([0.3, -4.0, 1e-3]), rtol=1e-4)
    assert w.grad is None and state.step == 1


def test_adam_zero_gradient_no_change():
    store = T.ParamStore()
    w = store.add("w", np.array([1.0, 2.0]))
    w.grad = np.zeros(2, dtype=np.float32)
    T.adam_step(store, T.AdamState())
    np.testing.assert_array_equal(w.data, [1, 2])


def test_adam_missing_gradient_names_parameter():
    store = T.ParamStore()
    store.add("alpha", np.ones(2)).grad = np.ones(2, dtype=np.float32)
    store.add("beta", np.ones(2))
    with pytest.raises(ValueError, match="beta"):
        T.adam_step(store, T.AdamState())


def test_adam_converges_on_quadratic(f64):
    target = np.array([0.5, -1.5, 3.0])
    store = T.ParamStore()
    w = store.add("w", np.zeros(3))
    state = T.AdamState(lr=0.1)
    for _ in range(200):
        diff = w - Tensor(target)
        (diff * diff).sum().backward()
        T.adam_step(store, state)
    np.testing.assert_allclose(w.data, target, atol=1e-3)
    assert state.step == 200


def test_param_store_rejects_duplicates():
    store = T.ParamStore()
    store.add("a", np.ones(2))
    with pytest.raises(KeyError):
        store.add("a", np.ones(2))
    assert list(store) == ["a"] and store.count() == 2
