import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from noisyjoint import autodiff as ad
from noisyjoint.autodiff import Parameter, Tensor


def leaf(rng, *shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def weighted_sum(t, seed=99):
    # random weights so every output coordinate matters with a distinct factor
    w = np.random.default_rng(seed).standard_normal(t.shape)
    return ad.sum(t * Tensor(w))


# op name -> builder(rng) returning (inputs, f)
def _cases():
    def unary(fn, low=-1.0, high=1.0, shape=(3, 4)):
        def build(rng):
            x = leaf(rng, *shape, low=low, high=high)
            return [x], lambda: weighted_sum(fn(x))
        return build

    def binary(fn, sa=(3, 4), sb=(3, 4), low=-1.0):
        def build(rng):
            a, b = leaf(rng, *sa, low=low), leaf(rng, *sb, low=low)
            return [a, b], lambda: weighted_sum(fn(a, b))
        return build

    def linear(act):
        def build(rng):
            x, W, b = leaf(rng, 5, 3), leaf(rng, 3, 4), leaf(rng, 4)
            return [x, W, b], lambda: weighted_sum(ad.linear(x, W, b, act))
        return build

    def reparam(rng):
        mu, lv = leaf(rng, 4, 3), leaf(rng, 4, 3)
        # fixed draw per call: the op must be deterministic for the difference quotient
        return [mu, lv], lambda: weighted_sum(ad.gaussian_reparameterize(mu, lv, np.random.default_rng(3)))

    def concat_last(rng):
        a, b = leaf(rng, 3, 2), leaf(rng, 3, 4)
        return [a, b], lambda: weighted_sum(ad.concat_last_axis([a, b]))

    def concat_first(rng):
        a, b = leaf(rng, 2, 3), leaf(rng, 4, 3)
        return [a, b], lambda: weighted_sum(ad.concat_first_axis([a, b]))

    return {
        "matmul": binary(ad.matmul, (3, 4), (4, 2)),
        "linear": linear(None),
        "linear_relu": linear("relu"),
        "add": binary(ad.add),
        "add_broadcast": binary(ad.add, (3, 4), (4,)),
        "sub": binary(ad.sub, (3, 4), (1, 4)),
        "mul": binary(ad.mul),
        "div": binary(ad.div, low=0.5),
        "multiply_scalar": unary(lambda x: ad.multiply_scalar(x, -1.7)),
        "add_scalar": unary(lambda x: ad.add_scalar(x, 0.3)),
        "neg": unary(ad.neg),
        "relu": unary(ad.relu),
        "tanh": unary(ad.tanh),
        "exp": unary(ad.exp),
        "log": unary(ad.log, low=0.2, high=2.0),
        "square": unary(ad.square),
        "softmax_last_axis": unary(ad.softmax_last_axis),
        "elementwise_min_with_scalar": unary(lambda x: ad.elementwise_min_with_scalar(x, 0.1)),
        "elementwise_max_with_scalar": unary(lambda x: ad.elementwise_max_with_scalar(x, 0.1)),
        "clip": unary(lambda x: ad.clip(x, -0.5, 0.5)),
        "sum": unary(lambda x: ad.sum(x)),
        "sum_axis0": unary(lambda x: ad.sum(x, axis=0)),
        "mean": unary(lambda x: ad.mean(x)),
        "mean_axis1": unary(lambda x: ad.mean(x, axis=1)),
        "column": unary(lambda x: ad.column(x, 2)),
        "slice_last_axis": unary(lambda x: ad.slice_last_axis(x, 1, 3)),
        "slice_first_axis": unary(lambda x: ad.slice_first_axis(x, 1, 3)),
        "take_columns": unary(lambda x: ad.take_columns(x, [3, 0])),
        "reshape": unary(lambda x: ad.reshape(x, (2, 6))),
        "concat_last_axis": concat_last,
        "concat_first_axis": concat_first,
        "gaussian_reparameterize": reparam,
    }


CASES = _cases()


@pytest.mark.parametrize("op", sorted(CASES))
def test_op_gradient_matches_central_differences(op):
    inputs, f = CASES[op](np.random.default_rng(7))
    assert ad.grad_check(f, inputs, eps=1e-6) <= 1e-4


def test_every_dispatchable_op_has_a_gradient_case():
    assert set(ad._OPS) <= set(CASES)


def test_three_layer_network_gradients(rng):
    x = Tensor(rng.standard_normal((6, 5)))
    Ws = [leaf(rng, 5, 7), leaf(rng, 7, 7), leaf(rng, 7, 3)]
    bs = [leaf(rng, 7), leaf(rng, 7), leaf(rng, 3)]

    def f():
        h = ad.relu(ad.add(ad.matmul(x, Ws[0]), bs[0]))
        h = ad.tanh(ad.add(ad.matmul(h, Ws[1]), bs[1]))
        return ad.mean(ad.softmax_last_axis(ad.add(ad.matmul(h, Ws[2]), bs[2])) * Tensor(rng.random((6, 3))))

    # the mask above is redrawn per call, so freeze it first
    mask = Tensor(rng.random((6, 3)))

    def g():
        h = ad.relu(ad.add(ad.matmul(x, Ws[0]), bs[0]))
        h = ad.tanh(ad.add(ad.matmul(h, Ws[1]), bs[1]))
        return ad.mean(ad.softmax_last_axis(ad.add(ad.matmul(h, Ws[2]), bs[2])) * mask)

    with pytest.raises(ad.NondeterministicError):
        ad.grad_check(f, Ws + bs, eps=1e-5)
    assert ad.grad_check(g, Ws + bs, eps=1e-5) <= 1e-4


# --------------------------------------------------------------- examples

def test_matmul_identity(rng):
    A = rng.standard_normal((3, 3))
    np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(3)), Tensor(A)).data, A)


def test_softmax_of_zeros_is_uniform():
    np.testing.assert_allclose(ad.softmax_last_axis(Tensor(np.zeros(4))).data, [0.25] * 4, rtol=0, atol=1e-15)


def test_reparameterize_with_zero_variance_returns_mean(rng):
    mu = rng.standard_normal((5, 3))
    out = ad.gaussian_reparameterize(Tensor(mu), Tensor(np.full((5, 3), -np.inf)), rng)
    np.testing.assert_array_equal(out.data, mu)


def test_reparameterize_draws_standard_normal():
    out = ad.gaussian_reparameterize(Tensor(np.full(200_000, 2.0)), Tensor(np.full(200_000, np.log(9.0))),
                                     np.random.default_rng(0))
    assert abs(out.data.mean() - 2.0) < 0.03
    assert abs(out.data.std() - 3.0) < 0.03


def test_reparameterize_grads_reach_mu_and_logvar(rng):
    mu, lv = leaf(rng, 4, 2), leaf(rng, 4, 2)
    ad.backward(ad.sum(ad.square(ad.gaussian_reparameterize(mu, lv, rng))))
    assert np.all(mu.grad != 0) and np.all(lv.grad != 0)


def test_forward_op_dispatch(rng):
    a, b = Tensor(rng.standard_normal((2, 3))), Tensor(rng.standard_normal((3, 2)))
    np.testing.assert_array_equal(ad.forward_op("matmul", a, b).data, a.data @ b.data)
    with pytest.raises(ValueError, match="unknown op"):
        ad.forward_op("conv2d", a)


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ad.ShapeError) as exc:
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    assert exc.value.op == "matmul"
    assert "(2, 3) and (2, 3)" in str(exc.value)
    with pytest.raises(ad.ShapeError, match="add"):
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))


def test_backward_of_sum_is_ones(rng):
    x = leaf(rng, 3, 2)
    ad.backward(ad.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 2)))


def test_relu_dead_and_live_units():
    x = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
    ad.backward(ad.mean(ad.relu(x)))
    np.testing.assert_array_equal(x.grad, [0.0, 0.5])


def test_min_with_scalar_kink_has_zero_grad():
    x = Tensor(np.array([-1.0, 0.0, 1.0]), requires_grad=True)
    ad.backward(ad.sum(ad.elementwise_min_with_scalar(x, 0.0)))
    np.testing.assert_array_equal(x.grad, [1.0, 0.0, 0.0])


def test_backward_requires_scalar(rng):
    with pytest.raises(ad.ShapeError):
        ad.backward(leaf(rng, 3) * 2.0)


def test_backward_twice_raises(rng):
    x = leaf(rng, 3)
    loss = ad.sum(ad.square(x))
    ad.backward(loss)
    with pytest.raises(ad.GraphFreedError):
        ad.backward(loss)


def test_leaf_grads_accumulate_across_backward_calls(rng):
    x = leaf(rng, 3)
    ad.backward(ad.sum(x))
    ad.backward(ad.sum(x))
    np.testing.assert_array_equal(x.grad, [2.0, 2.0, 2.0])


def test_no_grad_records_nothing(rng):
    x = leaf(rng, 3)
    with ad.no_grad():
        y = ad.sum(ad.square(x))
    assert not y.requires_grad


def test_frozen_parent_gets_no_grad(rng):
    a, b = leaf(rng, 2, 2), leaf(rng, 2, 2)
    b.requires_grad = False
    loss = ad.sum(ad.matmul(a, b))
    b.requires_grad = True  # toggling after the forward pass does not reroute
    ad.backward(loss)
    assert a.grad is not None and b.grad is None


def test_nonfinite_gradient_detected():
    x = Tensor(np.array([0.0, 1.0]), requires_grad=True)
    with np.errstate(divide="ignore"), pytest.raises(ad.NonFiniteError):
        ad.backward(ad.sum(ad.log(x)))


# --------------------------------------------------------------- adam

def test_adam_first_step_moves_by_lr():
    p = Parameter(Tensor(np.array([0.0])), name="p")
    p.tensor.grad = np.array([1.0])
    ad.adam_step([p], lr=0.1)
    np.testing.assert_allclose(p.data, [-0.1], rtol=1e-7)
    assert p.step_count == 1 and p.grad is None


def test_adam_zero_grad_leaves_param():
    p = Parameter(Tensor(np.array([1.5, -2.0])), name="p")
    p.tensor.grad = np.zeros(2)
    ad.adam_step([p], lr=0.1)
    np.testing.assert_array_equal(p.data, [1.5, -2.0])


def test_adam_minimises_quadratic():
    p = Parameter(Tensor(np.array([0.0])), name="p")
    for _ in range(200):
        ad.backward(ad.sum(ad.square(ad.add_scalar(p.tensor, -3.0))))
        ad.adam_step([p], lr=0.1)
    assert abs(p.data[0] - 3.0) < 1e-2
    assert p.step_count == 200


def test_adam_matches_textbook_formula(rng):
    # independent oracle: the update written out with plain floats
    p0, grads = 0.7, rng.standard_normal(5)
    b1, b2, lr, eps = 0.9, 0.999, 0.01, 1e-8
    p = Parameter(Tensor(np.array([p0])), name="p")
    m = v = 0.0
    ref = p0
    for t, g in enumerate(grads, start=1):
        p.tensor.grad = np.array([g])
        ad.adam_step([p], lr, b1, b2, eps)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    assert abs(p.data[0] - ref) < 1e-12


def test_adam_missing_grad_lists_names():
    a = Parameter(Tensor(np.zeros(2)), name="enc.W")
    b = Parameter(Tensor(np.zeros(2)), name="enc.b")
    a.tensor.grad = np.ones(2)
    with pytest.raises(ValueError, match="enc.b"):
        ad.adam_step([a, b], lr=0.1)


def test_parameter_moment_shapes():
    p = Parameter(Tensor(np.zeros((3, 4))), name="w")
    assert p.adam_m.shape == p.adam_v.shape == (3, 4)


# --------------------------------------------------------------- grad_check

def test_grad_check_sum_is_exact(rng):
    x = leaf(rng, 4, 3)
    assert ad.grad_check(lambda: ad.sum(x), x) <= 1e-10


def test_grad_check_eps_range(rng):
    x = leaf(rng, 2)
    with pytest.raises(ValueError):
        ad.grad_check(lambda: ad.sum(x), x, eps=1e-2)


def test_grad_check_flags_nondeterminism(rng):
    x = leaf(rng, 3)
    draws = np.random.default_rng(0)
    with pytest.raises(ad.NondeterministicError):
        ad.grad_check(lambda: ad.sum(x * Tensor(draws.random(3))), x)


# --------------------------------------------------------------- properties

finite = st.floats(-30, 30, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6), elements=finite))
def test_softmax_rows_are_distributions(a):
    out = ad.softmax_last_axis(Tensor(a)).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=finite))
def test_shared_subexpression_accumulates(a):
    x1 = Tensor(a.copy(), requires_grad=True)
    ad.backward(ad.sum(ad.tanh(x1)))
    x2 = Tensor(a.copy(), requires_grad=True)
    t = ad.tanh(x2)
    ad.backward(ad.add(ad.sum(t), ad.sum(t)))
    np.testing.assert_array_equal(x2.grad, 2 * x1.grad)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))
def test_random_linear_relu_gradients(seed, m, n, k):
    r = np.random.default_rng(seed)
    x, W, b = leaf(r, m, n), leaf(r, n, k), leaf(r, k)
    w = Tensor(r.standard_normal((m, k)))
    f = lambda: ad.sum(ad.linear(x, W, b, "relu") * w)
    # keep away from the ReLU kink so central differences are valid
    pre = x.data @ W.data + b.data
    if np.min(np.abs(pre)) < 1e-3:
        return
    assert ad.grad_check(f, [x, W, b], eps=1e-6) <= 1e-4
