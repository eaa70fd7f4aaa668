"""
Tests for the autodiff tape, the op set and the optimizers.
"""
import numpy as np
import pytest

from src.exceptions import (
    InfeasibleStartError,
    NonFiniteError,
    SecondOrderError,
    ShapeError,
    TapeError,
)
from src.numerics import (
    AdamHyper,
    AdamState,
    BoundBox,
    LbfgsbConfig,
    OptimizerStatus,
    Tape,
    adam_step,
    backward,
    gradient_node,
    lbfgsb_minimize,
)
from src.numerics import ops
from src.numerics.conv import conv2d, same_padding, upsample2x


def numeric_grad(fn, x, h=1e-5):
    """Central finite differences of a scalar function of an array."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[idx] = h
        grad[idx] = (fn(x + step) - fn(x - step)) / (2 * h)
    return grad


def replay(tape):
    """Recompute every node forward from the recorded leaves."""
    values = []
    for node in tape.nodes:
        if node.op is None:
            values.append(node.value.copy())
        else:
            values.append(np.asarray(node.op.forward(*[values[i] for i in node.inputs], **node.attrs)))
    return values


def rel_error(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return np.max(np.abs(a - b)) / scale


def test_square_gradient():
    """d(x^2)/dx at 3 is 6."""
    tape = Tape()
    x = tape.leaf(3.0)
    y = ops.square(x)
    assert backward(tape, y, [x])[x] == pytest.approx(6.0)


def test_product_gradient():
    """Product rule on x*y."""
    tape = Tape()
    x = tape.leaf(2.0)
    y = tape.leaf(5.0)
    grads = backward(tape, x * y, [x, y])
    assert grads[x] == pytest.approx(5.0)
    assert grads[y] == pytest.approx(2.0)


def test_fan_out_accumulates():
    """A node used twice receives both contributions."""
    tape = Tape()
    x = tape.leaf(1.5)
    y = x * x + ops.scale(x, 3.0)
    assert backward(tape, y, [x])[x] == pytest.approx(2 * 1.5 + 3.0)


def test_backward_rejects_non_scalar():
    """The output of backward must be scalar."""
    tape = Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(ShapeError):
        backward(tape, ops.square(x), [x])


def test_backward_rejects_foreign_leaf():
    """Leaves from another tape are rejected."""
    tape, other = Tape(), Tape()
    x = tape.leaf(2.0)
    stray = other.leaf(1.0)
    with pytest.raises(TapeError):
        backward(tape, ops.square(x), [stray])


def test_non_finite_value_trips():
    """log(0) produces -inf and is refused at record time."""
    tape = Tape()
    x = tape.leaf(np.zeros(2))
    with pytest.raises(NonFiniteError):
        ops.log(x)


def test_replay_reproduces_values():
    """Replaying from the leaves gives the recorded values exactly."""
    rng = np.random.default_rng(0)
    tape = Tape()
    x = tape.leaf(rng.normal(size=(3, 4)))
    w = tape.leaf(rng.normal(size=(4, 2)))
    y = ops.mean(ops.tanh(ops.matmul(x, w)))
    for recorded, replayed in zip((node.value for node in tape.nodes), replay(tape)):
        np.testing.assert_array_equal(recorded, replayed)
    assert y.index == len(tape) - 1


def _mlp_loss(params, x_value, tape=None):
    tape = tape or Tape()
    x = tape.constant(x_value)
    bound = {name: tape.leaf(value) for name, value in params.items()}
    h = x
    for layer in range(4):
        h = ops.add(ops.matmul(h, bound[f"w{layer}"]), bound[f"b{layer}"])
        if layer < 3:
            h = ops.tanh(h) if layer % 2 else ops.leaky_relu(h)
    return tape, bound, ops.mean(ops.square(h))


def test_mlp_gradients_match_finite_differences():
    """Four-layer MLP gradients agree with central differences."""
    rng = np.random.default_rng(1)
    widths = [5, 7, 6, 4, 1]
    params = {}
    for layer in range(4):
        params[f"w{layer}"] = rng.normal(scale=0.6, size=(widths[layer], widths[layer + 1]))
        params[f"b{layer}"] = rng.normal(scale=0.1, size=widths[layer + 1])
    x_value = rng.normal(size=(3, 5))
    tape, bound, loss = _mlp_loss(params, x_value)
    grads = backward(tape, loss, list(bound.values()))

    for name, value in params.items():
        def fn(v, name=name):
            trial = dict(params)
            trial[name] = v
            return float(_mlp_loss(trial, x_value)[2].value)

        assert rel_error(grads[bound[name]], numeric_grad(fn, value)) < 1e-4


@pytest.mark.parametrize("seed", range(100))
def test_random_graphs_match_finite_differences(seed):
    """Random compositions over the op set agree with central differences."""
    rng = np.random.default_rng(seed)
    unary = [ops.tanh, ops.sigmoid, ops.square, ops.leaky_relu, lambda v: ops.scale(v, 0.7)]
    choices = rng.integers(len(unary), size=4)
    a_value = rng.normal(size=(2, 3))
    w_value = rng.normal(size=(3, 3))

    def build(a_val, w_val):
        tape = Tape()
        a = tape.leaf(a_val)
        w = tape.leaf(w_val)
        h = ops.matmul(a, w)
        for choice in choices:
            h = unary[choice](h)
        h = ops.concat([h, ops.slice_(h, (slice(None), slice(0, 2)))], axis=1)
        return tape, a, w, ops.l2_norm(ops.add_const(h, 0.3))

    tape, a, w, out = build(a_value, w_value)
    grads = backward(tape, out, [a, w])
    assert rel_error(grads[a], numeric_grad(lambda v: float(build(v, w_value)[3].value), a_value)) < 1e-4
    assert rel_error(grads[w], numeric_grad(lambda v: float(build(a_value, v)[3].value), w_value)) < 1e-4


def test_first_order_ops_match_finite_differences():
    """log, exp, abs, log-sigmoid, log-softmax and reshape gradients."""
    rng = np.random.default_rng(7)
    x_value = rng.uniform(0.5, 1.5, size=(2, 3))

    def build(v):
        tape = Tape()
        x = tape.leaf(v)
        h = ops.add(ops.log(x), ops.exp(ops.scale(x, -0.5)))
        h = ops.add(h, ops.abs_(ops.add_const(x, -1.0)))
        h = ops.log_softmax(ops.add(h, ops.log_sigmoid(x)), axis=1)
        return tape, x, ops.sum_(ops.reshape(ops.square(h), (6,)))

    tape, x, out = build(x_value)
    grad = backward(tape, out, [x])[x]
    assert rel_error(grad, numeric_grad(lambda v: float(build(v)[2].value), x_value)) < 1e-4


def test_clip_subgradient():
    """Clip passes gradient inside the range and blocks it outside."""
    tape = Tape()
    x = tape.leaf(np.array([-2.0, 0.3, 2.0]))
    grad = backward(tape, ops.sum_(ops.clip(x, -1.0, 1.0)), [x])[x]
    np.testing.assert_array_equal(grad, [0.0, 1.0, 0.0])


def test_gradient_node_linear_map():
    """The gradient of w.x w.r.t. x is w."""
    tape = Tape()
    w = tape.leaf(np.array([[3.0], [4.0]]))
    x = tape.leaf(np.array([[0.2, -0.7]]))
    out = ops.sum_(ops.matmul(x, w))
    grad = gradient_node(tape, out, x)
    np.testing.assert_allclose(grad.value, [[3.0, 4.0]])


def _penalty(w_value):
    tape = Tape()
    w = tape.leaf(w_value)
    x = tape.leaf(np.array([[0.5, -1.0]]))
    out = ops.sum_(ops.matmul(x, w))
    grad = gradient_node(tape, out, x)
    norm = ops.l2_norm(grad, axis=1)
    penalty = ops.scale(ops.mean(ops.square(ops.add_const(norm, -1.0))), 10.0)
    return tape, w, penalty


def test_gradient_penalty_value():
    """w=(3,4) gives 10*(5-1)^2 = 160."""
    _, _, penalty = _penalty(np.array([[3.0], [4.0]]))
    assert float(penalty.value) == pytest.approx(160.0)


def test_gradient_penalty_parameter_gradient():
    """dP/dw through the gradient node matches finite differences."""
    w_value = np.array([[3.0], [4.0]])
    tape, w, penalty = _penalty(w_value)
    grad = backward(tape, penalty, [w])[w]
    expected = numeric_grad(lambda v: float(_penalty(v)[2].value), w_value)
    assert rel_error(grad, expected) < 1e-4
    # analytic: 20 * (|w| - 1) * w / |w|
    np.testing.assert_allclose(grad, 20 * 4 / 5 * w_value, rtol=1e-6)


def test_gradient_node_second_derivative_of_tanh_product():
    """Hessian-vector entries of tanh(a)*tanh(b) match the closed form."""
    a0, b0 = 0.4, -0.9
    tape = Tape()
    x = tape.leaf(np.array([a0, b0]))
    ta = ops.tanh(ops.slice_(x, (slice(0, 1),)))
    tb = ops.tanh(ops.slice_(x, (slice(1, 2),)))
    f = ops.sum_(ops.mul(ta, tb))
    grad = gradient_node(tape, f, x)
    # d/dx of first gradient component: [-2 tanh(a) sech^2(a) tanh(b), sech^2(a) sech^2(b)]
    first = ops.sum_(ops.slice_(grad, (slice(0, 1),)))
    hess_row = backward(tape, first, [x])[x]
    sech2 = lambda v: 1.0 - np.tanh(v) ** 2
    expected = [-2 * np.tanh(a0) * sech2(a0) * np.tanh(b0), sech2(a0) * sech2(b0)]
    np.testing.assert_allclose(hess_row, expected, rtol=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_node_matches_finite_differences(seed):
    """Second-order path on small MLP critics agrees with differences of first-order gradients."""
    rng = np.random.default_rng(100 + seed)
    w1_value = rng.normal(size=(3, 4))
    w2_value = rng.normal(size=(4, 1))
    x_value = rng.normal(size=(2, 3))

    def build(w1_val):
        tape = Tape()
        w1 = tape.leaf(w1_val)
        w2 = tape.leaf(w2_value)
        x = tape.leaf(x_value)
        h = ops.matmul(ops.tanh(ops.matmul(x, w1)), w2)
        grad = gradient_node(tape, ops.sum_(ops.sigmoid(h)), x)
        return tape, w1, ops.mean(ops.square(ops.add_const(ops.l2_norm(grad, axis=1), -1.0)))

    tape, w1, out = build(w1_value)
    grad = backward(tape, out, [w1])[w1]
    expected = numeric_grad(lambda v: float(build(v)[2].value), w1_value)
    assert rel_error(grad, expected) < 1e-3


def test_gradient_node_rejects_first_order_op():
    """log has no graph-building adjoint."""
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    out = ops.sum_(ops.log(x))
    with pytest.raises(SecondOrderError):
        gradient_node(tape, out, x)


def test_conv_and_upsample_gradients():
    """Strided 5x5 and 3x3 convolutions with upsampling match finite differences."""
    rng = np.random.default_rng(3)
    x_value = rng.normal(size=(2, 2, 6, 6))
    w1_value = rng.normal(scale=0.3, size=(3, 2, 5, 5))
    w2_value = rng.normal(scale=0.3, size=(2, 3, 3, 3))

    def build(x_val, w1_val):
        tape = Tape()
        x = tape.leaf(x_val)
        w1 = tape.leaf(w1_val)
        w2 = tape.constant(w2_value)
        h = conv2d(x, w1, tape.constant(np.full(3, 0.1)), stride=2)
        h = upsample2x(ops.leaky_relu(h))
        h = conv2d(h, w2, tape.constant(np.zeros(2)), stride=1)
        return tape, x, w1, ops.mean(ops.square(h))

    tape, x, w1, out = build(x_value, w1_value)
    grads = backward(tape, out, [x, w1])
    assert rel_error(grads[x], numeric_grad(lambda v: float(build(v, w1_value)[3].value), x_value)) < 1e-4
    assert rel_error(grads[w1], numeric_grad(lambda v: float(build(x_value, v)[3].value), w1_value)) < 1e-4


def test_same_padding_shapes():
    """Stride 2 halves (rounding up); stride 1 preserves size."""
    assert same_padding(32, 5, 2)[0] == 16
    assert same_padding(7, 3, 2)[0] == 4
    assert same_padding(16, 5, 1) == (16, 2, 2)


def test_conv_rejects_unsupported_kernel():
    """Only 3x3 and 5x5 kernels are accepted."""
    tape = Tape()
    x = tape.leaf(np.zeros((1, 1, 4, 4)))
    with pytest.raises(ShapeError):
        conv2d(x, tape.leaf(np.zeros((1, 1, 4, 4))), tape.leaf(np.zeros(1)))


def test_adam_first_step_magnitude():
    """The first bias-corrected step moves by lr against the gradient sign."""
    params = {"w": np.array([1.0])}
    state = AdamState.create(params, AdamHyper(lr=0.001, beta1=0.5, beta2=0.9))
    new, state = adam_step(params, {"w": np.array([2.0])}, state)
    assert new["w"][0] == pytest.approx(1.0 - 0.001, abs=1e-9)
    assert state.step_count == 1


def test_adam_zero_gradient_is_identity():
    """Zero gradients never move the parameters and moments decay geometrically."""
    params = {"w": np.array([0.5, -0.2])}
    state = AdamState.create(params, AdamHyper())
    for _ in range(3):
        params, state = adam_step(params, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(params["w"], [0.5, -0.2])

    # after one real step, zero gradients only shrink the moments
    _, state = adam_step(params, {"w": np.array([1.0, 1.0])}, state)
    first = state.first_moment["w"].copy()
    second = state.second_moment["w"].copy()
    for k in range(1, 4):
        params, state = adam_step(params, {"w": np.zeros(2)}, state)
        np.testing.assert_allclose(state.first_moment["w"], first * 0.5**k)
        np.testing.assert_allclose(state.second_moment["w"], second * 0.9**k)


def test_adam_learning_rate_decay():
    """lr halves once per decay boundary."""
    hyper = AdamHyper(lr=0.001, decay_factor=0.5, decay_epoch=30)
    assert hyper.lr_at(29) == pytest.approx(0.001)
    assert hyper.lr_at(30) == pytest.approx(0.0005)
    assert hyper.lr_at(65) == pytest.approx(0.00025)


def test_adam_rejects_bad_gradients():
    """Shape mismatches and NaN gradients raise."""
    params = {"w": np.zeros(2)}
    state = AdamState.create(params, AdamHyper())
    with pytest.raises(ShapeError):
        adam_step(params, {"w": np.zeros(3)}, state)
    with pytest.raises(NonFiniteError):
        adam_step(params, {"w": np.array([np.nan, 0.0])}, state)


def _quadratic(center):
    def objective(x):
        return float(np.sum((x - center) ** 2)), 2 * (x - center)

    return objective


def test_lbfgsb_active_bound():
    """Minimum of (x-3)^2 on [-1,1] sits at the upper bound."""
    result = lbfgsb_minimize(_quadratic(3.0), np.array([0.0]), BoundBox.uniform(1, -1, 1))
    assert result.x[0] == pytest.approx(1.0)
    assert result.status is OptimizerStatus.CONVERGED


def test_lbfgsb_interior_optimum():
    """Interior optimum found to 1e-8."""
    result = lbfgsb_minimize(_quadratic(0.5), np.array([-0.9]), BoundBox.uniform(1, -1, 1))
    assert abs(result.x[0] - 0.5) < 1e-8


def test_lbfgsb_matches_linear_solve():
    """A 5-dim SPD quadratic is minimized at A^-1 b."""
    rng = np.random.default_rng(11)
    m = rng.normal(size=(5, 5))
    a = m @ m.T + 5 * np.eye(5)
    b = rng.normal(size=5)

    def objective(x):
        return float(0.5 * x @ a @ x - b @ x), a @ x - b

    result = lbfgsb_minimize(
        objective, np.zeros(5), BoundBox.uniform(5, -100, 100), LbfgsbConfig(grad_tol=1e-10)
    )
    np.testing.assert_allclose(result.x, np.linalg.solve(a, b), atol=1e-6)


def test_lbfgsb_stays_feasible_and_monotone():
    """Evaluations stay inside the box and accepted values never increase."""
    bounds = BoundBox.uniform(3, -0.5, 0.5)
    visited = []

    def objective(x):
        visited.append(x.copy())
        return float(np.sum(np.cos(3 * x) + (x - 2) ** 2)), -3 * np.sin(3 * x) + 2 * (x - 2)

    result = lbfgsb_minimize(objective, np.array([0.1, -0.2, 0.0]), bounds)
    assert all(bounds.contains(x) for x in visited)
    assert np.all(np.diff(result.history) <= 1e-12)
    assert result.f <= result.f0


def test_lbfgsb_rejects_bad_start():
    """Infeasible and non-finite starts are refused."""
    with pytest.raises(InfeasibleStartError):
        lbfgsb_minimize(_quadratic(0.0), np.array([2.0]), BoundBox.uniform(1, -1, 1))
    with pytest.raises(NonFiniteError):
        lbfgsb_minimize(lambda x: (np.inf, x), np.array([0.0]), BoundBox.uniform(1, -1, 1))
