import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mperl import diffcore as dc
from mperl.diffcore import Adam, AdamState, Tensor, adam_step, special
from mperl.errors import ContractError, DimensionError, DomainError

from gradcheck import check_gradients, numeric_grad


def test_relu_values():
    assert dc.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]


def test_sigmoid_at_zero():
    assert dc.sigmoid(Tensor([0.0])).data.tolist() == [0.5]


def test_sigmoid_extremes_are_finite():
    out = dc.sigmoid(Tensor([-800.0, 800.0])).data
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(0.0) and out[1] == pytest.approx(1.0)


def test_digamma_one_is_minus_euler_gamma():
    expected = float(mpmath.digamma(1))
    assert expected == pytest.approx(-0.5772156649, abs=1e-10)
    assert special.digamma([1.0])[0] == pytest.approx(expected, abs=1e-13)


@pytest.mark.parametrize("x", [0.01, 0.3, 0.5, 1.0, 1.5, 2.0, 3.7, 9.99, 10.0, 25.0, 50.0, 1e3, 1e6])
def test_special_functions_match_mpmath(x):
    assert special.lgamma([x])[0] == pytest.approx(float(mpmath.loggamma(x)), rel=1e-12, abs=1e-13)
    assert special.digamma([x])[0] == pytest.approx(float(mpmath.digamma(x)), rel=1e-12, abs=1e-13)
    assert special.trigamma([x])[0] == pytest.approx(float(mpmath.polygamma(1, x)), rel=1e-11)


def test_digamma_is_derivative_of_lgamma():
    xs = np.linspace(0.5, 50.0, 400)
    h = 1e-5
    fd = (special.lgamma(xs + h) - special.lgamma(xs - h)) / (2 * h)
    psi = special.digamma(xs)
    assert np.max(np.abs(fd - psi) / np.maximum(np.abs(psi), 1e-3)) < 1e-5


def test_trigamma_is_derivative_of_digamma():
    xs = np.linspace(0.5, 50.0, 200)
    h = 1e-5
    fd = (special.digamma(xs + h) - special.digamma(xs - h)) / (2 * h)
    assert np.max(np.abs(fd - special.trigamma(xs)) / special.trigamma(xs)) < 1e-6


def test_domain_errors():
    with pytest.raises(DomainError):
        dc.log(Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        dc.lgamma(Tensor([-1.0]))
    with pytest.raises(DomainError):
        special.digamma([0.0])


def test_shape_errors():
    with pytest.raises(DimensionError):
        dc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(DimensionError):
        dc.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
    with pytest.raises(DimensionError):
        dc.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)


def test_backward_square():
    w = Tensor([3.0], requires_grad=True)
    dc.sum_(w * w).backward()
    assert w.grad.tolist() == [6.0]


def test_backward_sigmoid_slope():
    z = Tensor([0.0], requires_grad=True)
    c = 4.0
    dc.sum_(dc.sigmoid(z) * c).backward()
    assert z.grad[0] == pytest.approx(0.25 * c)


def test_backward_requires_scalar():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        dc.backward(w * 2.0)


def test_gradient_accumulation_is_additive():
    rng = np.random.default_rng(0)
    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    x = Tensor(rng.normal(size=(4, 3)))
    loss = dc.sum_(dc.sigmoid(x @ w))
    loss.backward()
    once = w.grad.copy()
    loss.backward()
    np.testing.assert_array_equal(w.grad, 2 * once)


def test_backward_returns_gradient_map():
    w = Tensor([2.0], requires_grad=True)
    grads = dc.backward(dc.sum_(w * w * w))
    assert grads[w][0] == pytest.approx(12.0)


def test_tape_replay_is_deterministic():
    def run():
        rng = np.random.default_rng(5)
        w = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
        x = Tensor(rng.normal(size=(10, 6)))
        loss = dc.mean(dc.log(dc.sigmoid(x @ w) + 1.0))
        loss.backward()
        return loss.item(), w.grad.tobytes()

    assert run() == run()


# -- finite-difference checks, one per primitive --------------------------------
RNG = np.random.default_rng(1234)


def _param(*shape, low=-1.0, high=1.0):
    return Tensor(RNG.uniform(low, high, size=shape), requires_grad=True)


def _cases():
    a = _param(3, 4)
    b = _param(3, 4)
    col = _param(3, 1)
    m = _param(4, 2)
    pos = _param(3, 4, low=0.6, high=4.0)
    pos2 = _param(3, 4, low=0.6, high=4.0)
    probs = _param(2, 5, low=0.1, high=0.9)
    weights = Tensor(RNG.normal(size=(3, 4)))
    idx = np.array([2, 0, 2, 1])
    return {
        "add": (lambda: dc.sum_((a + b) * weights), [a, b]),
        "add_broadcast": (lambda: dc.sum_((a + col) * weights), [a, col]),
        "sub": (lambda: dc.sum_((a - col) * weights), [a, col]),
        "mul": (lambda: dc.sum_(a * b * weights), [a, b]),
        "div": (lambda: dc.sum_(a / pos * weights), [a, pos]),
        "matmul": (lambda: dc.sum_(dc.sigmoid(a @ m)), [a, m]),
        "relu": (lambda: dc.sum_(dc.relu(a) * weights), [a]),
        "sigmoid": (lambda: dc.sum_(dc.sigmoid(a) * weights), [a]),
        "log": (lambda: dc.sum_(dc.log(pos) * weights), [pos]),
        "exp": (lambda: dc.sum_(dc.exp(a) * weights), [a]),
        "lgamma": (lambda: dc.sum_(dc.lgamma(pos2) * weights), [pos2]),
        "digamma": (lambda: dc.sum_(dc.digamma(pos2) * weights), [pos2]),
        "clamp": (lambda: dc.sum_(dc.clamp(probs, 0.2, 0.8) * 3.0), [probs]),
        "softmax": (lambda: dc.sum_(dc.softmax(a, axis=1) * weights), [a]),
        "log_softmax": (lambda: dc.sum_(dc.log_softmax(a, axis=1) * weights), [a]),
        "sum_axis": (lambda: dc.sum_(dc.sigmoid(dc.sum_(a, axis=1, keepdims=True)) * col), [a, col]),
        "mean": (lambda: dc.mean(dc.sigmoid(a) * b, axis=0).sum(), [a, b]),
        "reshape_transpose": (lambda: dc.sum_(dc.transpose(dc.reshape(a, (4, 3))) * weights), [a]),
        "concat": (lambda: dc.sum_(dc.sigmoid(dc.concat([a, col], axis=1))), [a, col]),
        "take_rows": (lambda: dc.sum_(dc.sigmoid(dc.take_rows(a, idx))), [a]),
    }


@pytest.mark.parametrize("name", sorted(_cases()))
def test_primitive_gradients_match_finite_differences(name):
    fn, params = _cases()[name]
    assert check_gradients(fn, params) < 1e-4


def test_relational_primitives_gradients():
    rng = np.random.default_rng(7)
    n, R, B, d = 6, 3, 2, 3
    edges = (rng.integers(0, n, 14), rng.integers(0, n, 14), rng.integers(0, R, 14), rng.uniform(0.2, 1.0, 14))
    table = Tensor(rng.normal(size=(n, B, d)), requires_grad=True)
    x = Tensor(rng.normal(size=(n, d)), requires_grad=True)
    coef = Tensor(rng.normal(size=(R, B)), requires_grad=True)
    weights = rng.normal(size=(n, d))
    weights3 = rng.normal(size=(n, B, d))

    def contract_loss():
        return dc.sum_(dc.sigmoid(dc.relational_contract(table, coef, edges, n)) * weights)

    def expand_loss():
        return dc.sum_(dc.sigmoid(dc.relational_expand(x, coef, edges, n)) * weights3)

    assert check_gradients(contract_loss, [table, coef]) < 1e-4
    assert check_gradients(expand_loss, [x, coef]) < 1e-4


# -- Adam ------------------------------------------------------------------------
def test_adam_zero_gradient_leaves_params():
    p = Tensor([1.0, -2.0], requires_grad=True)
    p.grad = np.zeros(2)
    Adam([p], lr=0.1).step()
    assert p.data.tolist() == [1.0, -2.0]


def test_adam_first_step_moves_by_lr():
    # m_hat = g, v_hat = g**2, so the step is lr * g / (|g| + eps)
    p = Tensor([0.0], requires_grad=True)
    p.grad = np.array([1.0])
    opt = Adam([p], lr=0.1)
    opt.step()
    assert p.data[0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-12)
    assert opt.state.step == 1


def test_adam_matches_hand_recurrence():
    p = Tensor([0.5], requires_grad=True)
    state = AdamState(lr=0.05)
    m = v = 0.0
    value = 0.5
    for t, g in enumerate([0.3, -1.2, 0.7], start=1):
        adam_step([p], [np.array([g])], state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        value -= 0.05 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert p.data[0] == pytest.approx(value, rel=1e-12)
    assert state.step == 3


def test_adam_identical_params_identical_updates():
    a = Tensor([0.3, 0.1], requires_grad=True)
    b = Tensor([0.3, 0.1], requires_grad=True)
    a.grad = np.array([0.5, -0.2])
    b.grad = np.array([0.5, -0.2])
    Adam([a, b], lr=0.01).step()
    np.testing.assert_array_equal(a.data, b.data)


def test_adam_missing_gradient_raises():
    p = Tensor([1.0], requires_grad=True)
    with pytest.raises(ContractError):
        Adam([p]).step()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.5, 50.0), min_size=1, max_size=8))
def test_lgamma_recurrence_property(xs):
    x = np.array(xs)
    np.testing.assert_allclose(special.lgamma(x + 1) - special.lgamma(x), np.log(x), atol=1e-10)
