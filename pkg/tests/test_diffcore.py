"""
Tests du moteur de différentiation: gradients, JVP, HVP, dérivées imbriquées
et rejeu de la trace, vérifiés contre des différences finies.
"""
import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from diffcore import (
    DualTensor,
    Tensor,
    as_tensor,
    exp,
    grad,
    grad_of_derived_scalar,
    gradients,
    hvp,
    jvp,
    log,
    push_forward,
    replay,
    sigmoid,
    tanh,
    tsum,
)
from diffcore.functional import cross_entropy, log_softmax, sum_of_squares
from diffcore.oracle import central_difference, jacobian_fd, jacobian_rev, relative_error
from utils.errors import ContractViolation

RNG = np.random.default_rng(1234)
A = RNG.normal(size=(3, 4))


def composite(x):
    """Fonction scalaire mêlant les primitives usuelles."""
    h = tanh(as_tensor(A) @ x)
    return tsum(sigmoid(h) * exp(h / 2.0)) + tsum(log(x * x + 1.0)) / (tsum(x * x) + 2.0)


# =============================================================================
# GRADIENT
# =============================================================================

def test_grad_of_cube():
    """d/dx Σx³ = 3x²."""
    x = np.array([1.0, -2.0, 0.5])
    result = grad(lambda t: tsum(t * t * t), [x])
    np.testing.assert_allclose(result.derivatives[0], 3 * x ** 2)
    assert result.status == "ok"


def test_grad_matches_finite_differences():
    x = RNG.normal(size=4)
    result = grad(composite, [x])
    fd = central_difference(composite, [x])[0]
    assert relative_error(result.derivatives[0], fd) < 1e-7


def test_grad_two_inputs_and_broadcasting():
    """Les gradients des opérandes diffusés sont ramenés à leur forme."""
    W = RNG.normal(size=(4, 3))
    b = RNG.normal(size=(3,))
    X = RNG.normal(size=(5, 4))

    def f(w, bias):
        return tsum(tanh(as_tensor(X) @ w + bias) ** 2)

    result = grad(f, [W, b])
    fd = central_difference(f, [W, b])
    assert result.derivatives[0].shape == (4, 3)
    assert result.derivatives[1].shape == (3,)
    for actual, expected in zip(result.derivatives, fd):
        assert relative_error(actual, expected) < 1e-7


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    logits = RNG.normal(size=(4, 5))
    labels = np.array([0, 3, 1, 4])
    result = grad(lambda z: cross_entropy(z, labels), [logits])
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    expected = p.copy()
    expected[np.arange(4), labels] -= 1.0
    np.testing.assert_allclose(result.derivatives[0], expected / 4, atol=1e-12)


def test_cross_entropy_ignores_negative_labels():
    logits = RNG.normal(size=(3, 4))
    full = cross_entropy(as_tensor(logits[:2]), np.array([1, 2])).item()
    masked = cross_entropy(as_tensor(logits), np.array([1, 2, -1])).item()
    assert masked == pytest.approx(full)


def test_sum_of_squares_value_and_gradient():
    x = RNG.normal(size=(2, 3))
    assert sum_of_squares(as_tensor(x)).item() == pytest.approx(float(np.sum(x ** 2)), rel=1e-14)
    np.testing.assert_allclose(grad(sum_of_squares, [x]).derivatives[0], 2 * x, rtol=1e-14)


def test_log_softmax_is_shift_invariant():
    z = RNG.normal(size=(2, 6))
    a = log_softmax(as_tensor(z)).data
    b = log_softmax(as_tensor(z + 1000.0)).data
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_grad_rejects_non_scalar_output():
    with pytest.raises(ContractViolation):
        grad(lambda x: x * 2.0, [np.ones(3)])


def test_unused_input_gets_zero_gradient():
    result = grad(lambda x, y: tsum(x * x), [np.ones(2), np.ones(3)])
    np.testing.assert_array_equal(result.derivatives[1], np.zeros(3))


def test_nan_is_propagated_and_counted():
    result = grad(lambda x: tsum(log(x)), [np.array([-1.0, 1.0])])
    assert result.status == "nan"
    assert result.nan_count >= 1


# =============================================================================
# MODE DIRECT
# =============================================================================

def test_jvp_matches_jacobian_times_direction():
    x = RNG.normal(size=4)
    v = RNG.normal(size=4)

    def f(t):
        return tanh(as_tensor(A) @ t)

    result = jvp(f, [x], [v])
    J = jacobian_fd(f, x)
    np.testing.assert_allclose(result.derivatives[0], J @ v, atol=1e-8)
    np.testing.assert_allclose(result.value, np.tanh(A @ x))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_jvp_agrees_with_gradient_dot_direction(seed):
    """Scalaire: JVP dans la direction v = vᵀ·∇f, modes direct et inverse à 1e-10."""
    rng = np.random.default_rng(seed)
    x, v = rng.normal(size=4), rng.normal(size=4)
    forward = float(np.asarray(jvp(composite, [x], [v]).derivatives[0]))
    reverse = float(v @ grad(composite, [x]).derivatives[0])
    assert abs(forward - reverse) <= 1e-10 * max(1.0, abs(reverse))


def test_jvp_rejects_mismatched_direction():
    with pytest.raises(ContractViolation):
        jvp(lambda t: t * 2.0, [np.ones(3)], [np.ones(4)])


def test_batched_directions_give_exact_jacobian():
    """Tangente identité: une direction par colonne, Jacobienne complète en une passe."""
    x = RNG.normal(size=4)
    out = tanh(as_tensor(A) @ DualTensor(as_tensor(x), as_tensor(np.eye(4))))
    J_fwd = out.tangent.data.T
    J_rev = jacobian_rev(lambda t: tanh(as_tensor(A) @ t), x)
    np.testing.assert_allclose(J_fwd, J_rev, atol=1e-12)


def test_jacobian_rev_matches_finite_differences():
    x = RNG.normal(size=4)

    def f(t):
        return sigmoid(as_tensor(A) @ t) * 3.0

    np.testing.assert_allclose(jacobian_rev(f, x), jacobian_fd(f, x), atol=1e-8)


# =============================================================================
# SECOND ORDRE
# =============================================================================

def test_hvp_matches_finite_difference_of_gradient():
    x = RNG.normal(size=4)
    v = RNG.normal(size=4)
    result = hvp(composite, [x], [v])

    def g(t):
        return grad(composite, [t]).derivatives[0]

    eps = 1e-5
    fd = (g(x + eps * v) - g(x - eps * v)) / (2 * eps)
    assert relative_error(result.derivatives[0], fd) < 1e-6


def test_hvp_of_quadratic_is_exact():
    """L = ½ xᵀQx -> Hv = Qv (Q symétrique)."""
    M = RNG.normal(size=(3, 3))
    Q = M + M.T
    x, v = RNG.normal(size=3), RNG.normal(size=3)
    result = hvp(lambda t: tsum(t * (as_tensor(Q) @ t)) / 2.0, [x], [v])
    np.testing.assert_allclose(result.derivatives[0], Q @ v, atol=1e-12)


def test_gradient_of_jvp_norm_matches_finite_differences():
    """Forward-over-reverse: d/dθ ‖∂f/∂x · v‖² comparé aux différences finies."""
    x = RNG.normal(size=4)
    v = RNG.normal(size=4)
    W0 = RNG.normal(size=(3, 4)) * 0.5

    def derived(w):
        _, tangent = push_forward(lambda t: tanh(w @ t), [as_tensor(x)], [as_tensor(v)])
        return tsum(tangent * tangent)

    def reference(w):
        with_dir = jvp(lambda t: tanh(as_tensor(w) @ t), [x], [v])
        return float(np.sum(with_dir.derivatives[0] ** 2))

    result = grad_of_derived_scalar(derived, [W0])
    eps = 1e-6
    fd = np.zeros_like(W0)
    for idx in np.ndindex(*W0.shape):
        up, down = W0.copy(), W0.copy()
        up[idx] += eps
        down[idx] -= eps
        fd[idx] = (reference(up) - reference(down)) / (2 * eps)
    assert relative_error(result.derivatives[0], fd) < 1e-6


def test_nesting_beyond_one_level_is_refused():
    def inner(w):
        return tsum(w) * hvp(lambda t: tsum(t * t), [np.ones(2)], [np.ones(2)]).derivatives[0][0]

    with pytest.raises(ContractViolation):
        grad_of_derived_scalar(inner, [np.ones(2)])


def test_create_graph_gives_second_derivative():
    x = Tensor(np.array([0.3, -0.7]), requires_grad=True)
    y = tsum(tanh(x))
    (g,) = gradients(y, [x], create_graph=True)
    (h,) = gradients(tsum(g), [x])
    t = np.tanh(x.data)
    np.testing.assert_allclose(h.data, -2 * t * (1 - t ** 2), atol=1e-12)


# =============================================================================
# TRACE
# =============================================================================

def test_replay_reproduces_value_bit_for_bit():
    x = Tensor(RNG.normal(size=4), requires_grad=True)
    out = composite(x)
    assert np.array_equal(replay(out), out.data)


def test_replay_with_substituted_leaf():
    x = Tensor(np.array([0.1, 0.2, 0.3, 0.4]), requires_grad=True)
    out = composite(x)
    new = np.array([0.4, -0.3, 0.2, -0.1])
    expected = composite(as_tensor(new)).data
    np.testing.assert_allclose(replay(out, {id(x): new}), expected, rtol=0, atol=1e-14)


def test_indexing_gradient_scatters_back():
    x = np.arange(6.0).reshape(2, 3)
    result = grad(lambda t: tsum(t[1, 1:] * 2.0), [x])
    expected = np.zeros((2, 3))
    expected[1, 1:] = 2.0
    np.testing.assert_array_equal(result.derivatives[0], expected)


def test_fancy_indexing_is_refused():
    with pytest.raises(ContractViolation):
        as_tensor(np.ones(4))[np.array([0, 1])]
