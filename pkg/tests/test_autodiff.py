"""Tests for Tensor, Tape and the differentiable ops."""

import numpy as np
import pytest

from src.autodiff.gradcheck import check_gradients, numerical_gradient
from src.autodiff.ops import (
    GradScale,
    add,
    affine,
    bce_loss,
    detach,
    gradient_reversal,
    kl_divergence,
    logit,
    masked_softmax,
    matmul,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    take_rows,
    total,
)
from src.autodiff.tensor import Tape, Tensor

TRIALS = 20


def _param(values) -> Tensor:
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


def _weighted_sum(t: Tensor, w: np.ndarray) -> Tensor:
    """sum(t * w) as a scalar tensor, so every output entry gets its own weight."""
    n = w.size
    return reshape(matmul(reshape(t, (1, n)), Tensor(w.reshape(n, 1))), ())


def _assert_gradcheck(fn, inputs):
    result = check_gradients(fn, inputs, step=1e-5, rtol=1e-4, atol=1e-6)
    assert result.passed, f"max abs {result.max_abs_error}, max rel {result.max_rel_error}"


# -- forward values ------------------------------------------------------------------


def test_affine_identity_weights():
    y = affine(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
    assert np.array_equal(y.values, [[1.0, 2.0]])


def test_affine_zero_input_passes_bias():
    y = affine(Tensor([[0.0, 0.0]]), Tensor(np.random.default_rng(0).normal(size=(2, 2))), Tensor([3.0, 4.0]))
    assert np.array_equal(y.values, [[3.0, 4.0]])


def test_affine_shape_mismatch_names_dimensions():
    with pytest.raises(ValueError, match="din=3"):
        affine(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))), Tensor(np.zeros(2)))
    with pytest.raises(ValueError, match="length 3"):
        affine(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))), Tensor(np.zeros(3)))


def test_sigmoid_of_zero_is_half():
    assert sigmoid(Tensor([0.0])).values[0] == 0.5


def test_softmax_constant_row_is_uniform():
    y = softmax(Tensor([[4.0, 4.0, 4.0]]))
    assert np.allclose(y.values, 1.0 / 3.0, atol=1e-15)


def test_softmax_rows_are_distributions():
    rng = np.random.default_rng(1)
    y = softmax(Tensor(rng.normal(scale=20.0, size=(5, 7))))
    assert np.all(y.values >= 0)
    assert np.all(np.abs(y.values.sum(axis=1) - 1.0) < 1e-12)


def test_relu_gradient_is_mask():
    x = _param([-1.0, 2.0])
    with Tape() as tape:
        tape.backward(_weighted_sum(relu(x), np.ones(2)))
    assert np.array_equal(x.grad, [0.0, 1.0])


def test_relu_propagates_nan():
    y = relu(Tensor([np.nan, -1.0, 3.0])).values
    assert np.isnan(y[0])
    assert y[1:].tolist() == [0.0, 3.0]


def test_masked_softmax_zeroes_masked_positions():
    rng = np.random.default_rng(2)
    mask = np.zeros((4, 5), dtype=bool)
    mask[np.arange(4), [0, 3, 4, 1]] = True
    y = masked_softmax(Tensor(rng.normal(size=(4, 5))), mask)
    assert np.all(y.values[mask] == 0.0)
    assert np.all(np.abs(y.values.sum(axis=1) - 1.0) < 1e-12)


def test_masked_softmax_rejects_fully_masked_row():
    with pytest.raises(ValueError, match="every position"):
        masked_softmax(Tensor(np.zeros((1, 2))), np.ones((1, 2), dtype=bool))


def test_bce_perfect_prediction():
    assert bce_loss(Tensor([1.0, 0.0]), np.array([1.0, 0.0])).item() <= 1e-6


def test_bce_half_is_ln2():
    assert bce_loss(Tensor([0.5, 0.5]), np.array([1.0, 0.0])).item() == pytest.approx(np.log(2.0), abs=1e-12)


def test_bce_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        bce_loss(Tensor([0.5, 0.5]), np.array([1.0, 0.0, 0.0]))


def test_kl_of_identical_distributions_is_zero():
    d = softmax(Tensor(np.random.default_rng(3).normal(size=6))).values
    assert abs(kl_divergence(Tensor(d), Tensor(d)).item()) < 1e-9


def test_kl_closed_form():
    assert kl_divergence(Tensor([1.0, 0.0]), Tensor([0.5, 0.5])).item() == pytest.approx(np.log(2.0), abs=1e-5)


def test_kl_is_asymmetric():
    a, b = Tensor([0.9, 0.1]), Tensor([0.5, 0.5])
    assert kl_divergence(a, b).item() != pytest.approx(kl_divergence(b, a).item(), abs=1e-6)


def test_kl_is_nonnegative():
    rng = np.random.default_rng(4)
    for _ in range(TRIALS):
        p = softmax(Tensor(rng.normal(size=(3, 5))))
        r = softmax(Tensor(rng.normal(size=(3, 5))))
        assert kl_divergence(p, r).item() >= 0.0


def test_kl_rejects_unnormalized_input():
    with pytest.raises(ValueError, match="normalized"):
        kl_divergence(Tensor([0.6, 0.6]), Tensor([0.5, 0.5]))


def test_kl_sum_reduction_adds_rows():
    rng = np.random.default_rng(5)
    p = softmax(Tensor(rng.normal(size=(4, 3))))
    r = softmax(Tensor(rng.normal(size=(4, 3))))
    assert kl_divergence(p, r, reduction="sum").item() == pytest.approx(4 * kl_divergence(p, r).item())


def test_logit_inverts_sigmoid():
    x = np.linspace(-5.0, 5.0, 11)
    assert np.allclose(logit(sigmoid(Tensor(x))).values, x, atol=1e-9)


def test_take_rows_out_of_range():
    with pytest.raises(IndexError):
        take_rows(Tensor(np.zeros((3, 2))), np.array([3]))


# -- tape behaviour --------------------------------------------------------------------


def test_ops_outside_tape_are_not_recorded():
    x = _param([1.0, 2.0])
    y = scale(x, 3.0)
    assert not y.tracked
    with Tape() as tape:
        assert len(tape) == 0


def test_backward_needs_scalar():
    x = _param([1.0, 2.0])
    with Tape() as tape:
        y = scale(x, 2.0)
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(y)


def test_gradients_accumulate_until_zeroed():
    x = _param([1.0, -1.0])
    for _ in range(2):
        with Tape() as tape:
            tape.backward(_weighted_sum(scale(x, 2.0), np.ones(2)))
    assert np.array_equal(x.grad, [4.0, 4.0])
    x.zero_grad()
    assert np.array_equal(x.grad, [0.0, 0.0])


def test_reused_intermediate_sums_both_paths():
    x = _param([3.0])
    with Tape() as tape:
        y = scale(x, 2.0)
        tape.backward(reshape(add(y, y), ()))
    assert x.grad[0] == 4.0


# -- gradient reversal and detach ------------------------------------------------------


def test_gradient_reversal_forward_is_identity():
    x = Tensor([1.5, -2.0])
    y = gradient_reversal(x, GradScale(0.13))
    assert np.array_equal(y.values, x.values)


@pytest.mark.parametrize("lam", [0.0, 0.13, 1.0])
def test_gradient_reversal_backward_scales_by_minus_lambda(lam):
    rng = np.random.default_rng(6)
    x = _param(rng.normal(size=4))
    w = rng.normal(size=4)
    with Tape() as tape:
        tape.backward(_weighted_sum(gradient_reversal(x, GradScale(lam)), w))
    assert np.array_equal(x.grad, -lam * w)


def test_gradient_reversal_unit_gradient():
    x = _param([2.0])
    with Tape() as tape:
        tape.backward(reshape(gradient_reversal(x, GradScale(0.13)), ()))
    assert x.grad[0] == -0.13


def test_grad_scale_rejects_negative():
    with pytest.raises(ValueError):
        GradScale(-0.1)


def test_detach_preserves_values_and_blocks_gradient():
    x = _param([0.3, -0.7])
    with Tape() as tape:
        d = detach(scale(x, 1.0))
        assert np.array_equal(d.values, x.values)
        tape.backward(total(_weighted_sum(d, np.ones(2)), _weighted_sum(x, np.zeros(2))))
    assert np.array_equal(x.grad, [0.0, 0.0])


def test_kl_against_detached_target_updates_only_first_argument():
    rng = np.random.default_rng(7)
    a = _param(rng.normal(size=(2, 4)))
    b = _param(rng.normal(size=(2, 4)))
    with Tape() as tape:
        tape.backward(kl_divergence(softmax(a), detach(softmax(b))))
    assert np.any(a.grad != 0.0)
    assert np.all(b.grad == 0.0)


# -- finite-difference checks ------------------------------------------------------------


def test_gradcheck_affine():
    rng = np.random.default_rng(10)
    for _ in range(TRIALS):
        x, W, b = _param(rng.normal(size=(2, 3))), _param(rng.normal(size=(3, 2))), _param(rng.normal(size=2))
        w = rng.normal(size=(2, 2))
        _assert_gradcheck(lambda: _weighted_sum(affine(x, W, b), w), [x, W, b])


def test_gradcheck_matmul_vector_and_matrix():
    rng = np.random.default_rng(11)
    for _ in range(TRIALS):
        v, W = _param(rng.normal(size=3)), _param(rng.normal(size=(3, 4)))
        w = rng.normal(size=4)
        _assert_gradcheck(lambda: _weighted_sum(matmul(v, W), w), [v, W])


def test_gradcheck_add_scale_reshape():
    rng = np.random.default_rng(12)
    for _ in range(TRIALS):
        a, b = _param(rng.normal(size=(2, 3))), _param(rng.normal(size=(2, 3)))
        w = rng.normal(size=6)
        c = float(rng.normal())
        _assert_gradcheck(lambda: _weighted_sum(reshape(scale(add(a, b), c), (6,)), w), [a, b])


def test_gradcheck_take_rows_with_repeats():
    rng = np.random.default_rng(13)
    for _ in range(TRIALS):
        x = _param(rng.normal(size=(4, 3)))
        rows = rng.integers(0, 4, size=6)
        w = rng.normal(size=(6, 3))
        _assert_gradcheck(lambda: _weighted_sum(take_rows(x, rows), w), [x])


def test_gradcheck_relu_away_from_kink():
    rng = np.random.default_rng(14)
    for _ in range(TRIALS):
        x = _param(rng.choice([-1.0, 1.0], size=(3, 4)) * rng.uniform(0.1, 1.0, size=(3, 4)))
        w = rng.normal(size=(3, 4))
        _assert_gradcheck(lambda: _weighted_sum(relu(x), w), [x])


def test_gradcheck_sigmoid():
    rng = np.random.default_rng(15)
    for _ in range(TRIALS):
        x = _param(rng.normal(scale=2.0, size=(3, 4)))
        w = rng.normal(size=(3, 4))
        _assert_gradcheck(lambda: _weighted_sum(sigmoid(x), w), [x])


def test_gradcheck_softmax_both_axes():
    rng = np.random.default_rng(16)
    for trial in range(TRIALS):
        x = _param(rng.normal(size=(3, 4)))
        w = rng.normal(size=(3, 4))
        axis = trial % 2
        _assert_gradcheck(lambda: _weighted_sum(softmax(x, axis=axis), w), [x])


def test_gradcheck_masked_softmax():
    rng = np.random.default_rng(17)
    for _ in range(TRIALS):
        x = _param(rng.normal(size=(3, 5)))
        mask = np.zeros((3, 5), dtype=bool)
        mask[np.arange(3), rng.integers(0, 5, size=3)] = True
        w = rng.normal(size=(3, 5))
        _assert_gradcheck(lambda: _weighted_sum(masked_softmax(x, mask), w), [x])


def test_gradcheck_logit():
    rng = np.random.default_rng(18)
    for _ in range(TRIALS):
        p = _param(rng.uniform(0.05, 0.95, size=(2, 4)))
        w = rng.normal(size=(2, 4))
        _assert_gradcheck(lambda: _weighted_sum(logit(p), w), [p])


def test_gradcheck_bce():
    rng = np.random.default_rng(19)
    for _ in range(TRIALS):
        p = _param(rng.uniform(0.1, 0.9, size=(3, 5)))
        q = (rng.random((3, 5)) < 0.4).astype(np.float64)
        _assert_gradcheck(lambda: bce_loss(p, q), [p])


@pytest.mark.parametrize("reduction", ["mean", "sum"])
def test_gradcheck_kl_both_arguments(reduction):
    rng = np.random.default_rng(20)
    for _ in range(TRIALS):
        a, b = _param(rng.normal(size=(3, 4))), _param(rng.normal(size=(3, 4)))
        _assert_gradcheck(lambda: kl_divergence(softmax(a), softmax(b), reduction=reduction), [a, b])


def test_gradient_reversal_is_negated_finite_difference():
    # finite differences see the identity forward, so the tape gradient is their negation
    rng = np.random.default_rng(21)
    for _ in range(TRIALS):
        x = _param(rng.normal(size=(2, 3)))
        w = rng.normal(size=(2, 3))
        x.zero_grad()
        with Tape() as tape:
            tape.backward(_weighted_sum(gradient_reversal(x, GradScale(1.0)), w))
        numeric = numerical_gradient(lambda: _weighted_sum(gradient_reversal(x, GradScale(1.0)), w), x)
        assert np.allclose(x.grad, -numeric, rtol=1e-4, atol=1e-6)
