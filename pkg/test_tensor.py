"""Tests for the autodiff tensor, Adam and the gradient checker"""

import threading

import numpy as np
import pytest

from errors import NonFiniteError, ShapeError, ValidationError
from tensor_core.gradcheck import grad_check
from tensor_core.optim import AdamState, adam_step
from tensor_core.tensor import (
    Tensor,
    elementwise,
    get_default_dtype,
    is_grad_enabled,
    matmul,
    movement,
    no_grad,
    precision,
    reductions,
    set_finite_checks,
    softmax,
)


def _leaf(rng, shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def test_add_example():
    """add([1,2],[3,4]) is [4,6]"""
    out = elementwise("add", Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
    np.testing.assert_array_equal(out.data, [4.0, 6.0])


def test_mul_by_zeros_annihilates_value_and_gradient(rng):
    """Multiplying by zeros gives zeros and a zero gradient"""
    x = _leaf(rng, (3, 4))
    out = elementwise("mul", x, Tensor(np.zeros(x.shape)))
    assert not out.data.any()
    out.sum().backward()
    assert not x.grad.any()


def test_default_precision_is_32_bit():
    """New tensors are 32-bit outside a precision block"""
    assert get_default_dtype() == np.float32
    assert Tensor([1.0]).dtype == np.float32
    with precision("float64"):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_unknown_precision_rejected():
    """Only float32 and float64 are valid precisions"""
    with pytest.raises(ValidationError):
        with precision("float16"):
            pass


@pytest.mark.parametrize("kind", ["abs", "exp", "gelu", "sigmoid", "add", "sub", "mul", "div"])
def test_elementwise_gradients_match_finite_differences(kind, rng):
    """Every differentiable elementwise op passes a 64-bit gradient check"""
    with precision("float64"):
        a = _leaf(rng, (3, 4))
        if kind == "abs":
            a.data[np.abs(a.data) < 0.1] += 0.5
        if kind in ("add", "sub", "mul", "div"):
            b = _leaf(rng, (3, 4), 0.5, 1.5)
            err = grad_check(lambda a, b: elementwise(kind, a, b).sum(), [a, b])
        else:
            err = grad_check(lambda a: elementwise(kind, a).sum(), [a])
    assert err <= 1e-4


def test_ln_and_clamp_gradients(rng):
    """ln on positive inputs and clamp-min away from the threshold"""
    with precision("float64"):
        a = _leaf(rng, (5,), 0.5, 2.0)
        assert grad_check(lambda a: elementwise("ln", a).sum(), [a]) <= 1e-4
        b = Tensor(np.array([-0.9, -0.4, 0.3, 0.8]), requires_grad=True)
        assert grad_check(lambda b: (elementwise("clamp-min", b, 0.0) * 3.0).sum(), [b]) <= 1e-4


def test_scalar_mul():
    out = elementwise("scalar-mul", Tensor([1.0, -2.0]), 2.5)
    np.testing.assert_array_equal(out.data, [2.5, -5.0])


def test_broadcast_singleton_axes(rng):
    """Singleton axes expand on either side and the gradient is summed back"""
    with precision("float64"):
        a = _leaf(rng, (3, 1))
        b = _leaf(rng, (1, 4))
        out = a * b
        assert out.shape == (3, 4)
        assert grad_check(lambda a, b: (a * b).sum(), [a, b]) <= 1e-4


def test_broadcast_rejects_rank_promotion():
    """Operands of different rank are an error, not a silent promotion"""
    with pytest.raises(ShapeError):
        Tensor(np.ones((3, 4))) + Tensor(np.ones(4))
    with pytest.raises(ShapeError):
        Tensor(np.ones((3, 4))) * Tensor(np.ones((2, 4)))


def test_matmul_examples():
    """Identity product and a hand-evaluated product"""
    a = Tensor(np.arange(9.0).reshape(3, 3))
    np.testing.assert_array_equal(matmul(Tensor(np.eye(3)), a).data, a.data)
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


def test_matmul_gradients(rng):
    with precision("float64"):
        a = _leaf(rng, (4, 5))
        b = _leaf(rng, (5, 3))
        w = rng.normal(size=(4, 3))
        assert grad_check(lambda a, b: (matmul(a, b) * Tensor(w)).sum(), [a, b]) <= 1e-4


def test_matmul_extent_mismatch():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 2, 3))), Tensor(np.ones((3, 3, 2))))


def test_permute_identity_and_round_trip(rng):
    """Identity permutation and permute/inverse are bit-exact"""
    x = Tensor(rng.normal(size=(2, 3, 4)))
    np.testing.assert_array_equal(movement("permute-axes", x, (0, 1, 2)).data, x.data)
    there = movement("permute-axes", x, (2, 0, 1))
    back = movement("permute-axes", there, (1, 2, 0))
    np.testing.assert_array_equal(back.data, x.data)


def test_flip_twice_is_identity(rng):
    x = Tensor(rng.normal(size=(3, 5)))
    twice = movement("flip-axis", movement("flip-axis", x, 1), 1)
    np.testing.assert_array_equal(twice.data, x.data)


def test_movement_and_inverse_pass_gradients_unchanged(rng):
    """A movement op followed by its inverse leaves gradients bit-exact"""
    x = _leaf(rng, (2, 3, 4))
    upstream = rng.normal(size=(2, 3, 4)).astype(np.float32)
    y = movement("permute-axes", movement("permute-axes", x, (1, 2, 0)), (2, 0, 1))
    y = movement("reshape", movement("reshape", y, (6, 4)), (2, 3, 4))
    y = movement("flip-axis", movement("flip-axis", y, 2), 2)
    y = movement("roll", movement("roll", y, {"shift": 2, "axis": 2}), {"shift": -2, "axis": 2})
    y.backward(upstream)
    np.testing.assert_array_equal(x.grad, upstream)


def test_slice_concat_and_edge_pad(rng):
    """Value-preserving ops produce the expected arrays and gradients"""
    with precision("float64"):
        x = _leaf(rng, (2, 5))
        head = movement("slice", x, (slice(None), slice(0, 2)))
        tail = movement("slice", x, (slice(None), slice(2, 5)))
        joined = movement("concat", [head, tail], 1)
        np.testing.assert_array_equal(joined.data, x.data)
        padded = movement("pad-edge-replicate", x, {"axis": 1, "before": 1, "after": 2})
        np.testing.assert_array_equal(padded.data[:, 0], x.data[:, 0])
        np.testing.assert_array_equal(padded.data[:, -2:], np.repeat(x.data[:, -1:], 2, axis=1))
        w = Tensor(rng.normal(size=(2, 8)))
        err = grad_check(
            lambda x: (movement("pad-edge-replicate", x, {"axis": 1, "before": 1, "after": 2}) * w).sum(), [x]
        )
        assert err <= 1e-4


def test_invalid_movement_specs():
    x = Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        movement("reshape", x, (4, 2))
    with pytest.raises(ShapeError):
        movement("permute-axes", x, (0, 0))
    with pytest.raises(ValidationError):
        movement("twist", x, None)


def test_reduction_examples(rng):
    """Mean of a constant, sum backward, and the l2-norm of [3, 4]"""
    np.testing.assert_allclose(reductions("mean", Tensor(np.full((3, 4), 2.5))).item(), 2.5)
    x = _leaf(rng, (3, 4))
    reductions("sum", x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))
    np.testing.assert_allclose(reductions("l2-norm", Tensor([3.0, 4.0]), 0).item(), 5.0)


def test_full_reductions_are_scalars(rng):
    """Reducing every axis gives shape () and backward starts from it"""
    x = _leaf(rng, (1, 1, 4, 2, 2))
    total = x.sum()
    assert total.shape == ()
    total.backward()
    np.testing.assert_array_equal(x.grad, np.ones(x.shape))

    y = _leaf(rng, (2, 3))
    loss = (y - Tensor(np.full((2, 3), 0.5))).abs().mean()
    assert loss.shape == ()
    loss.backward()
    np.testing.assert_allclose(np.abs(y.grad), np.full((2, 3), 1.0 / 6.0), atol=1e-7)
    assert Tensor(2.0).shape == ()


def test_l2_norm_needs_an_axis():
    with pytest.raises(ShapeError):
        reductions("l2-norm", Tensor([3.0, 4.0]), ())


def test_reduction_gradients(rng):
    with precision("float64"):
        x = _leaf(rng, (3, 4))
        w = Tensor(rng.normal(size=(3,)).reshape(3))
        assert grad_check(lambda x: (reductions("mean", x, 1) * w).sum(), [x]) <= 1e-4
        assert grad_check(lambda x: (reductions("l2-norm", x, 1) * w).sum(), [x]) <= 1e-4
        assert grad_check(lambda x: (reductions("max", x, 0) * Tensor(np.arange(4.0))).sum(), [x]) <= 1e-4


def test_softmax_examples():
    """A constant row is uniform and [0, ln 3] gives [0.25, 0.75]"""
    np.testing.assert_allclose(softmax(Tensor(np.zeros((1, 5)))).data, np.full((1, 5), 0.2), atol=1e-7)
    out = softmax(Tensor([[0.0, np.log(3.0)]]))
    np.testing.assert_allclose(out.data, [[0.25, 0.75]], atol=1e-6)


def test_softmax_rows_and_gradient(rng):
    """Rows are nonnegative and sum to 1; the gradient passes a 64-bit check"""
    with precision("float64"):
        x = _leaf(rng, (4, 6), -5.0, 5.0)
        out = softmax(x, axis=-1).data
        assert out.min() >= 0
        assert np.abs(out.sum(axis=-1) - 1.0).max() <= 1e-6
        w = Tensor(rng.normal(size=(4, 6)))
        assert grad_check(lambda x: (softmax(x, axis=-1) * w).sum(), [x]) <= 1e-4


def test_gradients_accumulate_over_consumers(rng):
    """A tensor used twice receives the sum of both gradients"""
    x = _leaf(rng, (3,))
    (x * 2.0 + x * 3.0).sum().backward()
    np.testing.assert_allclose(x.grad, np.full(3, 5.0))


def test_non_finite_output_is_raised():
    """NaN/Inf is surfaced as an error while finite checks are on"""
    with pytest.raises(NonFiniteError):
        elementwise("ln", Tensor([0.0, 1.0]))
    set_finite_checks(False)
    out = elementwise("ln", Tensor([1.0]))
    assert out.item() == 0.0


def test_no_grad_is_thread_local(rng):
    """Disabling recording in one thread leaves other threads unaffected"""
    seen = []
    x = _leaf(rng, (2,))
    with no_grad():
        assert not (x * 2.0).requires_grad
        worker = threading.Thread(target=lambda: seen.append(is_grad_enabled()))
        worker.start()
        worker.join()
    assert seen == [True]
    assert (x * 2.0).requires_grad


def test_grad_check_exact_for_linear_fn(rng):
    """Central differences are exact for a linear function"""
    with precision("float64"):
        x = _leaf(rng, (6,))
        w = Tensor(rng.normal(size=(6,)))
        assert grad_check(lambda x: (x * w).sum(), [x]) <= 1e-8


def test_grad_check_requires_64_bit(rng):
    x = _leaf(rng, (3,))
    with pytest.raises(ValidationError):
        grad_check(lambda x: x.sum(), [x])


def test_adam_zero_gradient_leaves_parameters(rng):
    p = _leaf(rng, (3,))
    before = p.data.copy()
    state = AdamState(lr=0.1)
    adam_step({"p": p}, {"p": np.zeros(3, dtype=np.float32)}, state)
    np.testing.assert_array_equal(p.data, before)
    assert state.step == 1


def test_adam_first_step_moves_by_lr():
    """p=1, g=1, lr=0.1 gives p close to 0.9 after one bias-corrected step"""
    with precision("float64"):
        p = Tensor([1.0], requires_grad=True)
        adam_step({"p": p}, {"p": np.array([1.0])}, AdamState(lr=0.1))
    np.testing.assert_allclose(p.data, [0.9], atol=1e-6)


def test_adam_converges_on_quadratic():
    """200 steps on (p-3)^2 from 0 land within 0.1 of 3"""
    with precision("float64"):
        p = Tensor([0.0], requires_grad=True)
        state = AdamState(lr=0.1)
        for _ in range(200):
            p.zero_grad()
            d = p - 3.0
            (d * d).sum().backward()
            adam_step({"p": p}, {"p": p.grad}, state)
    assert abs(p.data[0] - 3.0) < 0.1


def test_adam_is_deterministic(rng):
    """Two identical runs give bit-identical parameters"""
    grads = [rng.normal(size=(4,)).astype(np.float32) for _ in range(10)]

    def run():
        p = Tensor(np.ones(4), requires_grad=True)
        state = AdamState(lr=0.01)
        for g in grads:
            adam_step({"p": p}, {"p": g}, state)
        return p.data

    np.testing.assert_array_equal(run(), run())


def test_adam_rejects_bad_inputs():
    p = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        adam_step({"p": p}, {"p": np.ones(4, dtype=np.float32)}, AdamState())
    with pytest.raises(ValidationError):
        AdamState(lr=-1.0)
