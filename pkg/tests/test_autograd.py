import numpy as np
import pytest

from adaptpoint import autograd as ag
from adaptpoint.autograd import Tensor, no_grad
from adaptpoint.gradcheck import GradcheckError, gradcheck
from adaptpoint.optim import Adam


def test_scalar_chain_matches_hand_derivative():
    x = Tensor(2.0, requires_grad=True)
    y = Tensor(3.0, requires_grad=True)
    z = x * y + x
    z.backward()
    assert z.item() == 8.0
    assert x.grad == 4.0  # y + 1
    assert y.grad == 2.0  # x


def test_shared_subexpression_accumulates():
    x = Tensor(2.0, requires_grad=True)
    q = (x + 1.0) * (x + 1.0)
    q.backward()
    assert x.grad == pytest.approx(6.0)


def test_broadcast_gradient_reduces_to_operand_shape():
    a = Tensor(np.ones((4, 3)), requires_grad=True)
    b = Tensor(np.ones((1, 3)), requires_grad=True)
    (a * b).sum().backward()
    assert a.grad.shape == (4, 3)
    assert b.grad.shape == (1, 3)
    assert np.allclose(b.grad, 4.0)


def test_max_routes_gradient_to_first_argmax():
    t = Tensor(np.array([1.0, 5.0, 3.0, 5.0]), requires_grad=True)
    t.max().backward()
    assert list(t.grad) == [0.0, 1.0, 0.0, 0.0]


def test_max_axis_example():
    t = Tensor(np.array([[1.0, 5.0, 3.0]]), requires_grad=True)
    m = t.max(axis=1)
    assert m.data[0] == 5.0
    m.sum().backward()
    assert list(t.grad[0]) == [0.0, 1.0, 0.0]


def test_softmax_rows_sum_to_one():
    gen = np.random.default_rng(0)
    y = ag.softmax(Tensor(gen.normal(size=(50, 7)) * 10))
    assert np.abs(y.data.sum(axis=1) - 1.0).max() <= 1e-12


def test_sigmoid_tanh_at_zero():
    assert ag.sigmoid(Tensor(0.0)).item() == 0.5
    assert ag.tanh(Tensor(0.0)).item() == 0.0


def test_getitem_fancy_scatter_adds_duplicates():
    t = Tensor(np.arange(5, dtype=float), requires_grad=True)
    picked = t[np.array([1, 1, 3])]
    picked.sum().backward()
    assert list(t.grad) == [0.0, 2.0, 0.0, 1.0, 0.0]


def test_concat_splits_gradient():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((3, 2)), requires_grad=True)
    out = ag.concat([a, b], axis=0)
    (out * Tensor(np.arange(10.0).reshape(5, 2))).sum().backward()
    assert np.allclose(a.grad, [[0, 1], [2, 3]])
    assert np.allclose(b.grad, [[4, 5], [6, 7], [8, 9]])


def test_no_grad_suppresses_graph():
    x = Tensor(1.0, requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad
    z = x * 2.0
    assert z.requires_grad


def test_clamp_masks_gradient_outside_bounds():
    t = Tensor(np.array([-2.0, 0.0, 2.0]), requires_grad=True)
    ag.clamp(t, -1.0, 1.0).sum().backward()
    assert list(t.grad) == [0.0, 1.0, 0.0]


def test_matmul_rejects_non_2d():
    with pytest.raises(ValueError):
        ag.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))


def test_backward_requires_scalar_without_seed():
    t = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        (t * 2).backward()


def test_gradcheck_quadratic_is_nearly_exact():
    p = Tensor(np.random.default_rng(1).normal(size=6), requires_grad=True)
    report = gradcheck(lambda: (p * p).sum() * 0.5, {"p": p})
    assert report.max_rel_err <= 1e-9


def test_gradcheck_flags_nonfinite_loss():
    p = Tensor(np.array(-1.0), requires_grad=True)
    with np.errstate(invalid="ignore"), pytest.raises(GradcheckError):
        gradcheck(lambda: ag.log(p), {"p": p})


def test_straight_through_passes_gradient():
    soft = Tensor(np.array([[0.7, 0.3]]), requires_grad=True)
    hard = ag.straight_through(soft, np.array([[1.0, 0.0]]))
    assert np.array_equal(hard.data, [[1.0, 0.0]])
    (hard * Tensor(np.array([[2.0, 5.0]]))).sum().backward()
    assert np.allclose(soft.grad, [[2.0, 5.0]])


# -- Adam ----------------------------------------------------------------------


def test_adam_zero_gradient_keeps_parameters():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.zeros(2)
    opt.step()
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_is_signed_lr():
    p = Tensor(np.array([1.0, 1.0]), requires_grad=True)
    opt = Adam([p], lr=0.01)
    p.grad = np.array([0.5, -3.0])
    opt.step()
    assert np.abs(p.data - np.array([1.0 - 0.01, 1.0 + 0.01])).max() <= 1e-6


def test_adam_three_steps_match_reference_recurrence():
    # hand-rolled scalar recurrence, written independently of the optimizer
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    grads = [0.3, -0.8, 0.1]
    theta, m, v = 2.0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)

    p = Tensor(np.array([2.0]), requires_grad=True)
    opt = Adam([p], lr=lr, beta1=b1, beta2=b2, eps=eps)
    for g in grads:
        p.grad = np.array([g])
        opt.step()
    assert abs(p.data[0] - theta) <= 1e-12


def test_adam_skips_params_without_grad():
    p, q = Tensor(np.ones(2), requires_grad=True), Tensor(np.ones(2), requires_grad=True)
    opt = Adam([p, q], lr=0.1)
    p.grad = np.ones(2)
    opt.step()
    assert not np.array_equal(p.data, np.ones(2))
    assert np.array_equal(q.data, np.ones(2))
