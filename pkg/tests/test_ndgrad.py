"""Unit tests for the autodiff engine's ops, tape and clipping."""
import math

import numpy as np
import pytest

from sslchrono import ndgrad
from sslchrono.ndgrad import Tensor
from sslchrono.util import NonFiniteError, ParameterError, ShapeError, StaleTapeError

from .util import assert_close


def leaf(values, dtype=np.float64):
    return Tensor(np.array(values, dtype=dtype), requires_grad=True)


@pytest.mark.parametrize(
    "a,b,expected",
    (
        ([[1, 0], [0, 1]], [[3, 4], [5, 6]], [[3, 4], [5, 6]]),
        ([[1, 2], [3, 4]], [[5, 6], [7, 8]], [[19, 22], [43, 50]]),
        ([[0, 0], [0, 0]], [[5, -6], [7, 8]], [[0, 0], [0, 0]]),
    ),
)
def test_matmul(a, b, expected):
    out = ndgrad.matmul(Tensor(a), Tensor(b))
    assert_close(out.data, expected)


def test_matmul_gradients():
    a = leaf([[1, 2], [3, 4]])
    b = leaf([[5, 6], [7, 8]])
    ndgrad.backward(ndgrad.matmul(a, b).sum())
    ones = np.ones((2, 2))
    assert_close(a.grad, ones @ b.data.T)
    assert_close(b.grad, a.data.T @ ones)


def test_matmul_batched_shared_weight():
    rng = np.random.default_rng(1)
    x = leaf(rng.standard_normal((3, 4, 5)))
    w = leaf(rng.standard_normal((5, 2)))
    ndgrad.backward(ndgrad.matmul(x, w).sum())
    assert_close(w.grad, x.data.reshape(-1, 5).T @ np.ones((12, 2)), atol=1e-12)
    assert x.grad.shape == (3, 4, 5)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ndgrad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_softmax_values():
    assert_close(ndgrad.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    assert_close(
        ndgrad.softmax(Tensor([1.0, 2.0, 3.0], dtype=np.float64)).data,
        [0.09003, 0.24473, 0.66524],
        atol=1e-5,
    )


def test_softmax_shift_invariance():
    x = np.random.default_rng(0).standard_normal((4, 7))
    shifted = ndgrad.softmax(Tensor(x + 123.0)).data
    assert_close(ndgrad.softmax(Tensor(x)).data, shifted)


def test_softmax_rows_sum_to_one_and_positive():
    x = np.random.default_rng(2).standard_normal((50, 9)) * 20
    y = ndgrad.softmax(Tensor(x), axis=-1).data
    assert np.all(np.abs(y.sum(axis=-1) - 1) <= 1e-6)
    assert np.all(y > 0)


def test_softmax_mask_zeroes_masked_positions():
    mask = np.tril(np.ones((3, 3), dtype=bool))
    y = ndgrad.softmax(Tensor(np.ones((3, 3))), axis=-1, mask=mask).data
    assert_close(y, [[1, 0, 0], [0.5, 0.5, 0], [1 / 3, 1 / 3, 1 / 3]])
    assert np.all(np.isfinite(y))


def test_softmax_fully_masked_row():
    with pytest.raises(ParameterError):
        ndgrad.softmax(Tensor(np.ones((2, 2))), mask=np.array([[True, False], [False, False]]))


def test_softmax_bad_axis():
    with pytest.raises(ShapeError):
        ndgrad.softmax(Tensor(np.ones((2, 2))), axis=2)


@pytest.mark.parametrize(
    "v,gamma,beta,expected",
    (
        ([1, -1], 1, 0, [1, -1]),
        ([3, 3], 1, 0, [0, 0]),
        ([0, 2], 2, 1, [-1, 3]),
    ),
)
def test_layer_norm_examples(v, gamma, beta, expected):
    out = ndgrad.layer_norm(
        Tensor(v, dtype=np.float64),
        Tensor(np.full(2, gamma, dtype=np.float64)),
        Tensor(np.full(2, beta, dtype=np.float64)),
    )
    assert_close(out.data, expected, atol=1e-4)


def test_layer_norm_statistics():
    rng = np.random.default_rng(3)
    v = Tensor(rng.standard_normal((20, 16)) * 5 + 3)
    out = ndgrad.layer_norm(v, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    assert np.all(np.abs(out.mean(axis=-1)) < 1e-5)
    assert np.all(np.abs(out.var(axis=-1) - 1) < 1e-3)


def test_layer_norm_shape_mismatch():
    with pytest.raises(ShapeError):
        ndgrad.layer_norm(Tensor(np.ones((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)))


def test_relu():
    assert_close(ndgrad.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    assert not ndgrad.relu(Tensor(-np.arange(1.0, 5.0))).data.any()
    x = leaf([-1.0, 2.0])
    ndgrad.backward(ndgrad.relu(x).sum())
    assert_close(x.grad, [0, 1])


def test_relu_gradient_at_zero_is_zero():
    x = leaf([0.0])
    ndgrad.backward(ndgrad.relu(x).sum())
    assert_close(x.grad, [0])


def test_dropout_identity_cases():
    x = Tensor(np.arange(6.0))
    assert ndgrad.dropout(x, 0.3, "eval") is x
    assert ndgrad.dropout(x, 0.0, "train", np.random.default_rng(0)) is x


def test_dropout_keeps_expectation():
    n = 100_000
    out = ndgrad.dropout(Tensor(np.ones(n)), 0.5, "train", np.random.default_rng(7)).data
    # Each element is 0 or 2, so the mean has std 1/sqrt(n).
    assert abs(out.mean() - 1.0) < 3 / math.sqrt(n)
    assert set(np.unique(out)) <= {0.0, 2.0}


def test_dropout_mask_reused_in_backward():
    x = leaf(np.ones(50))
    out = ndgrad.dropout(x, 0.5, "train", np.random.default_rng(0))
    ndgrad.backward(out.sum())
    assert_close(x.grad, out.data)


@pytest.mark.parametrize("p", (1.0, 1.5, -0.1))
def test_dropout_bad_probability(p):
    with pytest.raises(ParameterError):
        ndgrad.dropout(Tensor(np.ones(3)), p, "train", np.random.default_rng(0))


def test_mse_loss():
    assert ndgrad.mse_loss(Tensor([1.0, 2.0]), np.array([1.0, 2.0])).item() == 0
    assert ndgrad.mse_loss(Tensor([1.0, 1.0]), np.array([0.0, 2.0])).item() == 1.0
    pred = leaf([1.0])
    ndgrad.backward(ndgrad.mse_loss(pred, np.array([0.0])))
    assert_close(pred.grad, [2])


def test_mse_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        ndgrad.mse_loss(Tensor([1.0, 2.0]), np.zeros(3))


@pytest.mark.parametrize(
    "logits,label,expected,atol",
    (
        ([0, 0], 0, math.log(2), 1e-6),
        ([20, -20], 0, 0, 1e-8),
        ([1, 0], 1, 1.3133, 1e-4),
    ),
)
def test_cross_entropy_loss(logits, label, expected, atol):
    loss = ndgrad.cross_entropy_loss(Tensor([logits], dtype=np.float64), [label])
    assert abs(loss.item() - expected) < atol


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    logits = leaf([[1.0, 0.0], [0.0, 3.0]])
    ndgrad.backward(ndgrad.cross_entropy_loss(logits, [1, 1]))
    probs = ndgrad.softmax(Tensor(logits.data)).data
    assert_close(logits.grad, (probs - [[0, 1], [0, 1]]) / 2, atol=1e-12)


@pytest.mark.parametrize("labels", ([2], [-1]))
def test_cross_entropy_bad_label(labels):
    with pytest.raises(ParameterError):
        ndgrad.cross_entropy_loss(Tensor([[0.0, 0.0]]), labels)


def test_backward_sum_gives_ones():
    x = leaf(np.zeros((3, 4)))
    ndgrad.backward(x.sum())
    assert_close(x.grad, np.ones((3, 4)))


def test_backward_square():
    x = leaf([3.0])
    ndgrad.backward((x * x).sum())
    assert_close(x.grad, [6])


def test_backward_accumulates_fan_out():
    x = leaf([2.0, -1.0])
    y = x + x * x
    ndgrad.backward(y.sum())
    assert_close(x.grad, 1 + 2 * x.data)


def test_bias_gradient_summed_over_rows():
    x = leaf(np.ones((4, 3)))
    b = leaf(np.zeros(3))
    ndgrad.backward(ndgrad.add(x, b).sum())
    assert_close(b.grad, [4, 4, 4])


def test_backward_needs_scalar():
    x = leaf([1.0, 2.0])
    with pytest.raises(ShapeError):
        ndgrad.backward(x * 2.0)


def test_second_backward_is_stale():
    x = leaf([1.0, 2.0])
    loss = (x * 3.0).sum()
    ndgrad.backward(loss)
    with pytest.raises(StaleTapeError):
        ndgrad.backward(loss)


def test_backward_without_tape():
    with pytest.raises(StaleTapeError):
        ndgrad.backward(Tensor(1.0))


def test_independent_graphs_have_independent_tapes():
    a, b = leaf([1.0]), leaf([2.0])
    loss_a = (a * 2.0).sum()
    loss_b = (b * 3.0).sum()
    assert loss_a._tape is not loss_b._tape
    ndgrad.backward(loss_b)
    ndgrad.backward(loss_a)
    assert_close(a.grad, [2])
    assert_close(b.grad, [3])


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with ndgrad.no_grad():
        y = x * 2.0
    assert y.is_leaf
    assert not y.requires_grad


def test_overflow_is_an_error():
    with pytest.raises(NonFiniteError):
        ndgrad.matmul(Tensor([[1e30]]), Tensor([[1e30]]))


def test_dtype_preserved():
    x32 = Tensor(np.ones((2, 2), dtype=np.float32))
    x64 = Tensor(np.ones((2, 2), dtype=np.float64))
    assert ndgrad.matmul(x32, x32).dtype == np.float32
    assert ndgrad.softmax(x64).dtype == np.float64
    assert Tensor([1, 2]).dtype == np.float32


def test_backward_is_deterministic():
    def grads():
        rng = np.random.default_rng(5)
        w = Tensor(rng.standard_normal((4, 3)).astype(np.float32), requires_grad=True)
        x = Tensor(rng.standard_normal((6, 4)).astype(np.float32))
        ndgrad.backward(ndgrad.softmax(ndgrad.matmul(x, w)).sum() * 0.5)
        return w.grad

    assert np.array_equal(grads(), grads())


def test_clip_unchanged_below_cap():
    grads = [np.array([0.3, 0.4])]
    clipped, norm = ndgrad.clip_global_norm(grads, 1.0)
    assert norm == pytest.approx(0.5)
    assert_close(clipped[0], grads[0], atol=0)


def test_clip_scales_to_cap():
    clipped, norm = ndgrad.clip_global_norm([np.array([3.0, 4.0])], 1.0)
    assert norm == pytest.approx(5.0)
    assert_close(clipped[0], [0.6, 0.8], atol=1e-12)


def test_clip_slack_is_absolute():
    within = [np.array([50.0 + 5e-7])]
    clipped, _ = ndgrad.clip_global_norm(within, 50.0)
    assert clipped[0][0] == within[0][0]

    over = [np.array([50.000005])]
    clipped, norm = ndgrad.clip_global_norm(over, 50.0)
    assert norm == pytest.approx(50.000005, abs=1e-12)
    assert ndgrad.global_norm(clipped) <= 50.0 + ndgrad.CLIP_SLACK

    rng = np.random.default_rng(5)
    grads = [rng.standard_normal((8, 8)) * 100, rng.standard_normal(8) * 100]
    clipped, _ = ndgrad.clip_global_norm(grads, 7.5)
    assert ndgrad.global_norm(clipped) <= 7.5 + ndgrad.CLIP_SLACK


def test_clip_zero_gradients():
    clipped, norm = ndgrad.clip_global_norm([np.zeros(3), np.zeros((2, 2))], 1.0)
    assert norm == 0
    assert not any(g.any() for g in clipped)


def test_clip_is_idempotent():
    rng = np.random.default_rng(11)
    for _ in range(20):
        grads = [
            (rng.standard_normal(s) * 10).astype(np.float32) for s in ((5,), (3, 4))
        ]
        once, _ = ndgrad.clip_global_norm(grads, 1.0)
        twice, _ = ndgrad.clip_global_norm(once, 1.0)
        for a, b in zip(once, twice):
            assert np.array_equal(a, b)


def test_clip_bad_cap():
    with pytest.raises(ParameterError):
        ndgrad.clip_global_norm([np.ones(2)], 0.0)
