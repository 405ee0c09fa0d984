import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import away_from_zero, leaf, naive_conv2d
from sglanet import ops
from sglanet.errors import (BackwardTwiceError, LabelError, NoBackwardError, PrecisionError,
                            ShapeError)
from sglanet.gradcheck import grad_check
from sglanet.tensor import Parameter, Tensor, no_grad


# -- Tensor / Parameter ----------------------------------------------------------


def test_tensor_rejects_empty_extent():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 0)))


def test_tensor_rejects_integer_dtype_request():
    with pytest.raises(PrecisionError):
        Tensor([1, 2], dtype=np.int32)


def test_mixed_precision_is_an_error():
    a = Tensor(np.ones((1, 2), np.float32))
    b = Tensor(np.ones((1, 2), np.float64))
    with pytest.raises(PrecisionError):
        ops.broadcast_mul(a, b)


def test_parameter_grad_starts_at_zero():
    p = Parameter("w", np.ones((2, 3)))
    assert p.grad.shape == p.shape
    assert not p.grad.any()


def test_backward_runs_once_per_forward():
    x = leaf([1.0, -2.0, 3.0])
    y = ops.relu(x)
    y.backward()
    with pytest.raises(BackwardTwiceError):
        y.backward()


def test_gradient_accumulates_across_calls():
    p = Parameter("w", np.array([[2.0]]))
    for _ in range(3):
        ops.linear(Tensor(np.array([[1.0]])), p).backward()
    assert p.grad[0, 0] == 3.0


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with no_grad():
        y = ops.relu(x)
    assert y.op is None and not y.requires_grad


# -- conv2d -------------------------------------------------------------------------


def test_conv_all_ones_sum():
    out = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)))
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == 9.0


def test_conv_1x1_scaling():
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    out = ops.conv2d(x, Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data[0, 0], [[2, 4], [6, 8]])


def test_conv_matches_loop_reference(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, pad=1)
    assert out.shape == (1, 3, 4, 4)
    np.testing.assert_allclose(out.data, naive_conv2d(x, w, b, 1, 1), rtol=0, atol=1e-12)


@pytest.mark.parametrize("stride,pad", [(2, 0), (2, 1), (3, 2)])
def test_conv_strided_matches_loop_reference(rng, stride, pad):
    x = rng.standard_normal((2, 3, 6, 5))
    w = rng.standard_normal((2, 3, 3, 2))
    out = ops.conv2d(Tensor(x), Tensor(w), None, stride=stride, pad=pad)
    np.testing.assert_allclose(out.data, naive_conv2d(x, w, None, stride, pad), atol=1e-12)


def test_conv_channel_mismatch_names_axis():
    with pytest.raises(ShapeError) as info:
        ops.conv2d(Tensor(np.ones((1, 2, 3, 3))), Tensor(np.ones((1, 3, 1, 1))))
    assert info.value.axis == 1


def test_conv_kernel_larger_than_input():
    with pytest.raises(ShapeError) as info:
        ops.conv2d(Tensor(np.ones((1, 1, 2, 5))), Tensor(np.ones((1, 1, 3, 3))))
    assert info.value.axis == 2


# -- pooling --------------------------------------------------------------------------


def test_gap_constant_and_mean():
    assert ops.global_avg_pool(Tensor(np.full((1, 1, 3, 3), 7.0))).data.item() == 7.0
    assert ops.global_avg_pool(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))).data.item() == 2.5


def test_gap_matches_direct_summation(rng):
    x = rng.standard_normal((2, 3, 5, 5))
    out = ops.global_avg_pool(Tensor(x)).data
    for n in range(2):
        for c in range(3):
            total = 0.0
            for i in range(5):
                for j in range(5):
                    total += x[n, c, i, j]
            assert out[n, c, 0, 0] == pytest.approx(total / 25, abs=1e-14)


def test_gap_broadcast_reproduces_constant_tensor():
    x = np.full((2, 3, 4, 5), 1.25)
    pooled = ops.global_avg_pool(Tensor(x)).data
    np.testing.assert_array_equal(np.broadcast_to(pooled, x.shape), x)


def test_channel_mean_cases():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]]]])
    np.testing.assert_array_equal(ops.channel_mean(Tensor(x)).data[0, 0], [[3, 4], [5, 6]])
    single = np.arange(6.0).reshape(1, 1, 2, 3)
    np.testing.assert_array_equal(ops.channel_mean(Tensor(single)).data, single)
    np.testing.assert_array_equal(ops.channel_mean(Tensor(np.full((1, 4, 2, 2), 7.0))).data, 7.0)


def test_max_pool_tie_goes_to_lowest_flat_index():
    x = leaf(np.ones((1, 1, 2, 2)))
    out = ops.max_pool(x, 2)
    out.backward(np.ones_like(out.data))
    np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])


def test_max_pool_values():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(ops.max_pool(Tensor(x), 2).data[0, 0], [[5, 7], [13, 15]])
    same = ops.max_pool(Tensor(x), 3, stride=1, pad=1)
    assert same.shape == x.shape
    assert same.data[0, 0, 0, 0] == 5 and same.data[0, 0, 3, 3] == 15


# -- elementwise / affine ---------------------------------------------------------------


def test_relu_sign_cases():
    np.testing.assert_array_equal(ops.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])


def test_relu_subgradient_at_zero_is_zero():
    x = leaf([0.0, 1.0])
    ops.relu(x).backward(np.ones(2))
    np.testing.assert_array_equal(x.grad, [0, 1])


def test_broadcast_mul_spatial_map():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 4, 4))
    ones = np.ones((2, 1, 4, 4))
    np.testing.assert_array_equal(ops.broadcast_mul(Tensor(x), Tensor(ones)).data, x)
    m = rng.standard_normal((2, 1, 4, 4))
    out = ops.broadcast_mul(Tensor(x), Tensor(m)).data
    for c in range(3):
        np.testing.assert_array_equal(out[:, c], x[:, c] * m[:, 0])


def test_broadcast_mul_rejects_incompatible():
    with pytest.raises(ShapeError):
        ops.broadcast_mul(Tensor(np.ones((1, 2, 3, 3))), Tensor(np.ones((1, 3, 3, 3))))


def test_linear_identity():
    x = np.random.default_rng(3).standard_normal((4, 5))
    out = ops.linear(Tensor(x), Tensor(np.eye(5)), Tensor(np.zeros(5)))
    np.testing.assert_array_equal(out.data, x)


def test_concat_then_slice_recovers_inputs(rng):
    parts = [rng.standard_normal((2, c, 3, 3)).astype(np.float32) for c in (1, 4, 2)]
    out = ops.concat_channels([Tensor(p) for p in parts]).data
    start = 0
    for p in parts:
        np.testing.assert_array_equal(out[:, start:start + p.shape[1]], p)
        start += p.shape[1]


def test_concat_mismatch():
    with pytest.raises(ShapeError) as info:
        ops.concat_channels([Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 2)))])
    assert info.value.axis == 2


# -- cross-entropy ------------------------------------------------------------------------


def test_uniform_logits_give_log_k():
    loss = ops.softmax_cross_entropy(Tensor(np.zeros((3, 500))), [0, 17, 499])
    assert loss.data.item() == pytest.approx(math.log(500), abs=1e-12)
    assert loss.data.item() == pytest.approx(6.2146, abs=1e-4)


def test_confident_correct_logits_give_tiny_loss():
    losses = []
    for gap in (5.0, 10.0, 20.0):
        logits = np.array([[0.0, gap]])
        losses.append(ops.softmax_cross_entropy(Tensor(logits), [1]).data.item())
    assert losses[0] > losses[1] > losses[2]
    assert losses[2] < 1e-8


def test_cross_entropy_matches_direct_formula(rng):
    logits = rng.standard_normal((4, 10)) * 3
    labels = [1, 9, 0, 4]
    direct = np.mean([math.log(sum(math.exp(v) for v in row)) - row[y] for row, y in zip(logits, labels)])
    got = ops.softmax_cross_entropy(Tensor(logits), labels).data.item()
    assert abs(got - direct) <= 1e-10


def test_cross_entropy_backward_formula(rng):
    logits = leaf(rng.standard_normal((3, 4)))
    labels = [0, 3, 1]
    ops.softmax_cross_entropy(logits, labels).backward()
    p = np.exp(logits.data) / np.exp(logits.data).sum(axis=1, keepdims=True)
    p[np.arange(3), labels] -= 1
    np.testing.assert_allclose(logits.grad, p / 3, atol=1e-15)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(LabelError):
        ops.softmax_cross_entropy(Tensor(np.zeros((1, 3))), [3])


@settings(max_examples=50, deadline=None)
@given(shift=st.floats(-1e3, 1e3, allow_nan=False), seed=st.integers(0, 2**32 - 1))
def test_cross_entropy_shift_invariance(shift, seed):
    r = np.random.default_rng(seed)
    logits = r.standard_normal((3, 6))
    labels = r.integers(0, 6, size=3)
    a = ops.softmax_cross_entropy(Tensor(logits), labels).data.item()
    b = ops.softmax_cross_entropy(Tensor(logits + shift), labels).data.item()
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a)) + 1e-12


# -- determinism ----------------------------------------------------------------------------


def test_forward_is_bit_deterministic(rng):
    x = rng.standard_normal((2, 3, 6, 6)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    a = ops.conv2d(Tensor(x), Tensor(w), pad=1).data
    b = ops.conv2d(Tensor(x), Tensor(w), pad=1).data
    assert a.tobytes() == b.tobytes()


# -- gradient checks -------------------------------------------------------------------------


def test_grad_check_identity_linear_is_exact():
    x = leaf(np.random.default_rng(0).standard_normal((2, 3)))
    w = Tensor(np.eye(3))
    assert grad_check(lambda x: ops.linear(x, w), [x]) < 1e-9


def test_grad_check_relu_away_from_kink(rng):
    x = leaf(away_from_zero(rng, (3, 4)))
    assert grad_check(ops.relu, [x]) <= 1e-9


def test_grad_check_conv(rng):
    x = leaf(rng.standard_normal((1, 2, 4, 4)))
    w = leaf(rng.standard_normal((3, 2, 3, 3)))
    b = leaf(rng.standard_normal(3))
    err = grad_check(lambda x, w, b: ops.conv2d(x, w, b, stride=1, pad=1), [x, w, b], eps=1e-4)
    assert err <= 1e-7


def test_grad_check_requires_float64():
    with pytest.raises(PrecisionError):
        grad_check(ops.relu, [Tensor(np.ones(2, np.float32), requires_grad=True)])


def test_grad_check_rejects_op_without_backward():
    x = leaf([1.0, 2.0])
    with pytest.raises(NoBackwardError):
        grad_check(lambda x: Tensor(x.data * 2), [x])


def test_grad_check_eps_range():
    with pytest.raises(ValueError):
        grad_check(ops.relu, [leaf([1.0])], eps=1e-2)


OPS = {
    "conv2d_strided": (lambda r: [leaf(r.standard_normal((2, 2, 5, 5))), leaf(r.standard_normal((3, 2, 3, 3))),
                                  leaf(r.standard_normal(3))],
                       lambda x, w, b: ops.conv2d(x, w, b, stride=2, pad=1)),
    "global_avg_pool": (lambda r: [leaf(r.standard_normal((2, 3, 4, 5)))], ops.global_avg_pool),
    "channel_mean": (lambda r: [leaf(r.standard_normal((2, 3, 4, 5)))], ops.channel_mean),
    "relu": (lambda r: [leaf(away_from_zero(r, (2, 3, 4)))], ops.relu),
    "linear": (lambda r: [leaf(r.standard_normal((3, 4))), leaf(r.standard_normal((2, 4))),
                          leaf(r.standard_normal(2))], ops.linear),
    "concat_channels": (lambda r: [leaf(r.standard_normal((2, 1, 3, 3))), leaf(r.standard_normal((2, 2, 3, 3)))],
                        lambda a, b: ops.concat_channels([a, b])),
    # distinct values spaced well beyond eps keep max-pool away from ties
    "max_pool": (lambda r: [leaf(r.permutation(50).reshape(1, 2, 5, 5) * 0.3)],
                 lambda x: ops.max_pool(x, 3, stride=1, pad=1)),
    "max_over_axis": (lambda r: [leaf(r.permutation(24).reshape(2, 3, 4) * 0.3)],
                      lambda x: ops.max_over_axis(x, 1)),
    "broadcast_mul": (lambda r: [leaf(r.standard_normal((2, 3, 4, 4))), leaf(r.standard_normal((2, 1, 4, 4)))],
                      ops.broadcast_mul),
    "bounded_tanh": (lambda r: [leaf(r.standard_normal((3, 4)))], lambda x: ops.bounded_tanh(x, 0.5)),
    "repeat_batch": (lambda r: [leaf(r.standard_normal((2, 3)))], lambda x: ops.repeat_batch(x, 3)),
    "softmax_cross_entropy": (lambda r: [leaf(r.standard_normal((4, 5)))],
                              lambda z: ops.softmax_cross_entropy(z, [0, 4, 2, 2])),
}


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_op_passes_grad_check(name, seed):
    make, fn = OPS[name]
    inputs = make(np.random.default_rng(seed))
    assert grad_check(fn, inputs, eps=1e-4) <= 1e-6
