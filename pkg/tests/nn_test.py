"""Tests for the LSTM + dense stack, backpropagation and Adam."""
from __future__ import annotations

import math

import numpy as np
import pytest

from age_estimator._data import DimensionError
from age_estimator._harness import random_gradcheck_case
from age_estimator._nn import AdamState
from age_estimator._nn import FcParams
from age_estimator._nn import LstmParams
from age_estimator._nn import LstmState
from age_estimator._nn import StackParams
from age_estimator._nn import TapeCache
from age_estimator._nn import adam_step
from age_estimator._nn import backward
from age_estimator._nn import fc_backward
from age_estimator._nn import fc_forward
from age_estimator._nn import init_params
from age_estimator._nn import lstm_forward
from age_estimator._nn import op_count
from age_estimator._nn import stack_forward


def _zero_stack(n_x: int, n_h: int, n_o: int) -> StackParams:
    return StackParams(
        lstm=LstmParams(
            w_ih=np.zeros((4 * n_h, n_x)),
            w_hh=np.zeros((4 * n_h, n_h)),
            b_ih=np.zeros(4 * n_h),
            b_hh=np.zeros(4 * n_h),
        ),
        fc1=FcParams(w=np.zeros((n_h, n_h)), b=np.zeros(n_h)),
        fc2=FcParams(w=np.zeros((n_o, n_h)), b=np.zeros(n_o)),
    )


def _reference_lstm(params, x, h, c):
    """Scalar loops over the gate equations."""
    n_h = params.n_h

    def sigmoid(v):
        return 1.0 / (1.0 + math.exp(-v))

    pre = []
    for row in range(4 * n_h):
        total = params.b_ih[row] + params.b_hh[row]
        total += sum(params.w_ih[row, j] * x[j] for j in range(len(x)))
        total += sum(params.w_hh[row, j] * h[j] for j in range(n_h))
        pre.append(total)
    h_new, c_new = [], []
    for k in range(n_h):
        i = sigmoid(pre[k])
        f = sigmoid(pre[n_h + k])
        g = math.tanh(pre[2 * n_h + k])
        o = sigmoid(pre[3 * n_h + k])
        c_k = f * c[k] + i * g
        c_new.append(c_k)
        h_new.append(o * math.tanh(c_k))
    return np.array(h_new), np.array(c_new)


# =============================================================================
# forward pass
# =============================================================================


def test_zero_parameters_give_zero_output():
    params = _zero_stack(5, 4, 2)
    out, state = stack_forward(params, np.ones(5), LstmState.zeros(4))
    np.testing.assert_array_equal(out, np.zeros(2))
    np.testing.assert_array_equal(state.h, np.zeros(4))
    np.testing.assert_array_equal(state.c, np.zeros(4))


def test_lstm_matches_scalar_reference():
    rng = np.random.default_rng(0)
    params = init_params(3, 4, 2, rng).lstm
    state = LstmState.zeros(4)
    h_ref, c_ref = np.zeros(4), np.zeros(4)
    for x in rng.normal(size=(6, 3)):
        h, state = lstm_forward(params, x, state)
        h_ref, c_ref = _reference_lstm(params, x, h_ref, c_ref)
        np.testing.assert_allclose(h, h_ref, atol=1e-12)
        np.testing.assert_allclose(state.c, c_ref, atol=1e-12)
        assert np.all(np.abs(h) < 1.0)


def test_lstm_carry_restarts_a_batch_row():
    rng = np.random.default_rng(1)
    params = init_params(3, 4, 2, rng).lstm
    x = rng.normal(size=(2, 3))
    warm = LstmState(h=rng.normal(size=(2, 4)), c=rng.normal(size=(2, 4)))
    h, _ = lstm_forward(params, x, warm, carry=np.array([1.0, 0.0]))

    h0, _ = lstm_forward(params, x[0], LstmState(h=warm.h[0], c=warm.c[0]))
    h1, _ = lstm_forward(params, x[1], LstmState.zeros(4))
    np.testing.assert_allclose(h[0], h0, atol=1e-14)
    np.testing.assert_allclose(h[1], h1, atol=1e-14)


def test_lstm_rejects_wrong_input_width():
    params = init_params(3, 4, 2, np.random.default_rng(0)).lstm
    with pytest.raises(DimensionError):
        lstm_forward(params, np.zeros(5), LstmState.zeros(4))


def test_lstm_rejects_batch_state_mismatch():
    params = init_params(3, 4, 2, np.random.default_rng(0)).lstm
    with pytest.raises(DimensionError):
        lstm_forward(params, np.zeros((2, 3)), LstmState.zeros(4, batch=3))


def test_fc_relu_clips_negatives():
    params = FcParams(w=np.array([[1.0, 0.0], [0.0, -1.0]]), b=np.array([0.0, 0.5]))
    out = fc_forward(params, np.array([-2.0, 1.0]), relu=True)
    np.testing.assert_array_equal(out, [0.0, 0.0])
    out = fc_forward(params, np.array([-2.0, 1.0]), relu=False)
    np.testing.assert_array_equal(out, [-2.0, -0.5])


def test_fc_forward_needs_an_lstm_step_on_the_tape():
    params = FcParams(w=np.eye(2), b=np.zeros(2))
    with pytest.raises(ValueError, match='lstm step'):
        fc_forward(params, np.zeros(2), relu=False, cache=TapeCache())


def test_stack_sizes_must_chain():
    params = _zero_stack(3, 4, 2)
    with pytest.raises(DimensionError):
        StackParams(
            lstm=params.lstm,
            fc1=FcParams(w=np.zeros((4, 5)), b=np.zeros(4)),
            fc2=params.fc2,
        )


# =============================================================================
# backward pass
# =============================================================================


def test_fc_backward_closed_form():
    rng = np.random.default_rng(2)
    params = FcParams(w=rng.normal(size=(3, 4)), b=rng.normal(size=3))
    x = rng.normal(size=4)
    y = rng.normal(size=3)
    cache = TapeCache()
    lstm_forward(init_params(1, 1, 1, rng).lstm, np.zeros(1), LstmState.zeros(1), cache)
    out = fc_forward(params, x, relu=False, cache=cache)
    # loss = 0.5 |W x + b - y|^2
    dw, db, dx = fc_backward(params, cache.steps[-1].fc[0], out - y)
    np.testing.assert_allclose(dw, np.outer(out - y, x))
    np.testing.assert_allclose(db, out - y)
    np.testing.assert_allclose(dx, params.w.T @ (out - y))


def test_backward_of_zero_loss_is_zero():
    rng = np.random.default_rng(3)
    params = init_params(3, 4, 2, rng)
    cache = TapeCache()
    state = LstmState.zeros(4)
    for x in rng.normal(size=(3, 3)):
        _, state = stack_forward(params, x, state, cache)
    grads = backward([np.zeros(2)] * 3, cache, params)
    for grad in grads.values():
        np.testing.assert_array_equal(grad, 0.0)


def test_backward_empty_tape():
    params = init_params(3, 4, 2, np.random.default_rng(0))
    with pytest.raises(ValueError, match='empty tape'):
        backward([], TapeCache(), params)


def test_backward_misaligned_gradients():
    params = init_params(3, 4, 2, np.random.default_rng(0))
    cache = TapeCache()
    stack_forward(params, np.zeros(3), LstmState.zeros(4), cache)
    with pytest.raises(DimensionError):
        backward([None, np.zeros(2)], cache, params)


@pytest.mark.parametrize(
    ('n_x', 'n_o'),
    (
        pytest.param(12, 4, id='vehicle layout'),
        pytest.param(9, 3, id='cartpole layout'),
    ),
)
@pytest.mark.parametrize('seed', range(3))
def test_gradients_match_central_differences(n_x, n_o, seed):
    error, _ = random_gradcheck_case(np.random.default_rng(seed), n_x, n_o)
    assert error < 1e-4


def test_batched_gradient_is_sum_of_sequence_gradients():
    rng = np.random.default_rng(4)
    params = init_params(3, 4, 2, rng)
    inputs = rng.normal(size=(3, 2, 3))  # (steps, batch, n_x)
    grad_out = rng.normal(size=(2, 2))
    carry = np.ones(2)

    cache = TapeCache()
    state = LstmState.zeros(4, batch=2)
    for x in inputs:
        _, state = stack_forward(params, x, state, cache, carry=carry)
    batched = backward([None, None, grad_out], cache, params)

    for name, grad in batched.items():
        total = np.zeros_like(grad)
        for row in range(2):
            cache = TapeCache()
            state = LstmState.zeros(4)
            for x in inputs[:, row]:
                _, state = stack_forward(params, x, state, cache)
            total += backward([None, None, grad_out[row]], cache, params)[name]
        np.testing.assert_allclose(grad, total, atol=1e-12)


# =============================================================================
# Adam
# =============================================================================


def test_adam_constant_gradient_moves_lr_per_step():
    theta = {'w': np.array([1.0])}
    opt = AdamState.for_params(theta, lr=0.1, weight_decay=0.0)
    for _ in range(3):
        adam_step(theta, {'w': np.array([0.5])}, opt)
    assert opt.step_count == 3
    assert theta['w'][0] == pytest.approx(0.7, abs=1e-6)


def test_adam_zero_gradient_without_decay_is_a_no_op():
    theta = {'w': np.array([1.0, -2.0])}
    opt = AdamState.for_params(theta, weight_decay=0.0)
    adam_step(theta, {'w': np.zeros(2)}, opt)
    np.testing.assert_array_equal(theta['w'], [1.0, -2.0])


def test_adam_weight_decay_shrinks_toward_zero():
    theta = {'w': np.array([1.0, -2.0])}
    opt = AdamState.for_params(theta, lr=0.01, weight_decay=0.5)
    adam_step(theta, {'w': np.zeros(2)}, opt)
    assert 0.0 < theta['w'][0] < 1.0
    assert -2.0 < theta['w'][1] < 0.0


def test_adam_rejects_mismatched_names():
    theta = {'w': np.zeros(2)}
    opt = AdamState.for_params(theta)
    with pytest.raises(DimensionError):
        adam_step(theta, {'v': np.zeros(2)}, opt)


# =============================================================================
# sizing and initialization
# =============================================================================


@pytest.mark.parametrize(
    ('sizes', 'expected'),
    (
        pytest.param((12, 64, 4), 28672, id='linear vehicle'),
        pytest.param((9, 64, 3), 27840, id='cartpole'),
    ),
)
def test_op_count(sizes, expected):
    assert op_count(*sizes) == expected


def test_op_count_rejects_empty_layer():
    with pytest.raises(ValueError):
        op_count(12, 0, 4)


def test_init_params_is_seeded_and_bounded():
    a = init_params(12, 64, 4, np.random.default_rng(7))
    b = init_params(12, 64, 4, np.random.default_rng(7))
    values = []
    for (name, x), y in zip(a.named_arrays().items(), b.named_arrays().values()):
        np.testing.assert_array_equal(x, y, err_msg=name)
        assert np.all(np.abs(x) <= 1 / 8)
        values.append(x.ravel())
    flat = np.concatenate(values)
    se = (1 / 8) / math.sqrt(3) / math.sqrt(flat.size)
    assert abs(flat.mean()) < 4 * se


def test_params_round_trip_through_named_arrays():
    params = init_params(3, 4, 2, np.random.default_rng(0))
    copy = StackParams.from_arrays(params.named_arrays()).copy()
    for name, arr in params.named_arrays().items():
        np.testing.assert_array_equal(copy.named_arrays()[name], arr)
        assert copy.named_arrays()[name] is not arr
    assert copy.sizes == (3, 4, 4, 2)
