"""Dense LSTM + fully-connected stack with exact backpropagation through time.

Vectors are rows: a single input has shape (n,) and a batch has shape
(batch, n); every operation accepts either. All arithmetic is float64.

Gates are stacked in the order (input, forget, cell, output) along the first
axis of the LSTM weights, so `w_ih[:n_h]` are the input-gate weights,
`w_ih[n_h:2 * n_h]` the forget-gate weights, and so on.
"""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from dataclasses import field

import numpy as np
from scipy.special import expit

from age_estimator._data import DimensionError
from age_estimator._data import FloatArray

GATE_ORDER = ("input", "forget", "cell", "output")


@dataclass
class LstmParams:
    w_ih: FloatArray  # (4 n_h, n_x)
    w_hh: FloatArray  # (4 n_h, n_h)
    b_ih: FloatArray  # (4 n_h,)
    b_hh: FloatArray  # (4 n_h,)

    def __post_init__(self) -> None:
        n_h = self.w_hh.shape[1]
        expected = {
            "w_ih": (4 * n_h, self.w_ih.shape[1]),
            "w_hh": (4 * n_h, n_h),
            "b_ih": (4 * n_h,),
            "b_hh": (4 * n_h,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(
                    f"lstm.{name} has shape {getattr(self, name).shape}, "
                    f"expected {shape}",
                )

    @property
    def n_x(self) -> int:
        return int(self.w_ih.shape[1])

    @property
    def n_h(self) -> int:
        return int(self.w_hh.shape[1])


@dataclass
class FcParams:
    w: FloatArray  # (n_out, n_in)
    b: FloatArray  # (n_out,)

    def __post_init__(self) -> None:
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise DimensionError(
                f"fc weights {self.w.shape} and bias {self.b.shape} disagree",
            )

    @property
    def n_in(self) -> int:
        return int(self.w.shape[1])

    @property
    def n_out(self) -> int:
        return int(self.w.shape[0])


@dataclass
class StackParams:
    """LSTM -> FC1 (ReLU) -> FC2 (linear)."""

    lstm: LstmParams
    fc1: FcParams
    fc2: FcParams

    def __post_init__(self) -> None:
        if self.fc1.n_in != self.lstm.n_h or self.fc2.n_in != self.fc1.n_out:
            raise DimensionError("layer sizes of the stack do not chain")

    def named_arrays(self) -> dict[str, FloatArray]:
        """Name -> array; the arrays are the live parameter storage."""
        return {
            "lstm.w_ih": self.lstm.w_ih,
            "lstm.w_hh": self.lstm.w_hh,
            "lstm.b_ih": self.lstm.b_ih,
            "lstm.b_hh": self.lstm.b_hh,
            "fc1.w": self.fc1.w,
            "fc1.b": self.fc1.b,
            "fc2.w": self.fc2.w,
            "fc2.b": self.fc2.b,
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, FloatArray]) -> StackParams:
        return cls(
            lstm=LstmParams(
                w_ih=arrays["lstm.w_ih"],
                w_hh=arrays["lstm.w_hh"],
                b_ih=arrays["lstm.b_ih"],
                b_hh=arrays["lstm.b_hh"],
            ),
            fc1=FcParams(w=arrays["fc1.w"], b=arrays["fc1.b"]),
            fc2=FcParams(w=arrays["fc2.w"], b=arrays["fc2.b"]),
        )

    def copy(self) -> StackParams:
        return StackParams.from_arrays(
            {name: arr.copy() for name, arr in self.named_arrays().items()},
        )

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        """(n_x, n_h, n_fc, n_o)"""
        return self.lstm.n_x, self.lstm.n_h, self.fc1.n_out, self.fc2.n_out


@dataclass
class LstmState:
    h: FloatArray
    c: FloatArray

    @classmethod
    def zeros(cls, n_h: int, batch: int | None = None) -> LstmState:
        shape = (n_h,) if batch is None else (batch, n_h)
        return cls(h=np.zeros(shape), c=np.zeros(shape))

    def copy(self) -> LstmState:
        return LstmState(h=self.h.copy(), c=self.c.copy())


@dataclass
class LstmRecord:
    x: FloatArray
    h_prev: FloatArray  # after the carry mask
    c_prev: FloatArray
    carry: FloatArray | None
    i: FloatArray
    f: FloatArray
    g: FloatArray
    o: FloatArray
    tanh_c: FloatArray


@dataclass
class FcRecord:
    x: FloatArray
    pre: FloatArray
    relu: bool


@dataclass
class StepRecord:
    lstm: LstmRecord
    fc: list[FcRecord] = field(default_factory=list)


@dataclass
class TapeCache:
    """Activations of every forward step since the last reset."""

    steps: list[StepRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def reset(self) -> None:
        self.steps.clear()


def _check_width(name: str, x: FloatArray, width: int) -> None:
    if x.ndim not in (1, 2) or x.shape[-1] != width:
        raise DimensionError(f"{name} has shape {x.shape}, expected (..., {width})")


def lstm_forward(
    params: LstmParams,
    x: FloatArray,
    state: LstmState,
    cache: TapeCache | None = None,
    carry: FloatArray | None = None,
) -> tuple[FloatArray, LstmState]:
    """One LSTM cell step.

    Args:
        params: Cell weights and biases, gates stacked in `GATE_ORDER`
        x: Input of shape (n_x,) or (batch, n_x)
        state: Hidden and cell state from the previous step
        cache: Tape to record the step on for `backward`, if any
        carry: Per-row multiplier on the incoming state (batch only); a zero
            restarts that row from the zero state

    Returns:
        The new hidden output and the state to feed the next step
    """
    _check_width("lstm input", x, params.n_x)
    _check_width("lstm hidden state", state.h, params.n_h)
    if x.ndim != state.h.ndim or x.shape[:-1] != state.h.shape[:-1]:
        raise DimensionError(
            f"input batch {x.shape} does not match state {state.h.shape}",
        )

    h_prev, c_prev = state.h, state.c
    if carry is not None:
        col = np.asarray(carry, dtype=np.float64).reshape(-1, 1)
        h_prev = h_prev * col
        c_prev = c_prev * col

    n_h = params.n_h
    pre = x @ params.w_ih.T + params.b_ih + h_prev @ params.w_hh.T + params.b_hh
    i = expit(pre[..., :n_h])
    f = expit(pre[..., n_h:2 * n_h])
    g = np.tanh(pre[..., 2 * n_h:3 * n_h])
    o = expit(pre[..., 3 * n_h:])

    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c

    if cache is not None:
        cache.steps.append(
            StepRecord(
                lstm=LstmRecord(
                    x=x, h_prev=h_prev, c_prev=c_prev, carry=carry,
                    i=i, f=f, g=g, o=o, tanh_c=tanh_c,
                ),
            ),
        )
    return h, LstmState(h=h, c=c)


def fc_forward(
    params: FcParams,
    x: FloatArray,
    relu: bool,
    cache: TapeCache | None = None,
) -> FloatArray:
    """W x + b, optionally rectified; records onto the latest cached step."""
    _check_width("fc input", x, params.n_in)
    pre = x @ params.w.T + params.b
    out = np.maximum(pre, 0.0) if relu else pre
    if cache is not None:
        if not cache.steps:
            raise ValueError("fc_forward needs an lstm step on the tape first")
        cache.steps[-1].fc.append(FcRecord(x=x, pre=pre, relu=relu))
    return out


def _outer_sum(a: FloatArray, b: FloatArray) -> FloatArray:
    """sum over the batch of outer(a_k, b_k)"""
    return np.atleast_2d(a).T @ np.atleast_2d(b)


def _batch_sum(a: FloatArray) -> FloatArray:
    return np.atleast_2d(a).sum(axis=0)


def fc_backward(
    params: FcParams,
    record: FcRecord,
    grad_out: FloatArray,
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """Gradients (dW, db, dx) of one dense layer."""
    grad_pre = grad_out * (record.pre > 0) if record.relu else grad_out
    return (
        _outer_sum(grad_pre, record.x),
        _batch_sum(grad_pre),
        grad_pre @ params.w,
    )


def stack_forward(
    params: StackParams,
    x: FloatArray,
    state: LstmState,
    cache: TapeCache | None = None,
    carry: FloatArray | None = None,
) -> tuple[FloatArray, LstmState]:
    """LSTM -> FC1 (ReLU) -> FC2 for one step.

    Args:
        params: Weights of all three layers
        x: Input of shape (n_x,) or (batch, n_x)
        state: Recurrent state from the previous step
        cache: Tape to record the step on for `backward`, if any
        carry: Per-row state multiplier, as in `lstm_forward`

    Returns:
        The output layer's values and the new recurrent state
    """
    h, state = lstm_forward(params.lstm, x, state, cache, carry)
    hidden = fc_forward(params.fc1, h, relu=True, cache=cache)
    return fc_forward(params.fc2, hidden, relu=False, cache=cache), state


def zeros_like_params(params: StackParams) -> dict[str, FloatArray]:
    return {name: np.zeros_like(arr) for name, arr in params.named_arrays().items()}


def backward(
    loss_grads: Sequence[FloatArray | None],
    cache: TapeCache,
    params: StackParams,
) -> dict[str, FloatArray]:
    """Exact gradients of a scalar loss through the unrolled stack.

    Args:
        loss_grads: dLoss/d(output) for each recorded step, or None for steps
            that do not enter the loss
        cache: Tape filled by `stack_forward` over the same steps
        params: The weights the tape was recorded with

    Returns:
        Gradients keyed like `StackParams.named_arrays`
    """
    if not cache.steps:
        raise ValueError("cannot backpropagate through an empty tape")
    if len(loss_grads) != len(cache.steps):
        raise DimensionError(
            f"{len(loss_grads)} loss gradients for {len(cache.steps)} steps",
        )

    grads = zeros_like_params(params)
    last = cache.steps[-1].lstm
    dh_next = np.zeros_like(last.tanh_c)
    dc_next = np.zeros_like(last.tanh_c)

    for step, grad_out in zip(reversed(cache.steps), reversed(loss_grads)):
        rec = step.lstm
        dh = dh_next
        if grad_out is not None:
            if len(step.fc) != 2:
                raise DimensionError("loss gradient given for a step without a head")
            fc1_rec, fc2_rec = step.fc
            dw, db, d_hidden = fc_backward(params.fc2, fc2_rec, grad_out)
            grads["fc2.w"] += dw
            grads["fc2.b"] += db
            dw, db, dh_head = fc_backward(params.fc1, fc1_rec, d_hidden)
            grads["fc1.w"] += dw
            grads["fc1.b"] += db
            dh = dh + dh_head

        do = dh * rec.tanh_c
        dc = dh * rec.o * (1.0 - rec.tanh_c ** 2) + dc_next
        di = dc * rec.g
        dg = dc * rec.i
        df = dc * rec.c_prev

        dpre = np.concatenate(
            [
                di * rec.i * (1.0 - rec.i),
                df * rec.f * (1.0 - rec.f),
                dg * (1.0 - rec.g ** 2),
                do * rec.o * (1.0 - rec.o),
            ],
            axis=-1,
        )
        grads["lstm.w_ih"] += _outer_sum(dpre, rec.x)
        grads["lstm.w_hh"] += _outer_sum(dpre, rec.h_prev)
        db = _batch_sum(dpre)
        grads["lstm.b_ih"] += db
        grads["lstm.b_hh"] += db

        dh_next = dpre @ params.lstm.w_hh
        dc_next = dc * rec.f
        if rec.carry is not None:
            col = np.asarray(rec.carry, dtype=np.float64).reshape(-1, 1)
            dh_next = dh_next * col
            dc_next = dc_next * col

    return grads


@dataclass
class AdamState:
    m: dict[str, FloatArray]
    v: dict[str, FloatArray]
    step_count: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-3

    @classmethod
    def for_params(
        cls,
        params: dict[str, FloatArray],
        lr: float = 1e-4,
        weight_decay: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> AdamState:
        return cls(
            m={name: np.zeros_like(arr) for name, arr in params.items()},
            v={name: np.zeros_like(arr) for name, arr in params.items()},
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            weight_decay=weight_decay,
        )


def adam_step(
    params: dict[str, FloatArray],
    grads: dict[str, FloatArray],
    opt: AdamState,
) -> tuple[dict[str, FloatArray], AdamState]:
    """Bias-corrected Adam with classic L2 (decay added to the gradient).

    Args:
        params: Named parameter arrays, updated in place
        grads: Gradients with the same names and shapes
        opt: Moments, step count and hyperparameters; advanced in place

    Returns:
        `params` and `opt`, both mutated
    """
    if params.keys() != grads.keys():
        raise DimensionError("parameter and gradient names differ")

    opt.step_count += 1
    t = opt.step_count
    correction1 = 1.0 - opt.beta1 ** t
    correction2 = 1.0 - opt.beta2 ** t
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}")
        if opt.weight_decay:
            g = g + opt.weight_decay * theta
        m = opt.m[name]
        v = opt.v[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        theta -= opt.lr * (m / correction1) / (np.sqrt(v / correction2) + opt.eps)
    return params, opt


def op_count(n_x: int, n_h: int, n_o: int) -> int:
    """Approximate per-step operation count of the LSTM + two FC layers."""
    if min(n_x, n_h, n_o) < 1:
        raise ValueError("layer sizes must be positive")
    return 4 * (n_x * n_h + 2 * n_h + n_h * n_h) + 4 * n_h + 2 * n_h * n_h + n_h * n_o


def init_params(
    n_x: int,
    n_h: int,
    n_o: int,
    rng: np.random.Generator,
    n_fc: int | None = None,
) -> StackParams:
    """Uniform(+-1/sqrt(n_h)) for every weight and bias.

    Args:
        n_x: Input width
        n_h: LSTM hidden width
        n_o: Output width
        rng: Generator for the draws
        n_fc: Width of the ReLU layer, `n_h` when omitted

    Returns:
        Fresh parameters for the whole stack
    """
    n_fc = n_h if n_fc is None else n_fc
    bound = 1.0 / math.sqrt(n_h)

    def draw(*shape: int) -> FloatArray:
        return rng.uniform(-bound, bound, size=shape)

    return StackParams(
        lstm=LstmParams(
            w_ih=draw(4 * n_h, n_x),
            w_hh=draw(4 * n_h, n_h),
            b_ih=draw(4 * n_h),
            b_hh=draw(4 * n_h),
        ),
        fc1=FcParams(w=draw(n_fc, n_h), b=draw(n_fc)),
        fc2=FcParams(w=draw(n_o, n_fc), b=draw(n_o)),
    )


def sequence_loss(
    params: StackParams,
    inputs: FloatArray,
    targets: FloatArray,
    cache: TapeCache | None = None,
) -> tuple[float, list[FloatArray]]:
    """Mean squared residual of the stack over one (steps, n_x) sequence.

    Args:
        params: Stack weights
        inputs: Inputs of shape (steps, n_x), run from the zero state
        targets: Targets of shape (steps, n_o)
        cache: Tape to record the forward pass on, if any

    Returns:
        The loss and dLoss/d(output) per step
    """
    state = LstmState.zeros(params.lstm.n_h)
    outputs = []
    for x in inputs:
        y, state = stack_forward(params, x, state, cache)
        outputs.append(y)
    residuals = np.asarray(outputs) - targets
    n = len(inputs)
    loss = float(np.sum(residuals ** 2) / n)
    return loss, [2.0 * r / n for r in residuals]


def gradient_check(
    params: StackParams,
    inputs: FloatArray,
    targets: FloatArray,
    step: float = 1e-5,
    floor: float = 1e-4,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Every entry of every parameter array is perturbed.

    Args:
        params: Stack weights; each entry is restored after its perturbation
        inputs: Inputs of shape (steps, n_x)
        targets: Targets of shape (steps, n_o)
        step: Central-difference step
        floor: Smallest denominator of the relative error, which is
            max(|analytic|, |numeric|, floor)

    Returns:
        The worst relative error over all entries
    """
    cache = TapeCache()
    _, loss_grads = sequence_loss(params, inputs, targets, cache)
    analytic = backward(loss_grads, cache, params)

    worst = 0.0
    for name, arr in params.named_arrays().items():
        grad = analytic[name]
        for idx in np.ndindex(arr.shape):
            saved = arr[idx]
            arr[idx] = saved + step
            plus, _ = sequence_loss(params, inputs, targets)
            arr[idx] = saved - step
            minus, _ = sequence_loss(params, inputs, targets)
            arr[idx] = saved
            numeric = (plus - minus) / (2 * step)
            denom = max(abs(grad[idx]), abs(numeric), floor)
            worst = max(worst, abs(grad[idx] - numeric) / denom)
    return worst
