"""The learned age-aware estimator: input assembly, model, replay and training."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt

from age_estimator._checkpoint import load_checkpoint
from age_estimator._checkpoint import save_checkpoint
from age_estimator._data import AgeMode
from age_estimator._data import CheckpointMismatchError
from age_estimator._data import ConfigError
from age_estimator._data import ControlMode
from age_estimator._data import DimensionError
from age_estimator._data import FloatArray
from age_estimator._dynamics import DynamicSystem
from age_estimator._dynamics import make_system
from age_estimator._network import AgeTracker
from age_estimator._network import noisy_age
from age_estimator._network import update_age
from age_estimator._nn import AdamState
from age_estimator._nn import LstmState
from age_estimator._nn import StackParams
from age_estimator._nn import TapeCache
from age_estimator._nn import adam_step
from age_estimator._nn import backward
from age_estimator._nn import init_params
from age_estimator._nn import stack_forward
from age_estimator._seeding import substream
from age_estimator._simulation import EpisodeTrace
from age_estimator._simulation import EvaluationResult
from age_estimator._simulation import Network
from age_estimator._simulation import RmseAccumulator
from age_estimator._simulation import episode_queue_config
from age_estimator._simulation import evaluation_trace
from age_estimator._simulation import simulate_episode

logger = logging.getLogger(__name__)

AGE_SCALE = 100.0
HIDDEN_SIZE = 64
GROUND_TRUTH_MODES = ("oracle", "delivered")


@dataclass(frozen=True, eq=False)
class EstimatorInput:
    """I(t) = [y_hat(t - 1), latest received y, age_y, age_u]."""

    prev_estimate: FloatArray
    latest_measurement: FloatArray
    age_y: float | None  # None when ages are left out of the input
    age_u: float | None

    def as_array(self) -> FloatArray:
        parts = [self.prev_estimate, self.latest_measurement]
        if self.age_y is not None and self.age_u is not None:
            parts.append(np.array([self.age_y, self.age_u]))
        return np.concatenate(parts).astype(np.float64)


def input_size(system: DynamicSystem, uses_age: bool) -> int:
    return system.estimate_size + system.measurement_size + (2 if uses_age else 0)


def input_scale(system: DynamicSystem, uses_age: bool) -> FloatArray:
    parts = [system.estimate_scale, system.measurement_scale]
    if uses_age:
        parts.append(np.full(2, AGE_SCALE))
    return np.concatenate(parts)


def build_input(
    tracker: AgeTracker,
    prev_estimate: FloatArray,
    system: DynamicSystem,
    control_mode: ControlMode,
    age_mode: AgeMode,
    true_controls: FloatArray | None = None,
    rng: np.random.Generator | None = None,
) -> EstimatorInput:
    """Assemble the estimator input from the receiver-side state only."""
    prev = np.asarray(prev_estimate, dtype=np.float64)
    if prev.shape != (system.estimate_size,):
        raise DimensionError(
            f"previous estimate has shape {prev.shape}, "
            f"expected ({system.estimate_size},)",
        )

    latest = np.array(tracker.last_value, dtype=np.float64)
    if control_mode is ControlMode.KNOWN:
        if true_controls is None:
            raise ValueError("known-control mode needs the current true controls")
        latest[system.control_slice] = true_controls

    if age_mode is AgeMode.NONE:
        return EstimatorInput(prev, latest, age_y=None, age_u=None)

    age_y = float(tracker.delta)
    if age_mode is AgeMode.NOISY:
        if rng is None:
            raise ValueError("noisy ages need a random generator")
        age_y = noisy_age(age_y, rng)
    age_u = 0.0 if control_mode is ControlMode.KNOWN else age_y
    return EstimatorInput(prev, latest, age_y=age_y, age_u=age_u)


@dataclass(eq=False)
class LaaModel:
    """LSTM -> FC1 (ReLU) -> FC2 with fixed input and output scaling."""

    params: StackParams
    system: DynamicSystem
    control_mode: ControlMode
    uses_age: bool
    recurrent_state: LstmState = field(init=False)
    input_scaling: FloatArray = field(init=False)

    def __post_init__(self) -> None:
        expected = input_size(self.system, self.uses_age)
        n_x, _, _, n_o = self.params.sizes
        if n_x != expected or n_o != self.system.estimate_size:
            raise DimensionError(
                f"stack maps {n_x} -> {n_o}, but {self.system.name} needs "
                f"{expected} -> {self.system.estimate_size}",
            )
        self.input_scaling = input_scale(self.system, self.uses_age)
        self.reset_state()

    @classmethod
    def create(
        cls,
        system: DynamicSystem,
        control_mode: ControlMode,
        uses_age: bool,
        rng: np.random.Generator,
        hidden_size: int = HIDDEN_SIZE,
    ) -> LaaModel:
        params = init_params(
            input_size(system, uses_age), hidden_size, system.estimate_size, rng,
        )
        return cls(params, system, control_mode, uses_age)

    @property
    def n_x(self) -> int:
        return self.params.lstm.n_x

    @property
    def output_scale(self) -> FloatArray:
        return self.system.estimate_scale

    def reset_state(self) -> None:
        self.recurrent_state = LstmState.zeros(self.params.lstm.n_h)

    def metadata(self) -> dict[str, Any]:
        return {
            "system": self.system.name,
            "control_mode": self.control_mode.value,
            "uses_age": self.uses_age,
            "input_scale": self.input_scaling.tolist(),
            "output_scale": self.output_scale.tolist(),
        }

    def save(self, path: Path, seed: int, extra: dict[str, Any] | None = None) -> None:
        save_checkpoint(path, self.params, seed, {**self.metadata(), **(extra or {})})

    @classmethod
    def load(cls, path: Path) -> tuple[LaaModel, dict[str, Any]]:
        params, metadata = load_checkpoint(path)
        try:
            system = make_system(metadata["system"])
            model = cls(
                params,
                system,
                ControlMode(metadata["control_mode"]),
                bool(metadata["uses_age"]),
            )
        except (KeyError, ValueError) as e:
            raise CheckpointMismatchError(f"{path}: {e}") from e
        scale = np.asarray(metadata.get("input_scale", []), dtype=np.float64)
        if scale.shape != model.input_scaling.shape or not np.allclose(
            scale, model.input_scaling,
        ):
            raise CheckpointMismatchError(f"{path}: input scaling differs")
        return model, metadata


def check_compatible(
    model: LaaModel,
    system: DynamicSystem,
    age_mode: AgeMode,
    control_mode: ControlMode,
) -> None:
    """Raise `CheckpointMismatchError` unless `model` can run this setting."""
    if model.system.name != system.name:
        raise CheckpointMismatchError(
            f"model was trained on {model.system.name!r}, not {system.name!r}",
        )
    if (age_mode is not AgeMode.NONE) != model.uses_age:
        raise CheckpointMismatchError(
            f"age mode {age_mode.value!r} does not match a model "
            f"{'with' if model.uses_age else 'without'} age inputs",
        )
    if model.control_mode is not control_mode:
        raise CheckpointMismatchError(
            f"model was trained with {model.control_mode.value!r} controls, "
            f"not {control_mode.value!r}",
        )


def estimate(model: LaaModel, inp: EstimatorInput) -> FloatArray:
    """One closed-loop step; advances the model's recurrent state."""
    x = inp.as_array()
    if x.shape != (model.n_x,):
        raise DimensionError(f"input has shape {x.shape}, model expects ({model.n_x},)")
    out, model.recurrent_state = stack_forward(
        model.params, x / model.input_scaling, model.recurrent_state,
    )
    return out * model.output_scale


def loss(predictions: npt.ArrayLike, ground_truths: npt.ArrayLike) -> float:
    """Mean over samples of the squared residual norm."""
    pred = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(ground_truths, dtype=np.float64))
    if pred.size == 0 or truth.size == 0:
        raise ValueError("loss of an empty batch")
    if pred.shape != truth.shape:
        raise DimensionError(f"predictions {pred.shape} vs ground truth {truth.shape}")
    residual = truth - pred
    return float(np.mean(np.sum(residual * residual, axis=1)))


@dataclass(frozen=True, eq=False)
class Experience:
    input: FloatArray  # scaled I(t)
    ground_truth: FloatArray | None
    episode: int
    slot: int


class ReplayMemory:
    """Fixed-capacity FIFO of experiences kept in flat ring arrays."""

    def __init__(self, capacity: int, n_x: int, n_o: int) -> None:
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.inputs = np.zeros((capacity, n_x))
        self.truths = np.zeros((capacity, n_o))
        self.labelled = np.zeros(capacity, dtype=bool)
        self.episodes = np.full(capacity, -1, dtype=np.int64)
        self.slots = np.zeros(capacity, dtype=np.int64)
        self.inserted = 0

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def push(
        self,
        inp: FloatArray,
        truth: FloatArray | None,
        episode: int,
        slot: int,
    ) -> int:
        """Store one experience, evicting the oldest when full; returns its index."""
        idx = self.inserted % self.capacity
        self.inputs[idx] = inp
        self.labelled[idx] = truth is not None
        if truth is not None:
            self.truths[idx] = truth
        self.episodes[idx] = episode
        self.slots[idx] = slot
        self.inserted += 1
        return idx

    def label(self, idx: int, episode: int, slot: int, truth: FloatArray) -> bool:
        """Attach a late label; False when the entry was already evicted."""
        if self.episodes[idx] != episode or self.slots[idx] != slot:
            return False
        self.truths[idx] = truth
        self.labelled[idx] = True
        return True

    def __getitem__(self, idx: int) -> Experience:
        if not 0 <= idx < len(self):
            raise IndexError(idx)
        return Experience(
            input=self.inputs[idx].copy(),
            ground_truth=self.truths[idx].copy() if self.labelled[idx] else None,
            episode=int(self.episodes[idx]),
            slot=int(self.slots[idx]),
        )

    @property
    def labelled_count(self) -> int:
        return int(np.count_nonzero(self.labelled))

    def sample(self, k: int, rng: np.random.Generator) -> npt.NDArray[np.int64]:
        """k distinct labelled indices, uniformly at random."""
        candidates = np.flatnonzero(self.labelled)
        if k > len(candidates):
            raise ValueError(
                f"cannot sample {k} experiences from {len(candidates)} labelled",
            )
        return rng.choice(candidates, size=k, replace=False)

    def windows(
        self,
        indices: npt.NDArray[np.int64],
        length: int,
    ) -> tuple[FloatArray, FloatArray]:
        """Inputs of the `length` slots ending at each index, time-major.

        Returns (inputs of shape (length, k, n_x), carry of shape (length, k)).
        A window that reaches past the start of its episode, or into evicted
        entries, is left-padded with zeros and its carry is zero at the first
        real step, so the recurrent state restarts there.
        """
        offsets = np.arange(length - 1, -1, -1)
        pos = (indices[:, None] - offsets[None, :]) % self.capacity
        valid = (
            (self.episodes[pos] == self.episodes[indices][:, None])
            & (self.slots[pos] == self.slots[indices][:, None] - offsets[None, :])
        )
        # Only the contiguous run that ends at the sampled slot counts
        valid = np.logical_and.accumulate(valid[:, ::-1], axis=1)[:, ::-1]

        inputs = np.where(valid[..., None], self.inputs[pos], 0.0)
        first = length - valid.sum(axis=1)
        carry = np.ones((len(indices), length))
        carry[np.arange(len(indices)), first] = 0.0
        return inputs.transpose(1, 0, 2), carry.T


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 30  # M
    horizon: int = 2000  # T, slots per episode
    batch_size: int = 256  # K
    lr: float = 1e-4
    weight_decay: float = 1e-3
    replay_capacity: int = 100_000
    bptt_window: int = 32
    update_period: int = 4
    seed: int = 0
    ground_truth: str = "oracle"
    hidden_size: int = HIDDEN_SIZE

    def __post_init__(self) -> None:
        for name in (
            "episodes", "horizon", "batch_size", "replay_capacity",
            "bptt_window", "update_period", "hidden_size",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError(
                f"need lr > 0 and weight_decay >= 0, got {self.lr}, {self.weight_decay}",
            )
        if self.bptt_window > self.horizon:
            raise ConfigError(
                f"bptt_window {self.bptt_window} exceeds the horizon {self.horizon}",
            )
        if self.ground_truth not in GROUND_TRUTH_MODES:
            raise ConfigError(
                f"ground_truth must be one of {GROUND_TRUTH_MODES}, "
                f"got {self.ground_truth!r}",
            )


FULL_SCALE_TRAIN = TrainConfig(
    episodes=200,
    horizon=40_000,
    replay_capacity=2_000_000,
)


def _update(
    model: LaaModel,
    memory: ReplayMemory,
    cfg: TrainConfig,
    opt: AdamState,
    rng: np.random.Generator,
) -> float:
    indices = memory.sample(cfg.batch_size, rng)
    inputs, carry = memory.windows(indices, cfg.bptt_window)
    truths = memory.truths[indices]

    cache = TapeCache()
    state = LstmState.zeros(model.params.lstm.n_h, batch=cfg.batch_size)
    out = np.empty(0)
    for x, keep in zip(inputs, carry):
        out, state = stack_forward(model.params, x, state, cache, carry=keep)

    scale = model.output_scale
    residual = out * scale - truths
    batch_loss = float(np.mean(np.sum(residual * residual, axis=1)))
    grad_out = 2.0 * residual * scale / cfg.batch_size
    loss_grads: list[FloatArray | None] = [None] * (cfg.bptt_window - 1)
    loss_grads.append(grad_out)

    grads = backward(loss_grads, cache, model.params)
    adam_step(model.params.named_arrays(), grads, opt)
    return batch_loss


def train(
    cfg: TrainConfig,
    system: DynamicSystem,
    network: Network,
    control_mode: ControlMode = ControlMode.NETWORKED,
    uses_age: bool = True,
) -> tuple[LaaModel, list[float]]:
    """Train an estimator on freshly simulated episodes.

    Returns the model and the loss of every gradient update.
    """
    model = LaaModel.create(
        system, control_mode, uses_age, substream(cfg.seed, "init"), cfg.hidden_size,
    )
    opt = AdamState.for_params(
        model.params.named_arrays(), lr=cfg.lr, weight_decay=cfg.weight_decay,
    )
    memory = ReplayMemory(cfg.replay_capacity, model.n_x, system.estimate_size)
    replay_rng = substream(cfg.seed, "replay")
    age_mode = AgeMode.TRUE if uses_age else AgeMode.NONE
    on_delivery = cfg.ground_truth == "delivered"

    losses: list[float] = []
    for episode in range(cfg.episodes):
        queue_cfg = episode_queue_config(network, cfg.seed, episode)
        trace = simulate_episode(system, queue_cfg, cfg.seed, episode, cfg.horizon)
        model.reset_state()
        tracker = AgeTracker.initial(system.measurement_size)
        prev = np.zeros(system.estimate_size)
        stored = np.empty(cfg.horizon + 1, dtype=np.int64)
        first_update = len(losses)

        for t in range(1, cfg.horizon + 1):
            packet = trace.delivered(t)
            if t > 1:
                update_age(tracker, t, packet)
            inp = build_input(
                tracker, prev, system, control_mode, age_mode,
                true_controls=trace.measurement(t).values[system.control_slice],
            )
            prev = estimate(model, inp)

            scaled = inp.as_array() / model.input_scaling
            stored[t] = memory.push(
                scaled, None if on_delivery else trace.truth(t), episode, t,
            )
            if on_delivery and packet is not None:
                g = packet.gen_slot
                memory.label(int(stored[g]), episode, g, trace.truth(g))

            if t % cfg.update_period == 0 and memory.labelled_count >= cfg.batch_size:
                losses.append(_update(model, memory, cfg, opt, replay_rng))
                logger.debug("update %d: loss %.6g", len(losses), losses[-1])

        window = losses[first_update:]
        logger.info(
            "episode %d/%d (p=%.4g, q=%.4g): %d updates, mean loss %s",
            episode + 1, cfg.episodes, queue_cfg.p, queue_cfg.q, len(window),
            f"{np.mean(window):.6g}" if window else "n/a",
        )

    model.reset_state()
    return model, losses


def run_closed_loop(
    model: LaaModel,
    trace: EpisodeTrace,
    age_mode: AgeMode,
    control_mode: ControlMode,
    rng: np.random.Generator | None = None,
) -> FloatArray:
    """Estimates for every slot of `trace`, feeding each one back as input."""
    system = model.system
    model.reset_state()
    tracker = AgeTracker.initial(system.measurement_size)
    prev = np.zeros(system.estimate_size)
    estimates = np.empty((trace.horizon, system.estimate_size))
    for t in range(1, trace.horizon + 1):
        if t > 1:
            update_age(tracker, t, trace.delivered(t))
        inp = build_input(
            tracker, prev, system, control_mode, age_mode,
            true_controls=trace.measurement(t).values[system.control_slice],
            rng=rng,
        )
        prev = estimate(model, inp)
        estimates[t - 1] = prev
    return estimates


def evaluate(
    model: LaaModel,
    system: DynamicSystem,
    network: Network,
    episodes: int,
    horizon: int,
    age_mode: AgeMode,
    control_mode: ControlMode,
    seed: int,
) -> EvaluationResult:
    """RMSE of a frozen model over seeded evaluation episodes."""
    check_compatible(model, system, age_mode, control_mode)
    acc = RmseAccumulator(system.estimate_size)
    digests = []
    for k in range(episodes):
        trace = evaluation_trace(system, network, seed, k, horizon)
        rng = substream(seed, "noisy_age", k)
        for est, truth in zip(
            run_closed_loop(model, trace, age_mode, control_mode, rng),
            trace.truths,
        ):
            acc.add(est, truth)
        digests.append(trace.digest())
    model.reset_state()
    return EvaluationResult.from_accumulator("laa", system.name, acc, horizon, digests)
