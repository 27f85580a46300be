"""Seeded episode traces shared by every estimator."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from dataclasses import field
from typing import Literal
from typing import Union

import numpy as np
import numpy.typing as npt

from age_estimator._data import DimensionError
from age_estimator._data import FloatArray
from age_estimator._data import Measurement
from age_estimator._data import Packet
from age_estimator._data import QueueConfig
from age_estimator._dynamics import DynamicSystem
from age_estimator._network import AgeTracker
from age_estimator._network import QueueState
from age_estimator._network import queue_step
from age_estimator._network import sample_time_varying
from age_estimator._network import update_age
from age_estimator._seeding import substream

TIME_VARYING = "time_varying"

# Either one fixed (p, q) or a fresh draw per episode
Network = Union[QueueConfig, Literal["time_varying"]]


def episode_queue_config(network: Network, seed: int, episode: int) -> QueueConfig:
    if isinstance(network, QueueConfig):
        return network
    return sample_time_varying(substream(seed, "network_params", episode))


@dataclass(frozen=True, eq=False)
class EpisodeTrace:
    """Ground truth and delivery stream of one simulated episode.

    Row t - 1 of `measurements` is y(t); `delivered_gen[t - 1]` is the
    generation slot of the packet delivered in slot t, or 0.
    """

    system: str
    config: QueueConfig
    measurements: FloatArray
    delivered_gen: npt.NDArray[np.int64]
    estimate_size: int
    seed: int
    episode: int

    @property
    def horizon(self) -> int:
        return int(self.measurements.shape[0])

    def measurement(self, slot: int) -> Measurement:
        return Measurement(values=self.measurements[slot - 1], gen_slot=slot)

    def delivered(self, slot: int) -> Packet | None:
        gen = int(self.delivered_gen[slot - 1])
        if gen == 0:
            return None
        return Packet(payload=self.measurement(gen), gen_slot=gen, admit_slot=gen)

    def truth(self, slot: int) -> FloatArray:
        return self.measurements[slot - 1, : self.estimate_size]

    @property
    def truths(self) -> FloatArray:
        return self.measurements[:, : self.estimate_size]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.system.encode())
        h.update(np.ascontiguousarray(self.measurements).tobytes())
        h.update(np.ascontiguousarray(self.delivered_gen).tobytes())
        return h.hexdigest()


def simulate_episode(
    system: DynamicSystem,
    cfg: QueueConfig,
    seed: int,
    episode: int,
    horizon: int,
) -> EpisodeTrace:
    """Run the plant and the queue for `horizon` slots."""
    if horizon < 1:
        raise ValueError(f"horizon must be positive, got {horizon}")
    state = system.initial_state(substream(seed, "initial_state", episode))
    controls = substream(seed, "controls", episode)
    noise = substream(seed, "dynamics", episode)
    admissions = substream(seed, "admission", episode)
    services = substream(seed, "service", episode)

    measurements = np.empty((horizon, system.measurement_size))
    delivered_gen = np.zeros(horizon, dtype=np.int64)
    qs = QueueState()
    for t in range(1, horizon + 1):
        control = system.sample_control(controls)
        measurement = system.measure(state, control, t)
        measurements[t - 1] = measurement.values
        qs, packet = queue_step(qs, measurement, cfg, admissions, services)
        if packet is not None:
            delivered_gen[t - 1] = packet.gen_slot
        state = system.step(state, control, noise)

    return EpisodeTrace(
        system=system.name,
        config=cfg,
        measurements=measurements,
        delivered_gen=delivered_gen,
        estimate_size=system.estimate_size,
        seed=seed,
        episode=episode,
    )


def trace_ages(trace: EpisodeTrace) -> npt.NDArray[np.int64]:
    """True age at every slot of the trace."""
    tracker = AgeTracker.initial(trace.measurements.shape[1])
    ages = np.empty(trace.horizon, dtype=np.int64)
    ages[0] = tracker.delta
    for t in range(2, trace.horizon + 1):
        update_age(tracker, t, trace.delivered(t))
        ages[t - 1] = tracker.delta
    return ages


# Evaluation episodes are keyed from here so they never reuse a training
# episode's sub-streams under the same seed.
EVAL_EPISODE_BASE = 1_000_000


@dataclass
class RmseAccumulator:
    """Streaming sums of squared residuals per estimated component."""

    size: int
    sq_sum: FloatArray = field(init=False)
    count: int = 0

    def __post_init__(self) -> None:
        self.sq_sum = np.zeros(self.size)

    def add(self, estimate: FloatArray, truth: FloatArray) -> None:
        residual = np.asarray(truth) - np.asarray(estimate)
        if residual.shape != (self.size,):
            raise DimensionError(
                f"residual has shape {residual.shape}, expected ({self.size},)",
            )
        self.sq_sum += residual * residual
        self.count += 1

    def _require_samples(self) -> None:
        if self.count == 0:
            raise ValueError("no residuals accumulated")

    @property
    def components(self) -> tuple[float, ...]:
        self._require_samples()
        return tuple(float(v) for v in np.sqrt(self.sq_sum / self.count))

    @property
    def total(self) -> float:
        self._require_samples()
        return float(np.sqrt(self.sq_sum.sum() / self.count))


@dataclass(frozen=True)
class EvaluationResult:
    estimator: str
    system: str
    rmse_total: float
    rmse_components: tuple[float, ...]
    episodes: int
    horizon: int
    trace_digests: tuple[str, ...]  # one per episode, in order

    @classmethod
    def from_accumulator(
        cls,
        estimator: str,
        system: str,
        acc: RmseAccumulator,
        horizon: int,
        trace_digests: list[str],
    ) -> EvaluationResult:
        return cls(
            estimator=estimator,
            system=system,
            rmse_total=acc.total,
            rmse_components=acc.components,
            episodes=len(trace_digests),
            horizon=horizon,
            trace_digests=tuple(trace_digests),
        )


def evaluation_trace(
    system: DynamicSystem,
    network: Network,
    seed: int,
    episode: int,
    horizon: int,
) -> EpisodeTrace:
    """The trace every estimator sees for evaluation episode `episode`."""
    key = EVAL_EPISODE_BASE + episode
    cfg = episode_queue_config(network, seed, key)
    return simulate_episode(system, cfg, seed, key, horizon)
