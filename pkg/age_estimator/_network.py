"""Discrete-time FCFS queue and age-of-information bookkeeping.

Slot convention (shared by `queue_step` and `average_age`): every slot draws
one admission uniform and one service uniform, from separate generators,
whether or not they are needed. Within slot t the packet in service may
complete first; afterwards the head of the line enters service and a newly
generated measurement may be admitted. A packet that enters service in slot t
can first complete in slot t + 1, so the minimum system time is one slot.
"""
from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass
from dataclasses import field

import numpy as np

from age_estimator._data import FloatArray
from age_estimator._data import Measurement
from age_estimator._data import Packet
from age_estimator._data import QueueConfig


@dataclass
class QueueState:
    """Single-owner mutable state of the queue."""

    waiting: deque[Packet] = field(default_factory=deque)
    in_service: Packet | None = None
    slot: int = 0
    admitted: int = 0
    delivered: int = 0

    @property
    def in_system(self) -> int:
        return len(self.waiting) + (self.in_service is not None)


def queue_step(
    qs: QueueState,
    new_measurement: Measurement | None,
    cfg: QueueConfig,
    admission_rng: np.random.Generator,
    service_rng: np.random.Generator,
) -> tuple[QueueState, Packet | None]:
    """Advance the queue by one slot; returns at most one delivered packet.

    Args:
        qs: Queue state, updated in place
        new_measurement: Measurement offered for admission this slot, if any
        cfg: Admission and service probabilities
        admission_rng: Source of this slot's admission coin
        service_rng: Source of this slot's service coin
    """
    qs.slot += 1
    admission_coin = admission_rng.random()
    service_coin = service_rng.random()

    delivered: Packet | None = None
    if qs.in_service is not None and service_coin < cfg.q:
        delivered = qs.in_service
        qs.in_service = None
        qs.delivered += 1

    if new_measurement is not None and admission_coin < cfg.p:
        qs.waiting.append(
            Packet(
                payload=new_measurement,
                gen_slot=new_measurement.gen_slot,
                admit_slot=qs.slot,
            ),
        )
        qs.admitted += 1

    if qs.in_service is None and qs.waiting:
        qs.in_service = qs.waiting.popleft()

    return qs, delivered


@dataclass
class AgeTracker:
    """Freshness of the single measurement stream at the estimator."""

    latest_gen: int  # U_t, generation slot of the freshest received packet
    delta: int  # age at the current slot
    last_value: FloatArray  # freshest received measurement
    slot: int

    @classmethod
    def initial(cls, measurement_size: int) -> AgeTracker:
        # Slot 1 starts with age 1 and a zero measurement, as if a packet
        # generated at slot 0 had just been received.
        return cls(
            latest_gen=0,
            delta=1,
            last_value=np.zeros(measurement_size),
            slot=1,
        )


def update_age(
    tracker: AgeTracker,
    t: int,
    delivered: Packet | None,
) -> AgeTracker:
    """Age sawtooth: grow by one per slot, reset on a fresher delivery."""
    if t <= tracker.slot:
        raise ValueError(f"slot {t} does not advance past {tracker.slot}")

    if delivered is not None and delivered.gen_slot > tracker.latest_gen:
        tracker.latest_gen = delivered.gen_slot
        tracker.delta = t - delivered.gen_slot
        tracker.last_value = np.array(delivered.payload.values)
    else:
        tracker.delta += t - tracker.slot
    tracker.slot = t
    return tracker


def departure_slots(
    admission_coins: FloatArray,
    service_coins: FloatArray,
    cfg: QueueConfig,
) -> tuple[FloatArray, FloatArray]:
    """Replay the queue from per-slot admission and service coins.

    Returns the generation slots and delivery slots of every packet delivered
    within the horizon, in FCFS order.
    """
    if np.shape(admission_coins) != np.shape(service_coins):
        raise ValueError("admission and service coins cover different horizons")
    arrivals = (np.flatnonzero(np.asarray(admission_coins) < cfg.p) + 1).tolist()
    successes = (np.flatnonzero(np.asarray(service_coins) < cfg.q) + 1).tolist()

    gens: list[int] = []
    departures: list[int] = []
    server_free = 0
    for arrival in arrivals:
        start = max(arrival, server_free)
        idx = bisect.bisect_right(successes, start)
        if idx == len(successes):
            break
        server_free = successes[idx]
        gens.append(arrival)
        departures.append(server_free)
    return np.asarray(gens, dtype=np.float64), np.asarray(departures, dtype=np.float64)


def average_age(
    cfg: QueueConfig,
    horizon: int,
    admission_rng: np.random.Generator,
    service_rng: np.random.Generator,
) -> float:
    """Time-average age when the source offers a measurement every slot.

    Draws the same coins `queue_step` would, so the result equals a
    slot-by-slot run of `queue_step` + `update_age` on the same generators.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be positive, got {horizon}")
    gens, departures = departure_slots(
        admission_rng.random(horizon), service_rng.random(horizon), cfg,
    )

    slots = np.arange(1, horizon + 1, dtype=np.float64)
    idx = np.searchsorted(departures, slots, side="right") - 1
    latest = np.zeros(horizon)
    received = idx >= 0
    latest[received] = gens[idx[received]]
    return float(np.mean(slots - latest))


def sample_time_varying(rng: np.random.Generator) -> QueueConfig:
    """Draw (p, q) log-uniformly with q in (1e-2, 1) and p in (1e-3, q)."""
    log_q = rng.uniform(-2.0, 0.0)
    log_p = rng.uniform(-3.0, log_q)
    return QueueConfig(p=10.0 ** log_p, q=10.0 ** log_q)


def noisy_age(true_age: float, rng: np.random.Generator) -> float:
    """Scale by Uniform(0, 2) and add Gaussian noise with std 10% of the age."""
    if true_age < 0:
        raise ValueError(f"age must be nonnegative, got {true_age}")
    scale = rng.uniform(0.0, 2.0)
    jitter = rng.normal(0.0, 0.1 * true_age)
    return max(0.0, scale * true_age + jitter)

