"""Model-based reference filters for aged, intermittent measurements.

Both filters keep every received measurement in a `MeasurementBuffer`
together with the prior belief at checkpointed slots. When a packet
generated at slot g arrives, the filter rewinds to the checkpoint at or
before g and re-runs predict/update up to the current slot, so late packets
are used exactly as if they had arrived on time.
"""
from __future__ import annotations

import bisect
import logging
import warnings
from collections.abc import Callable
from dataclasses import dataclass
from dataclasses import field

import numpy as np
import scipy.linalg

from age_estimator._data import AgeEstimatorWarning
from age_estimator._data import AgeMode
from age_estimator._data import ConfigError
from age_estimator._data import ControlMode
from age_estimator._data import FloatArray
from age_estimator._data import Measurement
from age_estimator._data import Packet
from age_estimator._dynamics import Cartpole
from age_estimator._dynamics import CartpoleState
from age_estimator._dynamics import DynamicSystem
from age_estimator._dynamics import LinearVehicle
from age_estimator._dynamics import linear_matrices
from age_estimator._dynamics import step_cartpole
from age_estimator._network import noisy_age
from age_estimator._seeding import substream
from age_estimator._simulation import EpisodeTrace
from age_estimator._simulation import EvaluationResult
from age_estimator._simulation import Network
from age_estimator._simulation import RmseAccumulator
from age_estimator._simulation import evaluation_trace

logger = logging.getLogger(__name__)

FILTERS = ("tvkf", "ukf")
REGULARIZATION = 1e-9
EIGEN_FLOOR = 1e-9
CARTPOLE_PROCESS_VAR = 1e-3
MEASUREMENT_VAR = 1e-6


@dataclass(frozen=True, eq=False)
class KalmanBelief:
    mean: FloatArray
    cov: FloatArray
    slot: int

    @classmethod
    def initial(cls, size: int, slot: int = 1) -> KalmanBelief:
        # x0 = 0, P0 = I
        return cls(mean=np.zeros(size), cov=np.eye(size), slot=slot)


def _symmetrize(cov: FloatArray) -> FloatArray:
    return (cov + cov.T) / 2.0


@dataclass
class MeasurementBuffer:
    """Infinite time buffer: received measurements, controls and checkpoints."""

    control_slice: slice
    control_size: int
    stride: int = 1
    origin: int = 1
    measurements: dict[int, FloatArray] = field(default_factory=dict)
    gens: list[int] = field(default_factory=list)  # sorted keys of measurements
    controls: dict[int, FloatArray] = field(default_factory=dict)
    checkpoints: dict[int, KalmanBelief] = field(default_factory=dict)
    flagged: int = 0  # numerical repairs applied so far

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise ValueError(f"checkpoint stride must be positive, got {self.stride}")

    @classmethod
    def for_system(cls, system: DynamicSystem, stride: int = 1) -> MeasurementBuffer:
        sl = system.control_slice
        return cls(
            control_slice=sl,
            control_size=sl.stop - sl.start,
            stride=stride,
        )

    def start(self, belief: KalmanBelief) -> None:
        self.origin = belief.slot
        self.checkpoints[belief.slot] = belief

    def log(self, gen_slot: int, values: FloatArray) -> None:
        if gen_slot not in self.measurements:
            bisect.insort(self.gens, gen_slot)
        self.measurements[gen_slot] = np.array(values, dtype=np.float64)

    def is_checkpoint(self, slot: int) -> bool:
        return (slot - self.origin) % self.stride == 0

    def checkpoint_slot(self, slot: int) -> int:
        return self.origin + ((slot - self.origin) // self.stride) * self.stride

    def held_control(self, slot: int) -> FloatArray:
        """Control carried by the freshest logged packet generated by `slot`."""
        idx = bisect.bisect_right(self.gens, slot)
        if idx == 0:
            return np.zeros(self.control_size)
        return self.measurements[self.gens[idx - 1]][self.control_slice]

    def control(self, slot: int, control_mode: ControlMode) -> FloatArray:
        """The control assumed to act from `slot` to `slot + 1`."""
        if control_mode is ControlMode.NETWORKED:
            return self.held_control(slot)
        try:
            return self.controls[slot]
        except KeyError:
            raise ValueError(f"no control recorded for slot {slot}") from None


Predict = Callable[[KalmanBelief, FloatArray], KalmanBelief]
Update = Callable[[KalmanBelief, FloatArray], KalmanBelief]


def _replay(
    buffer: MeasurementBuffer,
    belief: KalmanBelief,
    t: int,
    control_mode: ControlMode,
    predict: Predict,
    update: Update,
) -> KalmanBelief:
    while True:
        s = belief.slot
        if buffer.is_checkpoint(s):
            buffer.checkpoints[s] = belief
        values = buffer.measurements.get(s)
        if values is not None:
            belief = update(belief, values)
        if s == t:
            return belief
        belief = predict(belief, buffer.control(s, control_mode))


def _filter_step(
    buffer: MeasurementBuffer,
    belief: KalmanBelief,
    t: int,
    delivered: Packet | None,
    control_mode: ControlMode,
    true_control: FloatArray | None,
    predict: Predict,
    update: Update,
) -> KalmanBelief:
    if t != belief.slot + 1:
        raise ValueError(f"belief is for slot {belief.slot}, cannot step to {t}")
    if control_mode is ControlMode.KNOWN:
        if true_control is None:
            raise ValueError("known-control mode needs the control applied at t - 1")
        buffer.controls[t - 1] = np.asarray(true_control, dtype=np.float64)

    if delivered is None:
        prior = predict(belief, buffer.control(t - 1, control_mode))
        return _replay(buffer, prior, t, control_mode, predict, update)

    buffer.log(delivered.gen_slot, delivered.payload.values)
    start = buffer.checkpoint_slot(min(delivered.gen_slot, t - 1))
    return _replay(
        buffer, buffer.checkpoints[start], t, control_mode, predict, update,
    )


# =============================================================================
# time-varying Kalman filter
# =============================================================================


@dataclass(frozen=True, eq=False)
class LinearGaussianModel:
    a: FloatArray
    b: FloatArray
    q: FloatArray
    r: FloatArray
    h: FloatArray  # measured entries are values[:h.shape[0]]

    @classmethod
    def for_vehicle(
        cls,
        system: LinearVehicle | None = None,
        q_var: float | None = None,
        r_var: float = MEASUREMENT_VAR,
    ) -> LinearGaussianModel:
        system = system or LinearVehicle()
        a, b = linear_matrices(system.dt)
        q_var = system.noise_var if q_var is None else q_var
        return cls(a=a, b=b, q=q_var * np.eye(4), r=r_var * np.eye(4), h=np.eye(4))


@dataclass(frozen=True, eq=False)
class Innovation:
    residual: FloatArray
    cov: FloatArray
    regularized: bool


def kf_predict(
    model: LinearGaussianModel,
    belief: KalmanBelief,
    u: FloatArray,
) -> KalmanBelief:
    """Propagate the belief one slot through the linear dynamics.

    Args:
        model: Plant matrices and noise covariances
        belief: Belief at slot s
        u: Control assumed to act from s to s + 1

    Returns:
        The prior at slot s + 1
    """
    return KalmanBelief(
        mean=model.a @ belief.mean + model.b @ u,
        cov=_symmetrize(model.a @ belief.cov @ model.a.T + model.q),
        slot=belief.slot + 1,
    )


def kf_update(
    model: LinearGaussianModel,
    belief: KalmanBelief,
    z: FloatArray,
) -> tuple[KalmanBelief, Innovation]:
    """Measurement update with the Joseph-form covariance.

    A singular innovation covariance is regularized with a warning.

    Args:
        model: Plant matrices and noise covariances
        belief: Prior at the measurement's generation slot
        z: Measured entries, `model.h` rows of the state

    Returns:
        The posterior and the innovation it was computed from
    """
    h = model.h
    residual = z - h @ belief.mean
    s = h @ belief.cov @ h.T + model.r
    regularized = False
    try:
        factor = scipy.linalg.cho_factor(s)
    except np.linalg.LinAlgError:
        warnings.warn(
            f"innovation covariance is singular at slot {belief.slot}; "
            f"regularizing with {REGULARIZATION:g} I",
            AgeEstimatorWarning,
            stacklevel=2,
        )
        s = s + REGULARIZATION * np.eye(len(s))
        factor = scipy.linalg.cho_factor(s)
        regularized = True

    gain = scipy.linalg.cho_solve(factor, h @ belief.cov).T
    ikh = np.eye(len(belief.mean)) - gain @ h
    cov = ikh @ belief.cov @ ikh.T + gain @ model.r @ gain.T
    return (
        KalmanBelief(
            mean=belief.mean + gain @ residual,
            cov=_symmetrize(cov),
            slot=belief.slot,
        ),
        Innovation(residual=residual, cov=s, regularized=regularized),
    )


def tvkf_step(
    model: LinearGaussianModel,
    buffer: MeasurementBuffer,
    belief: KalmanBelief,
    t: int,
    delivered: Packet | None,
    control_mode: ControlMode,
    true_control: FloatArray | None = None,
) -> KalmanBelief:
    """Advance the time-varying Kalman filter from slot t - 1 to t.

    A delivered packet rewinds the filter to the checkpoint at or before its
    generation slot and replays the logged controls and measurements.

    Args:
        model: Plant matrices and noise covariances
        buffer: Received measurements, controls and checkpoints; updated
        belief: Belief at slot t - 1
        t: The slot to advance to
        delivered: Packet delivered in slot t, if any
        control_mode: Whether the control applied at t - 1 is known
        true_control: The control applied from t - 1 to t; required in
            known-control mode and ignored otherwise

    Returns:
        The belief at slot t
    """
    n_z = model.h.shape[0]

    def predict(b: KalmanBelief, u: FloatArray) -> KalmanBelief:
        return kf_predict(model, b, u)

    def update(b: KalmanBelief, values: FloatArray) -> KalmanBelief:
        posterior, innovation = kf_update(model, b, values[:n_z])
        buffer.flagged += innovation.regularized
        return posterior

    return _filter_step(
        buffer, belief, t, delivered, control_mode, true_control, predict, update,
    )


# =============================================================================
# unscented Kalman filter
# =============================================================================


@dataclass(frozen=True)
class UkfConfig:
    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0
    q_var: float | None = None  # None: the system's default process noise
    r_var: float = MEASUREMENT_VAR

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.r_var <= 0:
            raise ConfigError(f"r_var must be positive, got {self.r_var}")
        if self.q_var is not None and self.q_var < 0:
            raise ConfigError(f"q_var must be nonnegative, got {self.q_var}")

    def weights(self, n: int) -> tuple[FloatArray, FloatArray, float]:
        """Mean weights, covariance weights and the spread n + lambda."""
        spread = self.alpha ** 2 * (n + self.kappa)
        if spread <= 0:
            raise ConfigError(f"kappa={self.kappa} gives a non-positive spread")
        w = 1.0 / (2.0 * spread)
        wm = np.full(2 * n + 1, w)
        wm[0] = 1.0 - 2 * n * w
        wc = wm.copy()
        wc[0] += 1.0 - self.alpha ** 2 + self.beta
        return wm, wc, spread


@dataclass(frozen=True, eq=False)
class ProcessModel:
    transition: Callable[[FloatArray, FloatArray], FloatArray]  # (x, u) -> x'
    observe_index: tuple[int, ...]  # state entries measured, in measurement order
    q: FloatArray
    r: FloatArray

    @property
    def state_size(self) -> int:
        return int(self.q.shape[0])

    def observe(self, x: FloatArray) -> FloatArray:
        return x[..., list(self.observe_index)]


def process_model(system: DynamicSystem, cfg: UkfConfig) -> ProcessModel:
    """Noise-free dynamics and direct observation of the estimated entries."""
    r = cfg.r_var * np.eye(system.estimate_size)
    if isinstance(system, LinearVehicle):
        a, b = linear_matrices(system.dt)
        q_var = system.noise_var if cfg.q_var is None else cfg.q_var
        return ProcessModel(
            transition=lambda x, u: a @ x + b @ u,
            observe_index=(0, 1, 2, 3),
            q=q_var * np.eye(4),
            r=r,
        )
    elif isinstance(system, Cartpole):
        params = system.params

        def transition(x: FloatArray, u: FloatArray) -> FloatArray:
            nxt = step_cartpole(CartpoleState.from_array(x), float(u[0]), params)
            return nxt.as_array()

        q_var = CARTPOLE_PROCESS_VAR if cfg.q_var is None else cfg.q_var
        return ProcessModel(
            transition=transition,
            # state (x, x_dot, theta, theta_dot) -> (theta, theta_dot, x_dot)
            observe_index=(2, 3, 1),
            q=q_var * np.eye(4),
            r=r,
        )
    else:
        raise ConfigError(f"no process model for {system.name!r}")


def _matrix_sqrt(cov: FloatArray) -> tuple[FloatArray, bool]:
    try:
        return scipy.linalg.cholesky(cov, lower=True), False
    except np.linalg.LinAlgError:
        values, vectors = scipy.linalg.eigh(cov)
        warnings.warn(
            f"covariance is not positive definite (min eigenvalue "
            f"{values.min():.3g}); clipping eigenvalues at {EIGEN_FLOOR:g}",
            AgeEstimatorWarning,
            stacklevel=3,
        )
        return vectors * np.sqrt(np.maximum(values, EIGEN_FLOOR)), True


def sigma_points(
    belief: KalmanBelief,
    spread: float,
) -> tuple[FloatArray, bool]:
    """(2n + 1, n) sigma points: the mean, then +columns, then -columns.

    Args:
        belief: Mean and covariance to spread
        spread: n + lambda, the scale on the covariance

    Returns:
        The points and whether the covariance had to be clipped to PSD
    """
    root, clipped = _matrix_sqrt(spread * belief.cov)
    offsets = root.T
    points = np.vstack([belief.mean, belief.mean + offsets, belief.mean - offsets])
    return points, clipped


def _moments(
    values: FloatArray,
    wm: FloatArray,
    wc: FloatArray,
) -> tuple[FloatArray, FloatArray, FloatArray]:
    # Deviations from the central point keep the huge central weight from
    # cancelling catastrophically.
    dev = values - values[0]
    shift = wm[1:] @ dev[1:]
    centered = dev - shift
    return values[0] + shift, centered, (centered.T * wc) @ centered


def ukf_predict(
    process: ProcessModel,
    cfg: UkfConfig,
    belief: KalmanBelief,
    u: FloatArray,
) -> tuple[KalmanBelief, bool]:
    """Unscented time update.

    Args:
        process: Noise-free transition and process noise
        cfg: Sigma-point parameters
        belief: Belief at slot s
        u: Control assumed to act from s to s + 1

    Returns:
        The prior at slot s + 1 and whether sigma points were clipped
    """
    wm, wc, spread = cfg.weights(process.state_size)
    points, clipped = sigma_points(belief, spread)
    propagated = np.array([process.transition(x, u) for x in points])
    mean, _, cov = _moments(propagated, wm, wc)
    return (
        KalmanBelief(mean=mean, cov=_symmetrize(cov + process.q), slot=belief.slot + 1),
        clipped,
    )


def ukf_update(
    process: ProcessModel,
    cfg: UkfConfig,
    belief: KalmanBelief,
    z: FloatArray,
) -> tuple[KalmanBelief, bool]:
    """Unscented measurement update.

    Args:
        process: Observation function and measurement noise
        cfg: Sigma-point parameters
        belief: Prior at the measurement's generation slot
        z: Measured entries

    Returns:
        The posterior and whether sigma points were clipped
    """
    wm, wc, spread = cfg.weights(process.state_size)
    points, clipped = sigma_points(belief, spread)
    z_mean, z_centered, s = _moments(process.observe(points), wm, wc)
    s = s + process.r
    x_centered = points - belief.mean
    cross = (x_centered.T * wc) @ z_centered

    factor = scipy.linalg.cho_factor(_symmetrize(s))
    gain = scipy.linalg.cho_solve(factor, cross.T).T
    return (
        KalmanBelief(
            mean=belief.mean + gain @ (z - z_mean),
            cov=_symmetrize(belief.cov - gain @ s @ gain.T),
            slot=belief.slot,
        ),
        clipped,
    )


def ukf_step(
    process: ProcessModel,
    cfg: UkfConfig,
    buffer: MeasurementBuffer,
    belief: KalmanBelief,
    t: int,
    delivered: Packet | None,
    control_mode: ControlMode,
    true_control: FloatArray | None = None,
) -> KalmanBelief:
    """Advance the unscented filter from slot t - 1 to t.

    Without a delivery the posterior is the unscented prior.

    Args:
        process: Dynamics, observation and noise of the filtered system
        cfg: Sigma-point parameters
        buffer: Received measurements, controls and checkpoints; updated
        belief: Belief at slot t - 1
        t: The slot to advance to
        delivered: Packet delivered in slot t, if any
        control_mode: Whether the control applied at t - 1 is known
        true_control: The control applied from t - 1 to t

    Returns:
        The belief at slot t
    """
    n_z = len(process.observe_index)

    def predict(b: KalmanBelief, u: FloatArray) -> KalmanBelief:
        prior, clipped = ukf_predict(process, cfg, b, u)
        buffer.flagged += clipped
        return prior

    def update(b: KalmanBelief, values: FloatArray) -> KalmanBelief:
        posterior, clipped = ukf_update(process, cfg, b, values[:n_z])
        buffer.flagged += clipped
        return posterior

    return _filter_step(
        buffer, belief, t, delivered, control_mode, true_control, predict, update,
    )


# =============================================================================
# evaluation
# =============================================================================


def rewind_packet(
    t: int,
    packet: Packet,
    age_mode: AgeMode,
    rng: np.random.Generator,
) -> Packet:
    """Re-stamp a delivered packet with the generation slot the filter sees.

    With noisy ages the filter only knows a noisy age, rounded to a whole
    number of slots.

    Args:
        t: Delivery slot
        packet: The delivered packet
        age_mode: True or noisy ages
        rng: Generator for the age noise

    Returns:
        `packet` itself with true ages, otherwise a copy stamped with the
        slot the noisy age points at (never before slot 1)
    """
    if age_mode is AgeMode.TRUE:
        return packet
    age = round(noisy_age(t - packet.gen_slot, rng))
    gen = max(1, t - age)
    return Packet(
        payload=Measurement(values=packet.payload.values, gen_slot=gen),
        gen_slot=gen,
        admit_slot=gen,
    )


def run_filter(
    filter_kind: str,
    system: DynamicSystem,
    trace: EpisodeTrace,
    age_mode: AgeMode,
    control_mode: ControlMode,
    rng: np.random.Generator,
    ukf_config: UkfConfig | None = None,
    stride: int = 1,
) -> tuple[FloatArray, int]:
    """Run one filter over a trace.

    Args:
        filter_kind: "tvkf" or "ukf"
        system: The plant the trace was simulated with
        trace: Episode to filter
        age_mode: True or noisy ages; "none" is rejected
        control_mode: Whether the current control is known
        rng: Generator for noisy ages
        ukf_config: Sigma-point parameters, defaults when omitted
        stride: Slots between stored checkpoints

    Returns:
        Per-slot estimates of shape (horizon, estimate_size) and the count of
        numerical repairs
    """
    if age_mode is AgeMode.NONE:
        raise ConfigError("the model-based filters always use packet ages")

    ukf_config = ukf_config or UkfConfig()
    if filter_kind == "tvkf":
        if not isinstance(system, LinearVehicle):
            raise ConfigError("the time-varying Kalman filter needs the linear system")
        model = LinearGaussianModel.for_vehicle(system)

        def step(
            buffer: MeasurementBuffer,
            belief: KalmanBelief,
            t: int,
            packet: Packet | None,
            u: FloatArray,
        ) -> KalmanBelief:
            return tvkf_step(model, buffer, belief, t, packet, control_mode, u)

        def observe(x: FloatArray) -> FloatArray:
            return model.h @ x

        size = 4
    elif filter_kind == "ukf":
        process = process_model(system, ukf_config)

        def step(
            buffer: MeasurementBuffer,
            belief: KalmanBelief,
            t: int,
            packet: Packet | None,
            u: FloatArray,
        ) -> KalmanBelief:
            return ukf_step(
                process, ukf_config, buffer, belief, t, packet, control_mode, u,
            )

        def observe(x: FloatArray) -> FloatArray:
            return process.observe(x)

        size = process.state_size
    else:
        raise ConfigError(f"unknown filter {filter_kind!r}; expected one of {FILTERS}")

    buffer = MeasurementBuffer.for_system(system, stride)
    belief = KalmanBelief.initial(size)
    buffer.start(belief)
    estimates = np.empty((trace.horizon, system.estimate_size))
    estimates[0] = observe(belief.mean)
    for t in range(2, trace.horizon + 1):
        packet = trace.delivered(t)
        if packet is not None:
            packet = rewind_packet(t, packet, age_mode, rng)
        u = trace.measurement(t - 1).values[system.control_slice]
        belief = step(buffer, belief, t, packet, u)
        estimates[t - 1] = observe(belief.mean)
    return estimates, buffer.flagged


def baseline_evaluate(
    filter_kind: str,
    system: DynamicSystem,
    network: Network,
    episodes: int,
    horizon: int,
    age_mode: AgeMode,
    control_mode: ControlMode,
    seed: int,
    ukf_config: UkfConfig | None = None,
) -> EvaluationResult:
    """RMSE of a model-based filter on the same traces `evaluate` uses.

    Args:
        filter_kind: "tvkf" or "ukf"
        system: The plant to simulate
        network: One (p, q) or a fresh draw per episode
        episodes: Number of evaluation episodes
        horizon: Slots per episode
        age_mode: True or noisy ages
        control_mode: Whether the current control is known
        seed: Master seed of the evaluation traces
        ukf_config: Sigma-point parameters, defaults when omitted

    Returns:
        Aggregate and per-component RMSE with the trace digests
    """
    acc = RmseAccumulator(system.estimate_size)
    digests = []
    flagged = 0
    for k in range(episodes):
        trace = evaluation_trace(system, network, seed, k, horizon)
        estimates, repairs = run_filter(
            filter_kind, system, trace, age_mode, control_mode,
            substream(seed, "noisy_age", k), ukf_config,
        )
        flagged += repairs
        for est, truth in zip(estimates, trace.truths):
            acc.add(est, truth)
        digests.append(trace.digest())
    if flagged:
        logger.info("%s: %d numerical repairs over %d episodes", filter_kind, flagged, episodes)
    return EvaluationResult.from_accumulator(
        filter_kind, system.name, acc, horizon, digests,
    )
