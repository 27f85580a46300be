"""Ground-truth environments: the 2-D Newtonian vehicle and the cartpole."""
from __future__ import annotations

import abc
import math
from dataclasses import dataclass
from typing import ClassVar
from typing import Union

import numpy as np

from age_estimator._data import FloatArray
from age_estimator._data import Measurement
from age_estimator._data import SingularParametersError
from age_estimator._data import frozen_array
from age_estimator._data import require_finite

LINEAR_DT = 0.1
LINEAR_NOISE_VAR = 0.2
POSITION_LIMIT = 1000.0
VELOCITY_LIMIT = 10.0
ACCEL_LIMIT = 3.0


@dataclass(frozen=True)
class LinearVehicleState:
    px: float  # m
    py: float  # m
    vx: float  # m/s
    vy: float  # m/s

    def as_array(self) -> FloatArray:
        return np.array([self.px, self.py, self.vx, self.vy], dtype=np.float64)

    @classmethod
    def from_array(cls, values: FloatArray) -> LinearVehicleState:
        px, py, vx, vy = (float(v) for v in values)
        return cls(px, py, vx, vy)


@dataclass(frozen=True)
class LinearControl:
    ux: float  # m/s^2
    uy: float  # m/s^2

    def as_array(self) -> FloatArray:
        return np.array([self.ux, self.uy], dtype=np.float64)


@dataclass(frozen=True)
class CartpoleState:
    x: float  # m
    x_dot: float  # m/s
    theta: float  # rad from vertical
    theta_dot: float  # rad/s

    def as_array(self) -> FloatArray:
        return np.array(
            [self.x, self.x_dot, self.theta, self.theta_dot], dtype=np.float64,
        )

    @classmethod
    def from_array(cls, values: FloatArray) -> CartpoleState:
        x, x_dot, theta, theta_dot = (float(v) for v in values)
        return cls(x, x_dot, theta, theta_dot)


@dataclass(frozen=True)
class CartpoleParams:
    l: float = 1.0  # half-pole length, m  # noqa: E741
    mc: float = 5.0  # cart mass, kg
    mp: float = 1.0  # pole mass, kg
    g: float = 9.8  # m/s^2
    force_mag: float = 10.0  # |F|, N
    dt: float = 0.01  # s

    def __post_init__(self) -> None:
        if self.l <= 0 or self.mp < 0 or self.mc + self.mp <= 0 or self.dt <= 0:
            raise ValueError(
                f"invalid cartpole parameters: l={self.l}, mc={self.mc}, "
                f"mp={self.mp}, dt={self.dt}",
            )


State = Union[LinearVehicleState, CartpoleState]
Control = Union[LinearControl, float]


def linear_matrices(dt: float = LINEAR_DT) -> tuple[FloatArray, FloatArray]:
    """Transition A and input B of the discretized double integrator."""
    a = np.array([
        [1.0, 0.0, dt, 0.0],
        [0.0, 1.0, 0.0, dt],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    b = np.array([
        [dt * dt / 2, 0.0],
        [0.0, dt * dt / 2],
        [dt, 0.0],
        [0.0, dt],
    ])
    return a, b


def step_linear(
    state: LinearVehicleState,
    u: LinearControl,
    noise_rng: np.random.Generator | None = None,
    dt: float = LINEAR_DT,
    noise_var: float = LINEAR_NOISE_VAR,
) -> LinearVehicleState:
    """Advance the vehicle one step; noise is skipped when no RNG is given.

    The process noise is drawn as one call to `normal(0, sqrt(noise_var), 4)`
    and the result is saturated to the position/velocity ranges afterwards.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = state.as_array()
    require_finite("vehicle state", x)
    require_finite("vehicle control", u.as_array())

    a, b = linear_matrices(dt)
    nxt = a @ x + b @ u.as_array()
    if noise_rng is not None:
        nxt = nxt + noise_rng.normal(0.0, math.sqrt(noise_var), size=4)

    nxt[:2] = np.clip(nxt[:2], -POSITION_LIMIT, POSITION_LIMIT)
    nxt[2:] = np.clip(nxt[2:], -VELOCITY_LIMIT, VELOCITY_LIMIT)
    return LinearVehicleState.from_array(nxt)


def sample_linear_control(rng: np.random.Generator) -> LinearControl:
    ux, uy = rng.uniform(-ACCEL_LIMIT, ACCEL_LIMIT, size=2)
    return LinearControl(float(ux), float(uy))


def cartpole_accels(
    state: CartpoleState,
    force: float,
    params: CartpoleParams,
) -> tuple[float, float]:
    """Return (theta_ddot, x_ddot) for the frictionless cartpole.

    theta_ddot is solved first and substituted into the cart equation.
    """
    total_mass = params.mc + params.mp
    sin_t = math.sin(state.theta)
    cos_t = math.cos(state.theta)

    denom = params.l * (4.0 / 3.0 - params.mp * cos_t * cos_t / total_mass)
    if denom <= 0:
        raise SingularParametersError(
            f"angular acceleration denominator is {denom} for {params}",
        )

    temp = (
        -force - params.mp * params.l * state.theta_dot ** 2 * sin_t
    ) / total_mass
    theta_ddot = (params.g * sin_t + cos_t * temp) / denom
    x_ddot = (
        force
        + params.mp * params.l * (state.theta_dot ** 2 * sin_t - theta_ddot * cos_t)
    ) / total_mass
    return theta_ddot, x_ddot


def step_cartpole(
    state: CartpoleState,
    force: float,
    params: CartpoleParams,
) -> CartpoleState:
    """Semi-implicit Euler: velocities first, positions from the new velocities."""
    require_finite("cartpole state", state.as_array())
    theta_ddot, x_ddot = cartpole_accels(state, force, params)

    x_dot = state.x_dot + params.dt * x_ddot
    x_dot = min(max(x_dot, -VELOCITY_LIMIT), VELOCITY_LIMIT)
    theta_dot = state.theta_dot + params.dt * theta_ddot
    return CartpoleState(
        x=state.x + params.dt * x_dot,
        x_dot=x_dot,
        theta=state.theta + params.dt * theta_dot,
        theta_dot=theta_dot,
    )


def sample_cartpole_force(
    rng: np.random.Generator,
    params: CartpoleParams,
) -> float:
    """Push forward or backward with equal probability."""
    return params.force_mag if rng.random() < 0.5 else -params.force_mag


def measure(state: State, control: Control, gen_slot: int) -> Measurement:
    """Pack the measurement vector for either system."""
    if isinstance(state, LinearVehicleState):
        if not isinstance(control, LinearControl):
            raise TypeError("the vehicle is measured with a LinearControl")
        values = np.concatenate([state.as_array(), control.as_array()])
    else:
        values = np.array(
            [state.theta, state.theta_dot, state.x_dot, float(control)],
        )
    return Measurement(values=values, gen_slot=gen_slot)


class DynamicSystem(abc.ABC):
    """What the estimators and the simulator need to know about a plant."""

    name: ClassVar[str]
    measurement_size: ClassVar[int]
    estimate_size: ClassVar[int]
    control_slice: ClassVar[slice]
    component_names: ClassVar[tuple[str, ...]]

    @property
    @abc.abstractmethod
    def measurement_scale(self) -> FloatArray:
        """Fixed per-entry normalizers derived from the known ranges."""

    @property
    def estimate_scale(self) -> FloatArray:
        return self.measurement_scale[: self.estimate_size]

    @abc.abstractmethod
    def initial_state(self, rng: np.random.Generator) -> State: ...

    @abc.abstractmethod
    def sample_control(self, rng: np.random.Generator) -> Control: ...

    @abc.abstractmethod
    def step(
        self,
        state: State,
        control: Control,
        rng: np.random.Generator,
    ) -> State: ...

    def measure(self, state: State, control: Control, gen_slot: int) -> Measurement:
        return measure(state, control, gen_slot)

    def control_array(self, control: Control) -> FloatArray:
        if isinstance(control, LinearControl):
            return control.as_array()
        return np.array([float(control)])


class LinearVehicle(DynamicSystem):
    name = "linear"
    measurement_size = 6
    estimate_size = 4
    control_slice = slice(4, 6)
    component_names = ("px", "py", "vx", "vy")

    def __init__(
        self,
        dt: float = LINEAR_DT,
        noise_var: float = LINEAR_NOISE_VAR,
        init_position_range: float = 100.0,
        init_velocity_range: float = 5.0,
    ) -> None:
        self.dt = dt
        self.noise_var = noise_var
        self.init_position_range = init_position_range
        self.init_velocity_range = init_velocity_range

    @property
    def measurement_scale(self) -> FloatArray:
        return frozen_array([
            POSITION_LIMIT, POSITION_LIMIT,
            VELOCITY_LIMIT, VELOCITY_LIMIT,
            ACCEL_LIMIT, ACCEL_LIMIT,
        ])

    def initial_state(self, rng: np.random.Generator) -> LinearVehicleState:
        pos = rng.uniform(-self.init_position_range, self.init_position_range, 2)
        vel = rng.uniform(-self.init_velocity_range, self.init_velocity_range, 2)
        return LinearVehicleState.from_array(np.concatenate([pos, vel]))

    def sample_control(self, rng: np.random.Generator) -> LinearControl:
        return sample_linear_control(rng)

    def step(
        self,
        state: State,
        control: Control,
        rng: np.random.Generator,
    ) -> LinearVehicleState:
        assert isinstance(state, LinearVehicleState)
        assert isinstance(control, LinearControl)
        return step_linear(state, control, rng, self.dt, self.noise_var)


class Cartpole(DynamicSystem):
    name = "cartpole"
    measurement_size = 4
    estimate_size = 3
    control_slice = slice(3, 4)
    component_names = ("theta", "theta_dot", "x_dot")

    def __init__(
        self,
        params: CartpoleParams | None = None,
        init_range: float = 0.05,
    ) -> None:
        self.params = params or CartpoleParams()
        self.init_range = init_range

    @property
    def measurement_scale(self) -> FloatArray:
        return frozen_array([math.pi, 10.0, VELOCITY_LIMIT, self.params.force_mag])

    def initial_state(self, rng: np.random.Generator) -> CartpoleState:
        return CartpoleState.from_array(
            rng.uniform(-self.init_range, self.init_range, 4),
        )

    def sample_control(self, rng: np.random.Generator) -> float:
        return sample_cartpole_force(rng, self.params)

    def step(
        self,
        state: State,
        control: Control,
        rng: np.random.Generator,
    ) -> CartpoleState:
        # The cartpole is noise-free; rng is accepted for interface symmetry
        assert isinstance(state, CartpoleState)
        return step_cartpole(state, float(control), self.params)


SYSTEMS = ("linear", "cartpole")


def make_system(name: str) -> DynamicSystem:
    if name == "linear":
        return LinearVehicle()
    elif name == "cartpole":
        return Cartpole()
    else:
        raise ValueError(f"unknown system {name!r}; expected one of {SYSTEMS}")
