from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]


class DimensionError(ValueError):
    """An array does not have the shape an operation expects."""


class SingularParametersError(ValueError):
    """Cartpole parameters make the angular acceleration denominator <= 0."""


class CheckpointMismatchError(ValueError):
    """A checkpoint was trained for a different system or input layout."""


class ConfigError(ValueError):
    """An experiment or training configuration is inconsistent."""


class AgeEstimatorWarning(UserWarning):
    """Recoverable numerical or configuration condition."""


class ControlMode(str, enum.Enum):
    # The estimator sees the plant's current control exactly
    KNOWN = "known"
    # Controls only arrive inside (aged) measurement packets
    NETWORKED = "networked"


class AgeMode(str, enum.Enum):
    TRUE = "true"
    NOISY = "noisy"
    # Ablation: both age entries are dropped from the estimator input
    NONE = "none"


def frozen_array(values: npt.ArrayLike) -> FloatArray:
    """Copy values into a read-only float64 vector."""
    arr = np.array(values, dtype=np.float64).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Measurement:
    """A timestamped measurement vector y(t_k)."""

    values: FloatArray  # linear: [px, py, vx, vy, ux, uy]; cartpole: [theta, theta_dot, x_dot, F]
    gen_slot: int  # Slot of generation, >= 1

    def __post_init__(self) -> None:
        if self.gen_slot < 1:
            raise ValueError(f"gen_slot must be >= 1, got {self.gen_slot}")
        object.__setattr__(self, "values", frozen_array(self.values))


@dataclass(frozen=True, eq=False)
class Packet:
    """A measurement travelling through the queue."""

    payload: Measurement
    gen_slot: int
    admit_slot: int  # Admission is decided in the generation slot

    def __post_init__(self) -> None:
        if self.payload.gen_slot != self.gen_slot:
            raise ValueError("packet gen_slot must match its payload")
        if self.admit_slot != self.gen_slot:
            raise ValueError("packets are admitted in their generation slot")


@dataclass(frozen=True)
class QueueConfig:
    """Bernoulli(p) admissions into a queue with geometric(q) service."""

    p: float  # Admission probability per slot
    q: float  # Per-slot service success probability

    def __post_init__(self) -> None:
        if not (0.0 < self.p <= 1.0):
            raise ConfigError(f"p must be in (0, 1], got {self.p}")
        if not (0.0 < self.q <= 1.0):
            raise ConfigError(f"q must be in (0, 1], got {self.q}")
        if not self.is_stable:
            warnings.warn(
                f"queue with p={self.p} >= q={self.q} is unstable; "
                f"ages will grow without bound",
                AgeEstimatorWarning,
                stacklevel=3,
            )

    @property
    def utilization(self) -> float:
        return self.p / self.q

    @property
    def is_stable(self) -> bool:
        # Deterministic unit service keeps up with one arrival per slot
        return self.p < self.q or self.q == 1.0


def require_finite(name: str, values: npt.ArrayLike) -> None:
    if not np.all(np.isfinite(np.asarray(values, dtype=np.float64))):
        raise ValueError(f"{name} contains non-finite entries")
