"""Experiment configuration: records, JSON grid files and presets."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import warnings
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any

from age_estimator._data import AgeEstimatorWarning
from age_estimator._data import AgeMode
from age_estimator._data import ConfigError
from age_estimator._data import ControlMode
from age_estimator._data import QueueConfig
from age_estimator._dynamics import SYSTEMS
from age_estimator._laa import FULL_SCALE_TRAIN
from age_estimator._laa import TrainConfig
from age_estimator._simulation import TIME_VARYING
from age_estimator._simulation import Network

OUTPUT_DIR_ENV = "AGE_ESTIMATOR_OUTPUT_DIR"
ESTIMATORS = ("laa", "tvkf", "ukf")

# (p, q) settings of the fixed-network evaluation grid
FIXED_GRID = (
    (0.01, 0.3),
    (0.1, 0.3),
    (0.297, 0.3),
    (0.01, 0.5),
    (0.3, 0.5),
    (0.499, 0.5),
)


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV) or "results")


@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 20
    horizon: int = 2000

    def __post_init__(self) -> None:
        if self.episodes < 1 or self.horizon < 1:
            raise ConfigError(
                f"evaluation needs positive episodes and horizon, "
                f"got {self.episodes} x {self.horizon}",
            )


FULL_SCALE_EVAL = EvalConfig(episodes=200, horizon=40_000)


def _short_hash(d: dict[str, Any]) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ExperimentConfig:
    """One cell of the evaluation grid."""

    system: str = "linear"
    p: float | None = 0.1
    q: float | None = 0.3
    time_varying: bool = False
    control_mode: ControlMode = ControlMode.NETWORKED
    age_mode: AgeMode = AgeMode.TRUE
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    estimators: tuple[str, ...] = ("laa",)
    seed: int = 0
    checkpoint: str | None = None  # reuse this checkpoint instead of training

    def __post_init__(self) -> None:
        if self.system not in SYSTEMS:
            raise ConfigError(f"unknown system {self.system!r}; expected one of {SYSTEMS}")
        if not self.estimators:
            raise ConfigError("no estimators requested")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ConfigError(
                f"unknown estimators {sorted(unknown)}; expected a subset of {ESTIMATORS}",
            )
        if "tvkf" in self.estimators and self.system != "linear":
            raise ConfigError("tvkf only applies to the linear system")
        if self.age_mode is AgeMode.NONE and set(self.estimators) != {"laa"}:
            raise ConfigError("age_mode 'none' is an ablation of the laa estimator only")
        if not self.time_varying:
            if self.p is None or self.q is None:
                raise ConfigError("a fixed network needs both p and q")
            with warnings.catch_warnings():
                # Stability is reported once, when the network is built
                warnings.simplefilter("ignore", AgeEstimatorWarning)
                QueueConfig(self.p, self.q)

    @property
    def network(self) -> Network:
        if self.time_varying:
            return TIME_VARYING
        assert self.p is not None and self.q is not None
        return QueueConfig(self.p, self.q)

    @property
    def network_mode(self) -> str:
        return TIME_VARYING if self.time_varying else "fixed"

    @property
    def train_config(self) -> TrainConfig:
        """Training settings with the experiment's master seed."""
        return dataclasses.replace(self.train, seed=self.seed)

    def as_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["control_mode"] = self.control_mode.value
        d["age_mode"] = self.age_mode.value
        d["estimators"] = list(self.estimators)
        return d

    def fingerprint(self) -> str:
        """Short stable hash of every setting that affects the results."""
        d = self.as_dict()
        d.pop("checkpoint")
        d.pop("estimators")
        return _short_hash(d)

    def model_fingerprint(self) -> str:
        """Short stable hash of the settings that affect training.

        Noisy and true ages train the same model, and evaluation sizes never
        reach training, so these share a checkpoint.
        """
        return _short_hash({
            "system": self.system,
            "network": TIME_VARYING if self.time_varying else [self.p, self.q],
            "control_mode": self.control_mode.value,
            "uses_age": self.age_mode is not AgeMode.NONE,
            "train": dataclasses.asdict(self.train_config),
        })

    def with_estimator(self, estimator: str) -> ExperimentConfig:
        return dataclasses.replace(self, estimators=(estimator,))


_TOP_LEVEL_KEYS = frozenset(f.name for f in dataclasses.fields(ExperimentConfig))


def experiment_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    """Build an ExperimentConfig from plain JSON values."""
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
    kwargs = dict(raw)
    try:
        if "control_mode" in kwargs:
            kwargs["control_mode"] = ControlMode(kwargs["control_mode"])
        if "age_mode" in kwargs:
            kwargs["age_mode"] = AgeMode(kwargs["age_mode"])
        if "train" in kwargs:
            kwargs["train"] = TrainConfig(**kwargs["train"])
        if "eval" in kwargs:
            kwargs["eval"] = EvalConfig(**kwargs["eval"])
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    if "estimators" in kwargs:
        kwargs["estimators"] = tuple(kwargs["estimators"])
    return ExperimentConfig(**kwargs)


def _merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    return merged


def load_grid(
    path: Path,
    overrides: dict[str, Any] | None = None,
) -> list[ExperimentConfig]:
    """Read `{"defaults": {...}, "experiments": [{...}, ...]}`.

    Each experiment is the defaults updated with its own entries, then with
    `overrides` (command-line flags), nested `train`/`eval` tables merged key
    by key.
    """
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read grid file {path}: {e}") from e
    if not isinstance(raw, dict) or not isinstance(raw.get("experiments"), list):
        raise ConfigError(f"{path}: expected an object with an 'experiments' list")

    defaults = raw.get("defaults", {})
    return [
        experiment_from_dict(_merge(_merge(defaults, entry), overrides or {}))
        for entry in raw["experiments"]
    ]


def fixed_grid(base: ExperimentConfig) -> list[ExperimentConfig]:
    """`base` at each fixed (p, q) of the evaluation grid."""
    return [
        dataclasses.replace(base, p=p, q=q, time_varying=False)
        for p, q in FIXED_GRID
    ]


def full_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """Swap in full-scale training and evaluation sizes."""
    warnings.warn(
        f"full scale trains {FULL_SCALE_TRAIN.episodes} x "
        f"{FULL_SCALE_TRAIN.horizon} slots and evaluates "
        f"{FULL_SCALE_EVAL.episodes} x {FULL_SCALE_EVAL.horizon} slots per "
        f"experiment; expect days of CPU time",
        AgeEstimatorWarning,
        stacklevel=2,
    )
    train = dataclasses.replace(
        cfg.train,
        episodes=FULL_SCALE_TRAIN.episodes,
        horizon=FULL_SCALE_TRAIN.horizon,
        replay_capacity=FULL_SCALE_TRAIN.replay_capacity,
    )
    return dataclasses.replace(cfg, train=train, eval=FULL_SCALE_EVAL)
