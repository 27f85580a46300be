from __future__ import annotations

from importlib.metadata import version

from age_estimator._baselines import KalmanBelief
from age_estimator._baselines import LinearGaussianModel
from age_estimator._baselines import MeasurementBuffer
from age_estimator._baselines import UkfConfig
from age_estimator._baselines import baseline_evaluate
from age_estimator._baselines import tvkf_step
from age_estimator._baselines import ukf_step
from age_estimator._checkpoint import load_checkpoint
from age_estimator._checkpoint import save_checkpoint
from age_estimator._config import EvalConfig
from age_estimator._config import ExperimentConfig
from age_estimator._config import load_grid
from age_estimator._data import AgeEstimatorWarning
from age_estimator._data import AgeMode
from age_estimator._data import CheckpointMismatchError
from age_estimator._data import ConfigError
from age_estimator._data import ControlMode
from age_estimator._data import DimensionError
from age_estimator._data import Measurement
from age_estimator._data import Packet
from age_estimator._data import QueueConfig
from age_estimator._data import SingularParametersError
from age_estimator._dynamics import Cartpole
from age_estimator._dynamics import CartpoleParams
from age_estimator._dynamics import CartpoleState
from age_estimator._dynamics import LinearControl
from age_estimator._dynamics import LinearVehicle
from age_estimator._dynamics import LinearVehicleState
from age_estimator._dynamics import step_cartpole
from age_estimator._dynamics import step_linear
from age_estimator._format import ResultRecord
from age_estimator._harness import age_sweep
from age_estimator._harness import cross_test
from age_estimator._harness import run_experiment
from age_estimator._harness import run_grid
from age_estimator._harness import write_plot_script
from age_estimator._laa import EstimatorInput
from age_estimator._laa import LaaModel
from age_estimator._laa import ReplayMemory
from age_estimator._laa import TrainConfig
from age_estimator._laa import build_input
from age_estimator._laa import estimate
from age_estimator._laa import evaluate
from age_estimator._laa import loss
from age_estimator._laa import train
from age_estimator._main import main
from age_estimator._network import AgeTracker
from age_estimator._network import QueueState
from age_estimator._network import average_age
from age_estimator._network import noisy_age
from age_estimator._network import queue_step
from age_estimator._network import sample_time_varying
from age_estimator._network import update_age
from age_estimator._nn import AdamState
from age_estimator._nn import FcParams
from age_estimator._nn import LstmParams
from age_estimator._nn import LstmState
from age_estimator._nn import TapeCache
from age_estimator._nn import adam_step
from age_estimator._nn import backward
from age_estimator._nn import fc_forward
from age_estimator._nn import gradient_check
from age_estimator._nn import init_params
from age_estimator._nn import lstm_forward
from age_estimator._nn import op_count
from age_estimator._simulation import EpisodeTrace
from age_estimator._simulation import EvaluationResult
from age_estimator._simulation import simulate_episode
from age_estimator._simulation import trace_ages

__version__ = version("age-estimator-py")

__all__ = [
    # Data types and errors
    "Measurement",
    "Packet",
    "QueueConfig",
    "ControlMode",
    "AgeMode",
    "DimensionError",
    "SingularParametersError",
    "CheckpointMismatchError",
    "ConfigError",
    "AgeEstimatorWarning",
    # Dynamics
    "LinearVehicle",
    "LinearVehicleState",
    "LinearControl",
    "Cartpole",
    "CartpoleParams",
    "CartpoleState",
    "step_linear",
    "step_cartpole",
    # Network and age
    "QueueState",
    "AgeTracker",
    "queue_step",
    "update_age",
    "average_age",
    "sample_time_varying",
    "noisy_age",
    "EpisodeTrace",
    "simulate_episode",
    "trace_ages",
    # Neural network kernel
    "LstmParams",
    "LstmState",
    "FcParams",
    "AdamState",
    "TapeCache",
    "lstm_forward",
    "fc_forward",
    "backward",
    "adam_step",
    "op_count",
    "init_params",
    "gradient_check",
    "save_checkpoint",
    "load_checkpoint",
    # Learned estimator
    "EstimatorInput",
    "LaaModel",
    "ReplayMemory",
    "TrainConfig",
    "build_input",
    "estimate",
    "loss",
    "train",
    "evaluate",
    "EvaluationResult",
    # Model-based baselines
    "KalmanBelief",
    "MeasurementBuffer",
    "LinearGaussianModel",
    "UkfConfig",
    "tvkf_step",
    "ukf_step",
    "baseline_evaluate",
    # Experiments and CLI
    "ExperimentConfig",
    "EvalConfig",
    "ResultRecord",
    "load_grid",
    "run_experiment",
    "run_grid",
    "age_sweep",
    "cross_test",
    "write_plot_script",
    "main",
    # Metadata
    "__version__",
]
