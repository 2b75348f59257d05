"""Simulator for FedCD, federated learning with model cloning and deletion.

Several global models coexist; devices score them by recent validation
accuracy, models are cloned at milestone rounds and deleted by devices that
no longer rate them. FedAvg is included as the single-model baseline.
"""

from .config import ExperimentConfig, load_config
from .engine import ConfigError, SimulationConfig, init_simulation, run_round, run_simulation
from .kernels import BACKEND as KERNEL_BACKEND
from .model import LabeledBatch, MlpSpec, ModelWeights, QuantizationSpec

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "KERNEL_BACKEND",
    "LabeledBatch",
    "MlpSpec",
    "ModelWeights",
    "QuantizationSpec",
    "SimulationConfig",
    "init_simulation",
    "load_config",
    "run_round",
    "run_simulation",
]
__version__ = "0.1.0"
