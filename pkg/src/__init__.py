from .api import run_experiment_json
from .config import RunConfig
from .harness import run_experiment
from .exceptions import (
    MesaError,
    InvalidArgumentError,
    InvalidStateError,
    InfeasibleGeometryError,
    DegenerateProfileError,
    InvalidConfigError,
    TrainingDivergedError,
    HarvestFailureError,
    ValidationError,
    ArtifactError
)

__all__ = [
    'run_experiment_json',
    'run_experiment',
    'RunConfig',
    'MesaError',
    'InvalidArgumentError',
    'InvalidStateError',
    'InfeasibleGeometryError',
    'DegenerateProfileError',
    'InvalidConfigError',
    'TrainingDivergedError',
    'HarvestFailureError',
    'ValidationError',
    'ArtifactError'
]
