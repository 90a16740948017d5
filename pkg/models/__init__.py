from models.base import BaseModel
from models.experiment_run import ExperimentRun
from models.epoch_log import EpochLog

__all__ = [
    "BaseModel",
    "ExperimentRun",
    "EpochLog",
]
