"""Design Loop Bench: oracle-scored sequential design runs and their analysis."""

from .oracle import OracleModel, fit_oracle, predict
from .optim import GpUcbConfig, run_optimizer
from .runner import RunPlan, TrajectoryStore, execute_plan
from .space import ParameterSpace, ParameterSpec, validate_design
from .tasks import Task, load_task
from .trajectory import Step, Trajectory

__all__ = [
    "GpUcbConfig",
    "OracleModel",
    "ParameterSpace",
    "ParameterSpec",
    "RunPlan",
    "Step",
    "Task",
    "Trajectory",
    "TrajectoryStore",
    "execute_plan",
    "fit_oracle",
    "load_task",
    "predict",
    "run_optimizer",
    "validate_design",
]
