"""Neural induction machine model trained from physics residuals, data, or both."""
from .machine import LARGE_MACHINE, MACHINES, SMALL_MACHINE, MachineParams, abc_to_qd0, qd0_to_abc
from .nnet import MlpNetwork
from .pinn import GModel, LossReport, PModel, TrainingConfig, train_g, train_p
from .simulator import Scenario, ScenarioKind, SimulationError, Trajectory, simulate

__version__ = "0.1.0"

__all__ = [
    "LARGE_MACHINE", "MACHINES", "SMALL_MACHINE", "MachineParams", "abc_to_qd0", "qd0_to_abc",
    "MlpNetwork", "GModel", "PModel", "LossReport", "TrainingConfig", "train_g", "train_p",
    "Scenario", "ScenarioKind", "SimulationError", "Trajectory", "simulate",
]
