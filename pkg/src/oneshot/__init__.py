"""Communication-limited one-shot distributed convex optimization."""

from .estimators import ESTIMATORS, boost_confidence, get_estimator, mrec_machines, mrec_server
from .grid import MreParams, derive_params
from .harness import ExperimentConfig, TrialRecord, emit_results, run_sweep, run_trial
from .instances import kernel_h, kernel_k, make_classC, make_packing
from .losses import DomainCube, LossDistribution, MachineDataset, make_distribution

__version__ = "0.1.0"
