"""Min-max BER beamforming for two-user downlink NOMA with a learned surrogate."""

from .ber import ModulationSpec, ber_pair, psi
from .beamformer import (BeamParams, ConstraintContext, RepairConfig, assemble_beamformers,
                         check_constraints, repair_params)
from .channel import LinkBudget, extract_features, sample_scenario, scenario_projections
from .dataset import DatasetRecord, FeatureQuantizer, generate_dataset, label_dataset
from .harness import EvalConfig, run_eval, run_timing, validation_suite
from .learner import BeamformingNet, load_model, save_model
from .linksim import simulate_ber_pair
from .optimizer import CoConfig, co_solve, co_solve_many

__version__ = "0.1.0"

__all__ = [
    "BeamParams", "BeamformingNet", "CoConfig", "ConstraintContext", "DatasetRecord",
    "EvalConfig", "FeatureQuantizer", "LinkBudget", "ModulationSpec", "RepairConfig",
    "assemble_beamformers", "ber_pair", "check_constraints", "co_solve", "co_solve_many",
    "extract_features", "generate_dataset", "label_dataset", "load_model", "psi",
    "repair_params", "run_eval", "run_timing", "sample_scenario", "save_model",
    "scenario_projections", "simulate_ber_pair", "validation_suite",
]
