"""Multi-environment PDE dataset generation and storage."""
from .fields import hc_coefficient_field, initial_condition, power_law_grf, sw_dam_profile
from .io import (DatasetManifest, build_dataset, channel_stats, cond_param_order,
                 cond_stats_from_envs, cond_vector, denormalize, normalize,
                 normalized_cond, read_dataset, write_dataset)
from .solvers import SolverBlowupError, Trajectory, simulate
from .systems import (SPLITS, SYSTEMS, Environment, ParamRange, SystemSpec,
                      get_system, sample_environments, trajectory_rng,
                      validate_environment)

__all__ = [
    "SPLITS", "SYSTEMS", "DatasetManifest", "Environment", "ParamRange",
    "SolverBlowupError", "SystemSpec", "Trajectory", "build_dataset",
    "channel_stats", "cond_param_order", "cond_stats_from_envs", "cond_vector",
    "denormalize", "get_system", "hc_coefficient_field", "initial_condition",
    "normalize", "normalized_cond", "power_law_grf", "read_dataset",
    "sample_environments", "simulate", "sw_dam_profile", "trajectory_rng",
    "validate_environment", "write_dataset",
]
