"""Region-based conformal perception bounds and Taylor-model reachability."""

from .conformal import (GlobalBound, TimewiseBound, TrajectoryDataset, augmented_quantile, cp_quantile,
                        empirical_coverage, regional_bounds, timewise_baseline)
from .geometry import Box, Partition, get_nonempty_boxes, locate
from .models import KinematicCar, MountainCar, NoiseProfile, generate_dataset, two_regime_profile
from .partition_opt import GAConfig, run_ga
from .reach import Flowpipe, ReachConfig, StateNoise, TimeNoise, reach
from .taylor import TaylorModel, TMVector

__version__ = "0.1.0"

__all__ = [
    "Box", "Flowpipe", "GAConfig", "GlobalBound", "KinematicCar", "MountainCar", "NoiseProfile", "Partition",
    "ReachConfig", "StateNoise", "TMVector", "TaylorModel", "TimeNoise", "TimewiseBound", "TrajectoryDataset",
    "augmented_quantile", "cp_quantile", "empirical_coverage", "generate_dataset", "get_nonempty_boxes", "locate",
    "reach", "regional_bounds", "run_ga", "timewise_baseline", "two_regime_profile",
]
