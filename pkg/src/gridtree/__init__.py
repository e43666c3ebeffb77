"""Latent topology recovery for radial distribution grids from partial meter data."""
from .errors import EstimationError, GridTreeError, StageError, TopologyError, WhiteningError
from .grid_model import Topology, build_admittance, build_z_paths, random_radial_tree, reduce_slack
from .impedance_est import (
    DistanceMatrix,
    distance_from_z,
    estimate_z_magnitude,
    estimate_z_plain,
    estimate_z_whitened,
)
from .rg_learn import LatentTree, RGConfig, recursive_grouping

__version__ = "0.1.0"

__all__ = [
    "DistanceMatrix",
    "EstimationError",
    "GridTreeError",
    "LatentTree",
    "RGConfig",
    "StageError",
    "Topology",
    "TopologyError",
    "WhiteningError",
    "build_admittance",
    "build_z_paths",
    "distance_from_z",
    "estimate_z_magnitude",
    "estimate_z_plain",
    "estimate_z_whitened",
    "random_radial_tree",
    "recursive_grouping",
    "reduce_slack",
]
