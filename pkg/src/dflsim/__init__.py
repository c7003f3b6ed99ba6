"""Desk-scale decentralized federated learning simulator.

Clients train a shared featurizer block plus a personal head, exchange only
the shared block, and decide each round whom to learn from via gradient
similarity, adaptive participation thresholds, and loss-weighted averaging.
"""

from .core import (ConfigError, DataFormatError, DivergedError, ExperimentConfig,
                   ModelParams, PartitionError, ShapeMismatchError, Topology,
                   cosine_sim, fully_connected, partially_connected,
                   topology_from_edges)
from .engine import AlgorithmId, parse_algorithm, run_training

__version__ = "0.1.0"

__all__ = [
    "AlgorithmId",
    "ConfigError",
    "DataFormatError",
    "DivergedError",
    "ExperimentConfig",
    "ModelParams",
    "PartitionError",
    "ShapeMismatchError",
    "Topology",
    "cosine_sim",
    "fully_connected",
    "parse_algorithm",
    "partially_connected",
    "run_training",
    "topology_from_edges",
    "__version__",
]
