"""kdsim: desk-scale simulation of knowledge transfer between classifiers.

The package covers the full loop: carve a dataset into heterogeneous
participant shards, pre-train a small classifier per participant,
transfer knowledge pairwise or many-to-one with several distillation
schemes, and compare a distillation-consolidated model against plain
federated averaging. Everything is seeded and float64 so repeated runs
are bit-identical.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DomainError,
    KdsimError,
    ParseError,
    PartitionError,
    ShapeError,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DomainError",
    "KdsimError",
    "ParseError",
    "PartitionError",
    "ShapeError",
    "__version__",
]
