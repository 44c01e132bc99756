"""Distributed cycle-consistent multi-object matching."""

from dmatch.errors import (
    ConfigError,
    CoverRefusedError,
    DMatchError,
    PreconditionError,
    ProtocolError,
    StructuralError,
)
from dmatch.core import (
    BlockMatrix,
    MapGraph,
    UniverseAssignment,
    compose_maps,
    ground_truth_matrix,
    is_cycle_consistent,
    round_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "BlockMatrix",
    "ConfigError",
    "CoverRefusedError",
    "DMatchError",
    "MapGraph",
    "PreconditionError",
    "ProtocolError",
    "StructuralError",
    "UniverseAssignment",
    "compose_maps",
    "ground_truth_matrix",
    "is_cycle_consistent",
    "round_matrix",
]
