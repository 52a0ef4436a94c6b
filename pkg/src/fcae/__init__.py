"""Particle swarm search over variable-length convolutional auto-encoder
architectures, backed by a self-contained numpy training engine."""

from .genome import (ArchGenome, ConvGene, DecodedArchitecture, GeneBounds,
                     PoolGene, decode, deserialize, encode, init_genome,
                     serialize)
from .pso import (PsoConfig, SearchResult, Swarm, TrajectoryRecord,
                  align_to_x, position_update, run_search, update_bests,
                  velocity_update)

__version__ = "0.1.0"

__all__ = [
    "ArchGenome", "ConvGene", "DecodedArchitecture", "GeneBounds", "PoolGene",
    "PsoConfig", "SearchResult", "Swarm", "TrajectoryRecord", "align_to_x",
    "decode", "deserialize", "encode", "init_genome", "position_update",
    "run_search", "serialize", "update_bests", "velocity_update",
]
