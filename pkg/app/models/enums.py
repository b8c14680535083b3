"""Enumerations shared across services and configuration."""

from enum import Enum as PyEnum


class BaselineKind(str, PyEnum):
    """Single-point recommendation heuristics."""

    MEAN = "mean"
    LAST = "last"


class SyntheticLaw(str, PyEnum):
    """Synthetic data generation law."""

    DISTANCE_UNIFORM = "distance-uniform"
    CLUSTER_MIXTURE = "cluster-mixture"


class LevelRule(str, PyEnum):
    """Formula used for the number of sampling levels R."""

    DEFINITION = "definition"  # floor(log2 n^(1-beta))
    HASH_TABLES = "hash-tables"  # ceil(1 + log2 n)


class ExperimentKind(str, PyEnum):
    """Experiment selection."""

    FIGURE2 = "figure2"
    BENCHMARK = "benchmark"
    SCALING = "scaling"
