"""Pydantic schemas for parameters, results and report rows."""

import math
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.models.enums import LevelRule


# ============= Choice Model Schemas =============

class TruncatedMnlParams(BaseModel):
    """Truncated multinomial logit: only items with positive inner product attract."""

    model_config = ConfigDict(frozen=True)

    sigma: float = Field(..., gt=0.0, description="Gumbel scale")
    w: float = Field(..., ge=0.0, description="no-choice weight")
    theta: float = Field(math.sqrt(2.0), gt=0.0, le=2.0, description="distance cutoff")


class RevenueMnlParams(BaseModel):
    """Revenue-weighted multinomial logit."""

    model_config = ConfigDict(frozen=True)

    revenues: Dict[int, float]
    w: float = Field(..., ge=0.0)

    @field_validator("revenues")
    @classmethod
    def _check_revenues(cls, value: Dict[int, float]) -> Dict[int, float]:
        for item_id, revenue in value.items():
            if not math.isfinite(revenue) or revenue < 0:
                raise ValueError(f"revenue for item {item_id} must be finite and >= 0")
        return value


class SubmodularCheck(BaseModel):
    """Outcome of the r_min/r_max condition check for revenue MNL."""

    holds: bool
    revenue_ratio: float
    max_conversion: float
    exhaustive: bool
    witness: Optional[List[int]] = None
    witness_type: Optional[int] = None


# ============= Sampling Plan Schemas =============

class LevelSpec(BaseModel):
    """One level of a locality-sensitive sampling plan."""

    model_config = ConfigDict(frozen=True)

    level: int
    rho: float
    gamma: Optional[float] = None
    a: int = 0
    b: int = 0
    active: bool = False


class LevelPlan(BaseModel):
    """Per-level inclusion rates, radii and hash-table shapes."""

    model_config = ConfigDict(frozen=True)

    n: int
    beta: float
    c: float
    delta: float
    rule: LevelRule = LevelRule.DEFINITION
    rho_0: float
    levels: List[LevelSpec] = []

    @property
    def R(self) -> int:  # noqa: N802
        return len(self.levels)

    @property
    def active_levels(self) -> List[LevelSpec]:
        return [level for level in self.levels if level.active]

    def expected_slots(self) -> float:
        """Expected number of stored item slots across all hash tables."""
        return sum(level.rho * self.n * level.b for level in self.active_levels)


# ============= Optimization Schemas =============

class PruneConfig(BaseModel):
    """Sample-count parameters for the pruning step."""

    model_config = ConfigDict(frozen=True)

    epsilon1: float = Field(0.1, gt=0.0, le=1.0)
    epsilon2: float = Field(0.05, gt=0.0, le=1.0)
    sampling_floor: float = Field(0.5, gt=0.0, le=1.0)
    s_override: Optional[int] = Field(None, ge=1)


class OfferSet(BaseModel):
    """At most k items together with their mixture objective value."""

    items: List[int] = []
    value: float = 0.0
    k: int = Field(..., ge=0)

    @field_validator("items")
    @classmethod
    def _unique_items(cls, value: List[int]) -> List[int]:
        if len(set(value)) != len(value):
            raise ValueError("offer set items must be unique")
        return value

    def __len__(self) -> int:
        return len(self.items)


class Recommendation(BaseModel):
    """Offer set plus pipeline diagnostics."""

    offer: OfferSet
    candidate_count: int
    samples: int
    required_samples: int
    prune_seconds: float
    greedy_seconds: float
    gains: List[float] = []


# ============= Oracle Schemas =============

class InclusionEstimate(BaseModel):
    """Empirical per-item inclusion frequency of a randomized sampler."""

    item_ids: List[int]
    frequency: List[float]
    standard_error: List[float]
    replications: int = Field(..., ge=2)

    def as_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "item_id": np.asarray(self.item_ids, dtype=np.uint64),
                "frequency": self.frequency,
                "standard_error": self.standard_error,
            }
        ).set_index("item_id")

    def of(self, item_id: int) -> tuple[float, float]:
        """Frequency and standard error for one item."""
        row = self.item_ids.index(item_id)
        return self.frequency[row], self.standard_error[row]


class SaaGapStats(BaseModel):
    """Optimality gap of sample-average approximation at one sample size."""

    m: int
    trials: int
    mean_gap: float
    standard_error: float
    scaled_gap: float  # mean_gap * sqrt(m)


# ============= Report Rows =============

class Figure2Bin(BaseModel):
    """Inclusion frequency for items binned by distance to the query."""

    mid_distance: float
    target: float
    lower_bound: float
    frequency: float
    standard_error: float
    items: int


class BenchmarkRow(BaseModel):
    """Average conversion and win share of one method at one sigma."""

    sigma: float
    w: float
    method: str
    avg_conversion: float
    win_share: float
    mixtures: int


class ScalingRow(BaseModel):
    """Mean query cost and candidate count at one universe size."""

    n: int
    theta: float
    mean_query_seconds: float
    mean_candidates: float
    candidate_budget: float
    measured_beta: float
    expected_slots: float
    levels: int


class PowerLawFit(BaseModel):
    """Least-squares fit of log(value) = exponent * log(n) + intercept."""

    exponent: float
    intercept: float
    r_value: float
    points: int


# ============= Index Store Schemas =============

class IndexMetadata(BaseModel):
    """Sidecar describing one persisted sampling index."""

    name: str
    created_at: str
    seed: int
    dim: int
    n: int
    levels: int
    slots: int
    size_bytes: int
    path: Optional[str] = None


# ============= Experiment Reports =============

class ExperimentReport(BaseModel):
    """Report rows plus the preamble needed to regenerate them."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: str
    frame: pd.DataFrame
    header: List[tuple[str, object]] = []
    fits: Dict[str, PowerLawFit] = {}
