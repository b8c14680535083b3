"""Locality-sensitive sampling: leveled LSH structures sampling items with probability >= p(d)/2.

Level r keeps an independent rho_r-subsample of the items and retrieves those
within gamma_r = sup {x : p(x) >= 2^-r} of the query with probability at least
1/2. A baseline rho_0-subsample is always returned, covering the items whose
p(d) is too small for any level.
"""

from __future__ import annotations

import json
import math
from typing import Dict, Iterable, List, Optional, Set

import numpy as np

from app.config import get_settings
from app.errors import (
    ConfigError,
    DimensionMismatchError,
    DuplicateItemError,
    IndexFormatError,
    IndexVersionError,
)
from app.log import get_logger
from app.models.embedding import ItemUniverse, UnitVector
from app.models.enums import LevelRule
from app.schemas import LevelPlan, LevelSpec
from app.services.choice import DecayFunction
from app.services.lsh import BlobReader, LshTableSet, build_lsh, collision_prob, derive_seed

logger = get_logger("lss")

# Per-structure failure probability of the approximate near-neighbor levels
EPSILON = 0.5
FAR_DISTANCE_LIMIT = 2.0 - 1e-9

LSS_MAGIC = b"LSS1"
LSS_VERSION = 1

_LSS_HEADER = np.dtype(
    [("magic", "S4"), ("version", "<u2"), ("dim", "<u4"), ("seed", "<u8"), ("plan_len", "<u4")]
)
_LEVEL_HEADER = np.dtype([("level", "<u4"), ("blob_len", "<u8")])


def level_count(n: int, beta: float, rule: LevelRule = LevelRule.DEFINITION) -> int:
    """Number of sampling levels R."""
    if n < 1:
        return 0
    if rule == LevelRule.HASH_TABLES:
        return math.ceil(1 + math.log2(n))
    return max(0, math.floor((1.0 - beta) * math.log2(n) + 1e-12))


def level_rho(r: int, R: int) -> float:
    """rho_r = 1/(2^r - 1) below the top level, 1/2^(R-1) at r = R."""
    return 1.0 / 2 ** (R - 1) if r == R else 1.0 / (2**r - 1)


def level_threshold(r: int, R: int, rho_0: float) -> float:
    """Decay value p(gamma_r) that level r serves: 2^-r, or min(2^-R, 2 rho_0) at the top.

    The top level reaches down to p = 2 rho_0 so no item falls between it and the baseline.
    """
    return 2.0**-r if r < R else min(2.0**-r, 2.0 * rho_0)


def retrieval_prob(spec: LevelSpec, x: float) -> float:
    """Probability that a retained item at distance x collides in some table: 1 - (1 - q^a)^b."""
    q = collision_prob(min(x, 2.0))
    return 1.0 - (1.0 - q**spec.a) ** spec.b


def plan_levels(
    p: DecayFunction,
    n: int,
    beta: float,
    c: float,
    delta: float,
    rule: LevelRule = LevelRule.DEFINITION,
    enforce_level_guarantee: bool = True,
) -> LevelPlan:
    """Plan rho_r, gamma_r, a_r and b_r for every level.

    a_r = ceil(log_{q(c gamma_r)} 2^r n^(beta-1)) with c gamma_r clamped below 2;
    b_r = ceil(ln 2 * 2^(-r delta) * n^(delta(1-beta)) / q(gamma_r)). With
    `enforce_level_guarantee`, b_r is raised to ceil(ln 2 / q(gamma_r)^a_r)
    whenever delta understates the hash quality at this radius, so each level
    retrieves items at distance gamma_r with probability >= 1/2.

    Levels where p never reaches 2^-r are inactive.
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    if c <= 1.0:
        raise ValueError(f"c must exceed 1, got {c}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")

    max_bits = get_settings().max_hash_bits
    R = level_count(n, beta, rule)
    rho_0 = min(1.0, 0.5 * n ** (beta - 1.0)) if n >= 1 else 0.0

    levels: List[LevelSpec] = []
    for r in range(1, R + 1):
        rho = level_rho(r, R)
        gamma = p.radius(level_threshold(r, R, rho_0))
        if gamma is None:
            levels.append(LevelSpec(level=r, rho=rho))
            continue

        q_far = collision_prob(min(c * gamma, FAR_DISTANCE_LIMIT))
        q_near = collision_prob(min(gamma, FAR_DISTANCE_LIMIT))
        target = 2.0**r * n ** (beta - 1.0)
        if target >= 1.0:
            a = 1
        elif q_far >= 1.0:
            raise ConfigError(f"level {r} has radius 0; no hash length separates far items")
        else:
            a = max(1, math.ceil(math.log(target) / math.log(q_far)))
        if a > max_bits:
            logger.error("hash_bits_exceeded", level=r, gamma=gamma, requested=a, limit=max_bits)
            raise ConfigError(
                f"level {r} needs a={a} hash bits at radius {gamma:.3g}, above max_hash_bits={max_bits}"
            )

        b = math.ceil(
            math.log(2.0) * 2.0 ** (-r * delta) * n ** (delta * (1.0 - beta)) / q_near
        )
        if enforce_level_guarantee:
            b = max(b, math.ceil(math.log(2.0) / q_near**a))
        b = max(1, b)
        levels.append(
            LevelSpec(level=r, rho=rho, gamma=gamma, a=a, b=b, active=True)
        )

    plan = LevelPlan(n=n, beta=beta, c=c, delta=delta, rule=rule, rho_0=rho_0, levels=levels)
    logger.debug("levels_planned", n=n, R=R, active=len(plan.active_levels), rho_0=rho_0)
    return plan


class LssIndex:
    """Baseline subsample plus one LSH table set per active level.

    Queries are safe to run concurrently; insert/remove need exclusive access.
    """

    def __init__(self, plan: LevelPlan, dim: int, seed: int):
        self.plan = plan
        self.dim = dim
        self.seed = int(seed)
        self.baseline: Dict[int, None] = {}
        self.levels: Dict[int, LshTableSet] = {}

    @property
    def specs(self) -> Dict[int, LevelSpec]:
        return {spec.level: spec for spec in self.plan.active_levels}

    @property
    def slots(self) -> int:
        return sum(tables.slots for tables in self.levels.values())

    def __contains__(self, item_id: object) -> bool:
        return item_id in self.baseline or any(item_id in t for t in self.levels.values())

    def query(self, u: UnitVector, post_filter: bool = False) -> Set[int]:
        """Union of the baseline subsample and every level's collisions with u.

        With `post_filter`, level-r candidates farther than c * gamma_r are dropped.
        """
        if u.dim != self.dim:
            raise DimensionMismatchError(self.dim, u.dim)
        found: Set[int] = set(self.baseline)
        specs = self.specs
        for level, tables in self.levels.items():
            hits = tables.query(u)
            if post_filter and hits:
                radius = self.plan.c * specs[level].gamma
                hits = {
                    item
                    for item in hits
                    if np.linalg.norm(tables.vector(item) - u.coords) <= radius
                }
            found |= hits
        return found

    def insert(self, item_id: int, vector: UnitVector) -> "LssIndex":
        """Add an item, joining each level independently with probability rho_r."""
        if vector.dim != self.dim:
            raise DimensionMismatchError(self.dim, vector.dim)
        item_id = int(item_id)
        if item_id in self:
            raise DuplicateItemError(f"item {item_id} already indexed")
        draws = np.random.default_rng(derive_seed(self.seed, item_id, 0)).random(self.plan.R + 1)
        if draws[0] < self.plan.rho_0:
            self.baseline[item_id] = None
        for level, tables in self.levels.items():
            if draws[level] < tables.rho:
                tables.insert(item_id, vector.coords)
        return self

    def remove(self, item_id: int) -> "LssIndex":
        """Delete an item everywhere; absent ids are a no-op."""
        item_id = int(item_id)
        self.baseline.pop(item_id, None)
        for tables in self.levels.values():
            tables.remove(item_id)
        return self

    # ----- serialization -----

    def to_bytes(self) -> bytes:
        """LSS1 container: header, plan JSON, baseline ids, then length-prefixed level blobs."""
        plan_json = self.plan.model_dump_json().encode("utf-8")
        header = np.array(
            [(LSS_MAGIC, LSS_VERSION, self.dim, self.seed, len(plan_json))], dtype=_LSS_HEADER
        )
        baseline = np.asarray(list(self.baseline), dtype="<u8")
        parts = [
            header.tobytes(),
            plan_json,
            np.array([baseline.size], dtype="<u8").tobytes(),
            baseline.tobytes(),
            np.array([len(self.levels)], dtype="<u4").tobytes(),
        ]
        for level, tables in self.levels.items():
            blob = tables.to_bytes()
            parts.append(np.array([(level, len(blob))], dtype=_LEVEL_HEADER).tobytes())
            parts.append(blob)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "LssIndex":
        reader = BlobReader(blob)
        header = reader.take(_LSS_HEADER, 1)[0]
        if bytes(header["magic"]) != LSS_MAGIC:
            raise IndexFormatError(f"bad LSS magic {bytes(header['magic'])!r}")
        if int(header["version"]) != LSS_VERSION:
            raise IndexVersionError(f"unsupported LSS version {int(header['version'])}")
        try:
            plan = LevelPlan.model_validate(json.loads(reader.take_bytes(int(header["plan_len"]))))
        except ValueError as e:
            raise IndexFormatError(f"corrupt plan: {e}") from e
        index = cls(plan, int(header["dim"]), int(header["seed"]))
        count = int(reader.take("<u8", 1)[0])
        index.baseline = dict.fromkeys(int(i) for i in reader.take("<u8", count).tolist())
        for _ in range(int(reader.take("<u4", 1)[0])):
            level_header = reader.take(_LEVEL_HEADER, 1)[0]
            tables = LshTableSet.from_bytes(reader.take_bytes(int(level_header["blob_len"])))
            index.levels[int(level_header["level"])] = tables
        reader.finish()
        return index

    def __repr__(self) -> str:
        return f"LssIndex(levels={len(self.levels)}, baseline={len(self.baseline)}, seed={self.seed})"


def build_lss(universe: ItemUniverse, plan: LevelPlan, seed: int) -> LssIndex:
    """Draw the baseline subsample and build one LSH table set per active level."""
    index = LssIndex(plan, universe.d, seed)
    keep = np.random.default_rng(derive_seed(seed, 0)).random(universe.n) < plan.rho_0
    index.baseline = dict.fromkeys(universe.ids[keep].tolist())
    for spec in plan.active_levels:
        index.levels[spec.level] = build_lsh(
            universe, spec.rho, spec.a, spec.b, derive_seed(seed, spec.level)
        )
    logger.debug(
        "lss_built", seed=seed, levels=len(index.levels), baseline=len(index.baseline), slots=index.slots
    )
    return index


def query_lss(index: LssIndex, u: UnitVector, post_filter: bool = False) -> Set[int]:
    """Sample items around u: each v returned with probability >= p(d(v, u)) / 2."""
    return index.query(u, post_filter=post_filter)


def insert_item(index: LssIndex, item_id: int, vector: UnitVector) -> LssIndex:
    return index.insert(item_id, vector)


def remove_item(index: LssIndex, item_id: int) -> LssIndex:
    return index.remove(item_id)


def expected_query_size(plan: LevelPlan, distances: Iterable[float]) -> float:
    """Expected |query_lss(u)| over builds, given item distances to u."""
    x = np.asarray(list(distances), dtype=np.float64)
    miss = np.full(x.size, 1.0 - plan.rho_0)
    for spec in plan.active_levels:
        q = collision_prob(np.minimum(x, 2.0))
        miss *= 1.0 - spec.rho * (1.0 - (1.0 - q**spec.a) ** spec.b)
    return float(np.sum(1.0 - miss))


def candidate_budget(plan: LevelPlan, mass: Optional[float] = None) -> float:
    """Upper bound on E|query_lss(u)| when sum_v p(d(v, u) / c) <= mass (default n^beta).

    Every level-r item within c gamma_r has p(d / c) >= p(gamma_r), so at most
    mass / p(gamma_r) of them exist; each farther item collides in some table
    with probability at most b_r q(c gamma_r)^a_r.
    """
    mass = plan.n**plan.beta if mass is None else mass
    bound = plan.rho_0 * plan.n
    for spec in plan.active_levels:
        assert spec.gamma is not None
        near = min(plan.n, mass / level_threshold(spec.level, plan.R, plan.rho_0))
        q_far = collision_prob(min(plan.c * spec.gamma, FAR_DISTANCE_LIMIT))
        far_rate = min(1.0, spec.b * q_far**spec.a)
        bound += spec.rho * (near + far_rate * (plan.n - near))
    return float(bound)
