"""Exact, slow reference implementations for validating the sampling and optimization code."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional, Set, Tuple

import numpy as np

from app.config import get_settings
from app.errors import GuardViolationError
from app.log import get_logger
from app.models.embedding import ItemUniverse, UserMixture
from app.schemas import InclusionEstimate, OfferSet, SaaGapStats
from app.services.choice import AttractionTable, ChoiceModel

logger = get_logger("oracle")

COMBINATION_CHUNK = 65_536


def ideal_sample(
    universe: ItemUniverse, mixture: UserMixture, model: ChoiceModel, rng: np.random.Generator
) -> Set[int]:
    """Include every item independently with probability exactly g({v})."""
    values = model.table(universe, mixture.matrix).singleton_values()
    keep = rng.random(universe.n) < values
    return set(universe.ids[keep].tolist())


def subset_count(n: int, k: int) -> int:
    """Number of subsets of size at most k, the empty set included."""
    return sum(math.comb(n, j) for j in range(min(k, n) + 1))


def _check_guard(n: int, k: int, guard: Optional[int]) -> None:
    limit = guard if guard is not None else get_settings().oracle_guard
    count = subset_count(n, k)
    if count > limit:
        raise GuardViolationError(count, limit)


def _best_rows(table: AttractionTable, k: int) -> Tuple[np.ndarray, float]:
    """Enumerate every subset of size <= k; the first maximum in lexicographic order wins."""
    n = len(table.item_ids)
    best_rows, best_value = np.empty(0, dtype=np.int64), 0.0
    for size in range(1, min(k, n) + 1):
        combos = itertools.combinations(range(n), size)
        while True:
            chunk = np.array(list(itertools.islice(combos, COMBINATION_CHUNK)), dtype=np.int64)
            if chunk.size == 0:
                break
            values = table.combination_values(chunk.reshape(-1, size))
            top = int(np.argmax(values))
            if values[top] > best_value:
                best_rows, best_value = chunk.reshape(-1, size)[top], float(values[top])
    return best_rows, best_value


def exhaustive_opt(
    universe: ItemUniverse,
    k: int,
    mixture: UserMixture,
    model: ChoiceModel,
    guard: Optional[int] = None,
) -> Tuple[OfferSet, float]:
    """Exact optimum of g over all subsets of size <= k.

    Raises:
        GuardViolationError: more subsets than the guard allows
    """
    _check_guard(universe.n, k, guard)
    table = model.table(universe, mixture.matrix)
    rows, value = _best_rows(table, k)
    items = sorted(int(universe.ids[r]) for r in rows)
    return OfferSet(items=items, value=value, k=k), value


def estimate_inclusion(
    sampler: Callable[[int], Iterable[int]],
    universe: ItemUniverse,
    reps: int,
    workers: int = 1,
) -> InclusionEstimate:
    """Per-item inclusion frequency of a randomized set sampler.

    Args:
        sampler: Called with the replication index, returns a set of item ids
        universe: Items to report on, in universe order
        reps: Number of independent replications (>= 2)
        workers: Replications run concurrently when above 1

    Returns:
        Frequencies with binomial standard errors sqrt(f (1 - f) / reps)
    """
    if reps < 2:
        raise ValueError(f"reps must be at least 2, got {reps}")

    def positions(rep: int) -> np.ndarray:
        return universe.positions(sampler(rep))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            draws = list(pool.map(positions, range(reps)))
    else:
        draws = [positions(rep) for rep in range(reps)]

    counts = np.zeros(universe.n, dtype=np.int64)
    for rows in draws:
        counts[np.unique(rows)] += 1
    frequency = counts / reps
    standard_error = np.sqrt(frequency * (1.0 - frequency) / reps)
    return InclusionEstimate(
        item_ids=universe.ids.tolist(),
        frequency=frequency.tolist(),
        standard_error=standard_error.tolist(),
        replications=reps,
    )


def saa_gap(
    model: ChoiceModel,
    ground_truth: UserMixture,
    m: int,
    k: int,
    trials: int,
    rng: np.random.Generator,
    universe: ItemUniverse,
    resample: bool = True,
    guard: Optional[int] = None,
) -> SaaGapStats:
    """Optimality gap of the sample-average approximation with m sampled types.

    Each trial draws m types from the ground-truth mixture (with replacement, or
    without when `resample` is off), solves the sampled problem exactly and
    scores the solution under the ground-truth objective.
    """
    if not 1 <= m <= ground_truth.m:
        raise ValueError(f"m must lie in [1, {ground_truth.m}], got {m}")
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}")
    _check_guard(universe.n, k, guard)

    truth = model.table(universe, ground_truth.matrix)
    _, optimum = _best_rows(truth, k)
    gaps = np.empty(trials)
    for trial in range(trials):
        if resample:
            picks = rng.integers(ground_truth.m, size=m)
        else:
            picks = np.sort(rng.choice(ground_truth.m, size=m, replace=False))
        sampled = model.table(universe, ground_truth.matrix[picks])
        rows, _ = _best_rows(sampled, k)
        gaps[trial] = optimum - (truth.objective(rows) if rows.size else 0.0)

    mean_gap = float(gaps.mean())
    standard_error = float(gaps.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    logger.debug("saa_gap", m=m, trials=trials, mean_gap=mean_gap)
    return SaaGapStats(
        m=m,
        trials=trials,
        mean_gap=mean_gap,
        standard_error=standard_error,
        scaled_gap=mean_gap * math.sqrt(m),
    )
