"""Sub-linear offer-set optimization: ensemble pruning followed by greedy maximization."""

from __future__ import annotations

import heapq
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from app.config import get_settings
from app.errors import EmptyEnsembleError, EnsembleTooSmallError
from app.log import get_logger
from app.models.embedding import ItemUniverse, UserMixture
from app.schemas import LevelPlan, OfferSet, PruneConfig, Recommendation
from app.services.choice import AttractionTable, ChoiceModel, safe_ratio
from app.services.lss import LssIndex, build_lss

logger = get_logger("optimizer")

GAIN_TOLERANCE = 1e-12


def required_samples(k: int, c_s: float, epsilon1: float, epsilon2: float) -> int:
    """Draws needed so the pruned set keeps (1 - eps1) OPT - eps2: ceil(k/(c_s eps2) ln(k/eps1))."""
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    return max(1, math.ceil(k / (c_s * epsilon2) * math.log(k / epsilon1)))


def member_seeds(seed: int, s: int) -> List[int]:
    """Independent seeds for s ensemble members."""
    children = np.random.SeedSequence(int(seed)).spawn(s)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


def build_ensemble(
    universe: ItemUniverse, plan: LevelPlan, s: int, seed: int, max_workers: Optional[int] = None
) -> List[LssIndex]:
    """Build s independently seeded sampling indices over the same universe."""
    workers = max_workers or get_settings().max_workers
    seeds = member_seeds(seed, s)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        ensemble = list(pool.map(lambda member_seed: build_lss(universe, plan, member_seed), seeds))
    logger.info(
        "ensemble_built", members=s, slots=sum(index.slots for index in ensemble), seed=seed
    )
    return ensemble


def prune(
    ensemble: Sequence[LssIndex],
    mixture: UserMixture,
    rng: np.random.Generator,
    post_filter: bool = False,
    workers: int = 1,
) -> Set[int]:
    """Union of one sampling query per member, each at a uniformly drawn user type.

    Raises:
        EmptyEnsembleError: no members
    """
    if not ensemble:
        raise EmptyEnsembleError("pruning needs at least one sampling index")
    draws = rng.integers(mixture.m, size=len(ensemble)).tolist()

    def query(pair: Tuple[LssIndex, int]) -> Set[int]:
        member, type_index = pair
        return member.query(mixture.types[type_index], post_filter=post_filter)

    pairs = list(zip(ensemble, draws))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(query, pairs))
    else:
        results = [query(pair) for pair in pairs]
    return set().union(*results)


class _GreedyState:
    """Running numerators and denominators of f(S, u_i) for every type."""

    def __init__(self, table: AttractionTable):
        self.table = table
        self.numerator = np.zeros(table.m)
        self.denominator = table.no_choice.astype(np.float64).copy()
        self.value = 0.0

    def values_with(self, rows: np.ndarray) -> np.ndarray:
        """g(S + v) for each candidate row."""
        attraction = self.table.attraction[rows]
        numerator = self.numerator[None, :] + self.table.revenues[rows, None] * attraction
        return np.mean(safe_ratio(numerator, self.denominator[None, :] + attraction), axis=1)

    def add(self, row: int, value: float) -> None:
        self.numerator = self.numerator + self.table.revenues[row] * self.table.attraction[row]
        self.denominator = self.denominator + self.table.attraction[row]
        self.value = value


def _candidate_table(
    candidates: Iterable[int], mixture: UserMixture, model: ChoiceModel, universe: ItemUniverse
) -> Tuple[List[int], AttractionTable]:
    ordered = sorted(int(c) for c in candidates)
    return ordered, model.table(universe, mixture.matrix, ordered)


def _check_diminishing(gains: List[float], model: ChoiceModel) -> None:
    if model.is_monotone_submodular and any(
        later > earlier + GAIN_TOLERANCE for earlier, later in zip(gains, gains[1:])
    ):
        logger.warning("greedy_gains_increased", gains=gains)


def greedy_with_gains(
    candidates: Iterable[int], k: int, mixture: UserMixture, model: ChoiceModel, universe: ItemUniverse
) -> Tuple[OfferSet, List[float]]:
    """Standard greedy: k argmax steps over the candidates, ties to the smallest item id.

    Steps stop early only when the candidates run out. Without monotonicity a
    step may lower the objective; its negative gain is recorded as is.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    ordered, table = _candidate_table(candidates, mixture, model, universe)
    if not ordered:
        return OfferSet(items=[], value=0.0, k=k), []

    state = _GreedyState(table)
    available = np.ones(len(ordered), dtype=bool)
    chosen: List[int] = []
    gains: List[float] = []
    all_rows = np.arange(len(ordered))
    for _ in range(min(k, len(ordered))):
        values = state.values_with(all_rows)
        step_gains = np.where(available, values - state.value, -np.inf)
        best = int(np.argmax(step_gains))
        gains.append(float(step_gains[best]))
        state.add(best, float(values[best]))
        available[best] = False
        chosen.append(best)

    _check_diminishing(gains, model)
    offer = OfferSet(
        items=[ordered[row] for row in chosen], value=table.objective(np.array(chosen)), k=k
    )
    return offer, gains


def greedy(
    candidates: Iterable[int], k: int, mixture: UserMixture, model: ChoiceModel, universe: ItemUniverse
) -> OfferSet:
    """Greedy maximization of g over the candidate set under |S| <= k."""
    return greedy_with_gains(candidates, k, mixture, model, universe)[0]


def lazy_greedy_with_gains(
    candidates: Iterable[int], k: int, mixture: UserMixture, model: ChoiceModel, universe: ItemUniverse
) -> Tuple[OfferSet, List[float]]:
    """Greedy with stale upper bounds kept in a priority queue.

    Stale gains bound fresh ones from above under submodularity, so a candidate
    whose refreshed gain still leads the queue is the standard greedy choice.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if not model.is_monotone_submodular:
        return greedy_with_gains(candidates, k, mixture, model, universe)
    ordered, table = _candidate_table(candidates, mixture, model, universe)
    if not ordered:
        return OfferSet(items=[], value=0.0, k=k), []

    state = _GreedyState(table)
    initial = state.values_with(np.arange(len(ordered)))
    heap = [(-float(gain), row) for row, gain in enumerate(initial)]
    heapq.heapify(heap)
    chosen: List[int] = []
    gains: List[float] = []
    while heap and len(chosen) < k:
        _, row = heapq.heappop(heap)
        value = float(state.values_with(np.array([row]))[0])
        entry = (-(value - state.value), row)
        if heap and entry > heap[0]:
            heapq.heappush(heap, entry)
            continue
        gains.append(value - state.value)
        state.add(row, value)
        chosen.append(row)

    _check_diminishing(gains, model)
    offer = OfferSet(
        items=[ordered[row] for row in chosen], value=table.objective(np.array(chosen)), k=k
    )
    return offer, gains


def lazy_greedy(
    candidates: Iterable[int], k: int, mixture: UserMixture, model: ChoiceModel, universe: ItemUniverse
) -> OfferSet:
    return lazy_greedy_with_gains(candidates, k, mixture, model, universe)[0]


def recommend(
    ensemble: Sequence[LssIndex],
    mixture: UserMixture,
    k: int,
    config: PruneConfig,
    model: ChoiceModel,
    universe: ItemUniverse,
    rng: Optional[np.random.Generator] = None,
    lazy: bool = True,
    post_filter: bool = False,
) -> Recommendation:
    """Prune with the sampling ensemble, then run greedy over the pruned set.

    Raises:
        EnsembleTooSmallError: fewer members than the requested draws
    """
    bound = required_samples(k, config.sampling_floor, config.epsilon1, config.epsilon2)
    s = config.s_override or bound
    if not ensemble:
        raise EmptyEnsembleError("recommend needs at least one sampling index")
    if len(ensemble) < s:
        raise EnsembleTooSmallError(len(ensemble), s)
    rng = rng if rng is not None else np.random.default_rng()

    started = time.perf_counter()
    candidates = prune(ensemble[:s], mixture, rng, post_filter=post_filter)
    pruned = time.perf_counter()
    solve = lazy_greedy_with_gains if lazy else greedy_with_gains
    offer, gains = solve(candidates, k, mixture, model, universe)
    finished = time.perf_counter()

    logger.debug(
        "recommended", candidates=len(candidates), samples=s, value=offer.value, items=len(offer)
    )
    return Recommendation(
        offer=offer,
        candidate_count=len(candidates),
        samples=s,
        required_samples=bound,
        prune_seconds=pruned - started,
        greedy_seconds=finished - pruned,
        gains=gains,
    )
