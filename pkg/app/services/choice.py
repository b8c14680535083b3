"""Choice-model evaluation: MNL-family objectives, mixture objective and decay functions.

Every model here has the multinomial-logit shape

    f(S, u) = sum_{j in S} r_j A_j(u) / (w + sum_{j in S} A_j(u))

with an attraction A_j(u) derived from the inner product v_j . u. Attractions
are handled in the log domain and shifted per user type so that small Gumbel
scales (sigma = 0.01 gives exp(100)) never overflow.
"""

from __future__ import annotations

import itertools
import math
from abc import ABC, abstractmethod
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import optimize, special

from app.errors import ItemAlreadySelectedError, UnknownItemError
from app.log import get_logger
from app.models.embedding import ItemUniverse, UnitVector, UserMixture
from app.schemas import RevenueMnlParams, SubmodularCheck, TruncatedMnlParams

logger = get_logger("choice")

EXACT_CHECK_LIMIT = 30


# ============= Decay functions =============

class DecayFunction:
    """Non-increasing map from distance to [0, 1], zero from `cutoff` on.

    Upper-bounds the singleton reward: p(d(v, u)) >= f({v}, u).
    """

    def __init__(self, evaluator: Callable[[np.ndarray], np.ndarray], cutoff: float, name: str = "custom"):
        if not 0.0 < cutoff <= 2.0 + 1e-12:
            raise ValueError(f"cutoff must lie in (0, 2], got {cutoff}")
        self._evaluator = evaluator
        self.cutoff = float(cutoff)
        self.name = name

    def __call__(self, x):
        values = np.asarray(x, dtype=np.float64)
        out = np.clip(np.asarray(self._evaluator(values), dtype=np.float64), 0.0, 1.0)
        out = np.where(values >= self.cutoff, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def is_non_increasing(self, points: int = 1000) -> bool:
        """Check monotonicity on an even grid over [0, 2]."""
        grid = np.linspace(0.0, 2.0, points)
        return bool(np.all(np.diff(self(grid)) <= 1e-15))

    def radius(self, threshold: float, xtol: float = 1e-9) -> Optional[float]:
        """Largest distance still reaching `threshold`: sup {x : p(x) >= threshold}.

        Returns None when the set is empty.
        """
        if self(0.0) < threshold:
            return None
        if self(np.nextafter(self.cutoff, 0.0)) >= threshold:
            return self.cutoff
        # sign function keeps bisection away from flat stretches where p == threshold
        step = lambda x: 1.0 if self(x) >= threshold else -1.0  # noqa: E731
        return float(optimize.bisect(step, 0.0, self.cutoff, xtol=xtol))

    def inflate(self, factor: float) -> "DecayFunction":
        """p'(x) = min(factor * p(x), 1)."""
        return DecayFunction(
            lambda x: np.minimum(factor * self(x), 1.0), self.cutoff, f"{self.name}*{factor:g}"
        )

    def __repr__(self) -> str:
        return f"DecayFunction({self.name}, cutoff={self.cutoff:.6g})"


def p_from_tmnl(params: TruncatedMnlParams) -> DecayFunction:
    """Singleton conversion of the truncated MNL as a function of distance.

    p(x) = exp((1 - x^2/2)/sigma) / (w + exp((1 - x^2/2)/sigma)) for x < theta.
    """
    sigma, w = params.sigma, params.w

    def evaluate(x: np.ndarray) -> np.ndarray:
        utility = (1.0 - np.square(x) / 2.0) / sigma
        return _conversion_from_log(utility, w)

    return DecayFunction(evaluate, params.theta, f"tmnl(sigma={sigma:g}, w={w:g})")


def p_from_revenue_mnl(params: RevenueMnlParams) -> DecayFunction:
    """Singleton revenue bound, all revenues raised to r_max and capped at 1."""
    r_max = max(params.revenues.values(), default=0.0)

    def evaluate(x: np.ndarray) -> np.ndarray:
        return np.minimum(r_max * _conversion_from_log(1.0 - np.square(x) / 2.0, params.w), 1.0)

    return DecayFunction(evaluate, 2.0, f"revenue-mnl(r_max={r_max:g})")


def indicator_decay(gamma: float) -> DecayFunction:
    """p(x) = 1(x <= gamma): the plain near-neighbor case."""
    cutoff = min(np.nextafter(gamma, np.inf), 2.0)
    return DecayFunction(lambda x: (x <= gamma).astype(np.float64), cutoff, f"indicator({gamma:g})")


def _conversion_from_log(log_attraction, w: float):
    """e^L / (w + e^L) computed without overflow."""
    if w == 0:
        return np.ones_like(np.asarray(log_attraction, dtype=np.float64))
    return special.expit(np.asarray(log_attraction) - math.log(w))


def sublinear_budget(p: DecayFunction, distances: np.ndarray, c: float = 1.0) -> float:
    """Total singleton reward mass sum_v p(d(v, u) / c) around one user type."""
    return float(np.sum(p(np.asarray(distances) / c)))


def measured_beta(p: DecayFunction, distances: np.ndarray, c: float = 1.0) -> float:
    """Smallest beta with sum_v p(d(v, u) / c) <= n^beta."""
    n = len(distances)
    budget = sublinear_budget(p, distances, c)
    if n < 2 or budget <= 1.0:
        return 0.0
    return math.log(budget) / math.log(n)


def calibrate_no_choice_weight(sigma: float, reference_inner: float, target: float) -> float:
    """No-choice weight making an item at inner product `reference_inner` convert at `target`."""
    return math.exp(reference_inner / sigma) * (1.0 - target) / target


# ============= Choice models =============

class AttractionTable:
    """Log-attractions of a fixed item set against the types of a mixture.

    Attractions are stored shifted by the per-type maximum so that every entry
    lies in [0, 1]; the no-choice weight is shifted alongside.
    """

    def __init__(self, item_ids: np.ndarray, log_attraction: np.ndarray, revenues: np.ndarray, w: float):
        self.item_ids = np.asarray(item_ids, dtype=np.uint64)
        log_attraction = np.atleast_2d(np.asarray(log_attraction, dtype=np.float64))
        finite = np.where(np.isfinite(log_attraction), log_attraction, -np.inf)
        shift = finite.max(axis=0) if finite.shape[0] else np.zeros(finite.shape[1])
        shift = np.where(np.isfinite(shift), shift, 0.0)
        self.attraction = np.exp(finite - shift)
        with np.errstate(over="ignore"):
            self.no_choice = w * np.exp(-shift)
        self.revenues = np.asarray(revenues, dtype=np.float64)
        self.m = self.attraction.shape[1]
        self._rows = {int(item): row for row, item in enumerate(self.item_ids.tolist())}

    def rows(self, item_ids: Iterable[int]) -> np.ndarray:
        try:
            return np.fromiter((self._rows[int(i)] for i in item_ids), dtype=np.int64)
        except KeyError as e:
            raise UnknownItemError(int(e.args[0])) from None

    def type_values(self, rows: np.ndarray) -> np.ndarray:
        """f(S, u_i) for every type i."""
        rows = np.asarray(rows, dtype=np.int64)
        numerator = self.revenues[rows] @ self.attraction[rows]
        denominator = self.no_choice + self.attraction[rows].sum(axis=0)
        return safe_ratio(numerator, denominator)

    def objective(self, rows: np.ndarray) -> float:
        return float(np.mean(self.type_values(rows)))

    def singleton_values(self) -> np.ndarray:
        """g({v}) for every item."""
        weighted = self.revenues[:, None] * self.attraction
        return np.mean(safe_ratio(weighted, self.no_choice[None, :] + self.attraction), axis=1)

    def combination_values(self, combos: np.ndarray) -> np.ndarray:
        """g(S) for each row of a (C x k) array of row indices."""
        attraction = self.attraction[combos]  # C x k x m
        numerator = np.einsum("ck,ckm->cm", self.revenues[combos], attraction)
        denominator = self.no_choice[None, :] + attraction.sum(axis=1)
        return np.mean(safe_ratio(numerator, denominator), axis=1)


def safe_ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    """Elementwise numerator / denominator, 0 where the denominator is not positive."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(denominator > 0, numerator / np.where(denominator > 0, denominator, 1.0), 0.0)


class ChoiceModel(ABC):
    """MNL-family choice model over unit-sphere embeddings.

    Arbitrary random-utility noise distributions are an extension point:
    subclasses only need to supply log-attractions and revenues.
    """

    no_choice_weight: float

    @abstractmethod
    def log_attraction(self, inner: np.ndarray) -> np.ndarray:
        """Log-attraction for inner products v . u; -inf excludes an item."""

    def revenues(self, item_ids: np.ndarray) -> np.ndarray:
        return np.ones(len(item_ids), dtype=np.float64)

    @property
    def is_monotone_submodular(self) -> bool:
        return True

    def table(
        self,
        universe: ItemUniverse,
        types: np.ndarray,
        item_ids: Optional[Iterable[int]] = None,
    ) -> AttractionTable:
        """Attraction table for `item_ids` (default: whole universe) against type rows."""
        if item_ids is None:
            ids, vectors = universe.ids, universe.vectors
        else:
            rows = universe.positions(item_ids)
            ids, vectors = universe.ids[rows], universe.vectors[rows]
        inner = vectors @ np.atleast_2d(types).T
        return AttractionTable(ids, self.log_attraction(inner), self.revenues(ids), self.no_choice_weight)

    def conversion(self, S: Iterable[int], u: UnitVector, universe: ItemUniverse) -> float:
        items = list(S)
        if not items:
            return 0.0
        table = self.table(universe, u.coords, items)
        return float(table.type_values(np.arange(len(items)))[0])


class TruncatedMnl(ChoiceModel):
    """Conversion model where only items with v . u > 0 attract, weight exp(v . u / sigma)."""

    def __init__(self, params: TruncatedMnlParams):
        self.params = params
        self.no_choice_weight = params.w

    def log_attraction(self, inner: np.ndarray) -> np.ndarray:
        return np.where(inner > 0, inner / self.params.sigma, -np.inf)

    def decay(self) -> DecayFunction:
        return p_from_tmnl(self.params)

    def __repr__(self) -> str:
        return f"TruncatedMnl(sigma={self.params.sigma:g}, w={self.params.w:g})"


class RevenueMnl(ChoiceModel):
    """Revenue-weighted MNL with attraction exp(v . u).

    Monotone submodular only when `check_submodular_condition` passes.
    """

    def __init__(self, params: RevenueMnlParams):
        self.params = params
        self.no_choice_weight = params.w

    def log_attraction(self, inner: np.ndarray) -> np.ndarray:
        return np.asarray(inner, dtype=np.float64)

    def revenues(self, item_ids: np.ndarray) -> np.ndarray:
        out = np.empty(len(item_ids), dtype=np.float64)
        for row, item_id in enumerate(np.asarray(item_ids).tolist()):
            try:
                out[row] = self.params.revenues[int(item_id)]
            except KeyError:
                raise UnknownItemError(int(item_id), where="revenues") from None
        return out

    def decay(self) -> DecayFunction:
        return p_from_revenue_mnl(self.params)

    @property
    def is_monotone_submodular(self) -> bool:
        return False

    def __repr__(self) -> str:
        return f"RevenueMnl(w={self.params.w:g}, items={len(self.params.revenues)})"


# ============= Objective operations =============

def conversion_tmnl(
    S: Iterable[int], u: UnitVector, params: TruncatedMnlParams, universe: ItemUniverse
) -> float:
    """Truncated-MNL conversion probability of offer set S for user type u."""
    return TruncatedMnl(params).conversion(S, u, universe)


def revenue_mnl(
    S: Iterable[int], u: UnitVector, params: RevenueMnlParams, universe: ItemUniverse
) -> float:
    """Expected revenue of offer set S for user type u under MNL."""
    return RevenueMnl(params).conversion(S, u, universe)


def mixture_objective(
    S: Iterable[int], mixture: UserMixture, model: ChoiceModel, universe: ItemUniverse
) -> float:
    """g(S) = (1/m) sum_i f(S, u_i)."""
    items = list(S)
    if not items:
        return 0.0
    return model.table(universe, mixture.matrix, items).objective(np.arange(len(items)))


def marginal_gain(
    S: Iterable[int], v: int, mixture: UserMixture, model: ChoiceModel, universe: ItemUniverse
) -> float:
    """g(S + v) - g(S).

    Raises:
        ItemAlreadySelectedError: v already in S
    """
    items = list(S)
    if v in items:
        raise ItemAlreadySelectedError(f"item {v} is already in the offer set")
    return mixture_objective(items + [v], mixture, model, universe) - mixture_objective(
        items, mixture, model, universe
    )


def singleton_values(model: ChoiceModel, universe: ItemUniverse, mixture: UserMixture) -> np.ndarray:
    """g({v}) for every item of the universe, in universe order."""
    return model.table(universe, mixture.matrix).singleton_values()


def check_submodular_condition(
    universe: ItemUniverse,
    params: RevenueMnlParams,
    k: int,
    users: Sequence[UnitVector],
) -> SubmodularCheck:
    """Test r_min / r_max >= max_{|S| <= k} conversion(S, u) for every tested u.

    Universes of at most 30 items are enumerated exhaustively. Larger ones use
    the k most attractive items, which is exact as well: MNL conversion only
    grows with the total attraction of the set.
    """
    model = RevenueMnl(params)
    revenues = model.revenues(universe.ids)
    if revenues.size == 0 or revenues.max() == 0:
        return SubmodularCheck(holds=True, revenue_ratio=1.0, max_conversion=0.0, exhaustive=True)
    ratio = float(revenues.min() / revenues.max())
    exhaustive = universe.n <= EXACT_CHECK_LIMIT
    conversion_model = RevenueMnl(
        RevenueMnlParams(revenues={int(i): 1.0 for i in universe.ids.tolist()}, w=params.w)
    )

    best_value, best_set, best_type = 0.0, None, None
    for type_index, u in enumerate(users):
        table = conversion_model.table(universe, u.coords)
        if exhaustive:
            candidates = (
                np.array(combo, dtype=np.int64)
                for size in range(1, min(k, universe.n) + 1)
                for combo in itertools.combinations(range(universe.n), size)
            )
        else:
            top = np.argsort(-table.attraction[:, 0], kind="stable")[: min(k, universe.n)]
            candidates = iter([top])
        for rows in candidates:
            value = float(table.type_values(rows)[0])
            if value > best_value:
                best_value, best_set, best_type = value, rows, type_index

    holds = ratio >= best_value
    witness = None if holds or best_set is None else sorted(int(universe.ids[r]) for r in best_set)
    if not holds:
        logger.warning("revenue_mnl_not_submodular", ratio=ratio, max_conversion=best_value)
    return SubmodularCheck(
        holds=holds,
        revenue_ratio=ratio,
        max_conversion=best_value,
        exhaustive=exhaustive,
        witness=witness,
        witness_type=None if holds else best_type,
    )
