"""Tests for pruning, greedy maximization and end-to-end recommendation."""

import math

import numpy as np
import pytest

from app.errors import EmptyEnsembleError, EnsembleTooSmallError
from app.models.embedding import ItemUniverse, UnitVector, UserMixture
from app.schemas import PruneConfig, RevenueMnlParams, TruncatedMnlParams
from app.services.choice import RevenueMnl, TruncatedMnl, mixture_objective, singleton_values
from app.services.lss import LssIndex, plan_levels
from app.services.optimizer import (
    build_ensemble,
    greedy,
    greedy_with_gains,
    lazy_greedy,
    lazy_greedy_with_gains,
    member_seeds,
    prune,
    recommend,
    required_samples,
)
from app.services.oracle import exhaustive_opt


def random_instance(seed: int, n: int = 20, d: int = 4, m: int = 5):
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n, d))
    universe = ItemUniverse(range(1, n + 1), raw / np.linalg.norm(raw, axis=1, keepdims=True))
    mixture = UserMixture.from_matrix(rng.standard_normal((m, d)))
    return universe, mixture


class TestRequiredSamples:
    """Test cases for required_samples."""

    def test_boundary_clamps_to_one(self):
        assert required_samples(1, 1.0, 1.0, 1.0) == 1

    def test_direct_formula(self):
        assert required_samples(10, 0.5, 0.1, 0.05) == 1843

    def test_doubling_k_more_than_doubles(self):
        s10 = required_samples(10, 0.5, 0.1, 0.05)
        s20 = required_samples(20, 0.5, 0.1, 0.05)
        assert s20 == math.ceil(800 * math.log(200))
        assert s20 > 2 * s10

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            required_samples(0, 0.5, 0.1, 0.05)


class TestGreedy:
    """Test cases for greedy and lazy greedy."""

    def setup_method(self):
        """Setup test fixtures."""
        self.model = TruncatedMnl(TruncatedMnlParams(sigma=0.5, w=2.0))
        self.universe, self.mixture = random_instance(0)
        self.candidates = set(self.universe.ids.tolist())

    def test_k1_is_best_singleton(self):
        """Linear scan over singleton values, ties to the smallest id."""
        offer = greedy(self.candidates, 1, self.mixture, self.model, self.universe)
        values = singleton_values(self.model, self.universe, self.mixture)
        best = int(self.universe.ids[int(np.argmax(values))])
        assert offer.items == [best]
        assert offer.value == pytest.approx(float(values.max()), abs=1e-12)

    def test_k_exceeds_candidates(self):
        offer = greedy({1, 2, 3}, 10, self.mixture, self.model, self.universe)
        assert sorted(offer.items) == [1, 2, 3]

    def test_empty_candidates(self):
        offer = greedy(set(), 3, self.mixture, self.model, self.universe)
        assert offer.items == []
        assert offer.value == 0.0

    def test_value_recomputable(self):
        offer = greedy(self.candidates, 4, self.mixture, self.model, self.universe)
        recomputed = mixture_objective(offer.items, self.mixture, self.model, self.universe)
        assert len(offer) <= 4
        assert offer.value == pytest.approx(recomputed, abs=1e-12)

    def test_gains_non_increasing(self):
        _, gains = greedy_with_gains(self.candidates, 6, self.mixture, self.model, self.universe)
        assert all(later <= earlier + 1e-12 for earlier, later in zip(gains, gains[1:]))

    def test_ties_break_to_smallest_id(self):
        """Two copies of the same embedding: the smaller id wins."""
        vector = [0.6, 0.8]
        universe = ItemUniverse([9, 4, 7], [vector, vector, [-0.6, -0.8]])
        mixture = UserMixture.from_matrix([vector])
        offer = greedy({9, 4, 7}, 1, mixture, self.model, universe)
        assert offer.items == [4]

    def test_non_monotone_model_takes_all_k_steps(self):
        """Revenue MNL keeps stepping after the objective starts to fall."""
        universe = ItemUniverse([1, 2, 3], [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        mixture = UserMixture.from_matrix([[1.0, 0.0]])
        model = RevenueMnl(RevenueMnlParams(revenues={1: 10.0, 2: 1.0, 3: 1.0}, w=0.0))
        offer, gains = greedy_with_gains({1, 2, 3}, 2, mixture, model, universe)
        assert offer.items == [1, 3]
        assert gains[0] == pytest.approx(10.0)
        assert gains[1] < 0.0
        expected = (10.0 * math.e + math.exp(-1.0)) / (math.e + math.exp(-1.0))
        assert offer.value == pytest.approx(expected)
        assert lazy_greedy_with_gains({1, 2, 3}, 2, mixture, model, universe)[0].items == [1, 3]

    @pytest.mark.parametrize("seed", range(15))
    def test_lazy_matches_standard(self, seed):
        universe, mixture = random_instance(seed, n=30, m=4)
        candidates = set(universe.ids.tolist())
        standard = greedy(candidates, 5, mixture, self.model, universe)
        lazy = lazy_greedy(candidates, 5, mixture, self.model, universe)
        assert lazy.items == standard.items
        assert lazy.value == pytest.approx(standard.value, abs=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_ratio_against_exhaustive(self, seed):
        """Greedy over V reaches (1 - 1/e) of the exhaustive optimum."""
        universe, mixture = random_instance(100 + seed, n=12, m=3)
        offer = greedy(set(universe.ids.tolist()), 3, mixture, self.model, universe)
        _, optimum = exhaustive_opt(universe, 3, mixture, self.model)
        assert offer.value >= (1.0 - 1.0 / math.e) * optimum - 1e-12
        assert offer.value <= optimum + 1e-12


class TestPruneAndRecommend:
    """Test cases for ensembles, pruning and recommend."""

    def setup_method(self):
        """Setup test fixtures."""
        self.model = TruncatedMnl(TruncatedMnlParams(sigma=1.0, w=10.0))
        self.universe, self.mixture = random_instance(42, n=25, m=4)
        self.plan = plan_levels(self.model.decay(), self.universe.n, beta=0.5, c=2.0, delta=0.5)
        self.ensemble = build_ensemble(self.universe, self.plan, s=6, seed=3, max_workers=2)

    def test_member_seeds(self):
        seeds = member_seeds(3, 6)
        assert seeds == member_seeds(3, 6)
        assert len(set(seeds)) == 6

    def test_ensemble_deterministic(self):
        again = build_ensemble(self.universe, self.plan, s=6, seed=3, max_workers=3)
        assert [m.to_bytes() for m in again] == [m.to_bytes() for m in self.ensemble]

    def test_prune_empty_ensemble(self):
        with pytest.raises(EmptyEnsembleError):
            prune([], self.mixture, np.random.default_rng(0))

    def test_prune_single_draw(self):
        """s = 1 and m = 1 is exactly one sampling query."""
        mixture = UserMixture([self.mixture.types[0]])
        pruned = prune(self.ensemble[:1], mixture, np.random.default_rng(0))
        assert pruned == self.ensemble[0].query(mixture.types[0])

    def test_prune_keeps_item_at_the_user(self):
        """An item at distance 0 from every type survives s = 10 draws w.p. >= 1 - (1 - p(0)/2)^10."""
        anchor = self.universe.vector(1)
        mixture = UserMixture([anchor, UnitVector(anchor.coords)])
        trials = 60
        hits = 0
        for trial in range(trials):
            ensemble = build_ensemble(self.universe, self.plan, s=10, seed=100 + trial, max_workers=2)
            hits += 1 in prune(ensemble, mixture, np.random.default_rng(trial))
        bound = 1.0 - (1.0 - float(self.model.decay()(0.0)) / 2.0) ** 10
        se = math.sqrt(bound * (1.0 - bound) / trials)
        assert hits / trials >= bound - 3 * se

    def test_prune_within_universe(self):
        pruned = prune(self.ensemble, self.mixture, np.random.default_rng(1), workers=2)
        assert pruned <= set(self.universe.ids.tolist())

    def test_recommend_requires_enough_members(self):
        config = PruneConfig(s_override=10)
        with pytest.raises(EnsembleTooSmallError):
            recommend(self.ensemble, self.mixture, 3, config, self.model, self.universe)
        with pytest.raises(EmptyEnsembleError):
            recommend([], self.mixture, 3, config, self.model, self.universe)

    def test_recommend_diagnostics(self):
        config = PruneConfig(epsilon1=0.2, epsilon2=0.05, s_override=6)
        result = recommend(
            self.ensemble, self.mixture, 3, config, self.model, self.universe,
            rng=np.random.default_rng(5),
        )
        assert result.samples == 6
        assert result.required_samples == required_samples(3, 0.5, 0.2, 0.05)
        assert result.candidate_count >= len(result.offer)
        assert result.prune_seconds >= 0 and result.greedy_seconds >= 0
        _, optimum = exhaustive_opt(self.universe, 3, self.mixture, self.model)
        assert result.offer.value <= optimum + 1e-12

    def test_far_mixture_has_zero_value(self):
        """Types with non-positive inner product to every item convert nobody."""
        universe = ItemUniverse([1, 2, 3], [[1.0, 0.0, 0.0], [0.8, 0.6, 0.0], [0.8, 0.0, 0.6]])
        mixture = UserMixture.from_matrix([[-1.0, 0.0, 0.0], [-0.6, -0.8, 0.0]])
        plan = plan_levels(self.model.decay(), universe.n, beta=0.5, c=2.0, delta=0.5)
        ensemble = build_ensemble(universe, plan, s=2, seed=0, max_workers=1)
        result = recommend(ensemble, mixture, 2, PruneConfig(s_override=2), self.model, universe)
        assert result.offer.value == 0.0

    def test_saturated_pruning_equals_greedy(self):
        """When every member returns all of V, recommend is greedy over V."""
        members = []
        for seed in range(3):
            member = LssIndex(self.plan, self.universe.d, seed)
            member.baseline = dict.fromkeys(self.universe.ids.tolist())
            members.append(member)
        result = recommend(
            members, self.mixture, 3, PruneConfig(s_override=3), self.model, self.universe, lazy=False
        )
        full = greedy(set(self.universe.ids.tolist()), 3, self.mixture, self.model, self.universe)
        assert result.offer.items == full.items
        assert result.offer.value == full.value
        assert result.candidate_count == self.universe.n
