"""Tests for the hyperplane LSH family and multi-table structure."""

import math

import numpy as np
import pytest

from app.errors import DimensionMismatchError, DuplicateItemError, IndexFormatError, IndexVersionError
from app.models.embedding import ItemUniverse, UnitVector
from app.services import lsh
from app.services.lsh import (
    HyperplaneFamily,
    LshTableSet,
    build_lsh,
    collision_prob,
    derive_seed,
    hash_keys,
    query_lsh,
)


def pair_at_distance(rng: np.random.Generator, d: int, x: float):
    """Two unit vectors at Euclidean distance exactly x."""
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    z = rng.standard_normal(d)
    z -= (z @ u) * u
    z /= np.linalg.norm(z)
    inner = 1.0 - x * x / 2.0
    return u, inner * u + math.sqrt(max(0.0, 1.0 - inner * inner)) * z


class TestCollisionProbability:
    """Test cases for q(x)."""

    def test_known_values(self):
        assert collision_prob(0.0) == 1.0
        assert collision_prob(2.0) == pytest.approx(0.0, abs=1e-12)
        assert collision_prob(math.sqrt(2.0)) == pytest.approx(0.5)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            collision_prob(2.5)
        with pytest.raises(ValueError):
            collision_prob(-0.1)

    def test_vectorized(self):
        values = collision_prob(np.array([0.0, math.sqrt(2.0)]))
        assert values.shape == (2,)

    def test_empirical_collision_rate(self):
        """10^4 independent hash functions per distance bin match q(x)."""
        rng = np.random.default_rng(2024)
        d, functions = 16, 10_000
        for x in np.linspace(0.1, 1.9, 10):
            u, v = pair_at_distance(rng, d, float(x))
            planes = HyperplaneFamily(d, int(rng.integers(2**32))).draw(functions, 1)
            keys = hash_keys(planes, np.vstack([u, v]))
            rate = float(np.mean(np.all(keys[0] == keys[1], axis=-1)))
            q = collision_prob(float(x))
            se = math.sqrt(q * (1.0 - q) / functions)
            assert abs(rate - q) <= 3 * se


class TestHashing:
    """Test cases for key packing and seeding."""

    def test_same_seed_same_planes(self):
        a = HyperplaneFamily(5, 9).draw(3, 4)
        b = HyperplaneFamily(5, 9).draw(3, 4)
        assert np.array_equal(a, b)

    def test_zero_projection_counts_positive(self):
        planes = np.array([[[1.0, 0.0]]])
        keys = hash_keys(planes, np.array([[0.0, 1.0]]))
        assert keys[0, 0, 0] == 1

    def test_key_shape(self):
        planes = HyperplaneFamily(3, 1).draw(4, 64)
        keys = hash_keys(planes, np.eye(3))
        assert keys.shape == (3, 4, 8)
        assert keys.dtype == np.uint8

    def test_wide_keys_keep_every_bit(self):
        """A 200-bit signature packs into 25 bytes; flipping the last plane changes only bit 199."""
        planes = HyperplaneFamily(4, 2).draw(1, 200)
        vector = np.array([[0.5, 0.5, 0.5, 0.5]])
        planes[0, -1] = vector[0]
        flipped = planes.copy()
        flipped[0, -1] = -vector[0]
        first, second = hash_keys(planes, vector)[0, 0], hash_keys(flipped, vector)[0, 0]
        assert first.shape == (25,)
        assert np.array_equal(first[:24], second[:24])
        assert first[24] ^ second[24] == 0b10000000

    def test_blocked_projection_matches_single_pass(self, monkeypatch):
        planes = HyperplaneFamily(5, 3).draw(3, 70)
        rng = np.random.default_rng(4)
        vectors = rng.standard_normal((50, 5))
        whole = hash_keys(planes, vectors)
        monkeypatch.setattr(lsh, "PROJECTION_BLOCK", 300)
        assert np.array_equal(hash_keys(planes, vectors), whole)

    def test_derive_seed_streams(self):
        assert derive_seed(1, 2) == derive_seed(1, 2)
        assert derive_seed(1, 2) != derive_seed(1, 3)
        assert derive_seed(1, 2) != derive_seed(2, 2)


class TestLshTableSet:
    """Test cases for LshTableSet."""

    def setup_method(self):
        """Setup test fixtures."""
        rng = np.random.default_rng(5)
        raw = rng.standard_normal((60, 6))
        self.universe = ItemUniverse(range(100, 160), raw / np.linalg.norm(raw, axis=1, keepdims=True))

    def test_validation(self):
        with pytest.raises(ValueError):
            LshTableSet(6, rho=1.5, a=2, b=2, seed=0)
        with pytest.raises(ValueError):
            LshTableSet(6, rho=0.5, a=0, b=2, seed=0)
        with pytest.raises(ValueError):
            LshTableSet(6, rho=0.5, a=4097, b=2, seed=0)

    def test_item_finds_itself(self):
        """A retained item always collides with a query at its own embedding."""
        tables = build_lsh(self.universe, rho=1.0, a=8, b=3, seed=1)
        assert len(tables) == 60
        for item in [100, 130, 159]:
            assert item in query_lsh(tables, self.universe.vector(item))

    def test_rho_zero_is_empty(self):
        tables = build_lsh(self.universe, rho=0.0, a=4, b=2, seed=1)
        assert len(tables) == 0
        assert query_lsh(tables, self.universe.vector(100)) == set()

    def test_subsample_rate(self):
        rng = np.random.default_rng(0)
        raw = rng.standard_normal((4000, 4))
        universe = ItemUniverse(range(4000), raw / np.linalg.norm(raw, axis=1, keepdims=True))
        tables = build_lsh(universe, rho=0.25, a=4, b=1, seed=3)
        assert abs(len(tables) - 1000) <= 4 * math.sqrt(4000 * 0.25 * 0.75)

    def test_explicit_subset(self):
        tables = build_lsh(self.universe, rho=0.1, a=4, b=2, seed=1, item_ids=[101, 102])
        assert sorted(tables.sampled_items) == [101, 102]

    def test_slots(self):
        tables = build_lsh(self.universe, rho=1.0, a=4, b=3, seed=1)
        assert tables.slots == 60 * 3

    def test_insert_and_remove(self):
        tables = build_lsh(self.universe, rho=0.0, a=6, b=2, seed=4)
        v = self.universe.vector(120)
        tables.insert(120, v.coords)
        assert 120 in query_lsh(tables, v)
        with pytest.raises(DuplicateItemError):
            tables.insert(120, v.coords)
        assert tables.remove(120)
        assert 120 not in query_lsh(tables, v)
        assert not tables.remove(120)
        assert tables.slots == 0

    def test_dimension_mismatch(self):
        tables = build_lsh(self.universe, rho=1.0, a=4, b=1, seed=1)
        with pytest.raises(DimensionMismatchError):
            tables.query(UnitVector([1.0, 0.0]))

    def test_round_trip(self):
        """Serialized bytes are stable and queries survive reloading."""
        tables = build_lsh(self.universe, rho=0.5, a=5, b=3, seed=8)
        blob = tables.to_bytes()
        loaded = LshTableSet.from_bytes(blob)
        assert loaded.to_bytes() == blob
        assert np.array_equal(loaded.planes, tables.planes)
        for item in self.universe.ids.tolist()[:20]:
            u = self.universe.vector(item)
            assert loaded.query(u) == tables.query(u)

    def test_deterministic_build(self):
        first = build_lsh(self.universe, rho=0.5, a=5, b=3, seed=8).to_bytes()
        second = build_lsh(self.universe, rho=0.5, a=5, b=3, seed=8).to_bytes()
        assert first == second

    def test_corrupt_blobs(self):
        blob = build_lsh(self.universe, rho=0.5, a=5, b=3, seed=8).to_bytes()
        with pytest.raises(IndexFormatError):
            LshTableSet.from_bytes(blob[:-1])
        with pytest.raises(IndexFormatError):
            LshTableSet.from_bytes(b"NOPE" + blob[4:])
        with pytest.raises(IndexFormatError):
            LshTableSet.from_bytes(blob + b"\x00")
        versioned = blob[:4] + (1).to_bytes(2, "little") + blob[6:]
        with pytest.raises(IndexVersionError):
            LshTableSet.from_bytes(versioned)

    def test_wide_key_round_trip(self):
        """Tables with a > 64 store and reload 17-byte keys."""
        tables = build_lsh(self.universe, rho=1.0, a=130, b=2, seed=6)
        assert tables.width == 17
        assert all(len(key) == 17 for table in tables.tables for key in table)
        loaded = LshTableSet.from_bytes(tables.to_bytes())
        for item in [100, 131, 159]:
            u = self.universe.vector(item)
            assert item in loaded.query(u)
            assert loaded.query(u) == tables.query(u)

    def test_wide_key_insert_and_remove(self):
        tables = build_lsh(self.universe, rho=0.0, a=300, b=2, seed=4)
        v = self.universe.vector(140)
        tables.insert(140, v.coords)
        assert query_lsh(tables, v) == {140}
        assert tables.remove(140)
        assert tables.slots == 0


class TestRetrievalFrequency:
    """Monte-Carlo checks of the multi-table retrieval law."""

    def test_query_frequency_matches_formula(self):
        """A retained item at distance x is returned with probability 1 - (1 - q^a)^b over seeds."""
        rng = np.random.default_rng(17)
        x, a, b, reps = 0.5, 4, 3, 2000
        u, v = pair_at_distance(rng, 8, x)
        hits = 0
        for seed in range(reps):
            tables = LshTableSet(8, rho=1.0, a=a, b=b, seed=seed)
            tables.insert(1, v)
            hits += 1 in query_lsh(tables, UnitVector(u))
        expected = 1.0 - (1.0 - collision_prob(x) ** a) ** b
        se = math.sqrt(expected * (1.0 - expected) / reps)
        assert abs(hits / reps - expected) <= 3 * se

    def test_far_items_rarely_collide_with_wide_keys(self):
        """With a = 200 an item at distance 1 essentially never shares a key."""
        rng = np.random.default_rng(23)
        u, v = pair_at_distance(rng, 8, 1.0)
        hits = 0
        for seed in range(200):
            tables = LshTableSet(8, rho=1.0, a=200, b=4, seed=seed)
            tables.insert(1, v)
            hits += 1 in query_lsh(tables, UnitVector(u))
        assert hits == 0
