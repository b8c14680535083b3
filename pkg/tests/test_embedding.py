"""Tests for unit vectors, item universes, mixtures and vector files."""

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.errors import (
    DimensionMismatchError,
    DuplicateItemError,
    InvalidVectorError,
    UnknownItemError,
    VectorFormatError,
)
from app.models.embedding import (
    ItemUniverse,
    UnitVector,
    UserMixture,
    distance,
    load_items,
    load_items_csv,
    load_mixture_csv,
    save_items,
    save_mixture_csv,
    unit_normalize,
)

coordinate = st.floats(min_value=-10, max_value=10, allow_nan=False, allow_infinity=False)
raw_vector = st.lists(coordinate, min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-3
)


class TestUnitVector:
    """Test cases for UnitVector construction and distance."""

    def test_rejects_off_sphere(self):
        """Norms away from 1 are rejected."""
        with pytest.raises(InvalidVectorError):
            UnitVector([1.0, 1.0])

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidVectorError):
            UnitVector([math.nan, 1.0])

    def test_rejects_scalar_dimension(self):
        with pytest.raises(InvalidVectorError):
            UnitVector([1.0])

    def test_normalize_zero_vector(self):
        """Zero vectors cannot be normalized."""
        with pytest.raises(InvalidVectorError):
            unit_normalize([0.0, 0.0, 0.0])

    def test_coords_read_only(self):
        u = unit_normalize([3.0, 4.0])
        with pytest.raises(ValueError):
            u.coords[0] = 1.0

    def test_distance_examples(self):
        """Identical, antipodal and orthogonal pairs."""
        e1 = UnitVector([1.0, 0.0])
        e2 = UnitVector([0.0, 1.0])
        assert distance(e1, e1) == 0.0
        assert distance(e1, UnitVector([-1.0, 0.0])) == pytest.approx(2.0)
        assert distance(e1, e2) == pytest.approx(math.sqrt(2.0))

    def test_distance_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            distance(UnitVector([1.0, 0.0]), UnitVector([1.0, 0.0, 0.0]))

    @given(raw_vector, raw_vector, raw_vector)
    @settings(max_examples=100, deadline=None)
    def test_metric_axioms(self, a, b, c):
        """Symmetry, range and triangle inequality."""
        u, v, w = unit_normalize(a), unit_normalize(b), unit_normalize(c)
        assert distance(u, v) == pytest.approx(distance(v, u), abs=1e-12)
        assert 0.0 <= distance(u, v) <= 2.0
        assert distance(u, w) <= distance(u, v) + distance(v, w) + 1e-12

    @given(raw_vector, raw_vector)
    @settings(max_examples=50, deadline=None)
    def test_distance_matches_inner_product(self, a, b):
        """d = sqrt(2 (1 - u . v)) on the sphere."""
        u, v = unit_normalize(a), unit_normalize(b)
        expected = math.sqrt(max(0.0, 2.0 * (1.0 - u.dot(v))))
        assert distance(u, v) == pytest.approx(expected, abs=1e-7)


class TestItemUniverse:
    """Test cases for ItemUniverse."""

    def setup_method(self):
        """Setup test fixtures."""
        self.vectors = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        self.universe = ItemUniverse([10, 20, 30], self.vectors)

    def test_lookup(self):
        assert self.universe.n == 3
        assert self.universe.d == 3
        assert self.universe.position(20) == 1
        assert 30 in self.universe
        assert 40 not in self.universe
        assert self.universe.vector(30) == UnitVector([0.0, 0.0, 1.0])

    def test_unknown_item(self):
        """Unknown ids raise a KeyError subclass naming the item."""
        with pytest.raises(UnknownItemError) as excinfo:
            self.universe.position(99)
        assert isinstance(excinfo.value, KeyError)
        assert "99" in str(excinfo.value)

    def test_duplicate_ids(self):
        with pytest.raises(DuplicateItemError):
            ItemUniverse([1, 1], self.vectors[:2])

    def test_near_unit_rows_renormalized(self):
        """Rows within the ingest tolerance are re-normalized, others rejected."""
        universe = ItemUniverse([1], [[1.0 + 5e-7, 0.0]])
        assert np.linalg.norm(universe.vectors[0]) == pytest.approx(1.0, abs=1e-12)
        with pytest.raises(InvalidVectorError):
            ItemUniverse([1], [[1.1, 0.0]])

    def test_empty_universe_needs_dimension(self):
        assert ItemUniverse([], np.zeros((0, 4)), dim=4).n == 0
        with pytest.raises(InvalidVectorError):
            ItemUniverse([], np.zeros((0, 4)))

    def test_subset_and_inner_products(self):
        subset = self.universe.subset([30, 10])
        assert subset.ids.tolist() == [30, 10]
        u = UnitVector([1.0, 0.0, 0.0])
        assert self.universe.inner_products(u).tolist() == [1.0, 0.0, 0.0]
        assert self.universe.distances(u)[1] == pytest.approx(math.sqrt(2.0))


class TestUserMixture:
    """Test cases for UserMixture."""

    def test_from_matrix_normalizes(self):
        mixture = UserMixture.from_matrix([[2.0, 0.0], [0.0, 3.0]])
        assert mixture.m == 2
        assert np.allclose(np.linalg.norm(mixture.matrix, axis=1), 1.0)
        assert mixture.weights.tolist() == [0.5, 0.5]

    def test_empty_mixture(self):
        with pytest.raises(InvalidVectorError):
            UserMixture([])

    def test_mixed_dimensions(self):
        with pytest.raises(DimensionMismatchError):
            UserMixture([UnitVector([1.0, 0.0]), UnitVector([1.0, 0.0, 0.0])])

    def test_csv_round_trip(self, tmp_path):
        mixture = UserMixture.from_matrix([[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]])
        path = tmp_path / "types.csv"
        save_mixture_csv(mixture, str(path))
        loaded = load_mixture_csv(str(path))
        assert np.allclose(loaded.matrix, mixture.matrix, atol=1e-15)


class TestVectorFiles:
    """Test cases for the OSV1 binary format and the CSV alternative."""

    def setup_method(self):
        """Setup test fixtures."""
        rng = np.random.default_rng(7)
        raw = rng.standard_normal((5, 4))
        self.universe = ItemUniverse([3, 1, 4, 15, 9], raw / np.linalg.norm(raw, axis=1, keepdims=True))

    def _encode(self) -> bytes:
        buffer = io.BytesIO()
        save_items(self.universe, buffer)
        return buffer.getvalue()

    def test_round_trip(self):
        """Ids survive exactly, coordinates at float32 precision."""
        loaded = load_items(io.BytesIO(self._encode()))
        assert loaded.ids.tolist() == [3, 1, 4, 15, 9]
        assert np.allclose(loaded.vectors, self.universe.vectors, atol=1e-6)

    def test_header_layout(self):
        payload = self._encode()
        assert payload[:4] == b"OSV1"
        assert int.from_bytes(payload[4:8], "little") == 5
        assert int.from_bytes(payload[8:12], "little") == 4
        assert len(payload) == 12 + 5 * (8 + 4 * 4)

    def test_bad_magic(self):
        payload = b"XXXX" + self._encode()[4:]
        with pytest.raises(VectorFormatError):
            load_items(io.BytesIO(payload))

    def test_truncated_payload(self):
        with pytest.raises(VectorFormatError):
            load_items(io.BytesIO(self._encode()[:-3]))
        with pytest.raises(VectorFormatError):
            load_items(io.BytesIO(b"OSV"))

    def test_nan_payload(self):
        payload = bytearray(self._encode())
        payload[12 + 8 : 12 + 12] = np.array([np.nan], dtype="<f4").tobytes()
        with pytest.raises(VectorFormatError):
            load_items(io.BytesIO(bytes(payload)))

    def test_csv(self, tmp_path):
        path = tmp_path / "items.csv"
        path.write_text("item_id,x0,x1\n1,1.0,0.0\n2,0.0,1.0\n")
        universe = load_items_csv(str(path))
        assert universe.ids.tolist() == [1, 2]
        assert universe.d == 2

    def test_csv_bad_header(self, tmp_path):
        path = tmp_path / "items.csv"
        path.write_text("id,a,b\n1,1.0,0.0\n")
        with pytest.raises(VectorFormatError):
            load_items_csv(str(path))
