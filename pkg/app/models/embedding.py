"""Embedding-space primitives: unit vectors, item universes and user mixtures."""

from __future__ import annotations

from typing import BinaryIO, Dict, Iterable, Iterator, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.errors import (
    DimensionMismatchError,
    DuplicateItemError,
    InvalidVectorError,
    UnknownItemError,
    VectorFormatError,
)

UNIT_TOLERANCE = 1e-9
INGEST_TOLERANCE = 1e-6

VECTOR_MAGIC = b"OSV1"
_HEADER = np.dtype([("magic", "S4"), ("n", "<u4"), ("d", "<u4")])

ArrayLike = Union[Sequence[float], np.ndarray]


def _record_dtype(d: int) -> np.dtype:
    return np.dtype([("item_id", "<u8"), ("coords", "<f4", (d,))])


class UnitVector:
    """Immutable point on the unit sphere S^{d-1}."""

    __slots__ = ("_coords",)

    def __init__(self, coords: ArrayLike):
        array = np.array(coords, dtype=np.float64)
        if array.ndim != 1 or array.size < 2:
            raise InvalidVectorError(f"expected a vector of dimension >= 2, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise InvalidVectorError("vector has non-finite entries")
        norm = float(np.linalg.norm(array))
        if abs(norm - 1.0) > UNIT_TOLERANCE:
            raise InvalidVectorError(f"vector norm {norm!r} is not 1 within {UNIT_TOLERANCE}")
        array.setflags(write=False)
        self._coords = array

    @property
    def coords(self) -> np.ndarray:
        return self._coords

    @property
    def dim(self) -> int:
        return self._coords.size

    def dot(self, other: "UnitVector") -> float:
        _check_dims(self.dim, other.dim)
        return float(self._coords @ other._coords)

    def __array__(self, dtype=None, copy=None) -> np.ndarray:
        return self._coords if dtype is None else self._coords.astype(dtype)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, UnitVector):
            return NotImplemented
        return bool(np.array_equal(self._coords, other._coords))

    def __hash__(self) -> int:
        return hash(self._coords.tobytes())

    def __repr__(self) -> str:
        return f"UnitVector(dim={self.dim})"


def _check_dims(expected: int, actual: int) -> None:
    if expected != actual:
        raise DimensionMismatchError(expected, actual)


def unit_normalize(raw: ArrayLike) -> UnitVector:
    """Scale a non-zero finite vector onto the unit sphere.

    Raises:
        InvalidVectorError: zero norm or non-finite entries
    """
    array = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        raise InvalidVectorError("cannot normalize a vector with non-finite entries")
    norm = float(np.linalg.norm(array))
    if norm == 0.0:
        raise InvalidVectorError("cannot normalize a zero-norm vector")
    return UnitVector(array / norm)


def distance(u: UnitVector, v: UnitVector) -> float:
    """Euclidean distance between unit vectors, sqrt(2(1 - u.v)), clamped to [0, 2]."""
    _check_dims(u.dim, v.dim)
    return float(min(2.0, np.linalg.norm(u.coords - v.coords)))


def normalize_rows(matrix: np.ndarray, tolerance: float = INGEST_TOLERANCE) -> np.ndarray:
    """Re-normalize rows whose norm is within `tolerance` of 1, reject the rest."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.size and not np.all(np.isfinite(matrix)):
        raise InvalidVectorError("embedding matrix has non-finite entries")
    norms = np.linalg.norm(matrix, axis=1) if matrix.size else np.zeros(len(matrix))
    bad = np.flatnonzero(np.abs(norms - 1.0) > tolerance)
    if bad.size:
        raise InvalidVectorError(
            f"row {int(bad[0])} has norm {float(norms[bad[0]])!r}, not 1 within {tolerance}"
        )
    return matrix / norms[:, None] if matrix.size else matrix


class ItemUniverse:
    """Offerable items: unique ids with unit-norm embeddings of a common dimension."""

    def __init__(self, item_ids: Iterable[int], vectors: np.ndarray, dim: Optional[int] = None):
        ids = np.asarray(list(item_ids), dtype=np.uint64)
        matrix = np.asarray(vectors, dtype=np.float64)
        if matrix.size == 0:
            if dim is None or dim < 2:
                raise InvalidVectorError("an empty universe needs an explicit dimension >= 2")
            matrix = np.zeros((0, dim), dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != ids.size:
            raise InvalidVectorError(
                f"expected {ids.size} embedding rows, got array of shape {matrix.shape}"
            )
        if matrix.shape[1] < 2:
            raise InvalidVectorError("embedding dimension must be at least 2")
        if dim is not None:
            _check_dims(dim, matrix.shape[1])

        matrix = normalize_rows(matrix, INGEST_TOLERANCE) if ids.size else matrix
        ids.setflags(write=False)
        matrix.setflags(write=False)
        self._ids = ids
        self._vectors = matrix
        self._positions: Dict[int, int] = {int(item): row for row, item in enumerate(ids.tolist())}
        if len(self._positions) != ids.size:
            raise DuplicateItemError("item ids must be unique")

    @property
    def n(self) -> int:
        return int(self._ids.size)

    @property
    def d(self) -> int:
        return int(self._vectors.shape[1])

    @property
    def ids(self) -> np.ndarray:
        return self._ids

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    def __len__(self) -> int:
        return self.n

    def __contains__(self, item_id: object) -> bool:
        return item_id in self._positions

    def __iter__(self) -> Iterator[int]:
        return iter(self._positions)

    def position(self, item_id: int) -> int:
        try:
            return self._positions[int(item_id)]
        except KeyError:
            raise UnknownItemError(int(item_id)) from None

    def positions(self, item_ids: Iterable[int]) -> np.ndarray:
        return np.fromiter((self.position(i) for i in item_ids), dtype=np.int64)

    def vector(self, item_id: int) -> UnitVector:
        return UnitVector(self._vectors[self.position(item_id)])

    def subset(self, item_ids: Iterable[int]) -> "ItemUniverse":
        rows = self.positions(item_ids)
        return ItemUniverse(self._ids[rows].tolist(), self._vectors[rows], dim=self.d)

    def inner_products(self, u: UnitVector) -> np.ndarray:
        _check_dims(self.d, u.dim)
        return self._vectors @ u.coords

    def distances(self, u: UnitVector) -> np.ndarray:
        _check_dims(self.d, u.dim)
        return np.minimum(np.linalg.norm(self._vectors - u.coords, axis=1), 2.0)

    def __repr__(self) -> str:
        return f"ItemUniverse(n={self.n}, d={self.d})"


class UserMixture:
    """Random user type, uniform over m unit vectors."""

    def __init__(self, types: Sequence[UnitVector]):
        if len(types) < 1:
            raise InvalidVectorError("a user mixture needs at least one type")
        dim = types[0].dim
        for t in types:
            _check_dims(dim, t.dim)
        self._types = tuple(types)
        matrix = np.vstack([t.coords for t in types])
        matrix.setflags(write=False)
        self._matrix = matrix

    @classmethod
    def from_matrix(cls, rows: np.ndarray) -> "UserMixture":
        """Build a mixture from raw rows, normalizing each onto the sphere."""
        return cls([unit_normalize(row) for row in np.atleast_2d(rows)])

    @property
    def types(self) -> tuple[UnitVector, ...]:
        return self._types

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def m(self) -> int:
        return len(self._types)

    @property
    def d(self) -> int:
        return self._types[0].dim

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.m, 1.0 / self.m)

    def __len__(self) -> int:
        return self.m

    def __repr__(self) -> str:
        return f"UserMixture(m={self.m}, d={self.d})"


# ============= Vector file format =============

def load_items(stream: BinaryIO) -> ItemUniverse:
    """Parse an OSV1 vector file.

    Layout: magic "OSV1", u32 n, u32 d (little-endian), then n records of
    (u64 item_id, d x f32).

    Raises:
        VectorFormatError: malformed header, truncated payload or NaN entries
    """
    payload = stream.read()
    if len(payload) < _HEADER.itemsize:
        raise VectorFormatError("truncated header")
    header = np.frombuffer(payload, dtype=_HEADER, count=1)[0]
    if bytes(header["magic"]) != VECTOR_MAGIC:
        raise VectorFormatError(f"bad magic {bytes(header['magic'])!r}")
    n, d = int(header["n"]), int(header["d"])
    if d < 2:
        raise VectorFormatError(f"dimension {d} below 2")

    record = _record_dtype(d)
    body = payload[_HEADER.itemsize:]
    if len(body) != n * record.itemsize:
        raise VectorFormatError(
            f"payload holds {len(body)} bytes, expected {n * record.itemsize} for n={n}, d={d}"
        )
    records = np.frombuffer(body, dtype=record, count=n)
    coords = records["coords"].astype(np.float64)
    if coords.size and not np.all(np.isfinite(coords)):
        raise VectorFormatError("payload contains NaN or infinite entries")
    try:
        return ItemUniverse(records["item_id"].tolist(), coords, dim=d)
    except (InvalidVectorError, DuplicateItemError) as e:
        raise VectorFormatError(str(e)) from e


def save_items(universe: ItemUniverse, stream: BinaryIO) -> None:
    """Write a universe in the OSV1 format."""
    header = np.array([(VECTOR_MAGIC, universe.n, universe.d)], dtype=_HEADER)
    records = np.empty(universe.n, dtype=_record_dtype(universe.d))
    records["item_id"] = universe.ids
    records["coords"] = universe.vectors.astype(np.float32)
    stream.write(header.tobytes())
    stream.write(records.tobytes())


def load_items_csv(path: str) -> ItemUniverse:
    """Read the CSV alternative with header `item_id,x0,...,x{d-1}`."""
    frame = pd.read_csv(path)
    columns: List[str] = list(frame.columns)
    if not columns or columns[0] != "item_id":
        raise VectorFormatError("CSV header must start with item_id")
    expected = [f"x{i}" for i in range(len(columns) - 1)]
    if columns[1:] != expected or len(expected) < 2:
        raise VectorFormatError(f"CSV coordinate columns must be x0..x{{d-1}}, got {columns[1:]}")
    coords = frame[expected].to_numpy(dtype=np.float64)
    if coords.size and not np.all(np.isfinite(coords)):
        raise VectorFormatError("CSV contains NaN or infinite entries")
    try:
        return ItemUniverse(frame["item_id"].astype(np.uint64).tolist(), coords, dim=len(expected))
    except (InvalidVectorError, DuplicateItemError) as e:
        raise VectorFormatError(str(e)) from e


def save_mixture_csv(mixture: Union[UserMixture, UnitVector], path: str) -> None:
    """Write user types as CSV rows with header `x0,...,x{d-1}`."""
    matrix = mixture.matrix if isinstance(mixture, UserMixture) else mixture.coords[None, :]
    frame = pd.DataFrame(matrix, columns=[f"x{i}" for i in range(matrix.shape[1])])
    frame.to_csv(path, index=False, float_format="%.17g")


def load_mixture_csv(path: str) -> UserMixture:
    """Read user types written by `save_mixture_csv`; rows are re-normalized."""
    frame = pd.read_csv(path)
    expected = [f"x{i}" for i in range(len(frame.columns))]
    if list(frame.columns) != expected or len(expected) < 2 or frame.empty:
        raise VectorFormatError("type CSV needs columns x0..x{d-1} and one row per type")
    coords = frame.to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(coords)):
        raise VectorFormatError("type CSV contains NaN or infinite entries")
    try:
        return UserMixture.from_matrix(coords)
    except InvalidVectorError as e:
        raise VectorFormatError(str(e)) from e
