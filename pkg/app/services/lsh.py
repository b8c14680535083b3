"""Hyperplane LSH family and the subsampled multi-table structure LSH_{rho,a,b}."""

from __future__ import annotations

from typing import Dict, Iterable, List, Optional, Set

import numpy as np

from app.config import get_settings
from app.errors import (
    DimensionMismatchError,
    DuplicateItemError,
    IndexFormatError,
    IndexVersionError,
)
from app.models.embedding import ItemUniverse, UnitVector

LSH_MAGIC = b"LSH1"
LSH_VERSION = 2
# projections computed per block while hashing, bounding peak memory
PROJECTION_BLOCK = 1 << 22

_LSH_HEADER = np.dtype(
    [
        ("magic", "S4"),
        ("version", "<u2"),
        ("dim", "<u4"),
        ("seed", "<u8"),
        ("rho", "<f8"),
        ("a", "<u4"),
        ("b", "<u4"),
        ("count", "<u8"),
    ]
)


def derive_seed(seed: int, *path: int) -> int:
    """Independent 64-bit seed for a named sub-stream of `seed`."""
    state = np.random.SeedSequence([int(seed), *map(int, path)]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def collision_prob(x):
    """Hyperplane collision probability q(x) = 1 - arccos(1 - x^2/2) / pi.

    Raises:
        ValueError: distance outside [0, 2]
    """
    values = np.asarray(x, dtype=np.float64)
    if np.any((values < 0) | (values > 2)) or not np.all(np.isfinite(values)):
        raise ValueError("distance must lie in [0, 2]")
    q = 1.0 - np.arccos(np.clip(1.0 - np.square(values) / 2.0, -1.0, 1.0)) / np.pi
    return float(q) if q.ndim == 0 else q


def key_width(a: int) -> int:
    """Bytes in the packed key of an a-bit signature."""
    return (a + 7) // 8


class HyperplaneFamily:
    """Sign-of-projection hash functions drawn from standard-normal directions."""

    def __init__(self, dim: int, seed: int):
        self.dim = dim
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def draw(self, tables: int, functions: int) -> np.ndarray:
        """Directions for `tables` tables of `functions` hash functions each."""
        return self._rng.standard_normal((tables, functions, self.dim))


def hash_keys(planes: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Pack the sign bits of every table's projections, little-endian within each byte.

    Zero projections count as positive. Signatures of any width are supported;
    bit i of a table's signature is bit i % 8 of byte i // 8.

    Returns:
        (N x b x ceil(a/8)) uint8 array
    """
    b, a, d = planes.shape
    vectors = np.atleast_2d(vectors)
    directions = planes.reshape(b * a, d).T
    keys = np.empty((vectors.shape[0], b, key_width(a)), dtype=np.uint8)
    step = max(1, PROJECTION_BLOCK // (b * a))
    for start in range(0, vectors.shape[0], step):
        block = vectors[start : start + step] @ directions
        signs = (block >= 0).reshape(-1, b, a)
        keys[start : start + block.shape[0]] = np.packbits(signs, axis=2, bitorder="little")
    return keys


class LshTableSet:
    """b hash tables over a rho-subsample of the items, keyed by packed a-bit signatures.

    Mutation (insert/remove) requires exclusive access; queries are read-only.
    """

    def __init__(self, dim: int, rho: float, a: int, b: int, seed: int):
        max_bits = get_settings().max_hash_bits
        if not 0.0 <= rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {rho}")
        if a < 1 or b < 1:
            raise ValueError(f"a and b must be at least 1, got a={a}, b={b}")
        if a > max_bits:
            raise ValueError(f"a={a} exceeds max_hash_bits={max_bits}")
        self.dim = dim
        self.rho = float(rho)
        self.a = int(a)
        self.b = int(b)
        self.seed = int(seed)
        self.width = key_width(self.a)
        self.planes = HyperplaneFamily(dim, seed).draw(b, a)
        self.tables: List[Dict[bytes, List[int]]] = [dict() for _ in range(b)]
        self._vectors: Dict[int, np.ndarray] = {}

    # ----- membership -----

    @property
    def sampled_items(self) -> List[int]:
        return list(self._vectors)

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, item_id: object) -> bool:
        return item_id in self._vectors

    def vector(self, item_id: int) -> np.ndarray:
        return self._vectors[item_id]

    @property
    def slots(self) -> int:
        return sum(len(bucket) for table in self.tables for bucket in table.values())

    def keys(self, vectors: np.ndarray) -> np.ndarray:
        return hash_keys(self.planes, vectors)

    def _row_keys(self, vector: np.ndarray) -> List[bytes]:
        return [key.tobytes() for key in self.keys(vector)[0]]

    def _store(self, item_ids: List[int], vectors: np.ndarray) -> None:
        if not item_ids:
            return
        keys = self.keys(vectors)
        for item_id, vector in zip(item_ids, vectors):
            self._vectors[item_id] = np.array(vector, dtype=np.float64)
        width = self.width
        for j, table in enumerate(self.tables):
            column = keys[:, j, :].tobytes()
            for i, item_id in enumerate(item_ids):
                table.setdefault(column[i * width : (i + 1) * width], []).append(item_id)

    def insert(self, item_id: int, vector: np.ndarray) -> None:
        """Hash one retained item into every table."""
        item_id = int(item_id)
        if item_id in self._vectors:
            raise DuplicateItemError(f"item {item_id} already stored")
        self._store([item_id], np.atleast_2d(np.asarray(vector, dtype=np.float64)))

    def remove(self, item_id: int) -> bool:
        """Delete an item from every table; returns False when absent."""
        item_id = int(item_id)
        vector = self._vectors.pop(item_id, None)
        if vector is None:
            return False
        for table, key in zip(self.tables, self._row_keys(vector)):
            bucket = table[key]
            bucket.remove(item_id)
            if not bucket:
                del table[key]
        return True

    def query(self, u: UnitVector) -> Set[int]:
        """Every retained item sharing a full key with u in at least one table."""
        if u.dim != self.dim:
            raise DimensionMismatchError(self.dim, u.dim)
        if not self._vectors:
            return set()
        found: Set[int] = set()
        for table, key in zip(self.tables, self._row_keys(u.coords)):
            found.update(table.get(key, ()))
        return found

    # ----- serialization -----

    def to_bytes(self) -> bytes:
        """LSH1 blob: header, retained ids and embeddings, then per-table buckets.

        Each table stores its bucket count, the packed keys (ceil(a/8) bytes
        each), the bucket sizes and the concatenated members.
        """
        ids = np.asarray(self.sampled_items, dtype="<u8")
        header = np.array(
            [(LSH_MAGIC, LSH_VERSION, self.dim, self.seed, self.rho, self.a, self.b, ids.size)],
            dtype=_LSH_HEADER,
        )
        vectors = (
            np.vstack(list(self._vectors.values())) if ids.size else np.zeros((0, self.dim))
        ).astype("<f8")
        parts = [header.tobytes(), ids.tobytes(), vectors.tobytes()]
        for table in self.tables:
            sizes = np.asarray([len(bucket) for bucket in table.values()], dtype="<u8")
            members = np.asarray(
                [item for bucket in table.values() for item in bucket], dtype="<u8"
            )
            parts += [
                np.array([len(table)], dtype="<u8").tobytes(),
                b"".join(table.keys()),
                sizes.tobytes(),
                members.tobytes(),
            ]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "LshTableSet":
        """Rebuild a table set from an LSH1 blob; hash directions are regenerated from the seed.

        Raises:
            IndexVersionError: unsupported version
            IndexFormatError: bad magic or truncated payload
        """
        reader = BlobReader(blob)
        header = reader.take(_LSH_HEADER, 1)[0]
        if bytes(header["magic"]) != LSH_MAGIC:
            raise IndexFormatError(f"bad LSH magic {bytes(header['magic'])!r}")
        if int(header["version"]) != LSH_VERSION:
            raise IndexVersionError(f"unsupported LSH version {int(header['version'])}")
        dim, count = int(header["dim"]), int(header["count"])
        tables = cls(dim, float(header["rho"]), int(header["a"]), int(header["b"]), int(header["seed"]))
        width = tables.width
        ids = reader.take("<u8", count).tolist()
        vectors = reader.take("<f8", count * dim).reshape(count, dim)
        for item_id, vector in zip(ids, vectors):
            tables._vectors[int(item_id)] = np.array(vector, dtype=np.float64)
        for table in tables.tables:
            buckets = int(reader.take("<u8", 1)[0])
            keys = reader.take_bytes(buckets * width)
            sizes = reader.take("<u8", buckets).astype(np.int64)
            members = reader.take("<u8", int(sizes.sum())).tolist()
            start = 0
            for j, size in enumerate(sizes.tolist()):
                table[keys[j * width : (j + 1) * width]] = members[start : start + size]
                start += size
        reader.finish()
        return tables


class BlobReader:
    """Sequential little-endian reader raising IndexFormatError on truncation."""

    def __init__(self, blob: bytes):
        self._blob = blob
        self._offset = 0

    def take(self, dtype, count: int) -> np.ndarray:
        dtype = np.dtype(dtype)
        size = dtype.itemsize * count
        if self._offset + size > len(self._blob):
            raise IndexFormatError("truncated index payload")
        out = np.frombuffer(self._blob, dtype=dtype, count=count, offset=self._offset)
        self._offset += size
        return out

    def take_bytes(self, size: int) -> bytes:
        if self._offset + size > len(self._blob):
            raise IndexFormatError("truncated index payload")
        out = self._blob[self._offset : self._offset + size]
        self._offset += size
        return out

    def finish(self) -> None:
        if self._offset != len(self._blob):
            raise IndexFormatError(f"{len(self._blob) - self._offset} trailing bytes in index payload")


def build_lsh(
    universe: ItemUniverse,
    rho: float,
    a: int,
    b: int,
    seed: int,
    item_ids: Optional[Iterable[int]] = None,
) -> LshTableSet:
    """Subsample the universe with probability rho and hash the retained items.

    Args:
        universe: Items to index
        rho: Independent inclusion probability per item
        a: Hash functions per table
        b: Number of tables
        seed: Seed for the hash directions and the subsample
        item_ids: Pre-drawn retained subset; skips the rho draw when given

    Returns:
        Populated table set, deterministic given the seed
    """
    tables = LshTableSet(universe.d, rho, a, b, seed)
    if item_ids is None:
        keep = np.random.default_rng(derive_seed(seed, 1)).random(universe.n) < rho
        rows = np.flatnonzero(keep)
    else:
        rows = universe.positions(item_ids)
    tables._store(universe.ids[rows].tolist(), universe.vectors[rows])
    return tables


def query_lsh(tables: LshTableSet, u: UnitVector) -> Set[int]:
    """Retained items colliding with u on all a bits of some table."""
    return tables.query(u)
