"""Synthetic item universes and user mixtures."""

from __future__ import annotations

from typing import List, Tuple, Union

import numpy as np

from app.log import get_logger
from app.models.embedding import ItemUniverse, UnitVector, UserMixture
from app.models.enums import SyntheticLaw

logger = get_logger("synthetic")


def random_unit_vectors(rng: np.random.Generator, count: int, d: int) -> np.ndarray:
    """Rows drawn uniformly from the unit sphere."""
    raw = rng.standard_normal((count, d))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _perturb(rng: np.random.Generator, centers: np.ndarray, spread: float) -> np.ndarray:
    raw = centers + spread * rng.standard_normal(centers.shape)
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def distance_uniform(n: int, d: int, seed: int) -> Tuple[ItemUniverse, UnitVector]:
    """n items whose distances to a random query point are i.i.d. uniform on [0, 2].

    Each item is built from a target distance x as (1 - x^2/2) u + sqrt(1 - (1 - x^2/2)^2) z
    with z a uniformly random unit direction orthogonal to u.
    """
    rng = np.random.default_rng(seed)
    u = random_unit_vectors(rng, 1, d)[0]
    x = rng.uniform(0.0, 2.0, size=n)
    inner = 1.0 - np.square(x) / 2.0
    z = rng.standard_normal((n, d))
    z -= np.outer(z @ u, u)
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    vectors = inner[:, None] * u + np.sqrt(np.clip(1.0 - np.square(inner), 0.0, None))[:, None] * z
    universe = ItemUniverse(np.arange(n, dtype=np.uint64), vectors, dim=d)
    return universe, UnitVector(u / np.linalg.norm(u))


def cluster_mixture(
    n: int, d: int, seed: int, clusters: int = 10, spread: float = 0.05
) -> Tuple[ItemUniverse, UserMixture]:
    """Items dispersed around `clusters` random centers; the centers form the returned mixture."""
    rng = np.random.default_rng(seed)
    centers = random_unit_vectors(rng, clusters, d)
    assignment = rng.integers(clusters, size=n)
    vectors = _perturb(rng, centers[assignment], spread)
    universe = ItemUniverse(np.arange(n, dtype=np.uint64), vectors, dim=d)
    return universe, UserMixture.from_matrix(centers)


def gen_synthetic(
    n: int,
    d: int,
    seed: int,
    law: SyntheticLaw = SyntheticLaw.DISTANCE_UNIFORM,
    clusters: int = 10,
    spread: float = 0.05,
) -> Tuple[ItemUniverse, Union[UnitVector, UserMixture]]:
    """Generate a seeded universe together with its query point or cluster centers.

    Args:
        n: Number of items
        d: Embedding dimension (>= 2)
        seed: Generator seed; equal seeds give identical universes
        law: Distance-uniform around one query, or a cluster mixture
        clusters: Cluster count for the cluster mixture
        spread: Per-coordinate noise scale around each center

    Returns:
        Universe and a UnitVector (distance-uniform) or UserMixture of centers
    """
    if d < 2:
        raise ValueError(f"dimension must be at least 2, got {d}")
    law = SyntheticLaw(law)
    if law == SyntheticLaw.DISTANCE_UNIFORM:
        result: Tuple[ItemUniverse, Union[UnitVector, UserMixture]] = distance_uniform(n, d, seed)
    else:
        result = cluster_mixture(n, d, seed, clusters, spread)
    logger.debug("synthetic_generated", law=law.value, n=n, d=d, seed=seed)
    return result


def draw_user_mixtures(
    centers: UserMixture,
    count: int,
    types_per_mixture: int,
    rng: np.random.Generator,
    spread: float = 0.05,
    max_clusters: int = 4,
) -> List[UserMixture]:
    """Test users as uniform mixtures over `types_per_mixture` viewed embeddings.

    Each user's views come from 1 to `max_clusters` distinct clusters, each view
    a perturbed copy of its cluster center.
    """
    mixtures: List[UserMixture] = []
    upper = min(max_clusters, centers.m)
    for _ in range(count):
        chosen = rng.choice(centers.m, size=int(rng.integers(1, upper + 1)), replace=False)
        picks = chosen[rng.integers(chosen.size, size=types_per_mixture)]
        mixtures.append(UserMixture.from_matrix(_perturb(rng, centers.matrix[picks], spread)))
    return mixtures
