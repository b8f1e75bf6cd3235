"""Feature-space partitioning for the distributed harness.

Voronoi seeds come either from plain Lloyd k-means or from a shared integer
seed (uniform draws in the data bounding box, so every agent can reproduce
the same seeds from one communicated integer). Boundary distances to a
neighboring region reduce to a closed-form projection onto the bisector
hyperplane of the two seeds; the quadratic program it solves is kept in the
test suite as an independent oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .core import FeatureId, FeatureSet, InputError, ProtocolError, canonical_json

__all__ = [
    "Partition",
    "BoundaryDistance",
    "kmeans_seeds",
    "random_seeds",
    "boundary_distance",
    "min_boundary_distance",
    "bisector_distances",
    "KMEANS_ITERATIONS",
]

KMEANS_ITERATIONS = 100


def assign_to_seeds(vectors: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    """Nearest-seed label per row; distance ties go to the lower agent index."""
    return cdist(vectors, seeds).argmin(axis=1).astype(np.intp)


@dataclass(frozen=True)
class Partition:
    """Voronoi seeds plus the per-feature agent assignment they induce."""

    seeds: np.ndarray
    assignment: np.ndarray
    ids: tuple[FeatureId, ...]
    method: str = "explicit"
    seed: int | None = None

    def __post_init__(self) -> None:
        seeds = np.ascontiguousarray(np.asarray(self.seeds, dtype=np.float64))
        if seeds.ndim != 2 or len(seeds) < 1:
            raise InputError("seeds must be a non-empty (m, F) array")
        if len(np.unique(seeds, axis=0)) != len(seeds):
            raise InputError("seeds must be pairwise distinct")
        assignment = np.asarray(self.assignment, dtype=np.intp)
        if assignment.shape != (len(self.ids),):
            raise InputError("assignment must align with feature ids")
        if len(assignment) and (assignment.min() < 0 or assignment.max() >= len(seeds)):
            raise InputError("assignment indexes outside the agent range")
        seeds.setflags(write=False)
        assignment.setflags(write=False)
        object.__setattr__(self, "seeds", seeds)
        object.__setattr__(self, "assignment", assignment)
        object.__setattr__(self, "ids", tuple(FeatureId(*f) for f in self.ids))

    @property
    def m(self) -> int:
        return len(self.seeds)

    def agent_of(self, fid: FeatureId) -> int:
        try:
            return int(self.assignment[self.ids.index(FeatureId(*fid))])
        except ValueError:
            raise InputError(f"unknown feature id {tuple(fid)}") from None

    def label_map(self) -> dict[FeatureId, int]:
        return {fid: int(a) for fid, a in zip(self.ids, self.assignment)}

    def to_json(self) -> str:
        payload = {
            "seeds": [[float(v) for v in s] for s in self.seeds],
            "assignment": [[int(f.image), int(f.index), int(a)] for f, a in zip(self.ids, self.assignment)],
            "method": self.method,
            "seed": self.seed,
        }
        return canonical_json(payload)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Partition":
        payload = json.loads(Path(path).read_text())
        ids = [FeatureId(i, k) for i, k, _ in payload["assignment"]]
        assignment = [a for _, _, a in payload["assignment"]]
        return cls(np.array(payload["seeds"], dtype=np.float64), np.array(assignment), tuple(ids),
                   payload.get("method", "explicit"), payload.get("seed"))


@dataclass(frozen=True)
class BoundaryDistance:
    """Minimum distance from a feature to one neighboring region's bisector."""

    d_min: float
    nearest_other: int
    x_min: np.ndarray


def _finalize_partition(fs: FeatureSet, seeds: np.ndarray, method: str, seed: int | None) -> Partition:
    if len(np.unique(seeds, axis=0)) != len(seeds):
        raise ProtocolError("seed update produced coincident seeds")
    return Partition(seeds, assign_to_seeds(fs.vectors, seeds), fs.ids, method, seed)


def kmeans_seeds(fs: FeatureSet, m: int, seed: int = 0) -> Partition:
    """Plain Lloyd k-means: random distinct features as initial seeds, then
    up to KMEANS_ITERATIONS assign/update rounds, stopping early at a fixed
    point. An emptied cluster is reseeded at the feature farthest from its
    stale seed.
    """
    if m < 1:
        raise InputError(f"agent count must be >= 1, got {m}")
    if len(fs) < m:
        raise InputError(f"need at least {m} features for {m} agents, got {len(fs)}")
    X = fs.vectors
    rng = np.random.default_rng(seed)

    # Forgy init on pairwise-distinct vectors so no two seeds coincide.
    chosen: list[int] = []
    for r in rng.permutation(len(X)):
        if all(not np.array_equal(X[r], X[c]) for c in chosen):
            chosen.append(int(r))
        if len(chosen) == m:
            break
    if len(chosen) < m:
        raise InputError(f"only {len(chosen)} distinct feature vectors, need {m}")
    seeds = X[chosen].copy()

    labels: np.ndarray | None = None
    for _ in range(KMEANS_ITERATIONS):
        new = assign_to_seeds(X, seeds)
        # empty-cluster repair, lowest agent first; each repair claims a feature
        claimed: set[int] = set()
        for c in range(m):
            if np.any(new == c):
                continue
            d = np.linalg.norm(X - seeds[c], axis=1)
            for r in claimed:
                d[r] = -1.0
            far = int(np.argmax(d))
            seeds[c] = X[far]
            new[far] = c
            claimed.add(far)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(m):
            seeds[c] = X[labels == c].mean(axis=0)

    return _finalize_partition(fs, seeds, "kmeans", seed)


def random_seeds(fs: FeatureSet, m: int, seed: int = 0) -> Partition:
    """Seeds drawn uniformly in the data bounding box from a shared integer seed.

    Two parties holding the same seed produce identical seed lists without
    exchanging anything else. Zero-extent dimensions are widened by a small
    epsilon so the box always has volume. Uses numpy's PCG64 generator, whose
    integer-to-float stream is stable across platforms.
    """
    if m < 1:
        raise InputError(f"agent count must be >= 1, got {m}")
    lo, hi = fs.bounds()
    flat = hi - lo <= 0
    lo = lo - np.where(flat, 1e-6, 0.0)
    hi = hi + np.where(flat, 1e-6, 0.0)
    rng = np.random.default_rng(seed)
    seeds = rng.uniform(lo, hi, size=(m, fs.dim))
    # duplicate rows are essentially impossible; redraw deterministically if seen
    while len(np.unique(seeds, axis=0)) != len(seeds):
        _, first = np.unique(seeds, axis=0, return_index=True)
        dup = sorted(set(range(m)) - set(int(i) for i in first))
        seeds[dup] = rng.uniform(lo, hi, size=(len(dup), fs.dim))
    return _finalize_partition(fs, seeds, "random", seed)


def boundary_distance(x_t: Sequence[float], part: Partition, e: int) -> BoundaryDistance:
    """Distance from ``x_t`` to the bisector hyperplane between its own seed
    and seed ``e``: the closed-form solution of projecting onto the active
    half-space constraint.
    """
    x = np.asarray(x_t, dtype=np.float64)
    if x.shape != (part.seeds.shape[1],):
        raise InputError(f"expected a {part.seeds.shape[1]}-vector")
    if not 0 <= e < part.m:
        raise InputError(f"agent index {e} out of range")
    t = int(assign_to_seeds(x[None, :], part.seeds)[0])
    if e == t:
        raise InputError(f"feature belongs to agent {t}; boundary to itself is undefined")
    p_t, p_e = part.seeds[t], part.seeds[e]
    u = p_e - p_t
    gap = float(np.linalg.norm(u))
    u_hat = u / gap
    d_min = gap / 2.0 - float(u_hat @ (x - p_t))
    if d_min < -1e-9:
        raise ProtocolError(f"feature assigned to agent {t} lies beyond the {t}/{e} bisector")
    d_min = max(d_min, 0.0)
    return BoundaryDistance(d_min, e, x + d_min * u_hat)


def min_boundary_distance(x_t: Sequence[float], part: Partition) -> tuple[float, int | None]:
    """Minimum bisector distance over every other agent; ties pick the lower
    index. With a single agent there is no boundary and the result is +inf.
    """
    if part.m == 1:
        return math.inf, None
    x = np.asarray(x_t, dtype=np.float64)
    t = int(assign_to_seeds(x[None, :], part.seeds)[0])
    d = bisector_distances(x[None, :], part.seeds, t)[0]
    e = int(np.argmin(d))
    return float(d[e]), e


def bisector_distances(vectors: np.ndarray, seeds: np.ndarray, t: int) -> np.ndarray:
    """(n, m) distances from rows (all assigned to agent ``t``) to each other
    agent's bisector; column ``t`` is +inf. Vectorized form of
    :func:`boundary_distance` used by the distributed pipeline.
    """
    m = len(seeds)
    out = np.full((len(vectors), m), np.inf)
    for e in range(m):
        if e == t:
            continue
        u = seeds[e] - seeds[t]
        gap = np.linalg.norm(u)
        u_hat = u / gap
        d = gap / 2.0 - (vectors - seeds[t]) @ u_hat
        if np.any(d < -1e-9):
            raise ProtocolError(f"row assigned to agent {t} lies beyond the {t}/{e} bisector")
        out[:, e] = np.maximum(d, 0.0)
    return out
