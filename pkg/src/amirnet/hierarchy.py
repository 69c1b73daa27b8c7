"""Tree-structured degradation labels: level-order flattening, k-means, and
progressive per-level construction of the hierarchy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DegTree:
    levels: int = 4
    branching: int = 2

    def level_size(self, level: int) -> int:
        return self.branching ** level

    def offset(self, level: int) -> int:
        """Flat index of the first node at ``level`` (levels count from 1)."""
        return sum(self.branching ** i for i in range(1, level))

    @property
    def flat_length(self) -> int:
        return self.offset(self.levels + 1)

    def parent(self, node: int) -> int:
        return node // self.branching

    def children(self, node: int) -> list:
        return [node * self.branching + c for c in range(self.branching)]

    def level_slices(self) -> list:
        return [slice(self.offset(i), self.offset(i + 1)) for i in range(1, self.levels + 1)]


@dataclass
class TreeAssignment:
    """Per-sample root-to-node paths; ``paths[s, i]`` is the child index taken at level ``i+1``."""

    paths: np.ndarray
    built_levels: int = 0

    def __post_init__(self):
        self.paths = np.asarray(self.paths, dtype=np.int64).reshape(len(self.paths), -1)
        if self.paths.shape[1] != self.built_levels:
            raise ValueError(f"paths have length {self.paths.shape[1]}, built_levels={self.built_levels}")

    @classmethod
    def root(cls, n: int) -> "TreeAssignment":
        return cls(np.zeros((n, 0), dtype=np.int64), 0)

    def __len__(self):
        return len(self.paths)

    def nodes(self, level: int | None = None, branching: int = 2) -> np.ndarray:
        """Within-level node index of every sample at ``level`` (default: deepest built)."""
        level = self.built_levels if level is None else level
        if level > self.built_levels:
            raise ValueError(f"level {level} not built (built_levels={self.built_levels})")
        node = np.zeros(len(self.paths), dtype=np.int64)
        for i in range(level):
            node = node * branching + self.paths[:, i]
        return node


def flatten(path, tree: DegTree = DegTree()) -> np.ndarray:
    """Level-order binary membership vector for one sample's path."""
    path = [int(c) for c in path]
    if len(path) > tree.levels:
        raise ValueError(f"path of length {len(path)} deeper than tree ({tree.levels})")
    flat = np.zeros(tree.flat_length, dtype=np.float32)
    node = 0
    for i, c in enumerate(path, start=1):
        if not 0 <= c < tree.branching:
            raise ValueError(f"child index {c} out of range at level {i}")
        node = node * tree.branching + c
        flat[tree.offset(i) + node] = 1.0
    return flat


def flatten_all(assign: TreeAssignment, tree: DegTree = DegTree()) -> np.ndarray:
    return np.stack([flatten(p, tree) for p in assign.paths]) if len(assign) else \
        np.zeros((0, tree.flat_length), dtype=np.float32)


def check_flat(flat, built_levels: int, tree: DegTree = DegTree()) -> None:
    """Raise unless ``flat`` is one-hot on built levels, empty below, and path-consistent."""
    flat = np.asarray(flat)
    if flat.shape != (tree.flat_length,):
        raise ValueError(f"flat label must have length {tree.flat_length}")
    prev = None
    for i, sl in enumerate(tree.level_slices(), start=1):
        bits = flat[sl]
        if not np.all((bits == 0) | (bits == 1)):
            raise ValueError(f"non-binary entries at level {i}")
        if i > built_levels:
            if bits.any():
                raise ValueError(f"bits set in unbuilt level {i}")
            continue
        on = np.flatnonzero(bits)
        if len(on) != 1:
            raise ValueError(f"level {i} has {len(on)} set bits, expected 1")
        if prev is not None and tree.parent(int(on[0])) != prev:
            raise ValueError(f"level {i} node {on[0]} is not a child of node {prev}")
        prev = int(on[0])


def unflatten(flat, tree: DegTree = DegTree()) -> tuple:
    """Inverse of :func:`flatten` over the levels that carry a set bit."""
    flat = np.asarray(flat)
    path = []
    for i, sl in enumerate(tree.level_slices(), start=1):
        on = np.flatnonzero(flat[sl])
        if len(on) == 0:
            break
        path.append(int(on[0]) % tree.branching)
    check_flat(flat, len(path), tree)
    return tuple(path)


# -- k-means -----------------------------------------------------------------------

@dataclass
class KMeansConfig:
    k: int = 2
    restarts: int = 10
    max_iters: int = 100
    tol: float = 1e-10
    seed: int = 0
    min_cluster_fraction: float = 0.05

    def __post_init__(self):
        if self.k < 2 or self.restarts < 1 or self.tol <= 0:
            raise ValueError(f"invalid k-means config {self}")


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    history: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.labels, self.centroids, self.inertia))


def _sqdist(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _assign(X, C):
    d2 = _sqdist(X, C)
    labels = d2.argmin(axis=1)  # first minimum: ties go to the lower index
    return labels, d2[np.arange(len(X)), labels]


def _fill_empty(labels, d2, k):
    """Move the point farthest from its centroid into each empty cluster."""
    labels = labels.copy()
    d2 = d2.copy()
    for c in range(k):
        if np.any(labels == c):
            continue
        counts = np.bincount(labels, minlength=k)
        movable = counts[labels] > 1
        cand = np.where(movable, d2, -np.inf)
        i = int(np.argmax(cand))
        labels[i] = c
        d2[i] = -np.inf
    return labels


def _means(X, labels, k):
    return np.stack([X[labels == c].mean(axis=0) for c in range(k)])


def _inertia(X, labels, C):
    return float(((X - C[labels]) ** 2).sum())


def kmeans_plusplus(X, k, rng):
    n = len(X)
    centers = [X[int(rng.integers(n))]]
    for _ in range(1, k):
        d2 = _sqdist(X, np.array(centers)).min(axis=1)
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers.append(X[idx])
    return np.array(centers, dtype=np.float64)


def lloyd(X, C, max_iters, tol):
    k = len(C)
    history = []
    for _ in range(max_iters):
        labels, d2 = _assign(X, C)
        labels = _fill_empty(labels, d2, k)
        new = _means(X, labels, k)
        history.append(_inertia(X, labels, new))
        shift = float(((new - C) ** 2).sum())
        C = new
        if shift <= tol:
            break
    return C, history


def _canonical_order(C):
    return np.lexsort(C.T[::-1])


def kmeans(points, cfg: KMeansConfig = KMeansConfig()) -> KMeansResult:
    """Best-of-restarts Lloyd k-means from k-means++ seeding.

    Centroids are returned sorted lexicographically (first coordinate, then
    the next); labels follow that order and ties go to the lower index.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] == 0:
        raise ValueError("points must be non-empty vectors")
    if len(X) < cfg.k:
        raise ValueError(f"need at least k={cfg.k} points, got {len(X)}")
    best = None
    for restart in range(cfg.restarts):
        rng = np.random.default_rng([cfg.seed, restart])
        C, hist = lloyd(X, kmeans_plusplus(X, cfg.k, rng), cfg.max_iters, cfg.tol)
        C = C[_canonical_order(C)]
        labels, d2 = _assign(X, C)
        labels = _fill_empty(labels, d2, cfg.k)
        inertia = _inertia(X, labels, C)
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, C, inertia, hist)
    return best


# -- progressive construction ------------------------------------------------------

def build_level(embeddings, assign: TreeAssignment, level: int, tree: DegTree = DegTree(),
                cfg: KMeansConfig = KMeansConfig()) -> TreeAssignment:
    """Split every level-(``level``-1) node into ``tree.branching`` children by k-means.

    Nodes with fewer than ``branching * ceil(min_cluster_fraction * n)`` members
    become early leaves: all members go to child 0.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if len(X) != len(assign):
        raise ValueError(f"{len(X)} embeddings for {len(assign)} samples")
    if assign.built_levels != level - 1:
        raise ValueError(f"cannot build level {level}: built_levels={assign.built_levels}")
    if not 1 <= level <= tree.levels:
        raise ValueError(f"level must be in [1, {tree.levels}]")
    n = len(X)
    min_size = max(1, math.ceil(cfg.min_cluster_fraction * n))
    node_of = assign.nodes(level - 1, tree.branching)
    child = np.zeros(n, dtype=np.int64)
    for node in np.unique(node_of):
        members = np.flatnonzero(node_of == node)
        if len(members) < tree.branching * min_size:
            continue
        node_cfg = KMeansConfig(tree.branching, cfg.restarts, cfg.max_iters, cfg.tol,
                                int(np.random.SeedSequence([cfg.seed, level, int(node)]).generate_state(1)[0]),
                                cfg.min_cluster_fraction)
        child[members] = kmeans(X[members], node_cfg).labels
    paths = np.concatenate([assign.paths, child[:, None]], axis=1)
    return TreeAssignment(paths, level)
