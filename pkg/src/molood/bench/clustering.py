"""Level assignment, per-level normalization, K-Means++ and quota allocation."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..errors import AcyclicScaffold, InfeasibleQuota, KTooLarge
from ..molgraph import MolGraph

N_LEVELS = 5
POLYCYCLIC_LEVELS = (3, 4)


def scaffold_level(g: MolGraph) -> int:
    rings = g.cyclomatic
    if rings == 0:
        raise AcyclicScaffold("acyclic scaffold has no level")
    if rings == 1:
        size = g.max_ring_size
        return 0 if size <= 5 else (1 if size == 6 else 2)
    return 3 if rings == 2 else 4


def assign_levels(scaffolds: Sequence) -> list[int]:
    """Levels 0-4 from ring count and largest ring; accepts graphs or records."""
    if not scaffolds:
        raise ValueError("no scaffolds")
    return [scaffold_level(getattr(s, "graph", s)) for s in scaffolds]


def zscore(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    safe = np.where(sd > 0, sd, 1.0)
    return np.where(sd > 0, (x - mu) / safe, 0.0)


def zscore_per_level(vectors: np.ndarray, levels: Sequence[int]) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    levels = np.asarray(levels)
    out = np.zeros_like(vectors)
    for lv in np.unique(levels):
        idx = levels == lv
        out[idx] = zscore(vectors[idx])
    return out


def kmeanspp(points: np.ndarray, k: int, seed: int, max_iter: int = 100):
    """D^2-seeded Lloyd's algorithm.

    Returns ``(labels, centroids, inertia)``. Stops when assignments stop
    changing or after ``max_iter`` rounds; an emptied cluster is reseeded
    to the point farthest from its current centroid.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if not 1 <= k <= n:
        raise KTooLarge(f"k={k} with {n} points")
    rng = np.random.default_rng(seed)

    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(1))
    centroids = X[chosen].copy()

    def assign(C):
        dist = ((X[:, None, :] - C[None, :, :]) ** 2).sum(-1)
        return dist.argmin(1), dist

    labels, dist = assign(centroids)
    for _ in range(max_iter):
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = X[members].mean(0)
        empty = [c for c in range(k) if not (labels == c).any()]
        for c in empty:
            own = dist[np.arange(n), labels]
            far = int(own.argmax())
            centroids[c] = X[far]
            labels[far] = c
            dist[far] = ((X[far] - centroids) ** 2).sum(-1)
        new_labels, dist = assign(centroids)
        if np.array_equal(new_labels, labels) and not empty:
            break
        labels = new_labels
    inertia = float(((X - centroids[labels]) ** 2).sum())
    return labels, centroids, inertia


def allocate_quotas(level_sizes: Sequence[int], k_total: int, alpha_comp: float,
                    capacity: Sequence[int] | None = None) -> list[int]:
    """Split ``k_total`` clusters over levels.

    Proportional raw quotas, polycyclic levels boosted by ``1 + alpha_comp``,
    a floor of one per non-empty level, then largest-remainder rounding
    (lower level wins ties when adding, higher level gives up first when
    removing). ``capacity`` caps each level (defaults to the level size).
    """
    sizes = [int(s) for s in level_sizes]
    cap = list(capacity) if capacity is not None else sizes
    nonempty = [i for i, s in enumerate(sizes) if s > 0]
    if not nonempty or k_total < len(nonempty):
        raise InfeasibleQuota(f"K_total={k_total} below {len(nonempty)} non-empty levels")
    if k_total > sum(cap[i] for i in nonempty):
        raise InfeasibleQuota(f"K_total={k_total} exceeds total level capacity")
    total = sum(sizes)
    raw = [k_total * s / total for s in sizes]
    for lv in POLYCYCLIC_LEVELS:
        if lv < len(raw):
            raw[lv] *= 1.0 + alpha_comp
    quota = [0] * len(sizes)
    for i in nonempty:
        quota[i] = min(cap[i], max(1, math.floor(raw[i])))
    rem = {i: raw[i] - math.floor(raw[i]) for i in nonempty}

    order = sorted(nonempty, key=lambda j: (-rem[j], j))
    while sum(quota) < k_total:
        for j in order:
            if sum(quota) == k_total:
                break
            if quota[j] < cap[j]:
                quota[j] += 1
    while sum(quota) > k_total:
        shrink = [j for j in nonempty if quota[j] > 1]
        j = max(shrink, key=lambda j: (quota[j] - raw[j], j))
        quota[j] -= 1
    return quota
