"""Heuristic source selectors compared against the learned policy.

Each returns indices into the candidate pool (sorted ascending). Score ties
break by candidate key ascending.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..adapt import embed_mol
from ..bench.clustering import zscore
from ..encoder import EncoderModel
from ..errors import KTooLarge, UnknownPolicy
from ..sets import UnlabeledSet
from .tsec import Candidate

HEURISTICS = ("random", "shallow", "deep", "physical", "graph-kernel", "mixed")


@dataclass
class SelectorInputs:
    """What the heuristics may look at: structure, descriptors and encoder features."""

    target_descriptor: np.ndarray
    target_molecules: UnlabeledSet | None = None
    shallow: EncoderModel | None = None
    deep: EncoderModel | None = None
    candidate_molecules: Callable[[Candidate], UnlabeledSet] | None = None
    seed: int = 0


def top_k(scores: Sequence[float], keys: Sequence[str], k: int) -> list[int]:
    if not 1 <= k <= len(keys):
        raise KTooLarge(f"K={k} with a pool of {len(keys)}")
    order = sorted(range(len(keys)), key=lambda j: (-scores[j], keys[j]))
    return sorted(order[:k])


def minmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    span = x.max() - x.min()
    return np.zeros_like(x) if span == 0 else (x - x.min()) / span


def physical_scores(target_descriptor: np.ndarray, pool: Sequence[Candidate]) -> np.ndarray:
    """Negative Euclidean distance after z-scoring over the pool plus the target."""
    X = zscore(np.vstack([target_descriptor] + [c.record.descriptor for c in pool]))
    return -np.linalg.norm(X[1:] - X[0], axis=1)


def mixed_scores(kernel, physical) -> np.ndarray:
    return 0.5 * minmax(kernel) + 0.5 * minmax(physical)


def _feature_scores(model: EncoderModel, inputs: SelectorInputs, pool) -> np.ndarray:
    t = embed_mol(model, inputs.target_molecules).mean(0)
    out = []
    for c in pool:
        v = embed_mol(model, inputs.candidate_molecules(c)).mean(0)
        out.append(float(v @ t) / (np.linalg.norm(v) * np.linalg.norm(t) + 1e-12))
    return np.array(out)


def baseline_selectors(name: str, pool: Sequence[Candidate], k: int,
                       inputs: SelectorInputs) -> list[int]:
    keys = [c.key for c in pool]
    if name == "random":
        if not 1 <= k <= len(pool):
            raise KTooLarge(f"K={k} with a pool of {len(pool)}")
        rng = np.random.default_rng(inputs.seed)
        return sorted(int(i) for i in rng.choice(len(pool), k, replace=False))
    if name == "graph-kernel":
        return top_k([c.kernel for c in pool], keys, k)
    if name == "physical":
        return top_k(physical_scores(inputs.target_descriptor, pool), keys, k)
    if name == "mixed":
        phys = physical_scores(inputs.target_descriptor, pool)
        return top_k(mixed_scores([c.kernel for c in pool], phys), keys, k)
    if name in ("shallow", "deep"):
        model = inputs.shallow if name == "shallow" else inputs.deep
        if model is None or inputs.target_molecules is None or inputs.candidate_molecules is None:
            raise ValueError(f"{name} selection needs an encoder and molecule sets")
        return top_k(_feature_scores(model, inputs, pool), keys, k)
    raise UnknownPolicy(f"unknown selection policy {name!r}; expected one of "
                        f"{', '.join(('grpo',) + HEURISTICS)}")
