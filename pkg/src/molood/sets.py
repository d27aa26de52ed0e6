"""Labeled and label-stripped molecule sets backed by cached graph tensors.

``UnlabeledSet`` has no label storage at all, so code that receives one
cannot read target labels. ``SealedLabels`` wraps proxy labels that may only
be revealed for evaluation; every reveal is counted so tests can check when
labels were read.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bench.dataset import Dataset
from .encoder import Batch, GraphTensors
from .errors import EmptySet


class TensorStore:
    """Molecule id -> packed graph tensors, built lazily once per id."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self._cache: dict[str, GraphTensors] = {}

    def __getitem__(self, mol_id: str) -> GraphTensors:
        t = self._cache.get(mol_id)
        if t is None:
            t = GraphTensors.from_graph(self.dataset.graphs[mol_id])
            self._cache[mol_id] = t
        return t

    def tensors(self, ids: Sequence[str]) -> list[GraphTensors]:
        return [self[i] for i in ids]

    def labeled(self, ids: Sequence[str], name: str = "") -> "LabeledSet":
        ids = list(ids)
        return LabeledSet(ids, self.tensors(ids), self.dataset.labels(ids), name)

    def unlabeled(self, ids: Sequence[str], name: str = "") -> "UnlabeledSet":
        ids = list(ids)
        return UnlabeledSet(ids, self.tensors(ids), name)


@dataclass
class UnlabeledSet:
    ids: list[str]
    tensors: list[GraphTensors]
    name: str = ""

    def __len__(self) -> int:
        return len(self.ids)

    def batch(self, idx=None) -> Batch:
        items = self.tensors if idx is None else [self.tensors[i] for i in idx]
        return Batch.pack(items)


@dataclass
class LabeledSet:
    ids: list[str]
    tensors: list[GraphTensors]
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.labels.shape != (len(self.ids),):
            raise ValueError("one label per molecule required")

    def __len__(self) -> int:
        return len(self.ids)

    def batch(self, idx=None) -> Batch:
        if idx is None:
            return Batch.pack(self.tensors, self.labels)
        idx = np.asarray(idx)
        return Batch.pack([self.tensors[i] for i in idx], self.labels[idx])

    def strip(self) -> UnlabeledSet:
        return UnlabeledSet(list(self.ids), list(self.tensors), self.name)

    @staticmethod
    def merge(sets: Sequence["LabeledSet"], name: str = "") -> "LabeledSet":
        if not sets:
            raise EmptySet("nothing to merge")
        return LabeledSet([i for s in sets for i in s.ids], [t for s in sets for t in s.tensors],
                          np.concatenate([s.labels for s in sets]), name)


@dataclass
class SealedLabels:
    """Labels released only through :meth:`reveal`, with an access log."""

    _labels: np.ndarray = field(repr=False)
    on_reveal: Callable[[], None] | None = field(default=None, repr=False)
    reveals: int = 0

    def reveal(self) -> np.ndarray:
        self.reveals += 1
        if self.on_reveal is not None:
            self.on_reveal()
        return self._labels.copy()
