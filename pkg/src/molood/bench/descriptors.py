"""Scaffold grouping and the 9-dimensional physicochemical descriptor."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ..chemsim import Fingerprint, morgan_fingerprint
from ..errors import EmptyScaffold
from ..molgraph import ACYCLIC_KEY, MolGraph, canonical_key, murcko_scaffold
from .dataset import Dataset

# Static dipole polarizabilities (A^3); a config default, not fitted values.
POLARIZABILITY = {"C": 1.76, "N": 1.10, "O": 0.80, "F": 0.56, "S": 2.90,
                  "Cl": 2.18, "Br": 3.05, "I": 5.35, "P": 3.63, "B": 3.03}

# (name, width) of each block, in order
BLOCKS = (("macro", 3), ("element", 2), ("conn", 3), ("flex", 1))
DESCRIPTOR_NAMES = (
    "heavy_atoms", "ring_count", "max_ring_size",
    "mean_polarizability", "heteroatom_fraction",
    "ring_atom_fraction", "multiple_bond_fraction", "aromatic_atom_fraction",
    "rotatable_bond_ratio",
)
# block-summary mode keeps one scalar per block
SUMMARY_COLUMNS = (0, 3, 5, 8)


def rotatable_bond_count(g: MolGraph) -> int:
    return sum(1 for (i, j, o), ring in zip(g.bonds, g.ring_bond_mask)
               if o == 1.0 and not ring and g.degree(i) > 1 and g.degree(j) > 1)


def rotatable_ratio(g: MolGraph) -> float:
    return rotatable_bond_count(g) / g.num_bonds if g.num_bonds else 0.0


def mean_polarizability(g: MolGraph, table: dict[str, float] = POLARIZABILITY) -> float:
    return float(np.mean([table[a.element] for a in g.atoms])) if g.atoms else 0.0


def graph_descriptor(g: MolGraph, table: dict[str, float] = POLARIZABILITY,
                     mode: str = "blocks") -> np.ndarray:
    if g.num_atoms == 0:
        raise EmptyScaffold("descriptor of an empty scaffold")
    n, m = g.num_atoms, g.num_bonds
    ring_atoms = sum(g.ring_atom_mask)
    vec = np.array([
        n,
        g.cyclomatic,
        g.max_ring_size,
        mean_polarizability(g, table),
        sum(1 for a in g.atoms if a.element != "C") / n,
        ring_atoms / n,
        sum(1 for _, _, o in g.bonds if o > 1.0) / m if m else 0.0,
        sum(1 for a in g.atoms if a.aromatic) / n,
        rotatable_ratio(g),
    ], dtype=np.float64)
    if mode == "summary":
        return vec[list(SUMMARY_COLUMNS)]
    if mode != "blocks":
        raise ValueError(f"unknown descriptor mode {mode!r}")
    return vec


@dataclass
class ScaffoldRecord:
    key: str
    graph: MolGraph
    members: list[str]
    descriptor: np.ndarray = field(default=None, repr=False)
    fingerprint: Fingerprint = field(default=None, repr=False)
    level: int = -1
    cluster: int = -1
    domain_role: str = "excluded"

    @property
    def size(self) -> int:
        return len(self.members)


def descriptor(s: ScaffoldRecord, table: dict[str, float] = POLARIZABILITY,
               mode: str = "blocks") -> np.ndarray:
    return graph_descriptor(s.graph, table, mode)


def build_scaffolds(ds: Dataset, min_members: int = 10,
                    table: dict[str, float] = POLARIZABILITY,
                    mode: str = "blocks") -> tuple[list[ScaffoldRecord], list[ScaffoldRecord]]:
    """Group molecules by canonical Murcko scaffold.

    Returns ``(kept, excluded)``; the acyclic group (key ``ACYCLIC``) and any
    scaffold with fewer than ``min_members`` molecules are excluded.
    Records are sorted by key.
    """
    groups: dict[str, list[str]] = {}
    graphs: dict[str, MolGraph] = {}
    for m in ds.molecules:
        sc = murcko_scaffold(ds.graphs[m.id])
        key = canonical_key(sc) if sc.num_atoms else ACYCLIC_KEY
        groups.setdefault(key, []).append(m.id)
        graphs.setdefault(key, sc)
    kept, excluded = [], []
    for key in sorted(groups):
        rec = ScaffoldRecord(key, graphs[key], groups[key])
        if key == ACYCLIC_KEY or rec.size < min_members:
            excluded.append(rec)
            continue
        rec.descriptor = descriptor(rec, table, mode)
        rec.fingerprint = morgan_fingerprint(rec.graph)
        kept.append(rec)
    return kept, excluded


def descriptor_matrix(records: Iterable[ScaffoldRecord]) -> np.ndarray:
    return np.array([r.descriptor for r in records], dtype=np.float64)
