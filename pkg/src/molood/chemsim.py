"""Structure similarity: folded Morgan fingerprints, Tanimoto/cosine, WL subtree kernel."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import LengthMismatch
from .molgraph import ATOMIC_NUMBER, MolGraph, implicit_h_count

FP_LENGTH = 128
FP_RADIUS = 2
WL_ITERATIONS = 3

_MASK64 = (1 << 64) - 1
_HASH_SEED = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """SplitMix64 finalizer (Steele et al.); stateless and platform independent."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def hash_ints(values: Sequence[int]) -> int:
    h = _HASH_SEED
    for v in values:
        h = splitmix64(h ^ (v & _MASK64))
    return h


@dataclass(frozen=True, eq=False)
class Fingerprint:
    bits: np.ndarray  # uint8 array of 0/1

    @property
    def length(self) -> int:
        return int(self.bits.shape[0])

    @property
    def set_count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        return isinstance(other, Fingerprint) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())

    @classmethod
    def from_indices(cls, on: Sequence[int], length: int = FP_LENGTH) -> "Fingerprint":
        bits = np.zeros(length, dtype=np.uint8)
        bits[list(on)] = 1
        return cls(bits)


def atom_invariants(g: MolGraph, radius: int) -> list[list[int]]:
    """Per-round atom invariants; element ``r`` holds the radius-``r`` hashes."""
    rounds = [[hash_ints((ATOMIC_NUMBER[a.element], a.charge, g.degree(i),
                          implicit_h_count(g, i), int(a.aromatic)))
               for i, a in enumerate(g.atoms)]]
    for _ in range(radius):
        prev = rounds[-1]
        cur = []
        for i in range(g.num_atoms):
            env = sorted((int(round(2 * order)), prev[j]) for j, order in g.adjacency[i])
            flat = [prev[i]]
            for o, h in env:
                flat.extend((o, h))
            cur.append(hash_ints(flat))
        rounds.append(cur)
    return rounds


def morgan_fingerprint(g: MolGraph, radius: int = FP_RADIUS, length: int = FP_LENGTH) -> Fingerprint:
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if length <= 0 or length & (length - 1):
        raise ValueError("length must be a power of two")
    bits = np.zeros(length, dtype=np.uint8)
    for layer in atom_invariants(g, radius):
        for h in layer:
            bits[h % length] = 1
    return Fingerprint(bits)


def _check_lengths(a: Fingerprint, b: Fingerprint):
    if a.length != b.length:
        raise LengthMismatch(f"fingerprint lengths differ: {a.length} vs {b.length}")


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    _check_lengths(a, b)
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a.bits & b.bits)) / union


def cosine_sim(a: Fingerprint, b: Fingerprint, eps: float = 1e-8) -> float:
    _check_lengths(a, b)
    va = a.bits.astype(np.float64)
    vb = b.bits.astype(np.float64)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(va @ vb) / (na * nb + eps)


def tanimoto_matrix(fa: Sequence[Fingerprint], fb: Sequence[Fingerprint]) -> np.ndarray:
    A = np.array([f.bits for f in fa], dtype=np.float64).reshape(len(fa), -1)
    B = np.array([f.bits for f in fb], dtype=np.float64).reshape(len(fb), -1)
    inter = A @ B.T
    union = A.sum(1)[:, None] + B.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1), 1.0)
    return out


# --------------------------------------------------------------------------- WL kernel

class WLFeaturizer:
    """Subtree-pattern label histograms with a shared, injective label table.

    Graphs featurized by the same instance share label ids, so their
    histograms can be dotted directly.
    """

    def __init__(self, iterations: int = WL_ITERATIONS):
        if iterations < 0:
            raise ValueError("iterations must be >= 0")
        self.iterations = iterations
        self._table: dict[tuple, int] = {}

    def _compress(self, key: tuple) -> int:
        idx = self._table.get(key)
        if idx is None:
            idx = self._table[key] = len(self._table)
        return idx

    def histogram(self, g: MolGraph) -> Counter:
        labels = [self._compress((0, a.element.lower() if a.aromatic else a.element))
                  for a in g.atoms]
        hist = Counter(labels)
        for h in range(1, self.iterations + 1):
            labels = [self._compress((h, labels[i],
                                      tuple(sorted((o, labels[j]) for j, o in g.adjacency[i]))))
                      for i in range(g.num_atoms)]
            hist.update(labels)
        return hist


def _dot(h1: Counter, h2: Counter) -> int:
    if len(h1) > len(h2):
        h1, h2 = h2, h1
    return sum(c * h2.get(k, 0) for k, c in h1.items())


def wl_raw(g1: MolGraph, g2: MolGraph, iterations: int = WL_ITERATIONS) -> int:
    f = WLFeaturizer(iterations)
    return _dot(f.histogram(g1), f.histogram(g2))


def wl_kernel(g1: MolGraph, g2: MolGraph, iterations: int = WL_ITERATIONS) -> float:
    """Cosine-normalized WL subtree kernel in [0, 1]."""
    if g1.num_atoms == 0 or g2.num_atoms == 0:
        return 1.0 if g1.num_atoms == g2.num_atoms == 0 else 0.0
    f = WLFeaturizer(iterations)
    h1, h2 = f.histogram(g1), f.histogram(g2)
    return _dot(h1, h2) / math.sqrt(_dot(h1, h1) * _dot(h2, h2))


def wl_gram(graphs: Sequence[MolGraph], iterations: int = WL_ITERATIONS,
            normalize: bool = True) -> np.ndarray:
    f = WLFeaturizer(iterations)
    hists = [f.histogram(g) for g in graphs]
    n = len(graphs)
    K = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            K[i, j] = K[j, i] = _dot(hists[i], hists[j])
    if normalize:
        diag = np.sqrt(np.diag(K))
        empty = diag == 0
        denom = np.outer(diag, diag)
        K = np.divide(K, denom, out=np.zeros_like(K), where=denom > 0)
        K[np.ix_(empty, empty)] = 1.0
        for i in np.where(empty)[0]:
            K[i, ~empty] = 0.0
            K[~empty, i] = 0.0
    return K


def wl_kernel_to_many(query: MolGraph, graphs: Sequence[MolGraph],
                      iterations: int = WL_ITERATIONS) -> np.ndarray:
    f = WLFeaturizer(iterations)
    hq = f.histogram(query)
    qq = _dot(hq, hq)
    out = np.zeros(len(graphs))
    for k, g in enumerate(graphs):
        if g.num_atoms == 0 or query.num_atoms == 0:
            out[k] = 1.0 if g.num_atoms == query.num_atoms == 0 else 0.0
            continue
        hg = f.histogram(g)
        out[k] = _dot(hq, hg) / math.sqrt(qq * _dot(hg, hg))
    return out
