"""Target-aware retrieval: proxy targets, candidate ranking and policy states.

HubScore of a source scaffold against unlabeled targets::

    hub(c) = max_t cos(f_c, f_t) + lam * #{t : cos(f_c, f_t) > tau_sim}

Candidate ranking against a proxy ``s``::

    s_rank(s, c) = k_WL(s, c) * ln(1 + |D_c|)

State of candidate ``c`` under proxy ``s`` (258 entries)::

    [f_s (128 bits), f_c (128 bits), k_WL(s, c), ln(1 + |D_c|) / c_norm]
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..bench.descriptors import ScaffoldRecord
from ..chemsim import FP_LENGTH, WL_ITERATIONS, Fingerprint, cosine_sim, wl_kernel_to_many
from ..errors import EmptyTargets, LengthMismatch, PoolTooSmall

STATE_DIM = 2 * FP_LENGTH + 2


def hub_score_from_sims(sims, lam: float = 0.3, tau_sim: float = 0.45) -> float:
    s = np.asarray(sims, dtype=np.float64)
    if s.size == 0:
        raise EmptyTargets("HubScore needs at least one target")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    return float(s.max() + lam * np.count_nonzero(s > tau_sim))


def hub_score(candidate_fp: Fingerprint, target_fps: Sequence[Fingerprint], lam: float = 0.3,
              tau_sim: float = 0.45) -> float:
    if not target_fps:
        raise EmptyTargets("HubScore needs at least one target")
    return hub_score_from_sims([cosine_sim(candidate_fp, t) for t in target_fps], lam, tau_sim)


def select_proxies(source_pool: Sequence[ScaffoldRecord], target_fps: Sequence[Fingerprint],
                   n_p: int, lam: float = 0.3, tau_sim: float = 0.45) -> list[ScaffoldRecord]:
    """Top-``n_p`` source scaffolds by HubScore, ties by key.

    Only target fingerprints are consulted, never target molecules or labels.
    """
    if not 1 <= n_p < len(source_pool):
        raise PoolTooSmall(f"need 1 <= N_p < |pool|, got N_p={n_p}, |pool|={len(source_pool)}")
    scored = [(-hub_score(r.fingerprint, target_fps, lam, tau_sim), r.key, r) for r in source_pool]
    scored.sort(key=lambda t: (t[0], t[1]))
    return [r for _, _, r in scored[:n_p]]


def s_rank(kernel_value: float, member_count: int) -> float:
    if member_count < 1:
        raise ValueError("candidate needs at least one member")
    return float(kernel_value) * math.log1p(member_count)


@dataclass(frozen=True)
class Candidate:
    record: ScaffoldRecord
    kernel: float
    score: float

    @property
    def key(self) -> str:
        return self.record.key

    @property
    def size(self) -> int:
        return self.record.size


def rank_candidates(proxy: ScaffoldRecord, source_pool: Sequence[ScaffoldRecord],
                    iterations: int = WL_ITERATIONS) -> list[Candidate]:
    """All candidates sorted by s_rank descending, key ascending."""
    ks = wl_kernel_to_many(proxy.graph, [r.graph for r in source_pool], iterations)
    cands = [Candidate(r, float(k), s_rank(k, r.size)) for r, k in zip(source_pool, ks)]
    cands.sort(key=lambda c: (-c.score, c.key))
    return cands


def build_candidate_pool(proxy: ScaffoldRecord, source_pool: Sequence[ScaffoldRecord], m: int,
                         iterations: int = WL_ITERATIONS) -> list[Candidate]:
    if not 1 <= m <= len(source_pool):
        raise PoolTooSmall(f"pool of {len(source_pool)} cannot supply M={m}")
    return rank_candidates(proxy, source_pool, iterations)[:m]


def build_state(proxy_fp: Fingerprint, candidate_fp: Fingerprint, kernel: float, members: int,
                c_norm: float) -> np.ndarray:
    if proxy_fp.length != FP_LENGTH or candidate_fp.length != FP_LENGTH:
        raise LengthMismatch(f"state needs {FP_LENGTH}-bit fingerprints, got "
                             f"{proxy_fp.length} and {candidate_fp.length}")
    tail = [kernel, math.log1p(members) / c_norm]
    return np.concatenate([proxy_fp.bits.astype(np.float64), candidate_fp.bits.astype(np.float64),
                           np.array(tail)])


def state_matrix(proxy_fp: Fingerprint, pool: Sequence[Candidate]) -> np.ndarray:
    c_norm = math.log1p(max(c.size for c in pool))
    return np.stack([build_state(proxy_fp, c.record.fingerprint, c.kernel, c.size, c_norm)
                     for c in pool])


def rescore(reference: ScaffoldRecord, records: Sequence[ScaffoldRecord],
            iterations: int = WL_ITERATIONS) -> list[Candidate]:
    """Candidates in the given order, scored against ``reference``."""
    ks = wl_kernel_to_many(reference.graph, [r.graph for r in records], iterations)
    return [Candidate(r, float(k), s_rank(k, r.size)) for r, k in zip(records, ks)]


def shared_pool(proxies: Sequence[ScaffoldRecord], source_pool: Sequence[ScaffoldRecord], m: int,
                iterations: int = WL_ITERATIONS) -> list[ScaffoldRecord]:
    """Frozen pool C: proxies removed, top-M by the best s_rank over proxies."""
    if not proxies:
        raise ValueError("no proxies")
    pkeys = {p.key for p in proxies}
    rest = [r for r in source_pool if r.key not in pkeys]
    if not 1 <= m <= len(rest):
        raise PoolTooSmall(f"pool of {len(rest)} cannot supply M={m}")
    best = {r.key: -math.inf for r in rest}
    for p in proxies:
        for c in rescore(p, rest, iterations):
            best[c.key] = max(best[c.key], c.score)
    return sorted(rest, key=lambda r: (-best[r.key], r.key))[:m]
