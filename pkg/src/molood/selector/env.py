"""Proxy environment: rollout rewards from short adaptations on proxy targets.

A rollout copies the warm encoder, adapts it on the selected candidates with
the proxy molecules as the unlabeled target, then scores the proxy MAE. The
reward is ``MAE_base - MAE`` where ``MAE_base`` comes from the same recipe on
the whole candidate pool with alignment switched off, computed once per proxy.

Proxy labels sit in :class:`SealedLabels` and are revealed only after the
adaptation finishes. Real targets enter as fingerprints only.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..adapt import AdaptConfig, SourceAssembly, adapt_run, predict
from ..bench.descriptors import ScaffoldRecord
from ..chemsim import Fingerprint
from ..encoder import EncoderModel
from ..sets import LabeledSet, SealedLabels, TensorStore, UnlabeledSet
from .policy import Context
from .tsec import Candidate, rescore, select_proxies, shared_pool, state_matrix


@dataclass(frozen=True)
class EnvConfig:
    n_proxies: int = 3
    pool_size: int = 50
    lam: float = 0.3
    tau_sim: float = 0.45
    max_group_samples: int | None = None
    max_proxy_samples: int | None = None
    seed: int = 0


def _subsample(ids: list[str], cap: int | None, seed: int, tag: str) -> list[str]:
    ids = sorted(ids)
    if cap is None or len(ids) <= cap:
        return ids
    rng = np.random.default_rng([seed, int(hashlib.sha256(tag.encode()).hexdigest()[:8], 16)])
    return sorted(ids[i] for i in rng.choice(len(ids), cap, replace=False))


@dataclass
class ProxyTarget:
    record: ScaffoldRecord
    molecules: UnlabeledSet
    labels: SealedLabels
    pool: list[Candidate]
    states: np.ndarray


class ProxyEnvironment:
    def __init__(self, store: TensorStore, source_pool: Sequence[ScaffoldRecord],
                 target_fps: Sequence[Fingerprint], warm: EncoderModel, adapt_cfg: AdaptConfig,
                 cfg: EnvConfig = EnvConfig(), proxies: Sequence[ScaffoldRecord] | None = None):
        self.cfg = cfg
        self.adapt_cfg = adapt_cfg
        self.warm = warm.copy()
        chosen = list(proxies) if proxies is not None else select_proxies(
            source_pool, target_fps, cfg.n_proxies, cfg.lam, cfg.tau_sim)
        chosen_keys = {r.key for r in chosen}
        self.candidates = [r for r in source_pool if r.key not in chosen_keys]
        # one frozen pool shared by every proxy and by inference
        self.pool = shared_pool(chosen, source_pool, cfg.pool_size)
        self._groups: dict[str, LabeledSet] = {}
        self._store = store
        self.proxies: list[ProxyTarget] = []
        for r in chosen:
            ids = _subsample(r.members, cfg.max_proxy_samples, cfg.seed, r.key)
            labeled = store.labeled(ids, r.key)
            pool = rescore(r, self.pool)
            self.proxies.append(ProxyTarget(r, labeled.strip(), SealedLabels(labeled.labels),
                                            pool, state_matrix(r.fingerprint, pool)))
        self._base: dict[int, float] = {}
        self._cache: dict[tuple[int, bytes, bool, bool], float] = {}
        self.rollouts_run = 0

    @property
    def m(self) -> int:
        return len(self.pool)

    @property
    def proxy_keys(self) -> list[str]:
        return [p.record.key for p in self.proxies]

    def group(self, rec: ScaffoldRecord) -> LabeledSet:
        g = self._groups.get(rec.key)
        if g is None:
            ids = _subsample(rec.members, self.cfg.max_group_samples, self.cfg.seed, rec.key)
            g = self._groups[rec.key] = self._store.labeled(ids, rec.key)
        return g

    def context(self, step: int) -> Context:
        k = step % len(self.proxies)
        p = self.proxies[k]
        return Context(k, p.states, [c.key for c in p.pool])

    def _rollout_seed(self, ctx_id: int, bits: np.ndarray, align: bool) -> int:
        h = hashlib.sha256(bytes(bits.astype(np.uint8)) + bytes([ctx_id % 256, int(align)]))
        return int(np.random.SeedSequence([self.cfg.seed, int(h.hexdigest()[:8], 16)])
                   .generate_state(1)[0])

    def adapted_mae(self, ctx_id: int, bits: np.ndarray, align: bool = True,
                    merged: bool = False) -> float:
        """Proxy MAE after adapting the warm model on the selected candidates."""
        bits = np.asarray(bits, dtype=np.uint8)
        key = (ctx_id, bits.tobytes(), align, merged)
        if key in self._cache:
            return self._cache[key]
        proxy = self.proxies[ctx_id]
        sel = [c for c, b in zip(proxy.pool, bits) if b]
        if not sel:
            raise ValueError("empty selection")
        groups = [self.group(c.record) for c in sel]
        if merged:
            assembly = SourceAssembly([LabeledSet.merge(groups, "merged")], [1.0])
        else:
            assembly = SourceAssembly.from_scores(groups, [c.score for c in sel],
                                                  [c.key for c in sel])
        cfg = replace(self.adapt_cfg, seed=self._rollout_seed(ctx_id, bits, align),
                      align_mol=self.adapt_cfg.align_mol and align,
                      align_sub=self.adapt_cfg.align_sub and align, track_rank=False)
        model, _ = adapt_run(self.warm.copy(), assembly, proxy.molecules if align else None, cfg)
        pred = predict(model, proxy.molecules)
        mae = float(np.abs(pred - proxy.labels.reveal()).mean())
        self.rollouts_run += 1
        self._cache[key] = mae
        return mae

    def mae_base(self, ctx_id: int) -> float:
        """Warm model fine-tuned on the merged full pool, no alignment; cached."""
        if ctx_id not in self._base:
            ones = np.ones(len(self.proxies[ctx_id].pool), dtype=np.uint8)
            self._base[ctx_id] = self.adapted_mae(ctx_id, ones, align=False, merged=True)
        return self._base[ctx_id]

    def reward(self, ctx: Context, bits: np.ndarray) -> float:
        return rollout_reward(bits, self, ctx.id)


def rollout_reward(action: np.ndarray, env: ProxyEnvironment, ctx_id: int = 0,
                   align: bool = True, merged: bool = False) -> float:
    return env.mae_base(ctx_id) - env.adapted_mae(ctx_id, action, align, merged)
