"""Hierarchical clustering into domains, asymmetric partitioning and separation audit."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..chemsim import tanimoto_matrix
from ..errors import NotEnoughClusters
from .clustering import N_LEVELS, allocate_quotas, assign_levels, kmeanspp, zscore, zscore_per_level
from .descriptors import ScaffoldRecord, descriptor_matrix
from .separation import sliced_w1

ROLES = ("source", "validation", "target")


@dataclass
class SplitConfig:
    k_total: int = 12
    n_source: int = 6
    task_threshold: int = 200
    max_tasks: int = 15
    alpha_comp: float = 0.5
    tau_dist: float = 0.0
    n_proj: int = 64
    tanimoto_cutoff: float = 0.5


@dataclass
class SeparationAudit:
    domains: list[str]
    w1: np.ndarray
    tanimoto: np.ndarray  # scaffold x scaffold, rows ordered as ``scaffold_keys``
    scaffold_keys: list[str]
    scaffold_roles: list[str]
    cross_fraction_above: float
    tau_dist: float
    passed: bool

    def to_json(self) -> dict:
        return {
            "domains": self.domains,
            "w1": self.w1.round(12).tolist(),
            "cross_fraction_above": self.cross_fraction_above,
            "tau_dist": self.tau_dist,
            "pass": self.passed,
        }


@dataclass
class DomainSplit:
    clusters: list[list[ScaffoldRecord]]
    roles: list[str]
    zero_shot_tasks: list[str]
    audit: SeparationAudit | None = None
    excluded: list[ScaffoldRecord] = field(default_factory=list)

    def records(self, role: str | None = None) -> list[ScaffoldRecord]:
        out = []
        for cl, r in zip(self.clusters, self.roles):
            if role is None or r == role:
                out.extend(cl)
        return out

    def keys(self, role: str) -> set[str]:
        return {r.key for r in self.records(role)}

    def ids(self, role: str) -> list[str]:
        return [m for r in self.records(role) for m in r.members]

    @property
    def by_key(self) -> dict[str, ScaffoldRecord]:
        return {r.key: r for r in self.records()} | {r.key: r for r in self.excluded}

    def to_json(self) -> dict:
        return {
            "clusters": [
                {"id": c, "role": role, "size": sum(r.size for r in cl),
                 "scaffolds": [{"key": r.key, "level": r.level, "members": r.members}
                               for r in cl]}
                for c, (cl, role) in enumerate(zip(self.clusters, self.roles))
            ],
            "zero_shot_tasks": self.zero_shot_tasks,
            "excluded": [{"key": r.key, "members": r.members} for r in self.excluded],
            "audit": self.audit.to_json() if self.audit else None,
        }


def cluster_scaffolds(records: list[ScaffoldRecord], k_total: int, alpha_comp: float,
                      seed: int) -> list[list[ScaffoldRecord]]:
    """Per-level z-score + K-Means++ under quota; clusters ordered by level then index."""
    levels = assign_levels(records)
    for r, lv in zip(records, levels):
        r.level = lv
    X = zscore_per_level(descriptor_matrix(records), levels)
    sizes = [levels.count(lv) for lv in range(N_LEVELS)]
    quotas = allocate_quotas(sizes, k_total, alpha_comp)
    seeds = np.random.SeedSequence(seed).spawn(N_LEVELS)
    clusters: list[list[ScaffoldRecord]] = []
    for lv in range(N_LEVELS):
        idx = [i for i, l in enumerate(levels) if l == lv]
        if not idx:
            continue
        labels, _, _ = kmeanspp(X[idx], quotas[lv], int(seeds[lv].generate_state(1)[0]))
        for c in range(quotas[lv]):
            members = [records[idx[i]] for i in np.where(labels == c)[0]]
            for r in members:
                r.cluster = len(clusters)
            clusters.append(members)
    return clusters


def partition(clusters: list[list[ScaffoldRecord]], cfg: SplitConfig) -> DomainSplit:
    if len(clusters) < 3:
        raise NotEnoughClusters(f"need at least 3 clusters, got {len(clusters)}")
    if not 1 <= cfg.n_source <= len(clusters) - 2:
        raise NotEnoughClusters(f"n_source={cfg.n_source} leaves no validation/target cluster")
    size = [sum(r.size for r in cl) for cl in clusters]
    order = sorted(range(len(clusters)), key=lambda c: (-size[c], c))
    roles = [""] * len(clusters)
    for rank, c in enumerate(order):
        roles[c] = "source" if rank < cfg.n_source else (
            "validation" if rank == cfg.n_source else "target")
    for cl, role in zip(clusters, roles):
        for r in cl:
            r.domain_role = role
    targets = [r for cl, role in zip(clusters, roles) if role == "target" for r in cl]
    tasks = sorted((r for r in targets if r.size >= cfg.task_threshold),
                   key=lambda r: (-r.size, r.key))[:cfg.max_tasks]
    return DomainSplit(clusters, roles, [r.key for r in tasks])


def audit(split: DomainSplit, cfg: SplitConfig | None = None, seed: int = 42) -> SeparationAudit:
    cfg = cfg or SplitConfig()
    recs = sorted(split.records(), key=lambda r: (ROLES.index(r.domain_role), r.cluster, r.key))
    X = zscore(descriptor_matrix(recs))
    roles = [r.domain_role for r in recs]
    domains = [d for d in ROLES if d in roles]
    W = np.zeros((len(domains), len(domains)))
    for a in range(len(domains)):
        for b in range(a + 1, len(domains)):
            xa = X[[i for i, r in enumerate(roles) if r == domains[a]]]
            xb = X[[i for i, r in enumerate(roles) if r == domains[b]]]
            W[a, b] = W[b, a] = sliced_w1(xa, xb, cfg.n_proj, seed)
    T = tanimoto_matrix([r.fingerprint for r in recs], [r.fingerprint for r in recs])
    src = [i for i, r in enumerate(roles) if r == "source"]
    tgt = [i for i, r in enumerate(roles) if r == "target"]
    cross = T[np.ix_(src, tgt)]
    frac = float((cross > cfg.tanimoto_cutoff).mean()) if cross.size else 0.0
    off = W[~np.eye(len(domains), dtype=bool)]
    min_w1 = float(off.min()) if off.size else 0.0
    result = SeparationAudit(domains, W, T, [r.key for r in recs], roles, frac,
                             cfg.tau_dist, bool(min_w1 >= cfg.tau_dist))
    split.audit = result
    return result


def build_split(records: list[ScaffoldRecord], cfg: SplitConfig, seed: int,
                excluded: list[ScaffoldRecord] | None = None) -> DomainSplit:
    clusters = cluster_scaffolds(records, cfg.k_total, cfg.alpha_comp, seed)
    split = partition(clusters, cfg)
    split.excluded = list(excluded or [])
    audit(split, cfg, seed)
    return split


def molecule_split(split: DomainSplit, mode: str, seed: int,
                   task_threshold: int | None = None) -> tuple[dict[str, list[str]], dict[str, list[str]]]:
    """Molecule ids per role plus evaluation tasks for a split protocol.

    ``strict`` uses the cluster roles; ``scaffold`` assigns whole scaffolds
    at random to match the strict role sizes; ``random`` assigns molecules
    at random with the same sizes. Tasks map a name to its member ids.
    """
    sizes = {role: len(split.ids(role)) for role in ROLES}
    rng = np.random.default_rng(seed)
    if mode == "strict":
        by_key = split.by_key
        roles = {role: split.ids(role) for role in ROLES}
        tasks = {k: list(by_key[k].members) for k in split.zero_shot_tasks}
        if not tasks:
            tasks = {"target": roles["target"]}
        return roles, tasks
    if mode == "random":
        ids = sorted(split.ids("source") + split.ids("validation") + split.ids("target"))
        perm = [ids[i] for i in rng.permutation(len(ids))]
        a, b = sizes["source"], sizes["source"] + sizes["validation"]
        roles = {"source": perm[:a], "validation": perm[a:b], "target": perm[b:]}
        return roles, {"target": roles["target"]}
    if mode == "scaffold":
        recs = sorted(split.records(), key=lambda r: r.key)
        recs = [recs[i] for i in rng.permutation(len(recs))]
        roles = {r: [] for r in ROLES}
        target_recs = []
        for r in recs:
            if len(roles["source"]) < sizes["source"]:
                roles["source"].extend(r.members)
            elif len(roles["validation"]) < sizes["validation"]:
                roles["validation"].extend(r.members)
            else:
                roles["target"].extend(r.members)
                target_recs.append(r)
        thr = task_threshold if task_threshold is not None else 0
        tasks = {r.key: list(r.members) for r in target_recs if r.size >= thr}
        return roles, tasks or {"target": roles["target"]}
    raise ValueError(f"unknown split mode {mode!r}")
