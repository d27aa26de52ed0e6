"""End-to-end stages shared by the command line and the experiment scripts.

Stage order: benchmark build -> merged-source baseline -> retrieval, policy
training and subset inference -> per-task fine-tuning -> zero-shot MAE.
Real-target labels are read only by :func:`task_maes`, after every model
that will be evaluated is final.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .adapt import SourceAssembly, adapt_run, predict, target_rank, train_supervised
from .bench.dataset import Dataset, read_csv
from .bench.descriptors import ScaffoldRecord, build_scaffolds
from .bench.split import DomainSplit, build_split, molecule_split
from .bench.synth import load_gen_config, synth_dataset
from .config import RunConfig
from .encoder import EncoderModel, init_encoder
from .errors import UnknownPolicy
from .selector.baselines import HEURISTICS, SelectorInputs, baseline_selectors
from .selector.env import ProxyEnvironment, _subsample
from .selector.policy import PolicyState, infer_select, init_policy, train_policy
from .selector.tsec import Candidate, rescore, select_proxies, shared_pool, state_matrix
from .sets import LabeledSet, TensorStore, UnlabeledSet

POLICIES = ("grpo",) + HEURISTICS
ABLATIONS = {"full": (True, True), "w/o mol": (False, True), "w/o sub": (True, False),
             "w/o both": (False, False)}


def load_dataset(spec: str, data_seed: int = 0) -> Dataset:
    """``synthetic:<name>`` generates a shipped config; anything else is a CSV path."""
    if spec.startswith("synthetic:"):
        return synth_dataset(load_gen_config(spec.split(":", 1)[1]), data_seed)
    return read_csv(Path(spec))


@dataclass
class Workspace:
    dataset: Dataset
    store: TensorStore
    kept: list[ScaffoldRecord]
    excluded: list[ScaffoldRecord]
    split: DomainSplit


def build_workspace(ds: Dataset, cfg: RunConfig, seed: int) -> Workspace:
    kept, excluded = build_scaffolds(ds, cfg.min_members)
    split = build_split(kept, cfg.split_config(), seed, excluded)
    return Workspace(ds, TensorStore(ds), kept, excluded, split)


# --------------------------------------------------------------------------- baseline

@dataclass
class BaselineResult:
    model: EncoderModel
    shallow: EncoderModel
    history: list[dict]
    train_ids: list[str]
    tasks: dict[str, list[str]]
    warm: EncoderModel | None = None


def train_baseline(ws: Workspace, cfg: RunConfig, seed: int, mode: str = "strict") -> BaselineResult:
    """Merged-source supervised training with snapshots at the warm and shallow epochs."""
    roles, tasks = molecule_split(ws.split, mode, seed, cfg.task_threshold)
    data = ws.store.labeled(roles["source"], "source")
    model = init_encoder(cfg.encoder_config(), seed)
    model.set_label_scale(data.labels)
    marks = sorted({min(cfg.warm_epochs, cfg.baseline_epochs),
                    min(cfg.shallow_epochs, cfg.baseline_epochs), cfg.baseline_epochs})
    snaps, history, done = {}, [], 0
    for seg, mark in enumerate(marks):
        _, h = train_supervised(model, data, mark - done, cfg.adapt_config(0, seed + seg))
        history += h
        done = mark
        snaps[mark] = model.copy()
    return BaselineResult(model, snaps[min(cfg.shallow_epochs, cfg.baseline_epochs)], history,
                          roles["source"], tasks, snaps[min(cfg.warm_epochs, cfg.baseline_epochs)])


def task_maes(model_for_task, ws: Workspace, tasks: dict[str, list[str]]) -> dict[str, float]:
    """MAE per task; ``model_for_task`` is a model or a task-name -> model mapping."""
    out = {}
    for name, ids in tasks.items():
        m = model_for_task[name] if isinstance(model_for_task, dict) else model_for_task
        if m is None:
            continue
        labeled = ws.store.labeled(ids)
        out[name] = float(np.abs(predict(m, labeled) - labeled.labels).mean())
    return out


# --------------------------------------------------------------------------- POMA

@dataclass
class TaskSelection:
    task: str
    pool: list[Candidate]
    selected: list[int]

    @property
    def keys(self) -> list[str]:
        return [self.pool[i].key for i in self.selected]


@dataclass
class PolicyRun:
    policy: str
    selections: dict[str, TaskSelection] = field(default_factory=dict)
    models: dict[str, dict[str, EncoderModel]] = field(default_factory=dict)  # ablation -> task
    ranks: dict[str, dict[str, tuple[int, int]]] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)
    policy_state: PolicyState | None = None
    proxies: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)


def task_records(ws: Workspace, tasks: dict[str, list[str]]) -> dict[str, ScaffoldRecord]:
    by_key = ws.split.by_key
    return {name: by_key[name] for name in tasks if name in by_key}


def _group(ws: Workspace, rec: ScaffoldRecord, cfg: RunConfig, seed: int) -> LabeledSet:
    return ws.store.labeled(_subsample(rec.members, cfg.max_group_samples, seed, rec.key), rec.key)


@dataclass
class Retrieval:
    """Proxies and the frozen candidate pool, shared by every policy."""

    proxies: list[ScaffoldRecord]
    pool: list[ScaffoldRecord]


def retrieve(ws: Workspace, cfg: RunConfig, targets: list[ScaffoldRecord]) -> Retrieval:
    source = ws.split.records("source")
    proxies = select_proxies(source, [t.fingerprint for t in targets], cfg.n_proxies,
                             cfg.hub_lambda, cfg.tau_sim)
    m = min(cfg.pool_size, len(source) - len(proxies))
    return Retrieval(proxies, shared_pool(proxies, source, m))


def train_grpo(ws: Workspace, cfg: RunConfig, seed: int, targets: list[ScaffoldRecord],
               retrieval: Retrieval | None = None):
    """Warm model on source minus proxies, proxy environment, policy training."""
    source = ws.split.records("source")
    retrieval = retrieval or retrieve(ws, cfg, targets)
    pkeys = {p.key for p in retrieval.proxies}
    warm_ids = [m for r in source if r.key not in pkeys for m in r.members]
    warm_data = ws.store.labeled(warm_ids)
    warm = init_encoder(cfg.encoder_config(), seed)
    warm.set_label_scale(warm_data.labels)
    train_supervised(warm, warm_data, cfg.warm_epochs, cfg.adapt_config(0, seed))
    m = len(retrieval.pool)
    env_cfg = replace(cfg.env_config(seed), pool_size=m)
    env = ProxyEnvironment(ws.store, source, [t.fingerprint for t in targets], warm,
                           cfg.adapt_config(cfg.e_proxy, seed), env_cfg, retrieval.proxies)
    pcfg = cfg.policy_config()
    k = min(cfg.subset_size, m)
    state = PolicyState(init_policy(pcfg, seed, k / m if k < m else 0.5), pcfg)
    train_policy(env, state, cfg.grpo_steps, seed)
    return state, env


def run_policies(ws: Workspace, baseline: BaselineResult, cfg: RunConfig, seed: int,
                 policies=("grpo",), ablations=("full",), ablate=("grpo",)) -> list[PolicyRun]:
    """Select, fine-tune and collect models for each policy.

    ``full`` runs for every policy; the other ablations only for the
    policies listed in ``ablate``. Identical selections share one
    fine-tuned model per ablation.
    """
    for p in policies:
        if p not in POLICIES:
            raise UnknownPolicy(f"unknown policy {p!r}; expected one of {', '.join(POLICIES)}")
    for a in ablations:
        if a not in ABLATIONS:
            raise ValueError(f"unknown ablation {a!r}")
    targets = task_records(ws, baseline.tasks)
    retrieval = retrieve(ws, cfg, list(targets.values()))
    k = min(cfg.subset_size, len(retrieval.pool))
    pools = {name: rescore(rec, retrieval.pool) for name, rec in targets.items()}
    runs = []
    cache: dict[tuple, tuple] = {}
    for policy in policies:
        run = PolicyRun(policy, proxies=[p.key for p in retrieval.proxies])
        t0 = time.perf_counter()
        if policy == "grpo":
            state, env = train_grpo(ws, cfg, seed, list(targets.values()), retrieval)
            run.policy_state = state
            run.timings["rollouts"] = env.rollouts_run
        run.timings["select_s"] = time.perf_counter() - t0
        for name, rec in targets.items():
            pool = pools[name]
            if policy == "grpo":
                sel = infer_select(run.policy_state.net, state_matrix(rec.fingerprint, pool),
                                   [c.key for c in pool], k)
            else:
                inputs = SelectorInputs(
                    rec.descriptor, ws.store.unlabeled(baseline.tasks[name]), baseline.shallow,
                    baseline.model,
                    lambda c: ws.store.unlabeled(_subsample(c.record.members, cfg.max_group_samples,
                                                            seed, c.key)),
                    seed)
                sel = baseline_selectors(policy, pool, k, inputs)
            run.selections[name] = TaskSelection(name, pool, sel)
        t1 = time.perf_counter()
        for abl in ablations:
            if abl != "full" and policy not in ablate:
                continue
            run.models[abl], run.ranks[abl] = {}, {}
            mol, sub = ABLATIONS[abl]
            for name, selection in run.selections.items():
                key = (abl, name, tuple(selection.keys))
                try:
                    if key not in cache:
                        cache[key] = finetune(ws, baseline, cfg, seed, selection, mol, sub)
                    model, rank = cache[key]
                except (ArithmeticError, ValueError) as exc:  # isolate per-task failures
                    run.failures[f"{abl}:{name}"] = str(exc)
                    continue
                run.models[abl][name] = model
                run.ranks[abl][name] = rank
        run.timings["finetune_s"] = time.perf_counter() - t1
        runs.append(run)
    return runs


def finetune(ws: Workspace, baseline: BaselineResult, cfg: RunConfig, seed: int,
             selection: TaskSelection, align_mol: bool = True, align_sub: bool = True):
    """Train the backbone on the selected sources toward one target task.

    The backbone resumes from the merged-source warm checkpoint (the end of
    supervised warm-up) and trains on the composite loss for
    ``finetune_epochs``. Collapse rank is reported for the unaligned baseline
    and for the adapted model.
    """
    chosen = [selection.pool[i] for i in selection.selected]
    groups = [_group(ws, c.record, cfg, seed) for c in chosen]
    assembly = SourceAssembly.from_scores(groups, [c.score for c in chosen], [c.key for c in chosen])
    target = ws.store.unlabeled(baseline.tasks[selection.task], selection.task)
    model = (baseline.warm or baseline.model).copy()
    acfg = replace(cfg.adapt_config(cfg.finetune_epochs, seed, align_mol, align_sub),
                   track_rank=False)
    before = target_rank(baseline.model, target)
    adapt_run(model, assembly, target, acfg)
    return model, (before, target_rank(model, target))


def improvement(base: float, new: float) -> float:
    return (base - new) / base if base > 0 else 0.0


def summarize(run: PolicyRun, base_maes: dict[str, float], ws: Workspace,
              tasks: dict[str, list[str]]) -> dict:
    """Per-ablation task MAEs and the mean improvement over the baseline."""
    out = {"policy": run.policy, "proxies": run.proxies, "failures": run.failures,
           "selections": {t: s.keys for t, s in run.selections.items()}, "ablations": {}}
    for abl, models in run.models.items():
        maes = task_maes(models, ws, {t: tasks[t] for t in models})
        imps = {t: improvement(base_maes[t], m) for t, m in maes.items()}
        out["ablations"][abl] = {
            "mae": maes,
            "mean_mae": float(np.mean(list(maes.values()))) if maes else math.nan,
            "improvement": imps,
            "mean_improvement": (improvement(float(np.mean([base_maes[t] for t in maes])),
                                             float(np.mean(list(maes.values()))))
                                 if maes else math.nan),
            "collapse_rank": {t: list(r) for t, r in run.ranks[abl].items()},
        }
    return out
