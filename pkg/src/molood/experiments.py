"""Multi-seed experiment drivers shared by ``scripts/`` and the acceptance tests."""

from __future__ import annotations

import time
from statistics import median

import numpy as np

from .config import RunConfig
from .pipeline import (ABLATIONS, POLICIES, build_workspace, load_dataset, run_policies,
                       summarize, task_maes, train_baseline)


def mean_mae(maes: dict[str, float]) -> float:
    return float(np.mean(list(maes.values())))


def degradation_seed(cfg: RunConfig, seed: int) -> dict:
    """Strict-cluster and random-split baselines trained on the same workspace."""
    t0 = time.perf_counter()
    ws = build_workspace(load_dataset(cfg.dataset, cfg.data_seed), cfg, seed)
    out = {"seed": seed}
    for mode in ("strict", "random"):
        b = train_baseline(ws, cfg, seed, mode)
        out[mode] = mean_mae(task_maes(b.model, ws, b.tasks))
    out["ratio"] = out["strict"] / out["random"]
    out["seconds"] = time.perf_counter() - t0
    return out


def poma_seed(cfg: RunConfig, seed: int, policies=POLICIES, ablations=tuple(ABLATIONS)) -> dict:
    """Baseline, every selection policy and the alignment ablations for one seed."""
    t0 = time.perf_counter()
    ws = build_workspace(load_dataset(cfg.dataset, cfg.data_seed), cfg, seed)
    base = train_baseline(ws, cfg, seed)
    base_maes = task_maes(base.model, ws, base.tasks)
    runs = run_policies(ws, base, cfg, seed, policies, ablations)
    out = {"seed": seed, "baseline": {"mae": base_maes, "mean_mae": mean_mae(base_maes)},
           "policies": {}}
    for run in runs:
        s = summarize(run, base_maes, ws, base.tasks)
        s["timings"] = run.timings
        out["policies"][run.policy] = s
    out["seconds"] = time.perf_counter() - t0
    return out


def improvement_table(results: list[dict]) -> dict[str, dict[str, list[float]]]:
    """policy -> ablation -> per-seed mean improvement."""
    table: dict[str, dict[str, list[float]]] = {}
    for r in results:
        for pol, s in r["policies"].items():
            for abl, v in s["ablations"].items():
                table.setdefault(pol, {}).setdefault(abl, []).append(v["mean_improvement"])
    return table


def poma_verdict(results: list[dict], threshold: float = 0.03) -> dict:
    """Median checks: grpo above threshold, above every heuristic, above its ablations."""
    table = improvement_table(results)
    med = {p: {a: median(v) for a, v in abls.items()} for p, abls in table.items()}
    g = med["grpo"]["full"]
    heur = {p: m["full"] for p, m in med.items() if p != "grpo"}
    abl = {a: v for a, v in med["grpo"].items() if a in ("w/o mol", "w/o sub")}
    return {
        "medians": med,
        "grpo_median": g,
        "meets_threshold": g >= threshold,
        "beats_heuristics": {p: g > v for p, v in heur.items()},
        "ablations_below_full": {a: v < g for a, v in abl.items()},
    }
