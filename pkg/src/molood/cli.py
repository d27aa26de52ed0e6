"""Command line: ``bench build|audit``, ``train baseline``, ``poma run``, ``report``.

Every command writes one run directory holding its outputs and a
``manifest.json``. Downstream commands read the upstream directory,
verify its hashes and rebuild the workspace deterministically from the
stored dataset, config and seed.

Exit codes: 0 success, 1 other failure, 2 unreadable input or config,
3 infeasible clustering, 4 manifest hash mismatch, 5 run directory locked.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench.dataset import DatasetError, read_csv, write_csv
from .config import CONFIG_ENV, RunConfig, config_from_dict, load_config
from .encoder import load_model, save_model
from .errors import (BadConfig, InfeasibleQuota, ManifestMismatch, MoloodError, NotEnoughClusters,
                     RunLocked, TemplateParseError)
from .io import atomic_write, dump_json, sha256_bytes, write_jsonl
from .pipeline import (ABLATIONS, POLICIES, BaselineResult, Workspace, build_workspace,
                       load_dataset, run_policies, summarize, task_maes, train_baseline)
from .bench.split import molecule_split
from .runs import read_manifest, run_lock, verify_manifest, write_manifest
from .selector.policy import save_policy

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_INFEASIBLE, EXIT_MISMATCH, EXIT_LOCKED = 0, 1, 2, 3, 4, 5
SPLIT_MODES = ("strict", "scaffold", "random")


# --------------------------------------------------------------------------- helpers

def _config(args, upstream: dict | None = None) -> RunConfig:
    """``--config`` (or the env var) wins; otherwise the upstream snapshot; else defaults."""
    import os
    if args.config or os.environ.get(CONFIG_ENV):
        cfg = load_config(args.config)
    elif upstream is not None:
        cfg = config_from_dict(upstream["config"])
    else:
        cfg = RunConfig()
    return cfg


def _seed(args, cfg: RunConfig, upstream: dict | None = None) -> int:
    if args.seed is not None:
        return args.seed
    return upstream["seed"] if upstream is not None else cfg.seed


def _outputs_digest(manifest: dict) -> str:
    return sha256_bytes(dump_json(manifest["outputs"]).encode())


def _matrix_csv(labels: list[str], M: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([""] + labels)
    for lab, row in zip(labels, M):
        w.writerow([lab] + [f"{float(v):.6f}" for v in row])
    return buf.getvalue()


def _write(run_dir: Path, name: str, data, written: list[str]) -> None:
    atomic_write(run_dir / name, data)
    written.append(name)


def _fmt_table(header: list[str], rows: list[list]) -> str:
    cells = [header] + [[_cell(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _task_labels(tasks) -> dict[str, str]:
    return {t: f"task{i:02d}" for i, t in enumerate(sorted(tasks))}


# --------------------------------------------------------------------------- workspace reload

def _load_bench(bench_dir: Path) -> tuple[dict, RunConfig, int, Workspace]:
    manifest = verify_manifest(bench_dir)
    if manifest.get("command") != "bench build":
        raise ManifestMismatch(f"{bench_dir} is not a bench build directory")
    cfg = config_from_dict(manifest["config"])
    ds = read_csv(bench_dir / "dataset.csv")
    ws = build_workspace(ds, cfg, manifest["seed"])
    if sha256_bytes(dump_json(ws.split.to_json()).encode()) != manifest["outputs"]["split.json"]:
        raise ManifestMismatch(f"rebuilt split differs from {bench_dir / 'split.json'}")
    return manifest, cfg, manifest["seed"], ws


def _load_baseline(base_dir: Path):
    manifest = verify_manifest(base_dir)
    if manifest.get("command") != "train baseline":
        raise ManifestMismatch(f"{base_dir} is not a train baseline directory")
    bench_dir = Path(manifest["bench_dir"])
    bench_manifest, _, bench_seed, ws = _load_bench(bench_dir)
    if _outputs_digest(bench_manifest) != manifest["inputs"]["bench"]:
        raise ManifestMismatch(f"{bench_dir} changed since the baseline was trained")
    report = json.loads((base_dir / "report.json").read_text())
    roles, tasks = molecule_split(ws.split, report["split"], manifest["seed"],
                                  config_from_dict(manifest["config"]).task_threshold)
    result = BaselineResult(load_model(base_dir / "baseline.ckpt"),
                            load_model(base_dir / "shallow.ckpt"), [], roles["source"], tasks,
                            load_model(base_dir / "warm.ckpt"))
    return manifest, ws, result, report


# --------------------------------------------------------------------------- commands

def cmd_bench_build(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    spec = args.dataset or cfg.dataset
    cfg = replace(cfg, dataset=spec)
    out = Path(args.out)
    with run_lock(out):
        t0 = time.perf_counter()
        ds = load_dataset(spec, cfg.data_seed)
        written: list[str] = []
        tmp = out / "dataset.csv"
        write_csv(ds, tmp)
        written.append("dataset.csv")
        t1 = time.perf_counter()
        ws = build_workspace(ds, cfg, seed)
        t2 = time.perf_counter()
        split = ws.split
        aud = split.audit
        _write(out, "split.json", dump_json(split.to_json()), written)
        _write(out, "audit.json", dump_json(aud.to_json()), written)
        _write(out, "tanimoto.csv", _matrix_csv(aud.scaffold_keys, aud.tanimoto), written)
        _write(out, "w1.csv", _matrix_csv(aud.domains, aud.w1), written)
        rows = [[c, role, sum(r.size for r in cl), len(cl)]
                for c, (cl, role) in enumerate(zip(split.clusters, split.roles))]
        text = _fmt_table(["cluster", "role", "molecules", "scaffolds"], rows)
        text += (f"\nzero-shot tasks: {len(split.zero_shot_tasks)}\n"
                 f"cross-domain Tanimoto > 0.5 fraction: {aud.cross_fraction_above:.6f}\n"
                 f"separation audit: {'PASS' if aud.passed else 'FAIL'}\n")
        _write(out, "report.txt", text, written)
        write_manifest(out, "bench build", cfg.to_json(), seed,
                       {"dataset_spec": spec, "dataset": sha256_bytes(tmp.read_bytes())}, written,
                       {"load": t1 - t0, "split": t2 - t1})
    print(text, end="")
    return EXIT_OK


def cmd_bench_audit(args) -> int:
    bench_dir = Path(args.bench)
    manifest, cfg, seed, ws = _load_bench(bench_dir)
    aud = ws.split.audit
    roles = {r: ws.split.roles.count(r) for r in ("source", "validation", "target")}
    ok_cross = aud.cross_fraction_above == 0.0
    lines = [
        f"roles: {roles['source']} source / {roles['validation']} validation / "
        f"{roles['target']} target",
        f"W1 between domains: " + ", ".join(
            f"{a}-{b}={aud.w1[i, j]:.4f}" for i, a in enumerate(aud.domains)
            for j, b in enumerate(aud.domains) if i < j),
        f"cross-domain Tanimoto > 0.5 fraction: {aud.cross_fraction_above:.6f} "
        f"[{'PASS' if ok_cross else 'FAIL'}]",
        f"min W1 >= tau_dist ({aud.tau_dist}): {'PASS' if aud.passed else 'FAIL'}",
        "hashes: PASS",
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        with run_lock(args.out):
            atomic_write(Path(args.out) / "audit.txt", text)
    print(text, end="")
    return EXIT_OK


def cmd_train_baseline(args) -> int:
    bench_dir = Path(args.bench)
    bench_manifest, bench_cfg, bench_seed, ws = _load_bench(bench_dir)
    cfg = _config(args, bench_manifest)
    seed = _seed(args, cfg, bench_manifest)
    out = Path(args.out)
    with run_lock(out):
        t0 = time.perf_counter()
        res = train_baseline(ws, cfg, seed, args.split)
        t1 = time.perf_counter()
        maes = task_maes(res.model, ws, res.tasks)
        written: list[str] = []
        for name, model in (("baseline.ckpt", res.model), ("warm.ckpt", res.warm),
                            ("shallow.ckpt", res.shallow)):
            save_model(out / name, model)
            written.append(name)
        write_jsonl(out / "history.jsonl", res.history)
        written.append("history.jsonl")
        labels = _task_labels(maes)
        report = {"split": args.split, "epochs": cfg.baseline_epochs,
                  "tasks": {t: {"label": labels[t], "n": len(res.tasks[t]), "mae": maes[t]}
                            for t in sorted(maes)},
                  "mean_mae": float(np.mean(list(maes.values())))}
        _write(out, "report.json", dump_json(report), written)
        rows = [[labels[t], t, len(res.tasks[t]), maes[t]] for t in sorted(maes)]
        rows.append(["mean", "", sum(len(v) for v in res.tasks.values()), report["mean_mae"]])
        text = f"baseline ({args.split} split, {cfg.baseline_epochs} epochs)\n"
        text += _fmt_table(["task", "scaffold", "n", "MAE"], rows)
        _write(out, "report.txt", text, written)
        write_manifest(out, "train baseline", cfg.to_json(), seed,
                       {"bench": _outputs_digest(bench_manifest)}, written, {"train": t1 - t0},
                       {"bench_dir": str(bench_dir.resolve())})
    print(text, end="")
    return EXIT_OK


def cmd_poma_run(args) -> int:
    base_dir = Path(args.baseline)
    base_manifest, ws, baseline, base_report = _load_baseline(base_dir)
    cfg = _config(args, base_manifest)
    seed = _seed(args, cfg, base_manifest)
    policies = [p.strip() for p in args.policy.split(",") if p.strip()]
    ablations = (list(ABLATIONS) if args.ablations == "all"
                 else [a.strip() for a in args.ablations.split(",") if a.strip()])
    out = Path(args.out)
    with run_lock(out):
        t0 = time.perf_counter()
        runs = run_policies(ws, baseline, cfg, seed, policies, ablations, ablate=policies)
        t1 = time.perf_counter()
        base_maes = {t: v["mae"] for t, v in base_report["tasks"].items()}
        labels = _task_labels(base_maes)
        written: list[str] = []
        report = {"baseline": {"mean_mae": base_report["mean_mae"], "mae": base_maes},
                  "policies": {}}
        rows = []
        for run in runs:
            s = summarize(run, base_maes, ws, baseline.tasks)
            report["policies"][run.policy] = s
            if run.policy_state is not None:
                save_policy(out / "policy.ckpt", run.policy_state)
                write_jsonl(out / "rollouts.jsonl", run.policy_state.log)
                written += ["policy.ckpt", "rollouts.jsonl"]
            for abl, models in run.models.items():
                for task, model in sorted(models.items()):
                    name = f"models/{run.policy}/{abl.replace('/', '').replace(' ', '_')}/{labels[task]}.ckpt"
                    save_model(out / name, model)
                    written.append(name)
                a = s["ablations"][abl]
                ranks = a["collapse_rank"]
                rows.append([run.policy, abl, a["mean_mae"], 100.0 * a["mean_improvement"],
                             " ".join(f"{ranks[t][0]}->{ranks[t][1]}" for t in sorted(ranks))])
        _write(out, "report.json", dump_json(report), written)
        text = f"POMA zero-shot MAE (baseline mean {base_report['mean_mae']:.4f})\n"
        text += _fmt_table(["policy", "ablation", "mean MAE", "improve %", "collapse rank"], rows)
        for run in runs:
            for task, sel in sorted(run.selections.items()):
                text += f"{run.policy} {labels[task]}: {', '.join(sel.keys)}\n"
            for k, v in sorted(run.failures.items()):
                text += f"{run.policy} failed {k}: {v}\n"
        _write(out, "report.txt", text, written)
        write_manifest(out, "poma run", cfg.to_json(), seed,
                       {"baseline": _outputs_digest(base_manifest)}, written,
                       {"poma": t1 - t0}, {"baseline_dir": str(base_dir.resolve())})
    print(text, end="")
    return EXIT_OK


def _report_rows(run_dir: Path) -> tuple[dict, list[list]]:
    manifest = verify_manifest(run_dir)
    report = json.loads((run_dir / "report.json").read_text())
    rows = []
    if manifest["command"] == "train baseline":
        rows.append([run_dir.name, f"baseline/{report['split']}", report["mean_mae"], ""])
    elif manifest["command"] == "poma run":
        for pol, s in sorted(report["policies"].items()):
            for abl, a in sorted(s["ablations"].items()):
                rows.append([run_dir.name, f"{pol}/{abl}", a["mean_mae"],
                             f"{100.0 * a['mean_improvement']:+.2f}%"])
    return {"command": manifest["command"], "report": report}, rows


def cmd_report(args) -> int:
    rows, baselines = [], {}
    for d in args.runs:
        info, r = _report_rows(Path(d))
        rows += r
        if info["command"] == "train baseline":
            baselines.setdefault(info["report"]["split"], info["report"]["mean_mae"])
    header = ["run", "row", "mean MAE", "improve"]
    strict = baselines.get("strict")
    standard = baselines.get("scaffold", baselines.get("random"))
    if strict is not None and standard is not None and standard > 0:
        rows.append(["", "Degradation factor", strict / standard, f"{strict / standard:.2f}x"])
    text = _fmt_table(header, rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    if args.out:
        with run_lock(args.out):
            atomic_write(Path(args.out) / "report.txt", text)
            atomic_write(Path(args.out) / "report.csv", buf.getvalue())
    print(text, end="")
    return EXIT_OK


# --------------------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON config (env {CONFIG_ENV} overrides)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="run directory to write")

    p = argparse.ArgumentParser(prog="molood", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="group", required=True)

    bench = sub.add_parser("bench").add_subparsers(dest="cmd", required=True)
    b = bench.add_parser("build", parents=[common], help="cluster scaffolds into domains")
    b.add_argument("--dataset", help="CSV path or synthetic:<name>")
    b.set_defaults(func=cmd_bench_build, need_out=True)
    a = bench.add_parser("audit", parents=[common], help="re-verify a built benchmark")
    a.add_argument("--bench", required=True)
    a.set_defaults(func=cmd_bench_audit, need_out=False)

    train = sub.add_parser("train").add_subparsers(dest="cmd", required=True)
    t = train.add_parser("baseline", parents=[common], help="merged-source supervised baseline")
    t.add_argument("--bench", required=True)
    t.add_argument("--split", choices=SPLIT_MODES, default="strict")
    t.set_defaults(func=cmd_train_baseline, need_out=True)

    poma = sub.add_parser("poma").add_subparsers(dest="cmd", required=True)
    r = poma.add_parser("run", parents=[common], help="select sources and adapt")
    r.add_argument("--baseline", required=True)
    r.add_argument("--policy", default="grpo", help=f"comma list of {', '.join(POLICIES)}")
    r.add_argument("--ablations", default="full",
                   help=f"comma list of {', '.join(ABLATIONS)} or 'all'")
    r.set_defaults(func=cmd_poma_run, need_out=True)

    rep = sub.add_parser("report", parents=[common], help="merge run reports")
    rep.add_argument("runs", nargs="+")
    rep.set_defaults(func=cmd_report, need_out=False)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.need_out and not args.out:
        parser.error("--out is required")
    try:
        return args.func(args)
    except (DatasetError, BadConfig, TemplateParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (InfeasibleQuota, NotEnoughClusters) as exc:
        print(f"error: infeasible clustering: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ManifestMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except RunLocked as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LOCKED
    except (MoloodError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
