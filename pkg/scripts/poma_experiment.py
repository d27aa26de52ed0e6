"""Run the planted-transfer POMA experiment over several seeds.

Usage: python3 scripts/poma_experiment.py [--config configs/planted.json]
       [--seeds 0-9] [--out runs/poma]
Writes one JSONL record per seed and a JSON verdict with the medians.
"""

import argparse
import json
from pathlib import Path

from molood.config import load_config
from molood.experiments import poma_seed, poma_verdict
from molood.io import dump_json


def parse_seeds(text: str) -> list[int]:
    if "-" in text:
        a, b = text.split("-")
        return list(range(int(a), int(b) + 1))
    return [int(x) for x in text.split(",")]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/planted.json")
    ap.add_argument("--seeds", default="0-9")
    ap.add_argument("--out", default="runs/poma")
    args = ap.parse_args()
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    with open(out / "seeds.jsonl", "w") as fh:
        for seed in parse_seeds(args.seeds):
            r = poma_seed(cfg, seed)
            results.append(r)
            fh.write(json.dumps(json.loads(dump_json(r)), sort_keys=True) + "\n")
            fh.flush()
            imps = {p: round(s["ablations"]["full"]["mean_improvement"], 4)
                    for p, s in r["policies"].items()}
            print(f"seed {seed} ({r['seconds']:.0f}s): {imps}", flush=True)
    verdict = poma_verdict(results)
    (out / "verdict.json").write_text(dump_json(verdict))
    print(json.dumps(verdict, indent=1, sort_keys=True))


if __name__ == "__main__":
    main()
