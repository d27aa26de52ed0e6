"""Strict-cluster vs random-split baseline MAE over several seeds.

Usage: python3 scripts/degradation_experiment.py [--config configs/desk.json]
       [--seeds 0-9] [--out runs/degradation]
Writes one JSONL record per seed and a summary with the minimum ratio.
"""

import argparse
import json
from pathlib import Path

from molood.config import load_config
from molood.experiments import degradation_seed
from molood.io import dump_json


def parse_seeds(text: str) -> list[int]:
    if "-" in text:
        a, b = text.split("-")
        return list(range(int(a), int(b) + 1))
    return [int(x) for x in text.split(",")]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/desk.json")
    ap.add_argument("--seeds", default="0-9")
    ap.add_argument("--out", default="runs/degradation")
    args = ap.parse_args()
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    with open(out / "seeds.jsonl", "w") as fh:
        for seed in parse_seeds(args.seeds):
            r = degradation_seed(cfg, seed)
            results.append(r)
            fh.write(json.dumps(json.loads(dump_json(r)), sort_keys=True) + "\n")
            fh.flush()
            print(f"seed {seed}: strict {r['strict']:.4f} random {r['random']:.4f} "
                  f"ratio {r['ratio']:.2f} ({r['seconds']:.0f}s)", flush=True)
    ratios = [r["ratio"] for r in results]
    summary = {"min_ratio": min(ratios), "ratios": ratios, "passes_2x": min(ratios) >= 2.0}
    (out / "summary.json").write_text(dump_json(summary))
    print(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
