#!/usr/bin/env python3
"""Run the whole pipeline on a generated synthetic city and print the report.

Generates a grid network with noisy GPS traces and a full answer key, runs
every stage through the CLI entry point, then summarizes model-vs-baseline
accuracy from the evaluation report.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from opmodenet import cli
from opmodenet.synth import SyntheticSpec, generate


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="experiments/synthetic", type=Path)
    parser.add_argument("--traces", default=150, type=int)
    parser.add_argument("--noise-m", default=10.0, type=float)
    parser.add_argument("--seed", default=1, type=int)
    parser.add_argument("--epochs", default=200, type=int)
    parser.add_argument("--force", action="store_true", help="ignore stage caches")
    args = parser.parse_args()

    data = args.workdir / "data"
    if not (data / "answer_key.json").exists():
        print(f"generating fixture in {data} ...")
        generate(
            SyntheticSpec(n_traces=args.traces, noise_sigma_m=args.noise_m, seed=args.seed),
            data,
        )

    out = args.workdir / "out"
    config_path = args.workdir / "config.yaml"
    config_path.write_text(
        yaml.safe_dump(
            {
                "seed": args.seed,
                "paths": {
                    "network": str(data / "network.json"),
                    "traces_dir": str(data / "traces"),
                    "elevation": str(data / "elevation.csv"),
                    "attributes": str(data / "attributes.csv"),
                    "embeddings": str(data / "embeddings.csv"),
                    "output_dir": str(out),
                },
                "training": {"epochs": args.epochs},
            }
        )
    )

    argv = ["run-all", "--config", str(config_path), "-v"]
    if args.force:
        argv.append("--force")
    code = cli.main(argv)
    if code != 0:
        return code

    report = json.loads((out / "report.json").read_text())
    print(f"\n=== evaluation over {report['opmode']['n_links']} links ===")
    print(f"{'bin':>4} {'model rmse':>11} {'base rmse':>11} {'improvement':>12}")
    for row in report["opmode"]["bins"]:
        imp = row["rmse_improvement"]
        print(
            f"{row['bin_id']:>4} {row['model_rmse']:>11.4f} {row['baseline_rmse']:>11.4f} "
            f"{imp:>11.1%}" if imp is not None else f"{row['bin_id']:>4}  (baseline rmse 0)"
        )
    print(f"\n{'pollutant':>10} {'model rmse':>11} {'base rmse':>11} {'improvement':>12}")
    for row in report["emissions"]["pollutants"]:
        imp = row["rmse_improvement"]
        imp_text = f"{imp:.1%}" if imp is not None else "n/a"
        print(
            f"{row['pollutant']:>10} {row['model_rmse']:>11.1f} "
            f"{row['baseline_rmse']:>11.1f} {imp_text:>12}"
        )
    print(f"\nartifacts in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
