#!/usr/bin/env python3
"""Scaling-robustness experiment.

A normal-size (cylinder) benchmark is shrunk to pedestrian scale with
rate 0.5; the full model and the ablated baseline are retrained per setting
and compared by their original-minus-scaled Success gap. Results land in
<out>/{original,scaled}/ablation.csv plus a gap summary.
"""

import argparse
import csv
import json
import sys
import tempfile
from pathlib import Path

from smalltrack.cli import main as cli_main

BENCH = {"num_sequences": 18, "frames_per_seq": 30, "target_kind": "cylinder",
         "clutter_count": 6, "point_density": 60, "ground_points": 400}


def read_success(csv_path: Path) -> dict[str, list[float]]:
    rows: dict[str, list[float]] = {}
    with open(csv_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["variant"], []).append(float(row["success"]))
    return rows


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/scaling")
    parser.add_argument("--seed", type=int, default=77)
    parser.add_argument("--rate", type=float, default=0.5)
    parser.add_argument("--steps", type=int, default=400)
    parser.add_argument("--seeds", default="0,1,2")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = out / "data"
    scaled = out / "data_scaled"
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(BENCH, fh)
        spec = fh.name
    if not (data / "seq_0000" / "manifest.json").exists():
        if code := cli_main(["gen", "--seed", str(args.seed), "--spec", spec,
                             "--out", str(data)]):
            return code
        if code := cli_main(["scale", "--in", str(data), "--rate", str(args.rate),
                             "--out", str(scaled)]):
            return code

    for name, src in (("original", data), ("scaled", scaled)):
        if code := cli_main(["ablate", "--data", str(src), "--variants",
                             "baseline,full", "--seeds", args.seeds,
                             "--steps", str(args.steps), "--holdout", "6",
                             "--out", str(out / name)]):
            return code

    orig = read_success(out / "original" / "ablation.csv")
    scal = read_success(out / "scaled" / "ablation.csv")
    print("\nvariant  mean_orig  mean_scaled  gap(orig-scaled)")
    for variant in ("baseline", "full"):
        mo = sum(orig[variant]) / len(orig[variant])
        ms = sum(scal[variant]) / len(scal[variant])
        print(f"{variant:8s} {mo:9.2f} {ms:12.2f} {mo - ms:10.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
