#!/usr/bin/env python3
"""Module-ablation experiment on the small-target benchmark.

Generates the benchmark, then trains and evaluates the variant grid
(baseline / shuffle / vit / full) over three seeds. Results land in
<out>/ablation.csv.
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path

from smalltrack.cli import main as cli_main

BENCH = {"num_sequences": 30, "frames_per_seq": 40, "target_kind": "capsule-pair",
         "clutter_count": 6, "point_density": 60, "ground_points": 400}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/ablation")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--steps", type=int, default=400)
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--variants", default="baseline,shuffle,vit,full")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = out / "data"
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(BENCH, fh)
        spec = fh.name
    if not (data / "seq_0000" / "manifest.json").exists():
        code = cli_main(["gen", "--seed", str(args.seed), "--spec", spec,
                         "--out", str(data)])
        if code:
            return code
    return cli_main(["ablate", "--data", str(data), "--variants", args.variants,
                     "--seeds", args.seeds, "--steps", str(args.steps),
                     "--holdout", "10", "--out", str(out)])


if __name__ == "__main__":
    sys.exit(main())
