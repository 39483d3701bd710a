"""Command-line driver: gen / scale / train / track / eval / ablate."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .autograd import ShapeError
from .backbone import BackboneConfig
from .bev import BevConfig, RegionError
from .checkpoint import CheckpointError
from .data import (
    FrameFormatError, SyntheticSpec, generate_synthetic, load_dataset,
    scale_sequence, write_sequence,
)
from .evaluation import (
    TrackerPredictor, pooled_precision, pooled_success, read_report_csv,
    success_gap, track_sequence, write_report_csv, write_summary_csv,
)
from .losses import NonFiniteLoss
from .model import Tracker, TrackerConfig
from .tapm import TapmConfig
from .training import TrainConfig, TrainingDiverged, load_trained, train

VARIANTS = {
    "baseline": (False, False, False),
    "none": (False, False, False),
    "tapm": (True, False, False),
    "vit": (False, True, False),
    "shuffle": (False, False, True),
    "rgs": (False, True, True),
    "full": (True, True, True),
}


def parse_variant(name: str) -> tuple[bool, bool, bool]:
    name = name.strip().lower()
    if name in VARIANTS:
        return VARIANTS[name]
    use = [False, False, False]
    for token in name.split("+"):
        if token == "tapm":
            use[0] = True
        elif token == "vit":
            use[1] = True
        elif token == "shuffle":
            use[2] = True
        elif token == "rgs":
            use[1] = use[2] = True
        else:
            raise ValueError(f"unknown variant token {token!r}")
    return tuple(use)  # type: ignore[return-value]


def tracker_config_from_dict(d: dict) -> TrackerConfig:
    """Friendly flat schema for CLI config files; unknown keys rejected."""
    known = {"variant", "feature_dim", "heads", "fps_targets", "template_fps_targets",
             "neighbor_k", "prototype_count", "attention_depth", "voxel_size",
             "extents", "region_z", "vit_depth", "lift_channels", "trunk_channels"}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown model config keys: {sorted(unknown)}")
    backbone = BackboneConfig(
        feature_dim=d.get("feature_dim", 32),
        heads=d.get("heads", 4),
        fps_targets=tuple(d.get("fps_targets", (256, 128))),
        template_fps_targets=tuple(d.get("template_fps_targets", (128, 64))),
        neighbor_k=d.get("neighbor_k", 8))
    tapm = TapmConfig(prototype_count=d.get("prototype_count", 64),
                      attention_depth=d.get("attention_depth", 5),
                      heads=d.get("heads", 4))
    use_tapm, use_vit, use_shuffle = parse_variant(d.get("variant", "full"))
    bev = BevConfig(voxel_size=d.get("voxel_size", 0.2),
                    extents=tuple(d.get("extents", (-2.4, 2.4, -2.4, 2.4))),
                    upscale=2 if use_shuffle else 1)
    return TrackerConfig(backbone=backbone, tapm=tapm, bev=bev,
                         region_z=tuple(d.get("region_z", (-2.8, 2.8))),
                         use_tapm=use_tapm, use_vit=use_vit, use_shuffle=use_shuffle,
                         vit_depth=d.get("vit_depth", 2),
                         lift_channels=d.get("lift_channels", 128),
                         trunk_channels=d.get("trunk_channels", 32))


def cmd_gen(args) -> int:
    spec_dict = json.loads(Path(args.spec).read_text(encoding="utf-8")) if args.spec else {}
    spec = SyntheticSpec(**spec_dict)
    sequences = generate_synthetic(args.seed, spec)
    out = Path(args.out)
    for seq in sequences:
        write_sequence(out / seq.id, seq)
    print(f"wrote {len(sequences)} sequences to {out}")
    return 0


def cmd_scale(args) -> int:
    sequences = load_dataset(args.input)
    out = Path(args.out)
    for seq in sequences:
        write_sequence(out / seq.id, scale_sequence(seq, args.rate))
    print(f"scaled {len(sequences)} sequences by {args.rate} into {out}")
    return 0


def cmd_train(args) -> int:
    cfg_dict = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    train_cfg = TrainConfig(**cfg_dict.get("train", {}))
    model_cfg = tracker_config_from_dict(cfg_dict.get("model", {}))
    sequences = load_dataset(args.data)
    model = Tracker(model_cfg, np.random.default_rng(train_cfg.seed))
    log_path = args.log if args.log else str(args.out) + ".log.csv"
    rows = train(model, sequences, train_cfg, args.out, log_path=log_path,
                 resume=args.resume)
    if rows:
        print(f"trained {len(rows)} steps, final total loss {rows[-1]['total']:.6f}")
    print(f"checkpoint: {args.out}")
    return 0


def cmd_track(args) -> int:
    model = load_trained(args.ckpt)
    predictor = TrackerPredictor(model)
    sequences = load_dataset(args.data)
    reports = [track_sequence(predictor, seq, seed=args.seed) for seq in sequences]
    write_report_csv(reports, args.report)
    summary = args.summary if args.summary else str(args.report) + ".summary.csv"
    write_summary_csv(reports, summary)
    print(f"tracked {len(reports)} sequences; "
          f"Success {pooled_success(reports):.2f} Precision {pooled_precision(reports):.2f}")
    return 0


def cmd_eval(args) -> int:
    reports = read_report_csv(args.report)
    for rep in reports:
        print(f"{rep.seq_id}: success {rep.success:.2f} precision {rep.precision:.2f}")
    print(f"Success: {pooled_success(reports):.2f}")
    print(f"Precision: {pooled_precision(reports):.2f}")
    return 0


def cmd_ablate(args) -> int:
    sequences = load_dataset(args.data)
    holdout = args.holdout if args.holdout else max(1, len(sequences) // 3)
    if holdout >= len(sequences):
        raise ValueError(f"holdout {holdout} leaves no training sequences")
    train_seqs, eval_seqs = sequences[:-holdout], sequences[-holdout:]
    scaled_eval = ([scale_sequence(s, args.scale_rate) for s in eval_seqs]
                   if args.scale_rate else None)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    seeds = [int(s) for s in args.seeds.split(",")]
    base_model_cfg = tracker_config_from_dict(
        json.loads(Path(args.model_config).read_text(encoding="utf-8"))
        if args.model_config else {})

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for variant in variants:
        use_tapm, use_vit, use_shuffle = parse_variant(variant)
        cfg = base_model_cfg.with_variant(use_tapm, use_vit, use_shuffle)
        for seed in seeds:
            train_cfg = TrainConfig(seed=seed, steps=args.steps, batch_size=args.batch_size)
            model = Tracker(cfg, np.random.default_rng(seed))
            ckpt = out_dir / f"{variant.replace('+', '_')}_seed{seed}.ckpt"
            train(model, train_seqs, train_cfg, ckpt, log_path=str(ckpt) + ".log.csv")
            predictor = TrackerPredictor(model)
            reports = [track_sequence(predictor, s, seed=seed) for s in eval_seqs]
            row = {"variant": variant, "seed": seed,
                   "success": pooled_success(reports),
                   "precision": pooled_precision(reports)}
            if scaled_eval is not None:
                scaled_reports = [track_sequence(predictor, s, seed=seed)
                                  for s in scaled_eval]
                row["success_scaled"] = pooled_success(scaled_reports)
                row["precision_scaled"] = pooled_precision(scaled_reports)
                row["gap"] = success_gap(reports, scaled_reports)
            rows.append(row)
            print(",".join(f"{k}={v}" for k, v in row.items()))

    header = list(rows[0].keys())
    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k])
                              for k in header) + "\n")
    print(f"wrote {csv_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smalltrack",
                                     description="small-object point-cloud tracker toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic benchmark")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--spec", help="JSON file of benchmark spec fields")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("scale", help="shrink foreground points toward box centers")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("train", help="train a tracker")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON with 'train' and 'model' sections")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="run one-pass evaluation")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--summary")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="recompute metrics from a report CSV")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate a variant grid")
    p.add_argument("--data", required=True)
    p.add_argument("--variants", default="baseline,shuffle,vit,full")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--holdout", type=int)
    p.add_argument("--scale-rate", type=float)
    p.add_argument("--model-config")
    p.add_argument("--out", default="ablation_out")
    p.set_defaults(func=cmd_ablate)
    return parser


_ERROR_CATEGORIES = [
    ((FrameFormatError, CheckpointError), "format", 3),
    ((RegionError, ShapeError, ValueError, KeyError), "validation", 4),
    ((NonFiniteLoss, TrainingDiverged), "numeric", 5),
    ((FileNotFoundError, OSError), "io", 6),
]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - map to exit categories
        for types, category, code in _ERROR_CATEGORIES:
            if isinstance(exc, types):
                print(f"error[{category}]: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
