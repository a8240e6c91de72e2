"""Command-line surface: train, translate, evaluate, ablate, sweep, synth,
study-serve, study-report."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import ablation as ablation_mod
from . import data as data_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CasganError, ConfigError
from .generator import CascadeConfig, UBlockSpec
from .losses import PRESET_NAMES, loss_preset
from .metrics import MetricParams, evaluate_dataset
from .study import Study, create_app, read_records, summarize_study
from .trainer import TrainConfig, state_to_checkpoint, train, translate

PROFILES = ("desk", "paper")


def desk_profile(config: TrainConfig) -> TrainConfig:
    """Workstation-scale overrides: 64x64 inputs, depth-5 blocks at quarter
    width, a single block, and ~30 epochs."""
    return dataclasses.replace(
        config,
        n_epochs=30,
        casnet=CascadeConfig(n_blocks=1, ublock=UBlockSpec.scaled(depth=5, width_divisor=4)),
    )


def load_train_config(path=None, preset=None, profile=None, overrides=None) -> TrainConfig:
    payload = {}
    if path is not None:
        with open(path) as fh:
            payload = json.load(fh)
    config = TrainConfig.from_dict(payload)
    if profile == "desk":
        config = desk_profile(config)
    elif profile not in (None, "paper"):
        raise ConfigError(f"unknown profile '{profile}'; valid profiles: {', '.join(PROFILES)}")
    if preset is not None:
        config = dataclasses.replace(config, weights=loss_preset(preset))
    for key, value in (overrides or {}).items():
        if value is not None:
            config = dataclasses.replace(config, **{key: value})
    return config


def _write_panel(path, source, output, target=None):
    """Side-by-side grayscale panel (input | output | target) with separators."""
    panels = [data_mod.denormalize_image(source), data_mod.denormalize_image(output)]
    if target is not None:
        panels.append(data_mod.denormalize_image(target))
    sep = np.full((panels[0].shape[0], 2), 255, dtype=np.uint8)
    strips = []
    for i, p in enumerate(panels):
        if i:
            strips.append(sep)
        strips.append(p)
    Image.fromarray(np.concatenate(strips, axis=1), "L").save(path)


def cmd_train(args) -> int:
    config = load_train_config(
        args.config,
        preset=args.preset,
        profile=args.profile,
        overrides={
            "n_epochs": args.epochs,
            "max_steps": args.max_steps,
            "seed": args.seed,
            "checkpoint_interval": args.checkpoint_interval,
            "threads": args.threads,
        },
    )
    dataset = data_mod.load_paired_dataset(args.dataset, "train")
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=2)

    log_every = max(1, config.log_interval)
    with open(run_dir / "events.ndjson", "w") as events:

        def sink(event):
            events.write(json.dumps(event) + "\n")
            if event["step"] % log_every == 0:
                g = event["generator"]
                print(
                    f"step {event['step']} epoch {event['epoch']} "
                    f"total {g['total']:.4f} adv {g['adversarial']:.4f}"
                )

        state = train(config, dataset, sink=sink, checkpoint_dir=run_dir / "checkpoints")

    samples_dir = run_dir / "samples"
    samples_dir.mkdir(exist_ok=True)
    state.generator.eval()
    with torch.no_grad():
        for sample in list(dataset)[:4]:
            output = state.generator(sample.source.unsqueeze(0)).squeeze(0)
            _write_panel(
                samples_dir / f"step{state.step}_{sample.sample_id}.png",
                sample.source,
                output,
                sample.target,
            )
    print(f"run complete: {state.step} sample visits, "
          f"{state.generator_steps} generator / {state.discriminator_steps} discriminator updates")
    print(f"checkpoint: {run_dir / 'checkpoints' / 'final.mgck'}")
    return 0


def cmd_translate(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    in_dir, out_dir = Path(args.inputs), Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = sorted(in_dir.glob("*.png"))
    if not files:
        raise ConfigError(f"no .png inputs under {in_dir}")
    images = [data_mod.normalize_image(data_mod._read_grayscale(p)) for p in files]
    outputs = translate(checkpoint, images)
    for path, source, output in zip(files, images, outputs):
        Image.fromarray(data_mod.denormalize_image(output), "L").save(out_dir / path.name)
        if args.targets:
            target_path = Path(args.targets) / path.name
            if target_path.is_file():
                target = data_mod.normalize_image(data_mod._read_grayscale(target_path))
                _write_panel(out_dir / f"panel_{path.name}", source, output, target)
    print(f"translated {len(files)} images into {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    if args.split == "train" and not args.allow_train:
        raise ConfigError("evaluating the train split requires --allow-train")
    checkpoint = load_checkpoint(args.checkpoint)
    dataset = data_mod.load_paired_dataset(args.dataset, args.split)
    report = evaluate_dataset(checkpoint, dataset, MetricParams())
    out = Path(args.report)
    csv_path = report.write_csv(out.with_suffix(".csv"))
    json_path = report.write_json(out.with_suffix(".json"))
    agg = report.aggregate
    print("aggregate: " + "  ".join(f"{k}={agg[k]:.4f}" for k in agg))
    print(f"report: {csv_path} {json_path}")
    return 0


def cmd_ablate(args) -> int:
    with open(args.plan) as fh:
        payload = json.load(fh)
    config = TrainConfig.from_dict(payload.get("config", {}))
    plan = ablation_mod.AblationPlan(
        config=config,
        arms=tuple(payload.get("arms", ablation_mod.DEFAULT_ARMS)),
        out_dir=payload.get("out_dir", args.out or "ablation"),
    )
    for arm in plan.arms:
        ablation_mod.arm_settings(arm, config)  # validate names before training
    train_set = data_mod.load_paired_dataset(payload["dataset"], "train")
    val_set = data_mod.load_paired_dataset(payload["dataset"], "val")
    rows = ablation_mod.run_ablation(plan, train_set, val_set)
    header = ("arm",) + tuple(c for c in rows[0] if c in ablation_mod.METRIC_COLUMNS)
    print("  ".join(header))
    for row in rows:
        print("  ".join([row["arm"]] + [f"{row[c]:.4f}" for c in header[1:]]))
    print(f"combined table: {Path(plan.out_dir) / 'combined.csv'}")
    return 0


def cmd_sweep(args) -> int:
    config = load_train_config(args.config, profile=args.profile)
    n_values = [int(v) for v in args.blocks.split(",")]
    train_set = data_mod.load_paired_dataset(args.dataset, "train")
    val_set = data_mod.load_paired_dataset(args.dataset, "val")
    rows = ablation_mod.run_depth_sweep(config, n_values, train_set, val_set, args.out)
    for row in rows:
        print(
            f"n={row['n_blocks']} params={row['parameter_count']} "
            f"ssim={row['ssim']:.4f} psnr={row['psnr_db']:.2f} mse={row['mse']:.2f} "
            f"pdist={row['pdist']:.4f}"
        )
    print(f"sweep outputs in {args.out}")
    return 0


def cmd_synth(args) -> int:
    train_set = data_mod.generate_synthetic_pairs(
        args.seed, args.count, args.size, args.groups, split="train", group_prefix="tg", id_prefix="t"
    )
    val_set = data_mod.generate_synthetic_pairs(
        args.seed + 1, args.val_count, args.size, args.val_groups, split="val",
        group_prefix="vg", id_prefix="v",
    )
    root = data_mod.write_dataset(args.out, [train_set, val_set])
    print(f"wrote {len(train_set)} train / {len(val_set)} val samples to {root}")
    print(f"train digest: {train_set.manifest_digest}")
    return 0


def cmd_study_serve(args) -> int:
    import uvicorn

    study = Study.from_manifest(args.manifest, args.results, seed=args.seed)
    frontend = Path(args.frontend) if args.frontend else None
    app = create_app(study, frontend_dir=frontend)
    print(f"serving {len(study.triads)} trials on port {args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_study_report(args) -> int:
    records = read_records(args.results)
    rows = summarize_study(records)
    print(f"{'method':<16} {'mean':>8} {'SD':>8} {'real %':>8} {'n':>6}")
    for row in rows:
        print(
            f"{row['method']:<16} {row['mean']:>8.4f} {row['sd']:>8.4f} "
            f"{row['real_pct']:>8.2f} {row['n']:>6d}"
        )
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)
        print(f"report: {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="casgan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a paired dataset")
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--dataset", required=True, help="dataset root directory")
    p.add_argument("--run-dir", required=True, help="output run directory")
    p.add_argument("--preset", choices=PRESET_NAMES, help="loss preset override")
    p.add_argument("--profile", choices=PROFILES, help="desk or paper scale")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-interval", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate a directory of images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--targets", help="optional target dir for side-by-side panels")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="compute the metric report for a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--report", required=True, help="output path stem (.csv/.json)")
    p.add_argument("--split", default="val", choices=("train", "val"))
    p.add_argument("--allow-train", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and evaluate every loss arm")
    p.add_argument("--plan", required=True, help="plan JSON (dataset, config, arms, out_dir)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="depth sweep over the generator chain")
    p.add_argument("--config")
    p.add_argument("--dataset", required=True)
    p.add_argument("--blocks", default="1,2,3", help="comma list of block counts (1..7)")
    p.add_argument("--out", required=True)
    p.add_argument("--profile", choices=PROFILES)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--groups", type=int, default=4)
    p.add_argument("--val-count", type=int, default=16)
    p.add_argument("--val-groups", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("study-serve", help="serve the blinded perceptual study")
    p.add_argument("--manifest", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frontend", help="directory of built frontend assets")
    p.set_defaults(func=cmd_study_serve)

    p = sub.add_parser("study-report", help="summarize study responses")
    p.add_argument("--results", required=True)
    p.add_argument("--out", help="optional JSON output path")
    p.set_defaults(func=cmd_study_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CasganError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
