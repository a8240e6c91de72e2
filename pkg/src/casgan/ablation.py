"""Ablation arms and generator-depth sweeps with combined reporting.

All arms share the seed, dataset, and architecture; only the loss preset
differs, except that the full-composite arm may use the configured chain
depth while every other arm runs a single block.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .data import PairedDataset
from .errors import ConfigError
from .losses import loss_preset
from .metrics import METRIC_COLUMNS, MetricParams, evaluate_dataset
from .trainer import TrainConfig, state_to_checkpoint, train

DEFAULT_ARMS = ("cgan", "perceptual", "style-content", "medgan-1g", "medgan")

SWEEP_MIN_BLOCKS = 1
SWEEP_MAX_BLOCKS = 7


@dataclass(frozen=True)
class AblationPlan:
    config: TrainConfig
    arms: tuple = DEFAULT_ARMS
    out_dir: str = "ablation"
    metric_params: MetricParams = field(default_factory=MetricParams)

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "arms": list(self.arms), "out_dir": self.out_dir}


def arm_settings(arm: str, base: TrainConfig) -> TrainConfig:
    """Resolve an arm name to its preset weights and chain depth."""
    if arm == "medgan":
        preset, n_blocks = "medgan", base.casnet.n_blocks
    elif arm == "medgan-1g":
        preset, n_blocks = "medgan", 1
    else:
        preset, n_blocks = arm, 1
    weights = loss_preset(preset)
    casnet = dataclasses.replace(base.casnet, n_blocks=n_blocks)
    return dataclasses.replace(base, weights=weights, casnet=casnet)


def run_ablation(plan: AblationPlan, train_set: PairedDataset, val_set: PairedDataset) -> list[dict]:
    """Train and evaluate every arm; returns one row per arm (Table-I shape)."""
    out_dir = Path(plan.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for arm in plan.arms:
        cfg = arm_settings(arm, plan.config)
        arm_dir = out_dir / arm
        arm_dir.mkdir(parents=True, exist_ok=True)
        with open(arm_dir / "config.json", "w") as fh:
            json.dump(cfg.to_dict(), fh, indent=2)

        events_path = arm_dir / "events.ndjson"
        with open(events_path, "w") as fh:
            state = train(cfg, train_set, sink=lambda e: fh.write(json.dumps(e) + "\n"),
                          checkpoint_dir=arm_dir / "checkpoints")
        checkpoint = state_to_checkpoint(state)
        report = evaluate_dataset(checkpoint, val_set, plan.metric_params)
        report.write_csv(arm_dir / "report.csv")
        report.write_json(arm_dir / "report.json")

        row = {"arm": arm, "n_blocks": cfg.casnet.n_blocks, "seed": cfg.seed,
               "dataset_digest": train_set.manifest_digest,
               "weights": cfg.weights.to_dict()}
        row.update({c: report.aggregate[c] for c in METRIC_COLUMNS})
        rows.append(row)

    digests = {row["dataset_digest"] for row in rows}
    seeds = {row["seed"] for row in rows}
    if len(digests) != 1 or len(seeds) != 1:
        raise ConfigError("ablation arms must share dataset digest and seed")

    _write_combined(out_dir, rows)
    return rows


def _write_combined(out_dir: Path, rows: list[dict]):
    with open(out_dir / "combined.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("arm",) + METRIC_COLUMNS)
        for row in rows:
            writer.writerow([row["arm"]] + [row[c] for c in METRIC_COLUMNS])
    with open(out_dir / "combined.json", "w") as fh:
        json.dump(rows, fh, indent=2)


def run_depth_sweep(
    config: TrainConfig,
    n_values,
    train_set: PairedDataset,
    val_set: PairedDataset,
    out_dir,
    metric_params: MetricParams = MetricParams(),
) -> list[dict]:
    """Train and evaluate one generator per chain depth; emit curves."""
    n_values = sorted(set(int(n) for n in n_values))
    bad = [n for n in n_values if n < SWEEP_MIN_BLOCKS or n > SWEEP_MAX_BLOCKS]
    if bad:
        raise ConfigError(
            f"sweep depths must lie within {SWEEP_MIN_BLOCKS}..{SWEEP_MAX_BLOCKS}, got {bad}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for n in n_values:
        cfg = dataclasses.replace(config, casnet=dataclasses.replace(config.casnet, n_blocks=n))
        run_dir = out_dir / f"n{n}"
        run_dir.mkdir(parents=True, exist_ok=True)
        with open(run_dir / "events.ndjson", "w") as fh:
            state = train(cfg, train_set, sink=lambda e: fh.write(json.dumps(e) + "\n"))
        checkpoint = state_to_checkpoint(state)
        report = evaluate_dataset(checkpoint, val_set, metric_params)
        report.write_json(run_dir / "report.json")
        rows.append(
            {
                "n_blocks": n,
                "parameter_count": state.generator.parameter_count(),
                "ssim": report.aggregate["ssim"],
                "psnr_db": report.aggregate["psnr_db"],
                "mse": report.aggregate["mse"],
                "pdist": report.aggregate["pdist"],
            }
        )

    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("n_blocks", "parameter_count", "ssim", "psnr_db", "mse", "pdist"))
        for row in rows:
            writer.writerow([row[k] for k in ("n_blocks", "parameter_count", "ssim", "psnr_db", "mse", "pdist")])
    _plot_sweep(out_dir, rows)
    return rows


def _plot_sweep(out_dir: Path, rows: list[dict]):
    ns = [row["n_blocks"] for row in rows]

    def twin_plot(path, left_key, right_key, left_label, right_label):
        fig, ax_left = plt.subplots(figsize=(6, 4))
        ax_right = ax_left.twinx()
        ax_left.plot(ns, [r[left_key] for r in rows], "o-", color="tab:blue", label=left_label)
        ax_right.plot(ns, [r[right_key] for r in rows], "s--", color="tab:red", label=right_label)
        ax_left.set_xlabel("number of generator blocks")
        ax_left.set_ylabel(left_label, color="tab:blue")
        ax_right.set_ylabel(right_label, color="tab:red")
        ax_left.set_xticks(ns)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)

    twin_plot(out_dir / "sweep_psnr_ssim.png", "psnr_db", "ssim", "PSNR (dB)", "SSIM")
    twin_plot(out_dir / "sweep_mse_pdist.png", "mse", "pdist", "MSE", "feature distance")
