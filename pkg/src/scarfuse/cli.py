"""Command-line entry points.

Commands cover the full workflow: generate a paired synthetic dataset,
build an anatomical prior for a sample, train a model, evaluate a
checkpoint on a split, and assemble the comparison report.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import click
import numpy as np


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose):
    """Temporal-aware cardiac MRI and ECG fusion segmentation toolkit."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("gen-data")
@click.option("--n", type=int, required=True, help="Number of paired samples.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--staleness-growth", type=float, default=None,
              help="Scar burden regression per unit acquisition gap.")
@click.option("--staleness-noise", type=float, default=None,
              help="Extra ECG noise per unit acquisition gap.")
def gen_data(n, seed, out, staleness_growth, staleness_noise):
    """Generate a synthetic paired MRI and ECG dataset with splits."""
    from . import synth

    cfg = synth.GeneratorConfig()
    if staleness_growth is not None:
        cfg.growth_rate = staleness_growth
    if staleness_noise is not None:
        cfg.ecg_noise_gain = staleness_noise
    manifest = synth.generate_dataset(out, n, seed, cfg)
    sizes = {split: len(ids) for split, ids in manifest.splits.items()}
    click.echo(f"wrote {n} samples to {out} (splits: {sizes})")


@main.command("make-prior")
@click.option("--in", "sample_dir", type=click.Path(path_type=Path, exists=True),
              required=True, help="Sample directory with labels.nii.gz.")
@click.option("--out", type=click.Path(path_type=Path), required=True,
              help="Output NIfTI path for the 17-channel prior.")
@click.option("--reference-angle", type=float, default=0.0, show_default=True,
              help="Angular origin (radians ccw from image up).")
def make_prior(sample_dir, out, reference_angle):
    """Build the 17-segment anatomical prior for one sample."""
    from . import atlas, data, nifti

    sample = data.read_sample(sample_dir)
    classes = sample.labels.classes
    myo = (classes == data.MYOCARDIUM) | (classes == data.SCAR)
    bp = classes == data.BLOOD_POOL
    prior = atlas.build_aha17(
        myo, bp, atlas.PartitionConfig(reference_angle=reference_angle)
    )
    disk = np.ascontiguousarray(np.moveaxis(prior.channels, 0, -1))
    nifti.write_nifti(out, disk, sample.labels.spacing + (1.0,))
    sidecar = Path(str(out).removesuffix(".gz").removesuffix(".nii") + ".json")
    sidecar.write_text(json.dumps({
        "reference_angle": prior.reference_angle,
        "zone_of_segment": {str(k): v for k, v in prior.zone_of_segment.items()},
    }, indent=2, sort_keys=True) + "\n")
    click.echo(f"wrote prior to {out} (sidecar {sidecar})")


@main.command("train")
@click.option("--config", "config_path", type=click.Path(path_type=Path, exists=True),
              required=True, help="JSON file with TrainConfig fields.")
@click.option("--data", "data_dir", type=click.Path(path_type=Path, exists=True),
              required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--resume", type=click.Path(path_type=Path, exists=True), default=None,
              help="Checkpoint to continue from.")
def train(config_path, data_dir, out, resume):
    """Train a segmentation model and write logs and checkpoints."""
    from . import training

    cfg = training.TrainConfig.from_dict(json.loads(config_path.read_text()))
    summary = training.fit(cfg, data_dir, out, resume_from=resume)
    for key in ("variant", "epochs", "best_val_dice", "final_val_dice"):
        click.echo(f"{key}: {summary[key]}")


@main.command("evaluate")
@click.option("--model", "model_path", type=click.Path(path_type=Path, exists=True),
              required=True, help="Checkpoint file.")
@click.option("--data", "data_dir", type=click.Path(path_type=Path, exists=True),
              required=True)
@click.option("--split", default="test", show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def evaluate(model_path, data_dir, split, out):
    """Evaluate a checkpoint on one split and write per-sample tables."""
    from . import report

    summary = report.evaluate_model(model_path, data_dir, split, out)
    click.echo(f"{summary['variant']} on {split}: "
               f"mean dice {summary['mean_dice']:.4f} over {summary['n']} samples")


@main.command("report")
@click.option("--run", "run_dir", type=click.Path(path_type=Path, exists=True),
              required=True, help="Directory holding evaluate outputs.")
@click.option("--figures/--no-figures", default=True, show_default=True,
              help="Also render PNG figures (needs matplotlib).")
def report_cmd(run_dir, figures):
    """Assemble the multi-model comparison report for a run directory."""
    from . import report

    bundle = report.write_report(run_dir, render_figures=figures)
    click.echo(f"reference model: {bundle['reference']}")
    for row in bundle["summary"]:
        delta = row["dice_delta"]
        extra = "" if delta == "" else \
            f"  delta {delta:+.4f}  p {row['p_value']:.4g}"
        click.echo(f"{row['model']}: dice {row['mean_dice']:.4f}{extra}")
    click.echo(f"report written to {bundle['report_dir']}")


if __name__ == "__main__":
    main()
