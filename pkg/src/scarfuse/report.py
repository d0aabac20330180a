"""Split evaluation and multi-model comparison reports.

Workflow: ``evaluate_model`` runs one checkpoint over a dataset split and
writes its per-sample tables into a model directory; ``write_report``
scans a run directory for such model directories and assembles the
comparison report (summary, acquisition-gap bins, AHA-17 volume tables,
significance tests, optional figures). All tables are plain CSV and
regenerate byte-identically for the same inputs.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import data, evaluation, training
from .errors import ConfigurationError, DataError

logger = logging.getLogger(__name__)

METRIC_COLUMNS = [f.name for f in fields(evaluation.MetricsRow)]
AHA_PARTS = [f"seg_{i:02d}" for i in range(1, 18)] + ["extra_myocardial"]
AHA_COLUMNS = ["sample_id", "source"] + AHA_PARTS + ["total"]
GATE_COLUMNS = ["sample_id", "t_interval_days", "t_norm",
                "w_mri", "w_ecg", "mean_gamma", "mean_beta"]
BIN_COLUMNS = ["bin_lo", "bin_hi", "n", "mean_dice", "std_dice"]
SUMMARY_COLUMNS = ["model", "n", "mean_dice", "std_dice", "mean_precision",
                   "n_precision_missing", "mean_sensitivity", "mean_vol_diff_ml",
                   "dice_delta", "t_stat", "p_value", "n_paired"]


def _write_csv(path, rows, columns):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _write_matrix_csv(path, matrix, row_names, col_names):
    matrix = np.asarray(matrix)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lead", *col_names])
        for name, row in zip(row_names, matrix):
            writer.writerow([name, *[repr(float(v)) for v in row]])


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _load_data(source):
    if isinstance(source, (str, Path)):
        return data.read_dataset(source)
    manifest, samples = source
    return manifest, samples


def _mean(values):
    return float(np.mean(values)) if len(values) else float("nan")


def evaluate_model(model_path, dataset, split, out_dir):
    """Run a checkpoint over one dataset split and write evaluation tables.

    Writes into ``out_dir``: metrics.csv (per-sample scar metrics),
    aha17_volumes.csv / aha17_voxels.csv (per-sample segment-wise scar,
    predicted and truth), fusion_gate.csv (gate weights and film summary,
    rows only for ECG-aware variants), attention/<id>_cross_lead.csv and
    attention/<id>_temporal.csv, and eval_summary.json.

    Args:
        model_path: checkpoint file.
        dataset: dataset directory or an in-memory (manifest, samples) pair.
        split: manifest split name, e.g. "test".
        out_dir: output directory for this model's tables.

    Returns:
        summary dict (the eval_summary.json content).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, cfg, meta = training.load_model(model_path)
    manifest, samples = _load_data(dataset)
    if split not in manifest.splits:
        raise ConfigurationError(
            f"unknown split {split!r}; have {sorted(manifest.splits)}"
        )
    ids = manifest.splits[split]
    if not ids:
        raise ConfigurationError(f"split {split!r} is empty")

    metric_rows, aha_ml, aha_vox, gate_rows = [], [], [], []
    for sid in ids:
        sample = samples[sid]
        pred, aux = evaluation.run_inference(model, sample)
        row = evaluation.compute_metrics(
            pred, sample.labels, sample_id=sid,
            t_interval_days=sample.t_interval_days, t_norm=sample.t_norm,
        )
        metric_rows.append(row.as_row())
        for source, classes in (("pred", pred), ("truth", sample.labels.classes)):
            table = evaluation.aha17_scar_volumes(
                classes == data.SCAR, sample.prior, sample.labels.spacing
            )
            head = {"sample_id": sid, "source": source}
            aha_vox.append({**head, **{k: v[0] for k, v in table.items()}})
            aha_ml.append({**head, **{k: v[1] for k, v in table.items()}})
        if aux:
            gate_rows.append({
                "sample_id": sid,
                "t_interval_days": sample.t_interval_days,
                "t_norm": sample.t_norm,
                "w_mri": aux["w_mri"], "w_ecg": aux["w_ecg"],
                "mean_gamma": aux["mean_gamma"], "mean_beta": aux["mean_beta"],
            })
            t_cols = [f"t{j:03d}" for j in range(aux["temporal_attention"].shape[1])]
            _write_matrix_csv(out_dir / "attention" / f"{sid}_cross_lead.csv",
                              aux["cross_lead_attention"],
                              data.LEAD_NAMES, data.LEAD_NAMES)
            _write_matrix_csv(out_dir / "attention" / f"{sid}_temporal.csv",
                              aux["temporal_attention"], data.LEAD_NAMES, t_cols)

    _write_csv(out_dir / "metrics.csv", metric_rows, METRIC_COLUMNS)
    _write_csv(out_dir / "aha17_volumes.csv", aha_ml, AHA_COLUMNS)
    _write_csv(out_dir / "aha17_voxels.csv", aha_vox, AHA_COLUMNS)
    _write_csv(out_dir / "fusion_gate.csv", gate_rows, GATE_COLUMNS)

    precisions = [r["precision"] for r in metric_rows if not math.isnan(r["precision"])]
    summary = {
        "variant": cfg.model.variant_name(),
        "split": split,
        "n": len(ids),
        "mean_dice": _mean([r["dice"] for r in metric_rows]),
        "mean_precision": _mean(precisions),
        "n_precision_missing": len(metric_rows) - len(precisions),
        "mean_sensitivity": _mean([r["sensitivity"] for r in metric_rows]),
        "mean_vol_diff_ml": _mean([r["vol_diff_ml"] for r in metric_rows]),
        "checkpoint_kind": meta.get("kind", "unknown"),
        "epochs_completed": meta.get("epochs_completed"),
    }
    (out_dir / "eval_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    logger.info("evaluated %s on %s (%d samples): mean dice %.4f",
                summary["variant"], split, summary["n"], summary["mean_dice"])
    return summary


def _metrics_from_csv(path):
    rows = []
    for raw in _read_csv(path):
        kwargs = {k: (raw[k] if k == "sample_id" else float(raw[k]))
                  for k in METRIC_COLUMNS}
        rows.append(evaluation.MetricsRow(**kwargs))
    return rows


def _aggregate_aha(vox_rows, ml_rows, source):
    """Sum per-sample segment tables into one table for ``source``.

    Voxel counts are integers so their totals are exact; mL columns are
    summed left to right and the total is the left-to-right sum of the
    parts, which keeps column-sum identities bitwise reproducible.
    """
    vox = {k: 0 for k in AHA_PARTS}
    ml = {k: 0.0 for k in AHA_PARTS}
    for vrow, mrow in zip(vox_rows, ml_rows):
        if vrow["source"] != source:
            continue
        for k in AHA_PARTS:
            vox[k] += int(vrow[k])
            ml[k] += float(mrow[k])
    total_vox = 0
    total_ml = 0.0
    for k in AHA_PARTS:
        total_vox += vox[k]
        total_ml += ml[k]
    vox["total"] = total_vox
    ml["total"] = total_ml
    return vox, ml


def write_report(run_dir, render_figures=True):
    """Assemble the comparison report for all evaluated models in a run.

    Every direct subdirectory of ``run_dir`` containing a metrics.csv is
    one model's evaluation output; the directory name is the model name.
    "baseline" is the significance reference when present, otherwise the
    alphabetically first model.

    Writes under run_dir/report: summary.csv and summary.txt, one
    time_bins_<model>.csv and aha17_volumes_<model>.csv per model, and
    (when ``render_figures`` and matplotlib is available) figures/*.png.

    Returns:
        bundle dict with the models, the reference name, summary rows,
        bin tables and written paths.
    """
    run_dir = Path(run_dir)
    model_dirs = sorted(
        d for d in run_dir.iterdir()
        if d.is_dir() and (d / "metrics.csv").exists()
    )
    if not model_dirs:
        raise DataError(f"no evaluation outputs (metrics.csv) under {run_dir}")
    names = [d.name for d in model_dirs]
    reference = "baseline" if "baseline" in names else names[0]
    metrics = {d.name: _metrics_from_csv(d / "metrics.csv") for d in model_dirs}

    report_dir = run_dir / "report"
    report_dir.mkdir(exist_ok=True)
    written = []

    bin_tables = {}
    for name in names:
        table = evaluation.time_bin_report(metrics[name])
        bin_tables[name] = table
        path = report_dir / f"time_bins_{name}.csv"
        _write_csv(path, table, BIN_COLUMNS)
        written.append(path)

    aha_tables = {}
    for d in model_dirs:
        vox_rows = _read_csv(d / "aha17_voxels.csv")
        ml_rows = _read_csv(d / "aha17_volumes.csv")
        rows = []
        per_source = {}
        for source in ("pred", "truth"):
            per_source[source] = _aggregate_aha(vox_rows, ml_rows, source)
        for k in AHA_PARTS + ["total"]:
            rows.append({
                "segment": k,
                "pred_voxels": per_source["pred"][0][k],
                "pred_ml": per_source["pred"][1][k],
                "truth_voxels": per_source["truth"][0][k],
                "truth_ml": per_source["truth"][1][k],
            })
        aha_tables[d.name] = rows
        path = report_dir / f"aha17_volumes_{d.name}.csv"
        _write_csv(path, rows, ["segment", "pred_voxels", "pred_ml",
                                "truth_voxels", "truth_ml"])
        written.append(path)

    ref_dice = {r.sample_id: r.dice for r in metrics[reference]}
    summary_rows = []
    for name in names:
        rows = metrics[name]
        dices = [r.dice for r in rows]
        precisions = [r.precision for r in rows if not math.isnan(r.precision)]
        row = {
            "model": name,
            "n": len(rows),
            "mean_dice": _mean(dices),
            "std_dice": float(np.std(dices, ddof=1)) if len(dices) > 1 else float("nan"),
            "mean_precision": _mean(precisions),
            "n_precision_missing": len(rows) - len(precisions),
            "mean_sensitivity": _mean([r.sensitivity for r in rows]),
            "mean_vol_diff_ml": _mean([r.vol_diff_ml for r in rows]),
            "dice_delta": "", "t_stat": "", "p_value": "", "n_paired": "",
        }
        if name != reference:
            shared = sorted(ref_dice.keys() & {r.sample_id for r in rows})
            by_id = {r.sample_id: r.dice for r in rows}
            t, p, delta = evaluation.paired_ttest(
                [by_id[s] for s in shared], [ref_dice[s] for s in shared]
            )
            row.update({"dice_delta": delta, "t_stat": t,
                        "p_value": p, "n_paired": len(shared)})
        summary_rows.append(row)

    summary_path = report_dir / "summary.csv"
    _write_csv(summary_path, summary_rows, SUMMARY_COLUMNS)
    written.append(summary_path)
    text_path = report_dir / "summary.txt"
    text_path.write_text(_summary_text(summary_rows, reference))
    written.append(text_path)

    figure_paths = []
    if render_figures:
        figure_paths = _render_figures(
            report_dir, model_dirs, bin_tables, aha_tables
        )
    written.extend(figure_paths)

    return {
        "models": names,
        "reference": reference,
        "summary": summary_rows,
        "bin_tables": bin_tables,
        "report_dir": str(report_dir),
        "written": [str(p) for p in written],
    }


def _fmt(value, width, prec=4):
    if value == "":
        return "-".rjust(width)
    if isinstance(value, float):
        return f"{value:.{prec}f}".rjust(width)
    return str(value).rjust(width)


def _summary_text(summary_rows, reference):
    lines = [
        "scar segmentation report",
        f"reference model: {reference}",
        "",
        ("model".ljust(16) + "n".rjust(5) + "dice".rjust(9) + "std".rjust(9)
         + "prec".rjust(9) + "miss".rjust(6) + "sens".rjust(9)
         + "vdiff_ml".rjust(10) + "delta".rjust(9) + "t".rjust(9) + "p".rjust(9)),
    ]
    for r in summary_rows:
        lines.append(
            r["model"].ljust(16)
            + _fmt(r["n"], 5)
            + _fmt(r["mean_dice"], 9)
            + _fmt(r["std_dice"], 9)
            + _fmt(r["mean_precision"], 9)
            + _fmt(r["n_precision_missing"], 6)
            + _fmt(r["mean_sensitivity"], 9)
            + _fmt(r["mean_vol_diff_ml"], 10)
            + _fmt(r["dice_delta"], 9)
            + _fmt(r["t_stat"], 9)
            + _fmt(r["p_value"], 9)
        )
    return "\n".join(lines) + "\n"


def _mean_attention(attn_dir, suffix):
    mats = []
    for path in sorted(attn_dir.glob(f"*_{suffix}.csv")):
        rows = _read_csv(path)
        mats.append(np.array(
            [[float(v) for k, v in row.items() if k != "lead"] for row in rows]
        ))
    return np.mean(mats, axis=0) if mats else None


def _render_figures(report_dir, model_dirs, bin_tables, aha_tables):
    try:
        from . import figures
        import matplotlib  # noqa: F401
    except ImportError:
        logger.warning("matplotlib unavailable, skipping report figures")
        return []
    fig_dir = report_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    paths = []

    path = fig_dir / "dice_by_bin.png"
    figures.dice_by_bin(bin_tables, path)
    paths.append(path)

    gate_rows = {}
    for d in model_dirs:
        rows = _read_csv(d / "fusion_gate.csv")
        if rows:
            gate_rows[d.name] = [
                {"t_interval_days": float(r["t_interval_days"]),
                 "w_ecg": float(r["w_ecg"])} for r in rows
            ]
    if gate_rows:
        path = fig_dir / "gate_vs_interval.png"
        figures.gate_vs_interval(gate_rows, path)
        paths.append(path)

    for d in model_dirs:
        cross = _mean_attention(d / "attention", "cross_lead") \
            if (d / "attention").is_dir() else None
        if cross is None:
            continue
        temporal = _mean_attention(d / "attention", "temporal")
        path = fig_dir / f"attention_{d.name}.png"
        figures.attention_maps(cross, temporal, data.LEAD_NAMES, path)
        paths.append(path)

    for name, rows in aha_tables.items():
        segs = rows[:17]
        path = fig_dir / f"segment_volumes_{name}.png"
        figures.segment_volumes(
            [r["pred_ml"] for r in segs], [r["truth_ml"] for r in segs], path
        )
        paths.append(path)
    return paths
