"""Plot renderings for report bundles.

matplotlib is imported inside each function so the CSV/text report path
stays usable on hosts without a plotting stack.
"""

from __future__ import annotations

import numpy as np

# matplotlib stamps its version into PNG metadata by default, which would
# break byte-identical report regeneration; pin a fixed string instead.
_PNG_META = {"Software": "scarfuse report"}
_DPI = 110


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _finish(plt, fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, metadata=_PNG_META)
    plt.close(fig)


def dice_by_bin(bin_tables, path):
    """Grouped bars of mean scar Dice per acquisition-gap bin.

    Args:
        bin_tables: {model name: time_bin_report rows}.
        path: output PNG path.
    """
    plt = _plt()
    models = sorted(bin_tables)
    bins = bin_tables[models[0]]
    labels = [f"[{r['bin_lo']:g},{r['bin_hi']:g})" for r in bins]
    labels[-1] = labels[-1][:-1] + "]"
    x = np.arange(len(labels))
    width = 0.8 / max(len(models), 1)
    fig, ax = plt.subplots(figsize=(7.5, 3.2))
    for i, model in enumerate(models):
        means = [r["mean_dice"] for r in bin_tables[model]]
        ax.bar(x + (i - (len(models) - 1) / 2) * width, means, width, label=model)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_xlabel("MRI to ECG gap (days)")
    ax.set_ylabel("mean scar Dice")
    ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize=8)
    _finish(plt, fig, path)


def gate_vs_interval(gate_rows, path):
    """Scatter of the learned ECG gate weight against the acquisition gap.

    Args:
        gate_rows: {model name: list of fusion-gate dicts with
            t_interval_days and w_ecg keys}.
        path: output PNG path.
    """
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    for model in sorted(gate_rows):
        rows = gate_rows[model]
        ax.scatter([r["t_interval_days"] for r in rows],
                   [r["w_ecg"] for r in rows], s=14, alpha=0.7, label=model)
    ax.set_xlabel("MRI to ECG gap (days)")
    ax.set_ylabel("ECG gate weight")
    ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize=8)
    _finish(plt, fig, path)


def attention_maps(cross_lead, temporal, lead_names, path):
    """Heatmaps of the mean cross-lead and temporal attention."""
    plt = _plt()
    cross_lead = np.asarray(cross_lead)
    temporal = np.asarray(temporal)
    fig, (ax1, ax2) = plt.subplots(
        1, 2, figsize=(9, 3.6), gridspec_kw={"width_ratios": [1, 2]}
    )
    im1 = ax1.imshow(cross_lead, cmap="viridis")
    ax1.set_xticks(range(len(lead_names)))
    ax1.set_xticklabels(lead_names, fontsize=6, rotation=90)
    ax1.set_yticks(range(len(lead_names)))
    ax1.set_yticklabels(lead_names, fontsize=6)
    ax1.set_title("cross-lead attention", fontsize=9)
    fig.colorbar(im1, ax=ax1, fraction=0.046)
    im2 = ax2.imshow(temporal, cmap="viridis", aspect="auto")
    ax2.set_yticks(range(len(lead_names)))
    ax2.set_yticklabels(lead_names, fontsize=6)
    ax2.set_xlabel("encoded time step")
    ax2.set_title("temporal attention", fontsize=9)
    fig.colorbar(im2, ax=ax2, fraction=0.046)
    _finish(plt, fig, path)


def segment_volumes(pred_ml, truth_ml, path):
    """Paired bars of predicted vs true scar volume per AHA segment.

    Args:
        pred_ml, truth_ml: length-17 sequences of volumes in mL.
        path: output PNG path.
    """
    plt = _plt()
    x = np.arange(1, 18)
    fig, ax = plt.subplots(figsize=(7.5, 3.2))
    ax.bar(x - 0.2, truth_ml, 0.4, label="truth")
    ax.bar(x + 0.2, pred_ml, 0.4, label="predicted")
    ax.set_xticks(x)
    ax.set_xlabel("AHA segment")
    ax.set_ylabel("scar volume (mL)")
    ax.legend(fontsize=8)
    _finish(plt, fig, path)
