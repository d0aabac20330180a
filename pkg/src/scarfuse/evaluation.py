"""Scar segmentation metrics, per-segment volumes, time-bin tables, tests.

Empty-mask conventions (shared by Dice, precision and sensitivity):
both masks empty is a perfect agreement (score 1.0); Dice with exactly one
empty mask is 0.0; precision with an empty prediction against a nonempty
truth is undefined and reported as missing (NaN), and symmetrically for
sensitivity with an empty truth.  These give the dualities
Dice(p, g) = Dice(g, p) and precision(p, g) = sensitivity(g, p).
"""

import logging
import math
from dataclasses import dataclass, fields

import numpy as np
import torch
from scipy import stats

from . import data
from .errors import ConfigurationError, ShapeError

logger = logging.getLogger(__name__)

#: Acquisition-gap bins in days: upper-exclusive except the last, which
#: closes at the 90-day window edge.
TIME_BINS = ((0, 3), (3, 7), (7, 14), (14, 21), (21, 30), (30, 60), (60, 90))


def _as_bool(mask, name):
    mask = np.asarray(mask)
    if mask.dtype != bool:
        raise ShapeError(f"{name} must be a boolean mask, got dtype {mask.dtype}")
    return mask


def dice_score(pred, truth):
    """Dice overlap with the empty-mask conventions above."""
    pred = _as_bool(pred, "pred")
    truth = _as_bool(truth, "truth")
    if pred.shape != truth.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    np_, ng = int(pred.sum()), int(truth.sum())
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    inter = int(np.logical_and(pred, truth).sum())
    return 2.0 * inter / (np_ + ng)


def precision_score(pred, truth):
    """|pred & truth| / |pred|; NaN when pred is empty but truth is not."""
    pred = _as_bool(pred, "pred")
    truth = _as_bool(truth, "truth")
    if pred.shape != truth.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    np_ = int(pred.sum())
    if np_ == 0:
        return 1.0 if int(truth.sum()) == 0 else float("nan")
    return int(np.logical_and(pred, truth).sum()) / np_


def sensitivity_score(pred, truth):
    """|pred & truth| / |truth|; NaN when truth is empty but pred is not."""
    return precision_score(truth, pred)


def volume_ml(mask, spacing):
    """Physical volume of a boolean mask in millilitres."""
    dz, dy, dx = spacing
    return int(np.asarray(mask, dtype=bool).sum()) * dz * dy * dx / 1000.0


@dataclass
class MetricsRow:
    """Per-sample scar metrics."""

    sample_id: str
    dice: float
    precision: float
    sensitivity: float
    vol_pred_ml: float
    vol_true_ml: float
    vol_diff_ml: float
    t_interval_days: float = float("nan")
    t_norm: float = float("nan")

    def as_row(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def compute_metrics(pred_classes, labels, sample_id="", t_interval_days=float("nan"),
                    t_norm=float("nan")):
    """Scar metrics for one predicted volume against a LabelMask."""
    pred_classes = np.asarray(pred_classes)
    if pred_classes.shape != labels.classes.shape:
        raise ShapeError(
            f"prediction {pred_classes.shape} vs labels {labels.classes.shape}"
        )
    pred = pred_classes == data.SCAR
    truth = labels.classes == data.SCAR
    vol_pred = volume_ml(pred, labels.spacing)
    vol_true = volume_ml(truth, labels.spacing)
    return MetricsRow(
        sample_id=sample_id,
        dice=dice_score(pred, truth),
        precision=precision_score(pred, truth),
        sensitivity=sensitivity_score(pred, truth),
        vol_pred_ml=vol_pred,
        vol_true_ml=vol_true,
        vol_diff_ml=abs(vol_pred - vol_true),
        t_interval_days=t_interval_days,
        t_norm=t_norm,
    )


def aha17_scar_volumes(scar_mask, prior, spacing):
    """Scar volume (mL) per AHA segment plus the extra-myocardial rest.

    The 18 parts partition the scar mask, so the per-part volumes sum to
    the total scar volume; voxel counts are included for exact checks.
    Scar voxels outside every segment channel (predicted outside the
    myocardium) land in "extra_myocardial".

    Returns:
        dict with keys "seg_01".."seg_17", "extra_myocardial", "total",
        each a (voxels, ml) tuple.
    """
    scar_mask = _as_bool(scar_mask, "scar_mask")
    if scar_mask.shape != prior.channels.shape[1:]:
        raise ShapeError(
            f"scar mask {scar_mask.shape} vs prior {prior.channels.shape[1:]}"
        )
    dz, dy, dx = spacing
    vox = dz * dy * dx / 1000.0
    out = {}
    covered = np.zeros_like(scar_mask)
    total_ml = 0.0
    total_vox = 0
    for seg in range(1, 18):
        seg_mask = prior.channels[seg - 1].astype(bool)
        count = int(np.logical_and(scar_mask, seg_mask).sum())
        covered |= seg_mask
        ml = count * vox
        out[f"seg_{seg:02d}"] = (count, ml)
        total_ml += ml
        total_vox += count
    rem = int(np.logical_and(scar_mask, ~covered).sum())
    out["extra_myocardial"] = (rem, rem * vox)
    total_ml += rem * vox
    total_vox += rem
    out["total"] = (total_vox, total_ml)
    return out


def bin_index(days):
    """Index of the acquisition-gap bin for ``days``; > 90 clamps (warned)."""
    days = float(days)
    if days < 0:
        raise ValueError(f"interval must be non-negative, got {days}")
    if days > TIME_BINS[-1][1]:
        logger.warning("interval %.1f days exceeds the last bin; clamping", days)
        return len(TIME_BINS) - 1
    for i, (lo, hi) in enumerate(TIME_BINS):
        if lo <= days < hi:
            return i
    return len(TIME_BINS) - 1  # days == 90 exactly


def time_bin_report(rows):
    """Aggregate per-sample metrics into the seven acquisition-gap bins.

    Args:
        rows: iterable of MetricsRow with t_interval_days populated.

    Returns:
        list of 7 dicts: bin_lo, bin_hi, n, mean_dice, std_dice (NaN when
        fewer samples than the statistic needs).
    """
    bins = [[] for _ in TIME_BINS]
    for row in rows:
        if math.isnan(row.t_interval_days):
            raise ConfigurationError(f"row {row.sample_id!r} lacks t_interval_days")
        bins[bin_index(row.t_interval_days)].append(row.dice)
    report = []
    for (lo, hi), dices in zip(TIME_BINS, bins):
        report.append({
            "bin_lo": lo, "bin_hi": hi, "n": len(dices),
            "mean_dice": float(np.mean(dices)) if dices else float("nan"),
            "std_dice": float(np.std(dices, ddof=1)) if len(dices) > 1 else float("nan"),
        })
    return report


def paired_ttest(a, b):
    """Two-sided paired t-test.

    Returns:
        (t, p, mean_diff).  With zero-variance differences: p = 0.0 when
        the means differ (t signed infinite), else t = 0.0, p = 1.0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"need equal-length 1-d arrays, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ConfigurationError("paired t-test needs at least 2 pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0, 0.0
        return math.copysign(math.inf, mean), 0.0, mean
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * float(stats.t.sf(abs(t), df=n - 1))
    return t, p, mean


# ----------------------------------------------------------------- inference

def run_inference(model, sample):
    """Segment one paired sample with a trained model.

    Returns:
        (pred_classes, aux): the (S, H, W) uint8 prediction and a dict of
        fusion/attention summaries (empty for ECG-free variants): w_mri,
        w_ecg, mean_gamma, mean_beta, cross_lead_attention (12, 12),
        temporal_attention (12, T') averaged over slices.
    """
    model.eval()
    items = data.slice_items(sample)
    x = np.stack([
        np.concatenate([it.image[None], it.prior.astype(np.float32)], axis=0)
        for it in items
    ])
    x = torch.from_numpy(x)
    aux = {}
    with torch.no_grad():
        if model.config.use_ecg:
            n = len(items)
            wave = torch.from_numpy(
                np.repeat(sample.ecg.waveform[None], n, axis=0).astype(np.float32)
            )
            t = torch.full((n,), float(sample.t_norm))
            out = model(x, wave, t)
            aux = {
                "w_mri": float(out.fusion.w[:, 0].mean()),
                "w_ecg": float(out.fusion.w[:, 1].mean()),
                "mean_gamma": float(out.fusion.gamma.mean()),
                "mean_beta": float(out.fusion.beta.mean()),
                "cross_lead_attention": out.latent.cross_lead_attention.mean(0).numpy(),
                "temporal_attention": out.latent.temporal_attention.mean(0).numpy(),
            }
        else:
            out = model(x)
    pred = out.logits.argmax(dim=1).numpy().astype(np.uint8)
    return pred, aux
