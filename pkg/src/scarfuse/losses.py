"""Training objectives: segmentation, ECG reconstruction, gate entropy.

The composite objective is

    l_total = l_seg + lambda_ecg * l_ecg + lambda_ent * l_ent

where ``l_seg`` is soft Dice plus cross-entropy, ``l_ecg`` is the ECG
reconstruction MSE, and ``l_ent`` is the gate-entropy term.  In the default
``maximize_entropy`` mode the term is ``-H(w)`` (pushing the gate toward
balanced weights early on); ``paper_literal`` adds ``+H(w)`` instead.  The
signed term is what :class:`LossBreakdown` stores as ``l_ent``; the raw
entropy is reported separately as ``gate_entropy``.
"""

from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, ShapeError, TrainingAbort

DICE_SMOOTH = 1e-5
FOREGROUND_CLASSES = (1, 2, 3)
ENTROPY_MODES = ("maximize_entropy", "paper_literal")
DEFAULT_LAMBDA_ENT = 3e-3


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar view of one training step's objective.

    All fields are python floats computed in float64 so that
    ``l_total == l_seg + lambda_ecg * l_ecg + lambda_ent * l_ent``
    reproduces exactly.  Terms that do not exist for a model variant
    (no ECG branch, no gate) are stored as 0.0.
    """

    l_total: float
    l_seg: float
    l_dice: float
    l_ce: float
    l_ecg: float
    l_ent: float
    gate_entropy: float
    lambda_ecg: float
    lambda_ent: float

    def as_row(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def seg_loss(logits, target):
    """Soft Dice plus cross-entropy.

    Args:
        logits: (B, 4, H, W) raw scores.
        target: (B, H, W) integer class ids.

    Returns:
        (l_seg, l_dice, l_ce) scalar tensors; ``l_seg = l_dice + l_ce``.
    """
    if logits.ndim != 4 or target.ndim != 3:
        raise ShapeError(
            f"expected (B, C, H, W) logits and (B, H, W) target, "
            f"got {tuple(logits.shape)} and {tuple(target.shape)}"
        )
    if logits.shape[0] == 0:
        raise ShapeError("empty batch")
    if logits.shape[2:] != target.shape[1:] or logits.shape[0] != target.shape[0]:
        raise ShapeError(
            f"logits {tuple(logits.shape)} and target {tuple(target.shape)} disagree"
        )

    target = target.long()
    l_ce = F.cross_entropy(logits, target)

    probs = torch.softmax(logits, dim=1)
    dice_per_class = []
    for c in FOREGROUND_CLASSES:
        p = probs[:, c]
        g = (target == c).to(probs.dtype)
        inter = (p * g).sum()
        denom = p.sum() + g.sum()
        dice_per_class.append((2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH))
    l_dice = 1.0 - torch.stack(dice_per_class).mean()
    return l_dice + l_ce, l_dice, l_ce


def recon_loss(x, x_hat):
    """Mean squared error between an ECG batch and its reconstruction."""
    if x.shape != x_hat.shape:
        raise ShapeError(f"waveform {tuple(x.shape)} vs reconstruction {tuple(x_hat.shape)}")
    return F.mse_loss(x_hat, x)


def gate_entropy(w):
    """Shannon entropy of the gate weights, averaged over the batch.

    For a two-way gate this lies in [0, ln 2].
    """
    if w.ndim != 2:
        raise ShapeError(f"gate weights must be (B, n), got {tuple(w.shape)}")
    return -(w * torch.log(w + 1e-12)).sum(dim=1).mean()


def entropy_reg(w, mode="maximize_entropy"):
    """The signed entropy term added to the total loss."""
    if mode not in ENTROPY_MODES:
        raise ConfigurationError(f"entropy mode must be one of {ENTROPY_MODES}, got {mode!r}")
    h = gate_entropy(w)
    return -h if mode == "maximize_entropy" else h


def lambda_ecg_schedule(epoch, warmup_epochs=10, lambda_max=1.0):
    """Quadratic warmup: lambda_max * min(1, (epoch / warmup_epochs)^2)."""
    if warmup_epochs < 0 or lambda_max < 0:
        raise ConfigurationError("warmup_epochs and lambda_max must be non-negative")
    if warmup_epochs == 0:
        return float(lambda_max)
    frac = min(1.0, (epoch / warmup_epochs) ** 2)
    return float(lambda_max) * frac


def total_loss(seg, l_ecg=None, w=None, lambda_ecg=0.0,
               lambda_ent=DEFAULT_LAMBDA_ENT, entropy_mode="maximize_entropy"):
    """Combine the objective terms.

    Args:
        seg: the (l_seg, l_dice, l_ce) triple from :func:`seg_loss`.
        l_ecg: reconstruction loss tensor, or None when the model has no
            ECG branch.
        w: (B, 2) gate weights, or None when the model has no gate.
        lambda_ecg: current reconstruction weight.
        lambda_ent: entropy weight.
        entropy_mode: see module docstring.

    Returns:
        (loss, breakdown): the differentiable total and the float record.

    Raises:
        TrainingAbort: if any component is non-finite, naming the component.
    """
    l_seg_t, l_dice_t, l_ce_t = seg
    loss = l_seg_t
    if l_ecg is not None:
        loss = loss + lambda_ecg * l_ecg
    if w is not None:
        ent_term = entropy_reg(w, entropy_mode)
        h = gate_entropy(w)
        loss = loss + lambda_ent * ent_term
    else:
        ent_term = None
        h = None

    parts = {
        "l_seg": float(l_seg_t.detach()),
        "l_dice": float(l_dice_t.detach()),
        "l_ce": float(l_ce_t.detach()),
        "l_ecg": 0.0 if l_ecg is None else float(l_ecg.detach()),
        "l_ent": 0.0 if ent_term is None else float(ent_term.detach()),
        "gate_entropy": 0.0 if h is None else float(h.detach()),
    }
    for name, value in parts.items():
        if not _finite(value):
            raise TrainingAbort(f"non-finite loss component: {name} = {value}")

    l_total = (parts["l_seg"]
               + float(lambda_ecg) * parts["l_ecg"]
               + float(lambda_ent) * parts["l_ent"])
    breakdown = LossBreakdown(
        l_total=l_total,
        lambda_ecg=float(lambda_ecg),
        lambda_ent=float(lambda_ent),
        **parts,
    )
    return loss, breakdown


def _finite(x):
    return x == x and abs(x) != float("inf")
