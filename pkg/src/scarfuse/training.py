"""Training engine: per-group optimizers, schedules, fit/resume.

Three parameter groups are optimized differently, following the reference
recipe: the image backbone uses SGD with Nesterov momentum under a
polynomial learning-rate decay; the ECG network and the fusion gate use
AdamW under a shared warmup-plus-cosine schedule (separate weight decay).

Determinism: model init is seeded by ``torch.manual_seed(cfg.seed)``, the
batch order of epoch ``e`` is drawn from a fresh generator seeded with
``(seed, e)``, and no stochastic layers exist anywhere in the models, so a
run is a pure function of (config, data) and resuming from a checkpoint
continues the exact same trajectory.
"""

import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from . import checkpoint, data, evaluation, losses
from .errors import ConfigurationError
from .models import EcgAutoencoder, FusionSegmenter, ModelConfig

logger = logging.getLogger(__name__)

GROUP_NAMES = ("mri_backbone", "ecg_network", "fusion_gate")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    seed: int = 0
    steps_per_epoch: int = 0     # 0 = one full pass over the training slices
    # image backbone: SGD + poly decay
    lr_backbone: float = 1e-2
    poly_power: float = 0.9
    momentum: float = 0.99
    weight_decay_backbone: float = 3e-5
    # ECG network: AdamW + warmup/cosine
    lr_ecg: float = 1e-3
    weight_decay_ecg: float = 5e-5
    warmup_epochs: int = 5
    lr_floor: float = 1e-6
    # fusion gate: AdamW on the synchronized schedule
    lr_gate: float = 1e-3
    weight_decay_gate: float = 1e-4
    # objective
    lambda_max: float = 1.0
    lambda_warmup_epochs: int = 10
    lambda_ent: float = losses.DEFAULT_LAMBDA_ENT
    entropy_mode: str = "maximize_entropy"
    # ECG reconstruction pretraining (0 epochs = start from scratch)
    pretrain_epochs: int = 0
    pretrain_lr: float = 1e-3
    pretrain_batch: int = 16
    pretrain_beats: int = 3
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigurationError("epochs and batch_size must be positive")
        if self.entropy_mode not in losses.ENTROPY_MODES:
            raise ConfigurationError(
                f"entropy_mode must be one of {losses.ENTROPY_MODES}, "
                f"got {self.entropy_mode!r}"
            )

    def to_dict(self):
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f: d[f] for f in cls.__dataclass_fields__ if f in d}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**known)


# ------------------------------------------------------------- lr schedules

def poly_decay_lr(lr0, step, max_steps, power=0.9):
    """lr0 * (1 - step / max_steps) ** power, clamped to 0 past the end."""
    if max_steps <= 0 or step < 0 or power <= 0 or lr0 < 0:
        raise ConfigurationError(
            f"invalid poly schedule arguments lr0={lr0}, step={step}, "
            f"max_steps={max_steps}, power={power}"
        )
    frac = min(step / max_steps, 1.0)
    return lr0 * (1.0 - frac) ** power


def warmup_cosine_lr(step, max_steps, warmup_steps, peak, floor=1e-6):
    """Linear warmup to ``peak`` then cosine decay to ``floor``."""
    if max_steps <= 0 or not 0 <= warmup_steps <= max_steps or step < 0:
        raise ConfigurationError(
            f"invalid cosine schedule arguments step={step}, "
            f"max_steps={max_steps}, warmup_steps={warmup_steps}"
        )
    if peak < floor or floor < 0:
        raise ConfigurationError(f"need peak >= floor >= 0, got {peak}, {floor}")
    if step >= max_steps:
        return floor
    if warmup_steps > 0 and step < warmup_steps:
        return peak * (step + 1) / warmup_steps
    span = max(max_steps - warmup_steps, 1)
    progress = (step - warmup_steps) / span
    return floor + 0.5 * (peak - floor) * (1.0 + math.cos(math.pi * progress))


class OptimizerBundle:
    """The per-group optimizers plus their shared step counter."""

    def __init__(self, optimizers, cfg, max_steps, warmup_steps):
        self.optimizers = optimizers
        self.cfg = cfg
        self.max_steps = max_steps
        self.warmup_steps = warmup_steps
        self.global_step = 0

    def lr_for(self, group, step):
        cfg = self.cfg
        if group == "mri_backbone":
            return poly_decay_lr(cfg.lr_backbone, step, self.max_steps, cfg.poly_power)
        peak = cfg.lr_ecg if group == "ecg_network" else cfg.lr_gate
        return warmup_cosine_lr(step, self.max_steps, self.warmup_steps, peak, cfg.lr_floor)

    def current_lrs(self):
        return {g: self.lr_for(g, self.global_step) for g in self.optimizers}

    def zero_grad(self):
        for opt in self.optimizers.values():
            opt.zero_grad(set_to_none=True)

    def step(self):
        for group, opt in self.optimizers.items():
            lr = self.lr_for(group, self.global_step)
            for pg in opt.param_groups:
                pg["lr"] = lr
            opt.step()
        self.global_step += 1

    def state_dict(self):
        return {
            "global_step": self.global_step,
            "groups": {g: opt.state_dict() for g, opt in self.optimizers.items()},
        }

    def load_state_dict(self, state):
        self.global_step = int(state["global_step"])
        for g, opt in self.optimizers.items():
            saved = dict(state["groups"][g])
            # JSON round trips stringify the integer param ids; torch would
            # silently drop the momentum buffers on a key-type mismatch.
            saved["state"] = {
                int(k) if isinstance(k, str) and k.isdigit() else k: v
                for k, v in saved.get("state", {}).items()
            }
            opt.load_state_dict(saved)


def build_optimizers(model, cfg, max_steps, warmup_steps):
    """Create the three-group optimizer bundle for ``model``.

    Raises ConfigurationError if the model's parameter groups do not
    partition its parameters (orphaned or doubly assigned tensors).
    """
    groups = model.param_groups()
    grouped = {}
    for gname, params in groups.items():
        if gname not in GROUP_NAMES:
            raise ConfigurationError(f"unexpected parameter group {gname!r}")
        for pname, p in params:
            if id(p) in grouped:
                raise ConfigurationError(
                    f"parameter {pname} assigned to both {grouped[id(p)]} and {gname}"
                )
            grouped[id(p)] = gname
    orphans = [n for n, p in model.named_parameters() if id(p) not in grouped]
    if orphans:
        raise ConfigurationError(f"parameters outside every optimizer group: {orphans}")

    optimizers = {
        "mri_backbone": torch.optim.SGD(
            [p for _, p in groups["mri_backbone"]],
            lr=cfg.lr_backbone, momentum=cfg.momentum, nesterov=True,
            weight_decay=cfg.weight_decay_backbone,
        )
    }
    if "ecg_network" in groups:
        optimizers["ecg_network"] = torch.optim.AdamW(
            [p for _, p in groups["ecg_network"]],
            lr=cfg.lr_ecg, weight_decay=cfg.weight_decay_ecg,
        )
        optimizers["fusion_gate"] = torch.optim.AdamW(
            [p for _, p in groups["fusion_gate"]],
            lr=cfg.lr_gate, weight_decay=cfg.weight_decay_gate,
        )
    return OptimizerBundle(optimizers, cfg, max_steps, warmup_steps)


# -------------------------------------------------------------- train steps

def train_step(model, batch, optimizers, lambda_ecg, cfg):
    """One optimization step; returns the loss breakdown."""
    model.train()
    if model.config.use_ecg:
        out = model(batch["image_prior"], batch["waveform"], batch["t_norm"])
        l_ecg = losses.recon_loss(batch["waveform"], out.ecg_recon)
        w = out.fusion.w
    else:
        out = model(batch["image_prior"])
        l_ecg, w = None, None
    seg = losses.seg_loss(out.logits, batch["labels"])
    loss, breakdown = losses.total_loss(
        seg, l_ecg, w, lambda_ecg, cfg.lambda_ent, cfg.entropy_mode
    )
    optimizers.zero_grad()
    loss.backward()
    optimizers.step()
    return breakdown


def pretrain_ecg(corpus, cfg):
    """Train an ECG autoencoder on reconstruction alone.

    Args:
        corpus: (N, 12, T) array of waveforms.
        cfg: TrainConfig; the pretrain_* fields and the model's ECG
            dimensions are used.

    Returns:
        (autoencoder, history): the trained module and per-epoch MSE means.
    """
    corpus = np.asarray(corpus, dtype=np.float32)
    if corpus.ndim != 3 or corpus.shape[1] != 12:
        raise ConfigurationError(f"corpus must be (N, 12, T), got {corpus.shape}")
    torch.manual_seed(cfg.seed)
    model = EcgAutoencoder(
        width=cfg.model.ecg_width, n_stages=cfg.model.ecg_stages,
        attn_dim=cfg.model.attn_dim, t_samples=corpus.shape[2],
    )
    n = corpus.shape[0]
    steps_per_epoch = max(1, math.ceil(n / cfg.pretrain_batch))
    max_steps = cfg.pretrain_epochs * steps_per_epoch
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.pretrain_lr,
                            weight_decay=cfg.weight_decay_ecg)
    waves = torch.from_numpy(corpus)
    history = []
    step = 0
    for epoch in range(cfg.pretrain_epochs):
        order = np.random.default_rng([cfg.seed, epoch, 17]).permutation(n)
        epoch_losses = []
        for s in range(steps_per_epoch):
            idx = order[s * cfg.pretrain_batch:(s + 1) * cfg.pretrain_batch]
            if idx.size == 0:
                break
            x = waves[torch.from_numpy(idx)]
            lr = warmup_cosine_lr(step, max_steps, max_steps // 10,
                                  cfg.pretrain_lr, cfg.lr_floor)
            for pg in opt.param_groups:
                pg["lr"] = lr
            opt.zero_grad(set_to_none=True)
            recon, _ = model(x)
            loss = losses.recon_loss(x, recon)
            loss.backward()
            opt.step()
            step += 1
            epoch_losses.append(float(loss.detach()))
        history.append(float(np.mean(epoch_losses)))
    return model, history


# --------------------------------------------------------------------- fit

def _stack_items(items):
    x = np.stack([np.concatenate([it.image[None], it.prior.astype(np.float32)], axis=0)
                  for it in items])
    y = np.stack([it.labels for it in items]).astype(np.int64)
    waves = np.stack([it.waveform for it in items]).astype(np.float32)
    t = np.array([it.t_norm for it in items], dtype=np.float32)
    return (torch.from_numpy(x), torch.from_numpy(y),
            torch.from_numpy(waves), torch.from_numpy(t))


def _load_data(source):
    if isinstance(source, (str, Path)):
        return data.read_dataset(source)
    manifest, samples = source
    return manifest, samples


def load_model(path):
    """Rebuild a FusionSegmenter from a checkpoint file.

    Returns:
        (model, cfg, meta): the module in eval mode, its TrainConfig, and
        the checkpoint metadata.
    """
    bundle = checkpoint.load_checkpoint(path)
    cfg = TrainConfig.from_dict(bundle.config)
    model = FusionSegmenter(cfg.model)
    state = {k: torch.from_numpy(v.copy()) for k, v in bundle.model_state.items()}
    model.load_state_dict(state)
    model.eval()
    return model, cfg, bundle.meta


def _save(path, cfg, model, optimizers, meta):
    checkpoint.save_checkpoint(
        path, cfg.to_dict(), model,
        optimizer_states=optimizers.state_dict() if optimizers else None,
        meta=meta,
    )


def fit(cfg, dataset, out_dir, resume_from=None, stop_after_epochs=None):
    """Train a model and write logs, checkpoints and a summary.

    Args:
        cfg: TrainConfig.
        dataset: a dataset directory or an in-memory (manifest, samples)
            pair as returned by :func:`scarfuse.data.read_dataset`.
        out_dir: run directory; created if missing.
        resume_from: optional checkpoint path to continue from.
        stop_after_epochs: checkpoint and stop once this many epochs are
            done, as if the run had been interrupted. Schedules still span
            the full ``cfg.epochs`` horizon, so resuming from the written
            checkpoint with the same config reproduces the uninterrupted
            run exactly.

    Returns:
        summary dict (also written to ``summary.json``).
    """
    if stop_after_epochs is not None and stop_after_epochs <= 0:
        raise ConfigurationError("stop_after_epochs must be positive")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest, samples = _load_data(dataset)
    train_samples = [samples[sid] for sid in manifest.splits["train"]]
    val_samples = [samples[sid] for sid in manifest.splits["val"]]
    if not train_samples or not val_samples:
        raise ConfigurationError("dataset must provide non-empty train and val splits")

    train_items = [it for s in train_samples for it in data.slice_items(s)]
    if cfg.model.use_ecg:
        t_len = train_items[0].waveform.shape[1]
        if t_len != cfg.model.t_samples:
            raise ConfigurationError(
                f"dataset waveforms have T={t_len} but the model expects "
                f"t_samples={cfg.model.t_samples}"
            )

    torch.manual_seed(cfg.seed)
    model = FusionSegmenter(cfg.model)

    if cfg.pretrain_epochs > 0 and cfg.model.use_ecg:
        corpus = np.stack([
            data.median_tiled_waveform(s.ecg.waveform, cfg.pretrain_beats)
            if cfg.pretrain_beats > 1 else s.ecg.waveform
            for s in train_samples
        ])
        pretrained, history = pretrain_ecg(corpus, cfg)
        model.ecg_encoder.load_state_dict(pretrained.encoder.state_dict())
        model.ecg_decoder.load_state_dict(pretrained.decoder.state_dict())
        logger.info("ECG pretraining done, MSE %.5f -> %.5f", history[0], history[-1])

    n_train = len(train_items)
    full_steps = math.ceil(n_train / cfg.batch_size)
    steps_per_epoch = min(cfg.steps_per_epoch, full_steps) if cfg.steps_per_epoch else full_steps
    max_steps = cfg.epochs * steps_per_epoch
    optimizers = build_optimizers(model, cfg, max_steps,
                                  warmup_steps=cfg.warmup_epochs * steps_per_epoch)

    start_epoch = 0
    best_val = -math.inf
    best_epoch = -1
    if resume_from is not None:
        bundle = checkpoint.load_checkpoint(resume_from)
        resumed_cfg = TrainConfig.from_dict(bundle.config)
        if resumed_cfg.model != cfg.model:
            raise ConfigurationError("checkpoint model architecture differs from config")
        model.load_state_dict(
            {k: torch.from_numpy(v.copy()) for k, v in bundle.model_state.items()}
        )
        optimizers.load_state_dict(bundle.optimizer_state)
        start_epoch = int(bundle.meta["epochs_completed"])
        best_val = float(bundle.meta["best_val_dice"])
        best_epoch = int(bundle.meta["best_epoch"])
        if start_epoch >= cfg.epochs:
            raise ConfigurationError(
                f"checkpoint already covers {start_epoch} epochs, config asks for {cfg.epochs}"
            )
        logger.info("resuming at epoch %d from %s", start_epoch, resume_from)

    x_all, y_all, w_all, t_all = _stack_items(train_items)
    train_rows, val_rows, fusion_rows = [], [], []
    val_dice = float("nan")
    epoch_mean_loss = float("nan")
    epochs_completed = start_epoch

    for epoch in range(start_epoch, cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n_train)
        lambda_ecg = losses.lambda_ecg_schedule(
            epoch, cfg.lambda_warmup_epochs, cfg.lambda_max
        )
        epoch_losses = []
        for s in range(steps_per_epoch):
            idx = torch.from_numpy(order[s * cfg.batch_size:(s + 1) * cfg.batch_size])
            if idx.numel() == 0:
                break
            batch = {
                "image_prior": x_all[idx],
                "labels": y_all[idx],
                "waveform": w_all[idx],
                "t_norm": t_all[idx],
            }
            lrs = optimizers.current_lrs()
            bd = train_step(model, batch, optimizers, lambda_ecg, cfg)
            epoch_losses.append(bd.l_total)
            row = {"epoch": epoch, "step": s, "global_step": optimizers.global_step - 1}
            row.update({f"lr_{g}": lr for g, lr in lrs.items()})
            row.update(bd.as_row())
            train_rows.append(row)

        epoch_mean_loss = float(np.mean(epoch_losses))
        val_dice, epoch_fusion = _validate(model, val_samples, epoch)
        val_rows.append({
            "epoch": epoch, "val_scar_dice": val_dice,
            "train_loss": epoch_mean_loss, "lambda_ecg": lambda_ecg,
        })
        fusion_rows.extend(epoch_fusion)
        logger.info("epoch %d: train loss %.4f, val scar dice %.4f",
                    epoch, epoch_mean_loss, val_dice)

        if val_dice > best_val:
            best_val, best_epoch = val_dice, epoch
            _save(out_dir / "best.ckpt", cfg, model, optimizers, {
                "kind": "best", "epochs_completed": epoch + 1,
                "best_val_dice": best_val, "best_epoch": best_epoch,
            })

        epochs_completed = epoch + 1
        if stop_after_epochs is not None and epochs_completed >= stop_after_epochs:
            logger.info("stopping after epoch %d as requested", epoch)
            break

    _save(out_dir / "final.ckpt", cfg, model, optimizers, {
        "kind": "final", "epochs_completed": epochs_completed,
        "best_val_dice": best_val, "best_epoch": best_epoch,
    })

    _write_csv(out_dir / "train_log.csv", train_rows)
    _write_csv(out_dir / "val_log.csv", val_rows)
    _write_csv(out_dir / "fusion_log.csv", fusion_rows)
    (out_dir / "config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    summary = {
        "variant": cfg.model.variant_name(),
        "epochs": epochs_completed,
        "global_step": optimizers.global_step,
        "best_val_dice": best_val,
        "best_epoch": best_epoch,
        "final_val_dice": val_dice,
        "final_train_loss": epoch_mean_loss,
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    return summary


def _validate(model, val_samples, epoch):
    dices = []
    fusion_rows = []
    for sample in val_samples:
        pred, aux = evaluation.run_inference(model, sample)
        row = evaluation.compute_metrics(pred, sample.labels)
        dices.append(row.dice)
        if "w_ecg" in aux:
            fusion_rows.append({
                "epoch": epoch, "sample_id": sample.sample_id,
                "t_norm": sample.t_norm,
                "w_mri": aux["w_mri"], "w_ecg": aux["w_ecg"],
                "mean_gamma": aux["mean_gamma"], "mean_beta": aux["mean_beta"],
            })
    return float(np.mean(dices)), fusion_rows


def _write_csv(path, rows):
    import csv as _csv

    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
