"""The assembled segmentation network and its ablation variants."""

from dataclasses import dataclass, field, asdict
from typing import Optional

import torch
from torch import nn

from ..errors import ConfigurationError
from .ecg import EcgDecoder, EcgEncoder, EcgLatent
from .fusion import FusionState, TemporalGatedFusion
from .unet import FeatureMap, UNetBackbone

IN_CHANNELS = 18  # 1 MRI plane + 17 prior channels


@dataclass
class ModelConfig:
    """Architecture knobs plus the ablation switches.

    use_prior=False zeroes the 17 prior channels at the input (the channel
    count stays 18 so checkpoints remain comparable); use_ecg=False removes
    the ECG branch and the fusion stage entirely; use_time=False keeps
    fusion but drops the time conditioning (gamma = beta = 0).
    """

    base_width: int = 16
    depth: int = 4
    tap_depth: int = 2
    n_classes: int = 4
    ecg_width: int = 16
    ecg_stages: int = 3
    attn_dim: int = 32
    t_samples: int = 600
    gate_hidden: int = 64
    film_hidden: int = 32
    use_prior: bool = True
    use_ecg: bool = True
    use_time: bool = True

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f: d[f] for f in cls.__dataclass_fields__ if f in d}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**known)

    def variant_name(self):
        if not self.use_prior:
            return "baseline"
        if not self.use_ecg:
            return "image_prior"
        if not self.use_time:
            return "no_time"
        return "full"


@dataclass
class ModelOutputs:
    logits: torch.Tensor                     # (B, 4, H, W)
    fusion: Optional[FusionState] = None
    latent: Optional[EcgLatent] = None
    ecg_recon: Optional[torch.Tensor] = None # (B, 12, T)


class FusionSegmenter(nn.Module):
    """U-Net segmenter optionally conditioned on a paired ECG.

    forward input is the stacked (B, 18, H, W) image+prior tensor; the ECG
    waveform and the normalized acquisition gap are only consumed when the
    configuration enables them.
    """

    def __init__(self, config=None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        if not cfg.use_ecg and cfg.use_time:
            # Time conditioning modulates the ECG contribution; alone it
            # would have nothing to modulate.
            raise ConfigurationError("use_time=True requires use_ecg=True")
        self.image_branch = UNetBackbone(
            in_channels=IN_CHANNELS,
            n_classes=cfg.n_classes,
            base_width=cfg.base_width,
            depth=cfg.depth,
            tap_depth=cfg.tap_depth,
        )
        if cfg.use_ecg:
            self.ecg_encoder = EcgEncoder(
                width=cfg.ecg_width, n_stages=cfg.ecg_stages, attn_dim=cfg.attn_dim
            )
            self.ecg_decoder = EcgDecoder(
                width=cfg.ecg_width, n_stages=cfg.ecg_stages, t_samples=cfg.t_samples
            )
            self.fusion = TemporalGatedFusion(
                channels=self.image_branch.tap_channels,
                gate_hidden=cfg.gate_hidden,
                film_hidden=cfg.film_hidden,
                use_time=cfg.use_time,
            )
        else:
            self.ecg_encoder = None
            self.ecg_decoder = None
            self.fusion = None

    def forward(self, image_prior, waveform=None, t_norm=None):
        x = image_prior
        if not self.config.use_prior:
            x = torch.cat([x[:, :1], torch.zeros_like(x[:, 1:])], dim=1)
        f, skips = self.image_branch.encode_to_mid(x)

        if not self.config.use_ecg:
            logits = self.image_branch.decode_segment(f, skips)
            return ModelOutputs(logits=logits)

        if waveform is None or t_norm is None:
            raise ConfigurationError(
                "this configuration fuses ECG features; pass waveform and t_norm"
            )
        latent = self.ecg_encoder(waveform)
        state = self.fusion.fuse(f, latent.z, t_norm)
        logits = self.image_branch.decode_segment(state.f_fused, skips)
        recon = self.ecg_decoder(latent.z)
        return ModelOutputs(logits=logits, fusion=state, latent=latent, ecg_recon=recon)

    def param_groups(self):
        """Named parameter partition for the per-group optimizers.

        Returns:
            dict mapping group name ("mri_backbone", "ecg_network",
            "fusion_gate") to a list of (name, parameter) pairs; groups of
            disabled modules are absent.  Together the groups cover every
            trainable parameter exactly once.
        """
        groups = {"mri_backbone": list(self.image_branch.named_parameters(prefix="image_branch"))}
        if self.ecg_encoder is not None:
            groups["ecg_network"] = (
                list(self.ecg_encoder.named_parameters(prefix="ecg_encoder"))
                + list(self.ecg_decoder.named_parameters(prefix="ecg_decoder"))
            )
            groups["fusion_gate"] = list(self.fusion.named_parameters(prefix="fusion"))
        return groups
