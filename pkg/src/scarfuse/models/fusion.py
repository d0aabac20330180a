"""Gated ECG/MRI feature fusion with temporal feature modulation.

Given the mid-level image features f and the ECG latent z, a gating MLP
produces convex weights w = (w_mri, w_ecg) over the two modalities, the
latent is projected and broadcast to a spatially constant map f_ecg, and a
small MLP on the normalized acquisition gap emits per-channel (gamma, beta):

    f_mixed = w_mri * f + w_ecg * f_ecg
    f_fused = f + f_mixed * (1 + gamma) + beta

The residual form means gamma = -1, beta = 0 reproduces the unfused
features exactly; both MLP heads are zero-initialized so training starts
at w = (0.5, 0.5) and gamma = beta = 0.
"""

import logging
from dataclasses import dataclass

import torch
from torch import nn

from ..errors import ShapeError
from .unet import FeatureMap

logger = logging.getLogger(__name__)

LATENT_DIM = 64


@dataclass
class FusionState:
    """Everything the fusion stage computed for one batch."""

    f_fused: FeatureMap
    f_mixed: torch.Tensor   # (B, C, H, W)
    f_ecg: torch.Tensor     # (B, C, H, W)
    w: torch.Tensor         # (B, 2) convex gate weights: (w_mri, w_ecg)
    gamma: torch.Tensor     # (B, C)
    beta: torch.Tensor      # (B, C)


def fuse_features(f, f_ecg, w, gamma, beta):
    """The fusion arithmetic as a pure function.

    Args:
        f: (B, C, H, W) image features.
        f_ecg: (B, C, H, W) broadcast ECG features.
        w: (B, 2) gate weights.
        gamma, beta: (B, C) modulation parameters.

    Returns:
        (f_mixed, f_fused) tensors.
    """
    w_mri = w[:, 0].reshape(-1, 1, 1, 1)
    w_ecg = w[:, 1].reshape(-1, 1, 1, 1)
    f_mixed = f * w_mri + f_ecg * w_ecg
    scale = (1.0 + gamma).unsqueeze(-1).unsqueeze(-1)
    shift = beta.unsqueeze(-1).unsqueeze(-1)
    f_fused = f + f_mixed * scale + shift
    return f_mixed, f_fused


class TemporalGatedFusion(nn.Module):
    """Fusion stage operating on the U-Net tap features.

    Args:
        channels: C of the tap feature map.
        gate_hidden: width of the gating MLP.
        film_hidden: width of the time-conditioning MLP.
        use_time: when False no time MLP exists and gamma = beta = 0,
            i.e. plain gated fusion without time awareness.
    """

    def __init__(self, channels, gate_hidden=64, film_hidden=32, use_time=True):
        super().__init__()
        self.channels = channels
        self.use_time = use_time
        self.gate = nn.Sequential(
            nn.Linear(channels + LATENT_DIM, gate_hidden),
            nn.LeakyReLU(0.01),
            nn.Linear(gate_hidden, 2),
        )
        self.ecg_proj = nn.Linear(LATENT_DIM, channels)
        if use_time:
            self.time_mlp = nn.Sequential(
                nn.Linear(1, film_hidden),
                nn.Tanh(),
                nn.Linear(film_hidden, 2 * channels),
            )
            nn.init.zeros_(self.time_mlp[-1].weight)
            nn.init.zeros_(self.time_mlp[-1].bias)
        nn.init.zeros_(self.gate[-1].weight)
        nn.init.zeros_(self.gate[-1].bias)

    def _check_latent(self, z):
        if z.ndim != 2 or z.shape[1] != LATENT_DIM:
            raise ShapeError(f"expected (B, {LATENT_DIM}) latent, got shape {tuple(z.shape)}")

    def gate_weights(self, f_values, z):
        """Convex modality weights from pooled image features and z."""
        self._check_latent(z)
        if f_values.shape[1] != self.channels:
            raise ShapeError(
                f"feature map has {f_values.shape[1]} channels, expected {self.channels}"
            )
        pooled = f_values.mean(dim=(2, 3))
        logits = self.gate(torch.cat([pooled, z], dim=1))
        return torch.softmax(logits, dim=1)

    def project_ecg(self, z, spatial):
        """Project z to C channels and broadcast over an (H, W) grid."""
        self._check_latent(z)
        h, w = spatial
        return self.ecg_proj(z).unsqueeze(-1).unsqueeze(-1).expand(-1, -1, h, w)

    def temporal_film(self, t_norm):
        """Per-channel (gamma, beta) from the normalized acquisition gap."""
        if t_norm.ndim != 1:
            raise ShapeError(f"t_norm must be a (B,) vector, got shape {tuple(t_norm.shape)}")
        if not self.use_time:
            zeros = t_norm.new_zeros(t_norm.shape[0], self.channels)
            return zeros, zeros.clone()
        if (t_norm < 0).any() or (t_norm > 1).any():
            logger.warning("t_norm outside [0, 1]; clamping for the time MLP")
            t_norm = t_norm.clamp(0.0, 1.0)
        out = self.time_mlp(t_norm.unsqueeze(1))
        gamma, beta = out.chunk(2, dim=1)
        return gamma, beta

    def fuse(self, f, z, t_norm):
        """Full fusion step for a tap feature map.

        Args:
            f: FeatureMap from the image encoder tap.
            z: (B, 64) ECG latent.
            t_norm: (B,) normalized acquisition gaps.

        Returns:
            FusionState; ``f_fused`` has the same shape and stage as ``f``.
        """
        w = self.gate_weights(f.values, z)
        f_ecg = self.project_ecg(z, f.values.shape[2:])
        gamma, beta = self.temporal_film(t_norm)
        f_mixed, f_fused = fuse_features(f.values, f_ecg, w, gamma, beta)
        return FusionState(
            f_fused=FeatureMap(values=f_fused, stage=f.stage),
            f_mixed=f_mixed,
            f_ecg=f_ecg,
            w=w,
            gamma=gamma,
            beta=beta,
        )
