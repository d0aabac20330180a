"""12-lead ECG encoder/decoder with temporal and cross-lead attention.

Leads share a small strided conv stack; a per-lead temporal attention pools
each lead to one vector, and a single cross-lead attention layer lets leads
exchange information before the latent projection.  Both attention maps are
kept on the latent so they can be exported for inspection.
"""

import math
from dataclasses import dataclass

import torch
from torch import nn

from ..errors import DataError, ShapeError

N_LEADS = 12
LATENT_DIM = 64


@dataclass
class EcgLatent:
    """Encoder output.

    Attributes:
        z: (B, 64) latent code.
        cross_lead_attention: (B, 12, 12), each row a distribution over leads.
        temporal_attention: (B, 12, T'), each lead's distribution over time.
    """

    z: torch.Tensor
    cross_lead_attention: torch.Tensor
    temporal_attention: torch.Tensor


class EcgEncoder(nn.Module):
    """Waveform (B, 12, T) -> EcgLatent with z of width 64.

    T must be divisible by 2^n_stages (8 by default) and at least 64.
    """

    def __init__(self, width=16, n_stages=3, attn_dim=32):
        super().__init__()
        self.n_stages = n_stages
        self.stride = 2 ** n_stages
        chans = [1] + [width * 2 ** i for i in range(n_stages)]
        self.feature_dim = chans[-1]
        stages = []
        for i in range(n_stages):
            stages += [
                nn.Conv1d(chans[i], chans[i + 1], 5, stride=2, padding=2),
                nn.InstanceNorm1d(chans[i + 1], affine=True),
                nn.LeakyReLU(0.01),
            ]
        self.conv = nn.Sequential(*stages)
        self.time_score = nn.Sequential(
            nn.Conv1d(self.feature_dim, attn_dim, 1),
            nn.Tanh(),
            nn.Conv1d(attn_dim, 1, 1),
        )
        self.q_proj = nn.Linear(self.feature_dim, attn_dim)
        self.k_proj = nn.Linear(self.feature_dim, attn_dim)
        self.v_proj = nn.Linear(self.feature_dim, self.feature_dim)
        self.attn_scale = 1.0 / math.sqrt(attn_dim)
        self.to_latent = nn.Linear(N_LEADS * self.feature_dim, LATENT_DIM)

    def _check_input(self, waveform):
        if waveform.ndim != 3 or waveform.shape[1] != N_LEADS:
            raise ShapeError(
                f"expected a (B, {N_LEADS}, T) waveform, got shape {tuple(waveform.shape)}"
            )
        t = waveform.shape[2]
        if t < 64 or t % self.stride:
            raise ShapeError(
                f"waveform length {t} unsupported: need T >= 64 and divisible by "
                f"{self.stride}; resample or pad the record"
            )
        if not torch.isfinite(waveform).all():
            raise DataError("waveform contains non-finite values")

    def forward(self, waveform):
        self._check_input(waveform)
        b, _, t = waveform.shape
        h = self.conv(waveform.reshape(b * N_LEADS, 1, t))  # (B*12, C, T')
        t_out = h.shape[2]

        alpha = torch.softmax(self.time_score(h), dim=2)    # (B*12, 1, T')
        pooled = (h * alpha).sum(dim=2)                     # (B*12, C)
        leads = pooled.reshape(b, N_LEADS, self.feature_dim)

        q, k = self.q_proj(leads), self.k_proj(leads)
        attn = torch.softmax(q @ k.transpose(1, 2) * self.attn_scale, dim=2)  # (B, 12, 12)
        mixed = leads + attn @ self.v_proj(leads)

        z = self.to_latent(mixed.reshape(b, N_LEADS * self.feature_dim))
        return EcgLatent(
            z=z,
            cross_lead_attention=attn,
            temporal_attention=alpha.reshape(b, N_LEADS, t_out),
        )


class EcgDecoder(nn.Module):
    """Latent (B, 64) -> reconstructed waveform (B, 12, T)."""

    def __init__(self, width=16, n_stages=3, t_samples=600):
        super().__init__()
        stride = 2 ** n_stages
        if t_samples % stride:
            raise ShapeError(f"t_samples must be divisible by {stride}, got {t_samples}")
        self.t_samples = t_samples
        self.t0 = t_samples // stride
        c0 = width * 2 ** (n_stages - 1)
        self.c0 = c0
        self.expand = nn.Linear(LATENT_DIM, c0 * self.t0)
        ups = []
        cin = c0
        for i in range(n_stages - 1):
            cout = max(cin // 2, N_LEADS)
            ups += [
                nn.ConvTranspose1d(cin, cout, 4, stride=2, padding=1),
                nn.InstanceNorm1d(cout, affine=True),
                nn.LeakyReLU(0.01),
            ]
            cin = cout
        ups.append(nn.ConvTranspose1d(cin, N_LEADS, 4, stride=2, padding=1))
        self.up = nn.Sequential(*ups)

    def forward(self, z):
        if z.ndim != 2 or z.shape[1] != LATENT_DIM:
            raise ShapeError(f"expected (B, {LATENT_DIM}) latent, got shape {tuple(z.shape)}")
        h = self.expand(z).reshape(z.shape[0], self.c0, self.t0)
        return self.up(h)


class EcgAutoencoder(nn.Module):
    """Encoder and decoder bundled for reconstruction pretraining."""

    def __init__(self, width=16, n_stages=3, attn_dim=32, t_samples=600):
        super().__init__()
        self.encoder = EcgEncoder(width=width, n_stages=n_stages, attn_dim=attn_dim)
        self.decoder = EcgDecoder(width=width, n_stages=n_stages, t_samples=t_samples)

    def forward(self, waveform):
        latent = self.encoder(waveform)
        return self.decoder(latent.z), latent
