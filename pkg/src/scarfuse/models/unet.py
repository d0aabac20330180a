"""2D U-Net backbone with a mid-level feature tap.

The encoder path can be stopped at ``tap_depth`` to expose the feature map
that the fusion stage conditions, then resumed with the (possibly fused)
map in place of the original activations.  ``decode_segment(f, skips)`` with
the untouched tap output is exactly ``forward``; swapping in a fused map is
the only difference in the multimodal path.
"""

from dataclasses import dataclass

import torch
from torch import nn

from ..errors import DataError, ShapeError


@dataclass
class FeatureMap:
    """Activations taken at one encoder stage."""

    values: torch.Tensor  # (B, C, H', W')
    stage: int


def conv_block(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.InstanceNorm2d(cout, affine=True),
        nn.LeakyReLU(0.01),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.InstanceNorm2d(cout, affine=True),
        nn.LeakyReLU(0.01),
    )


class UNetBackbone(nn.Module):
    """Segmentation U-Net over an image stacked with its prior channels.

    Args:
        in_channels: input planes; 18 = 1 MRI + 17 prior channels.
        n_classes: output planes.
        base_width: channels of the first stage, doubling per downsample.
        depth: number of downsamplings.
        tap_depth: encoder stage exposed to the fusion stage.
    """

    def __init__(self, in_channels=18, n_classes=4, base_width=16, depth=4, tap_depth=2):
        super().__init__()
        if not 0 < tap_depth < depth:
            raise ShapeError(f"tap_depth must lie strictly inside 0..{depth}, got {tap_depth}")
        self.in_channels = in_channels
        self.n_classes = n_classes
        self.depth = depth
        self.tap_depth = tap_depth
        widths = [base_width * 2 ** d for d in range(depth + 1)]
        self.widths = widths

        self.encoders = nn.ModuleList(
            [conv_block(in_channels, widths[0])]
            + [conv_block(widths[d - 1], widths[d]) for d in range(1, depth + 1)]
        )
        self.pool = nn.MaxPool2d(2)
        self.ups = nn.ModuleList(
            [nn.ConvTranspose2d(widths[d + 1], widths[d], 2, stride=2) for d in range(depth)]
        )
        self.decoders = nn.ModuleList(
            [conv_block(2 * widths[d], widths[d]) for d in range(depth)]
        )
        self.head = nn.Conv2d(widths[0], n_classes, 1)

    @property
    def tap_channels(self):
        return self.widths[self.tap_depth]

    def _check_input(self, x):
        if x.ndim != 4:
            raise ShapeError(f"expected (B, C, H, W) input, got shape {tuple(x.shape)}")
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"expected {self.in_channels} input channels "
                f"(1 image + 17 prior), got {x.shape[1]}"
            )
        stride = 2 ** self.depth
        if x.shape[2] % stride or x.shape[3] % stride:
            raise ShapeError(
                f"spatial size {tuple(x.shape[2:])} must be divisible by {stride}; "
                f"pad or resample the input"
            )
        if not torch.isfinite(x).all():
            raise DataError("input contains non-finite values")

    def encode_to_mid(self, x):
        """Run the encoder up to the tap stage.

        Returns:
            (f, skips): the tap FeatureMap of shape
            ``(B, base * 2^tap, H / 2^tap, W / 2^tap)`` and the shallower
            encoder outputs needed later by the decoder.
        """
        self._check_input(x)
        h = x
        outputs = []
        for d in range(self.tap_depth + 1):
            if d > 0:
                h = self.pool(h)
            h = self.encoders[d](h)
            outputs.append(h)
        return FeatureMap(values=outputs[-1], stage=self.tap_depth), outputs[:-1]

    def decode_segment(self, f, skips):
        """Finish the network from a (possibly fused) tap feature map.

        Args:
            f: FeatureMap at ``tap_depth`` (fused or raw).
            skips: the list returned by :meth:`encode_to_mid`.

        Returns:
            (B, n_classes, H, W) logits tensor.
        """
        if f.stage != self.tap_depth:
            raise ShapeError(f"feature map is at stage {f.stage}, expected {self.tap_depth}")
        if len(skips) != self.tap_depth:
            raise ShapeError(f"expected {self.tap_depth} skip maps, got {len(skips)}")
        if f.values.shape[1] != self.tap_channels:
            raise ShapeError(
                f"feature map has {f.values.shape[1]} channels, expected {self.tap_channels}"
            )

        stage_outputs = list(skips) + [f.values]
        h = f.values
        for d in range(self.tap_depth + 1, self.depth + 1):
            h = self.encoders[d](self.pool(h))
            stage_outputs.append(h)

        for d in range(self.depth - 1, -1, -1):
            h = self.ups[d](h)
            skip = stage_outputs[d]
            if skip.shape[2:] != h.shape[2:]:
                raise ShapeError(
                    f"skip at depth {d} has spatial size {tuple(skip.shape[2:])}, "
                    f"decoder produced {tuple(h.shape[2:])}"
                )
            h = self.decoders[d](torch.cat([skip, h], dim=1))
        return self.head(h)

    def forward(self, x):
        f, skips = self.encode_to_mid(x)
        return self.decode_segment(f, skips)
