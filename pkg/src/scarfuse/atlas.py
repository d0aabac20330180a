"""AHA 17-segment anatomical prior built from myocardium/blood-pool masks.

The left ventricle is partitioned along the slice axis into basal, mid,
apical and apex zones, and within each slice into angular sectors around
the blood-pool centroid.  Segments follow the standard AHA layout:

    basal 1..6 (6 sectors), mid 7..12 (6 sectors),
    apical 13..16 (4 sectors), apex 17 (whole myocardium).

Angles are measured counterclockwise from ``reference_angle`` (0 points
"up", toward lower row indices).  Pixels exactly on a sector boundary
take the higher sector id (floor semantics).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, ShapeError

ZONE_OF_SEGMENT = {
    **{s: "basal" for s in range(1, 7)},
    **{s: "mid" for s in range(7, 13)},
    **{s: "apical" for s in range(13, 17)},
    17: "apex",
}

SECTORS_PER_ZONE = {"basal": 6, "mid": 6, "apical": 4}
BASE_SEGMENT = {"basal": 1, "mid": 7, "apical": 13}

MIN_MYO_SLICES = 4


@dataclass
class PartitionConfig:
    """Knobs for the zone/sector construction.

    Attributes:
        reference_angle: start of sector 0, radians, normalized to [0, 2pi).
        apex_fallback_fraction: when the blood pool reaches every slice,
            the most apical ceil(fraction * n) myocardium slices become apex.
    """

    reference_angle: float = 0.0
    apex_fallback_fraction: float = 1.0 / 6.0

    def __post_init__(self):
        two_pi = 2.0 * math.pi
        self.reference_angle = float(self.reference_angle) % two_pi


@dataclass
class Aha17Prior:
    """One binary channel per AHA segment.

    Attributes:
        channels: (17, S, H, W) uint8; channel k-1 marks segment k.
        zone_of_segment: segment id -> zone name.
        reference_angle: the angle the sectors were anchored to.
    """

    channels: np.ndarray
    zone_of_segment: dict = field(default_factory=lambda: dict(ZONE_OF_SEGMENT))
    reference_angle: float = 0.0

    def __post_init__(self):
        self.channels = np.asarray(self.channels)
        if self.channels.ndim != 4 or self.channels.shape[0] != 17:
            raise ShapeError(f"prior must be (17, S, H, W), got {self.channels.shape}")
        self.channels = self.channels.astype(np.uint8)

    def segment_mask(self, segment):
        return self.channels[segment - 1].astype(bool)


def _slices_with(mask):
    return [s for s in range(mask.shape[0]) if mask[s].any()]


def longitudinal_zones(myo, bp, config=None):
    """Assign a zone to every slice of a myocardium volume.

    The apex is the contiguous run of myocardium-without-blood-pool slices
    at whichever end of the stack lacks blood pool; if the blood pool spans
    all myocardium slices, the most apical ``ceil(fraction * n)`` slices are
    taken instead (apical end defaulting to the high-index end).  Remaining
    slices split into basal/mid/apical thirds, remainder going base-first.

    Args:
        myo: (S, H, W) boolean myocardium mask.
        bp: (S, H, W) boolean blood-pool mask.
        config: PartitionConfig; defaults apply when omitted.

    Returns:
        list of length S with entries in {"basal", "mid", "apical", "apex"}
        for myocardium-bearing slices and None elsewhere.
    """
    config = config or PartitionConfig()
    myo = np.asarray(myo, dtype=bool)
    bp = np.asarray(bp, dtype=bool)
    if myo.ndim != 3 or myo.shape != bp.shape:
        raise ShapeError(
            f"masks must be matching (S, H, W) volumes, got {myo.shape} and {bp.shape}"
        )

    myo_slices = _slices_with(myo)
    n = len(myo_slices)
    if n < MIN_MYO_SLICES:
        raise GeometryError(
            f"need at least {MIN_MYO_SLICES} myocardium-bearing slices, found {n}"
        )

    has_bp = [bp[s].any() for s in myo_slices]

    if not has_bp[-1]:
        apex_at_end = True
    elif not has_bp[0]:
        apex_at_end = False
    else:
        apex_at_end = True  # fallback: treat the high-index end as apical

    # Order myocardium slices base -> apex.
    ordered = myo_slices if apex_at_end else myo_slices[::-1]
    bp_ordered = has_bp if apex_at_end else has_bp[::-1]

    if bp_ordered[-1]:
        # Blood pool reaches the apical end: fall back to a fixed fraction.
        n_apex = math.ceil(config.apex_fallback_fraction * n)
    else:
        n_apex = 0
        while n_apex < n and not bp_ordered[n - 1 - n_apex]:
            n_apex += 1
    # Keep at least one slice per remaining zone.
    n_apex = min(n_apex, n - 3)
    if n_apex < 1:
        raise GeometryError("no slices left for the apex zone")

    m = n - n_apex
    q, r = divmod(m, 3)
    sizes = [q + (1 if i < r else 0) for i in range(3)]  # basal, mid, apical

    zones = [None] * myo.shape[0]
    cursor = 0
    for zone, size in zip(("basal", "mid", "apical"), sizes):
        for s in ordered[cursor:cursor + size]:
            zones[s] = zone
        cursor += size
    for s in ordered[cursor:]:
        zones[s] = "apex"
    return zones


def pixel_angles(shape, centroid):
    """Counterclockwise angle from "up" for every pixel, in [0, 2pi).

    "Up" is the direction of decreasing row index; counterclockwise is the
    visual counterclockwise of the displayed image.
    """
    h, w = shape
    r0, c0 = centroid
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]
    up = r0 - rows          # > 0 above the centroid
    right = cols - c0       # > 0 right of the centroid
    return np.mod(np.arctan2(-right, up), 2.0 * math.pi)


def angular_sectors(mask, centroid, n_sectors, reference_angle=0.0):
    """Partition a slice mask into ``n_sectors`` equal angular sectors.

    Args:
        mask: (H, W) boolean mask of the pixels to assign.
        centroid: (row, col) rotation centre.
        n_sectors: 6 (basal/mid) or 4 (apical).
        reference_angle: start of sector 0, radians.

    Returns:
        (H, W) int array; sector ids 0..n_sectors-1 inside the mask and
        -1 outside.  An empty mask yields an all -1 assignment.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ShapeError(f"slice mask must be 2-dimensional, got shape {mask.shape}")
    if n_sectors not in (4, 6):
        raise ShapeError(f"n_sectors must be 4 or 6, got {n_sectors}")
    out = np.full(mask.shape, -1, dtype=np.int64)
    if not mask.any():
        return out
    r0, c0 = float(centroid[0]), float(centroid[1])
    if not (math.isfinite(r0) and math.isfinite(c0)):
        raise GeometryError(f"centroid must be finite, got {centroid}")

    two_pi = 2.0 * math.pi
    theta = np.mod(pixel_angles(mask.shape, (r0, c0)) - reference_angle, two_pi)
    sectors = np.floor(n_sectors * theta / two_pi).astype(np.int64)
    np.clip(sectors, 0, n_sectors - 1, out=sectors)
    out[mask] = sectors[mask]
    return out


def mask_centroid(mask):
    rows, cols = np.nonzero(mask)
    return rows.mean(), cols.mean()


def build_aha17(myo, bp, config=None):
    """Build the 17-channel segment prior for a myocardium volume.

    Per slice the rotation centre is the blood-pool centroid, falling back
    to the myocardium centroid on slices without blood pool.  Channels are
    disjoint and cover the myocardium exactly.
    """
    config = config or PartitionConfig()
    myo = np.asarray(myo, dtype=bool)
    bp = np.asarray(bp, dtype=bool)
    zones = longitudinal_zones(myo, bp, config)

    channels = np.zeros((17,) + myo.shape, dtype=np.uint8)
    for s, zone in enumerate(zones):
        if zone is None:
            continue
        slice_myo = myo[s]
        if zone == "apex":
            channels[16, s] = slice_myo
            continue
        centroid = mask_centroid(bp[s]) if bp[s].any() else mask_centroid(slice_myo)
        n_sectors = SECTORS_PER_ZONE[zone]
        sectors = angular_sectors(slice_myo, centroid, n_sectors, config.reference_angle)
        base = BASE_SEGMENT[zone]
        for k in range(n_sectors):
            channels[base - 1 + k, s] = (sectors == k) & slice_myo
    return Aha17Prior(
        channels=channels,
        zone_of_segment=dict(ZONE_OF_SEGMENT),
        reference_angle=config.reference_angle,
    )
