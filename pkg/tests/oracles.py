"""Slow reference implementations used by the acceptance suite.

These deliberately avoid the library's vectorized code paths: plain
python loops over voxels/elements, so an agreement check is meaningful.
"""

import math

import numpy as np
from scipy.special import betainc


def fuse_scalar(f, f_ecg, w, gamma, beta):
    """Element-by-element gated fusion with temporal modulation."""
    b, c, h, wd = f.shape
    f_mixed = np.zeros_like(f)
    f_fused = np.zeros_like(f)
    for i in range(b):
        for j in range(c):
            for y in range(h):
                for x in range(wd):
                    mixed = f[i, j, y, x] * w[i, 0] + f_ecg[i, j, y, x] * w[i, 1]
                    f_mixed[i, j, y, x] = mixed
                    f_fused[i, j, y, x] = (
                        f[i, j, y, x]
                        + mixed * (1.0 + gamma[i, j])
                        + beta[i, j]
                    )
    return f_mixed, f_fused


def aha17_brute_force(myo, bp, reference_angle=0.0, apex_fraction=1.0 / 6.0):
    """Per-voxel 17-segment assignment by direct rule evaluation.

    Mirrors the documented geometry: the apex end is the myocardium-only
    end of the stack (no blood pool), zones split base->apex into thirds
    plus the apex cap, sectors count counterclockwise from the reference
    angle with floor semantics, and angles come from the blood-pool
    centroid when one exists on the slice (else the myocardium centroid).
    """
    nonempty = [s for s in range(myo.shape[0]) if myo[s].any()]
    n = len(nonempty)
    slice_has_bp = [bool(bp[s].any()) for s in nonempty]

    # the apical end is whichever end lacks blood pool (high-index end wins)
    apex_at_end = not slice_has_bp[-1] or slice_has_bp[0]
    base_to_apex = nonempty if apex_at_end else list(reversed(nonempty))

    if bp[base_to_apex[-1]].any():
        n_apex = math.ceil(apex_fraction * n)  # bp everywhere: fixed cap
    else:
        n_apex = 0
        while n_apex < n and not bp[base_to_apex[n - 1 - n_apex]].any():
            n_apex += 1
    n_apex = min(n_apex, n - 3)
    assert n_apex >= 1

    third, extra = divmod(n - n_apex, 3)
    counts = [third + (1 if i < extra else 0) for i in range(3)]
    zones = {}
    idx = 0
    for zone, count in zip(("basal", "mid", "apical"), counts):
        for _ in range(count):
            zones[base_to_apex[idx]] = zone
            idx += 1
    for s in base_to_apex[idx:]:
        zones[s] = "apex"

    base_segment = {"basal": 1, "mid": 7, "apical": 13}
    n_sectors = {"basal": 6, "mid": 6, "apical": 4}
    channels = np.zeros((17,) + myo.shape, dtype=np.uint8)
    for s in nonempty:
        zone = zones[s]
        ys, xs = np.nonzero(myo[s])
        if zone == "apex":
            channels[16, s, ys, xs] = 1
            continue
        ref = bp[s] if bp[s].any() else myo[s]
        cy, cx = (c.mean() for c in np.nonzero(ref))
        n = n_sectors[zone]
        for y, x in zip(ys, xs):
            theta = math.atan2(-(x - cx), -(y - cy)) - reference_angle
            theta = theta % (2.0 * math.pi)
            sector = min(int(n * theta / (2.0 * math.pi)), n - 1)
            channels[base_segment[zone] - 1 + sector, s, y, x] = 1
    return channels


def ttest_closed_form(a, b):
    """Paired two-sided t-test from first principles.

    The p-value uses the Student-t survival function expressed through
    the regularized incomplete beta function, which for df = 2 reduces
    to sf(t) = (1 - t/sqrt(2 + t^2)) / 2.
    """
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    n = d.size
    mean = d.sum() / n
    var = ((d - mean) ** 2).sum() / (n - 1)
    t = mean / math.sqrt(var / n)
    df = n - 1
    sf = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
    p = 2.0 * sf if t >= 0 else 2.0 * (1.0 - sf)
    return t, p, mean
