"""Synthetic paired ECG + short-axis LGE phantom generator.

Each sample is a small annulus stack (ring myocardium around a blood pool,
solid apex cap) with an infarct painted into chosen AHA segments: within a
segment the innermost ``transmurality`` fraction of pixels (by radius)
becomes scar, so the painted area fraction tracks the requested
transmurality to within one pixel.  Scar placement reuses the same
:func:`scarfuse.atlas.build_aha17` partition used downstream, which makes
the segments exactly recoverable from labels + prior.

The paired ECG is a per-lead template deformed on the leads of the scarred
territory (Q deepening, ST shift, T inversion) in proportion to each
affected segment's transmural burden *at the ECG acquisition time*: the
burden shrinks by ``growth_rate * t_norm`` relative to the MRI-time scar,
and acquisition quality decays: white noise grows with
``ecg_noise_gain * t_norm``, and a per-recording degradation level
(mean proportional to ``t_norm``, scattered widely around it) scales two
coupled artifacts, a per-lead gain jitter and a slow baseline wander.
Within a territory each lead picks a segment's deformation up with a
triangular affinity weight peaking at the lead aligned with the segment's
base->apex position, so the 12-lead set resolves where along the
territory the scar sits, not just that the territory is affected.  A
fresh ECG therefore describes the image well; a stale one underreports
and is degraded.  The coupling matters for gating: the gain jitter
scrambles the very lead pattern that encodes scar position, which no
downstream projection can undo, while the wander is harmless but fully
visible to the ECG encoder.  A gate that reads the wander can therefore
discount exactly the recordings whose content is damaged, per recording,
which interval-conditioned feature modulation alone cannot replicate.

A configurable fraction of scars is *occult*: rendered nearly isointense
with healthy myocardium, so the faint image trace suffices to localize
but not to delineate, and the extent must come from the paired ECG.  That
keeps the electrical modality genuinely complementary instead of
redundant.
"""

import datetime
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import atlas, data
from .errors import PhantomSpecError
from .evaluation import TIME_BINS

TERRITORY_LEADS = {
    "anterior": ["V1", "V2", "V3", "V4"],
    "inferior": ["II", "III", "aVF"],
    "lateral": ["I", "aVL", "V5", "V6"],
    "septal": ["V1", "V2"],
}

SEGMENT_TERRITORY = {
    1: "anterior", 7: "anterior", 13: "anterior", 17: "anterior",
    2: "septal", 3: "septal", 8: "septal", 9: "septal", 14: "septal",
    4: "inferior", 10: "inferior", 15: "inferior",
    5: "lateral", 6: "lateral", 11: "lateral", 12: "lateral", 16: "lateral",
}

#: zone-ordered segment lists per territory (base -> apex), used to pick
#: contiguous scars.
TERRITORY_SEGMENTS = {
    "anterior": [1, 7, 13, 17],
    "septal": [2, 3, 8, 9, 14],
    "inferior": [4, 10, 15],
    "lateral": [5, 6, 11, 12, 16],
}

#: per-lead scale of the template beat (sign flips aVR).
LEAD_GAIN = {
    "I": 0.6, "II": 1.0, "III": 0.5, "aVR": -0.7, "aVL": 0.3, "aVF": 0.8,
    "V1": 0.4, "V2": 0.7, "V3": 0.9, "V4": 1.1, "V5": 1.0, "V6": 0.8,
}


@dataclass
class GeneratorConfig:
    """Dataset-level generator knobs."""

    size: int = 64
    n_slices: int = 4
    t_samples: int = 600
    n_beats: int = 3
    spacing: tuple = (8.0, 1.4, 1.4)
    # infarct; an occult scar barely enhances, so the image localizes it
    # at best faintly and the extent must come from the ECG
    transmurality_range: tuple = (0.35, 0.9)
    two_segment_prob: float = 0.4
    occult_prob: float = 0.3
    # image model
    intensity_myo: float = 0.35
    intensity_scar: float = 0.52
    intensity_occult: float = 0.37
    intensity_blood: float = 1.0
    image_noise: float = 0.24
    bias_field: float = 0.15
    # ECG model
    ecg_base_noise: float = 0.015
    ecg_noise_gain: float = 0.25
    ecg_wander_gain: float = 0.45
    ecg_gain_jitter: float = 0.3
    growth_rate: float = 0.22
    q_gain: float = 1.8
    st_gain: float = 1.4
    t_gain: float = 1.8

    def to_dict(self):
        d = asdict(self)
        d["spacing"] = list(self.spacing)
        d["transmurality_range"] = list(self.transmurality_range)
        return d


@dataclass
class PhantomSpec:
    """Everything that determines one generated sample."""

    sample_id: str
    scar_segments: tuple
    transmurality: float
    interval_days: int
    ecg_first: bool = True
    occult: bool = False
    mri_date: datetime.date = datetime.date(2024, 6, 1)
    centre: tuple = (31.5, 31.5)
    r_outer: float = 20.0
    r_inner: float = 11.0
    apex_radius: float = 13.0
    extras: dict = field(default_factory=dict)


def _gauss(t, centre, width, amp):
    return amp * np.exp(-0.5 * ((t - centre) / width) ** 2)


def template_beat(t):
    """P-QRS-T template on beat phase t in [0, 1)."""
    return (_gauss(t, 0.18, 0.025, 0.12)
            + _gauss(t, 0.36, 0.008, -0.08)
            + _gauss(t, 0.40, 0.010, 1.00)
            + _gauss(t, 0.44, 0.010, -0.20)
            + _gauss(t, 0.65, 0.060, 0.30))


def scar_deformation(t, burden, cfg):
    """Additive beat-shape change for a territory with scar ``burden``."""
    return (_gauss(t, 0.36, 0.015, -cfg.q_gain * burden)
            + _gauss(t, 0.52, 0.050, cfg.st_gain * burden)
            + _gauss(t, 0.65, 0.060, -cfg.t_gain * burden))


def lead_segment_weight(lead_pos, n_leads, seg_pos, n_segs):
    """Triangular affinity between a territory's lead and one of its segments.

    Both are placed on [0, 1] by list position; the weight peaks when the
    lead lines up with the segment and floors at 0.25 so every territory
    lead still registers every segment.
    """
    pos_l = 0.5 if n_leads == 1 else lead_pos / (n_leads - 1)
    pos_s = 0.5 if n_segs == 1 else seg_pos / (n_segs - 1)
    return max(0.25, 1.0 - 1.5 * abs(pos_l - pos_s))


def synth_ecg(segment_burden, t_norm, cfg, rng):
    """12-lead waveform for the given per-segment scar burdens.

    Args:
        segment_burden: dict AHA segment id -> transmural burden in [0, 1]
            at ECG time.  The segment deforms the leads of its territory,
            weighted by :func:`lead_segment_weight`, so the lead pattern
            carries the scar's position within the territory.
        t_norm: normalized acquisition gap, drives noise and wander levels.
        cfg: GeneratorConfig.
        rng: numpy Generator.

    Returns:
        (12, T) float64 waveform.
    """
    beat_len = cfg.t_samples // cfg.n_beats
    if beat_len * cfg.n_beats != cfg.t_samples:
        raise PhantomSpecError(
            f"t_samples={cfg.t_samples} not divisible by n_beats={cfg.n_beats}"
        )
    phase = np.arange(beat_len) / beat_len
    base = template_beat(phase)
    deform_by_lead = {name: np.zeros(beat_len) for name in data.LEAD_NAMES}
    for seg, burden in segment_burden.items():
        if seg not in SEGMENT_TERRITORY:
            raise PhantomSpecError(f"unknown AHA segment {seg}")
        if burden <= 0:
            continue
        territory = SEGMENT_TERRITORY[seg]
        leads = TERRITORY_LEADS[territory]
        segs = TERRITORY_SEGMENTS[territory]
        wave = scar_deformation(phase, burden, cfg)
        for i, lead in enumerate(leads):
            w = lead_segment_weight(i, len(leads), segs.index(seg), len(segs))
            deform_by_lead[lead] = deform_by_lead[lead] + w * wave

    beat = np.stack([
        LEAD_GAIN[name] * base + deform_by_lead[name] for name in data.LEAD_NAMES
    ])
    waveform = np.tile(beat, (1, cfg.n_beats))
    # One degradation level per recording drives two coupled corruptions:
    # per-lead gain jitter, which scrambles the cross-lead pattern carrying
    # the scar position (harmful, and inseparable from the content), and
    # baseline wander, which is harmless on its own but advertises how
    # degraded the recording is.  The realized level scatters widely around
    # its staleness-scaled mean, so per-recording trust is worth inferring
    # from the wander instead of from the nominal interval alone.
    level = t_norm * rng.uniform(0.4, 1.6)
    n_leads = len(data.LEAD_NAMES)
    gains = 1.0 + cfg.ecg_gain_jitter * level * rng.uniform(-1.0, 1.0, (n_leads, 1))
    waveform = waveform * gains
    sigma = cfg.ecg_base_noise + cfg.ecg_noise_gain * t_norm
    waveform = waveform + rng.normal(0.0, sigma, waveform.shape)
    cycles = rng.uniform(0.5, 1.5)
    phases = rng.uniform(0.0, 2.0 * np.pi, (n_leads, 1))
    tt = np.arange(cfg.t_samples, dtype=np.float64) / cfg.t_samples
    amp = cfg.ecg_wander_gain * level
    waveform = waveform + amp * np.sin(2.0 * np.pi * cycles * tt[None, :] + phases)
    return waveform


def _anatomy(spec, cfg):
    """Myocardium/blood-pool masks and the in-plane radius field."""
    size = cfg.size
    rows = np.arange(size, dtype=np.float64)[:, None]
    cols = np.arange(size, dtype=np.float64)[None, :]
    rr = np.sqrt((rows - spec.centre[0]) ** 2 + (cols - spec.centre[1]) ** 2)
    ring = (rr >= spec.r_inner) & (rr < spec.r_outer)
    pool = rr < spec.r_inner
    cap = rr < spec.apex_radius

    myo = np.zeros((cfg.n_slices, size, size), dtype=bool)
    bp = np.zeros_like(myo)
    for s in range(cfg.n_slices - 1):
        myo[s] = ring
        bp[s] = pool
    myo[-1] = cap
    return myo, bp, rr


def _paint_scar(labels, prior, rr, segments, transmurality):
    """Mark the innermost ``transmurality`` fraction of each segment as scar."""
    for seg in segments:
        seg_mask = prior.segment_mask(seg)
        coords = np.argwhere(seg_mask)
        if coords.size == 0:
            raise PhantomSpecError(f"segment {seg} is empty in this geometry")
        radii = rr[coords[:, 1], coords[:, 2]]
        k = int(round(transmurality * len(coords)))
        if k == 0:
            continue
        order = np.argsort(radii, kind="stable")[:k]
        chosen = coords[order]
        labels[chosen[:, 0], chosen[:, 1], chosen[:, 2]] = data.SCAR


def territory_burdens(labels, prior):
    """Scar fraction of each territory's myocardium, from a label volume."""
    scar = labels == data.SCAR
    myo = (labels == data.MYOCARDIUM) | scar
    burdens = {}
    for territory, segs in TERRITORY_SEGMENTS.items():
        terr_mask = np.zeros_like(scar)
        for seg in segs:
            terr_mask |= prior.segment_mask(seg)
        denom = int((myo & terr_mask).sum())
        burdens[territory] = float((scar & terr_mask).sum()) / denom if denom else 0.0
    return burdens


def segment_burdens(labels, prior):
    """Transmural burden per AHA segment: scar voxels / segment voxels."""
    scar = labels == data.SCAR
    out = {}
    for seg in range(1, 18):
        mask = prior.segment_mask(seg)
        denom = int(mask.sum())
        out[seg] = float((scar & mask).sum()) / denom if denom else 0.0
    return out


def synth_phantom_pair(spec, cfg, rng):
    """Build one fully paired sample from its spec.

    The ECG reflects the scar state at the ECG acquisition time: each
    segment burden shrinks by ``growth_rate * t_norm`` before driving
    the waveform deformation.
    """
    myo, bp, rr = _anatomy(spec, cfg)
    labels = np.zeros(myo.shape, dtype=np.uint8)
    labels[bp] = data.BLOOD_POOL
    labels[myo] = data.MYOCARDIUM
    prior = atlas.build_aha17(myo, bp)

    for seg in spec.scar_segments:
        if seg not in SEGMENT_TERRITORY:
            raise PhantomSpecError(f"unknown AHA segment {seg}")
    if not 0.0 < spec.transmurality <= 1.0:
        raise PhantomSpecError(f"transmurality must lie in (0, 1], got {spec.transmurality}")

    _paint_scar(labels, prior, rr, spec.scar_segments, spec.transmurality)

    t_norm = data.normalize_interval(spec.interval_days)
    seg_mri = segment_burdens(labels, prior)
    seg_ecg = {
        seg: max(0.0, b - cfg.growth_rate * t_norm)
        for seg, b in seg_mri.items()
    }
    waveform = synth_ecg(seg_ecg, t_norm, cfg, rng)
    burdens_mri = territory_burdens(labels, prior)

    intensity = np.zeros(labels.shape, dtype=np.float64)
    intensity[labels == data.BLOOD_POOL] = cfg.intensity_blood
    intensity[labels == data.MYOCARDIUM] = cfg.intensity_myo
    scar_level = cfg.intensity_occult if spec.occult else cfg.intensity_scar
    intensity[labels == data.SCAR] = scar_level
    if cfg.bias_field:
        ramp = 1.0 + cfg.bias_field * (np.arange(cfg.size) - cfg.size / 2) / cfg.size
        intensity = intensity * ramp[None, None, :]
    body = labels > 0
    noise = rng.normal(0.0, cfg.image_noise, labels.shape)
    intensity[body] += noise[body]
    image = data.normalize_mri_volume(intensity)

    ecg_date = spec.mri_date - datetime.timedelta(days=spec.interval_days) \
        if spec.ecg_first else spec.mri_date + datetime.timedelta(days=spec.interval_days)

    territory = SEGMENT_TERRITORY[spec.scar_segments[0]]
    terr_myo = sum(int(prior.segment_mask(s).sum()) for s in TERRITORY_SEGMENTS[territory])
    terr_ecg = sum(seg_ecg[s] * int(prior.segment_mask(s).sum())
                   for s in TERRITORY_SEGMENTS[territory]) / terr_myo
    extras = {
        "scar_segments": list(spec.scar_segments),
        "transmurality": spec.transmurality,
        "territory": territory,
        "interval_days": spec.interval_days,
        "occult": spec.occult,
        "growth_rate": cfg.growth_rate,
        "territory_burden_mri": burdens_mri[territory],
        "territory_burden_ecg": terr_ecg,
        "segment_burden_mri": {str(k): v for k, v in seg_mri.items() if v > 0},
        "segment_burden_ecg": {str(k): v for k, v in seg_ecg.items() if seg_mri[k] > 0},
    }
    extras.update(spec.extras)
    return data.PairedSample(
        sample_id=spec.sample_id,
        image=image,
        labels=data.LabelMask(classes=labels, spacing=cfg.spacing),
        prior=prior,
        ecg=data.EcgRecord(waveform=waveform, acquired_at=ecg_date),
        mri_acquired_at=spec.mri_date,
        extras=extras,
    )


def draw_spec(sample_id, index, seed, cfg):
    """Deterministically draw one sample's spec from (seed, index).

    Acquisition gaps cycle through the seven report bins so every bin is
    populated; geometry, scar location and transmurality are sampled from
    a per-sample stream, making regeneration independent of dataset size.
    """
    rng = np.random.default_rng([seed, index, 101])
    bin_idx = index % len(TIME_BINS)
    lo, hi = TIME_BINS[bin_idx]
    # bins are upper-exclusive except the last, which closes at 90 days
    upper = hi + 1 if bin_idx == len(TIME_BINS) - 1 else hi
    interval = int(rng.integers(lo, upper))

    territory = ("anterior", "septal", "inferior", "lateral")[int(rng.integers(0, 4))]
    segs = TERRITORY_SEGMENTS[territory]
    k = 2 if (len(segs) > 1 and rng.random() < cfg.two_segment_prob) else 1
    start = int(rng.integers(0, len(segs) - k + 1))
    scar_segments = tuple(segs[start:start + k])

    tau = float(rng.uniform(*cfg.transmurality_range))
    size = cfg.size
    centre = (size - 1) / 2.0 + rng.uniform(-2.0, 2.0, size=2)
    r_outer = size * float(rng.uniform(0.28, 0.34))
    r_inner = r_outer * float(rng.uniform(0.52, 0.60))
    mri_date = datetime.date(2024, 1, 1) + datetime.timedelta(days=int(rng.integers(0, 365)))

    return PhantomSpec(
        sample_id=sample_id,
        scar_segments=scar_segments,
        transmurality=tau,
        interval_days=interval,
        ecg_first=bool(rng.random() < 0.5),
        occult=bool(rng.random() < cfg.occult_prob),
        mri_date=mri_date,
        centre=(float(centre[0]), float(centre[1])),
        r_outer=r_outer,
        r_inner=r_inner,
        apex_radius=0.65 * r_outer,
    ), rng


def generate_dataset(out_dir, n, seed, cfg=None):
    """Generate ``n`` paired samples plus the split manifest under ``out_dir``.

    Fully deterministic in (n, seed, cfg): regenerating into a fresh
    directory reproduces every file byte for byte.

    Returns:
        the DatasetManifest (also written to ``manifest.json``).
    """
    from pathlib import Path
    import json

    cfg = cfg or GeneratorConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = [f"s{i:04d}" for i in range(n)]
    manifest = data.split_dataset(ids, seed)
    for i, sid in enumerate(ids):
        spec, rng = draw_spec(sid, i, seed, cfg)
        sample = synth_phantom_pair(spec, cfg, rng)
        data.write_sample(out_dir / sid, sample)
    manifest.save(out_dir / "manifest.json")
    (out_dir / "gen_config.json").write_text(
        json.dumps({"n": n, "seed": seed, "generator": cfg.to_dict()},
                   indent=2, sort_keys=True) + "\n"
    )
    return manifest
