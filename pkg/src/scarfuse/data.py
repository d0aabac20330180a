"""Core data model: paired ECG + short-axis MRI samples and dataset plumbing.

Label codes are fixed across the package:

    0 background, 1 blood pool, 2 healthy myocardium, 3 scar.

Volumes are indexed ``(slice, row, col)`` with spacing ``(dz, dy, dx)`` in
millimetres.  ECG waveforms are ``(12, T)`` with the standard lead order of
:data:`LEAD_NAMES`.
"""

import csv
import datetime
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, ShapeError

logger = logging.getLogger(__name__)

N_CLASSES = 4
BACKGROUND, BLOOD_POOL, MYOCARDIUM, SCAR = 0, 1, 2, 3

LEAD_NAMES = ["I", "II", "III", "aVR", "aVL", "aVF",
              "V1", "V2", "V3", "V4", "V5", "V6"]

#: Acquisition gaps are expressed as a fraction of this many days.
INTERVAL_WINDOW_DAYS = 90.0

SPLIT_RATIOS = (0.7, 0.1, 0.2)
MIN_DATASET_SIZE = 10


def normalize_interval(days):
    """Map an acquisition gap in days onto [0, 1].

    Gaps above :data:`INTERVAL_WINDOW_DAYS` clamp to 1.0 (with a logged
    warning); negative gaps are invalid.
    """
    days = float(days)
    if days < 0:
        raise ValueError(f"acquisition interval must be non-negative, got {days}")
    if days > INTERVAL_WINDOW_DAYS:
        logger.warning(
            "interval of %.1f days exceeds the %g-day window; clamping to 1.0",
            days, INTERVAL_WINDOW_DAYS,
        )
        return 1.0
    return days / INTERVAL_WINDOW_DAYS


def one_hot_labels(classes):
    """Expand an integer class array to a binary (4, ...) array.

    Args:
        classes: integer array of any shape with values in {0, 1, 2, 3}.

    Returns:
        uint8 array of shape ``(4,) + classes.shape`` where exactly one
        channel is 1 at every position.
    """
    classes = np.asarray(classes)
    if not np.issubdtype(classes.dtype, np.integer):
        raise ShapeError(f"label array must be integer, got dtype {classes.dtype}")
    bad = (classes < 0) | (classes >= N_CLASSES)
    if bad.any():
        offending = int(classes[bad].flat[0])
        raise ShapeError(
            f"label array contains class id {offending}, valid ids are 0..{N_CLASSES - 1}"
        )
    out = np.zeros((N_CLASSES,) + classes.shape, dtype=np.uint8)
    for c in range(N_CLASSES):
        out[c] = classes == c
    return out


def normalize_mri_volume(volume):
    """Per-volume z-score over nonzero voxels, clipped to +-5 standard deviations."""
    volume = np.asarray(volume, dtype=np.float64)
    nz = volume[volume != 0]
    if nz.size == 0:
        raise DataError("cannot intensity-normalize an all-zero volume")
    mean = nz.mean()
    std = nz.std()
    if std == 0:
        raise DataError("cannot intensity-normalize a constant volume")
    out = (volume - mean) / std
    np.clip(out, -5.0, 5.0, out=out)
    return out.astype(np.float32)


@dataclass
class LabelMask:
    """Integer class volume with physical spacing.

    Attributes:
        classes: (S, H, W) uint8 array with values in {0, 1, 2, 3}.
        spacing: (dz, dy, dx) in millimetres.
    """

    classes: np.ndarray
    spacing: tuple

    def __post_init__(self):
        self.classes = np.asarray(self.classes)
        if self.classes.ndim != 3:
            raise ShapeError(f"label volume must be (S, H, W), got shape {self.classes.shape}")
        if self.classes.min() < 0 or self.classes.max() >= N_CLASSES:
            raise ShapeError("label volume contains class ids outside 0..3")
        self.classes = self.classes.astype(np.uint8)
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ShapeError(f"spacing must be three positive numbers, got {self.spacing}")

    @property
    def voxel_volume_mm3(self):
        dz, dy, dx = self.spacing
        return dz * dy * dx


@dataclass
class EcgRecord:
    """A 12-lead ECG waveform plus its acquisition date."""

    waveform: np.ndarray  # (12, T) float
    acquired_at: datetime.date
    lead_names: list = field(default_factory=lambda: list(LEAD_NAMES))

    def __post_init__(self):
        self.waveform = np.asarray(self.waveform, dtype=np.float64)
        if self.waveform.ndim != 2 or self.waveform.shape[0] != 12:
            raise ShapeError(f"ECG waveform must be (12, T), got shape {self.waveform.shape}")
        if not np.isfinite(self.waveform).all():
            raise DataError("ECG waveform contains non-finite values")
        if list(self.lead_names) != LEAD_NAMES:
            raise DataError(f"unexpected lead names {self.lead_names}")


@dataclass
class PairedSample:
    """One MRI study paired with one ECG, plus the anatomical prior."""

    sample_id: str
    image: np.ndarray          # (S, H, W) float32, intensity-normalized
    labels: LabelMask
    prior: "object"            # atlas.Aha17Prior
    ecg: EcgRecord
    mri_acquired_at: datetime.date
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        if self.image.shape != self.labels.classes.shape:
            raise ShapeError(
                f"image shape {self.image.shape} does not match labels "
                f"{self.labels.classes.shape}"
            )

    @property
    def t_interval_days(self):
        return abs((self.mri_acquired_at - self.ecg.acquired_at).days)

    @property
    def t_norm(self):
        return normalize_interval(self.t_interval_days)


@dataclass
class SliceItem:
    """One training item: a single slice with the whole paired ECG."""

    sample_id: str
    slice_index: int
    image: np.ndarray      # (H, W) float32
    prior: np.ndarray      # (17, H, W) uint8
    labels: np.ndarray     # (H, W) uint8
    waveform: np.ndarray   # (12, T) float64
    t_norm: float


def median_tiled_waveform(waveform, n_beats):
    """Replace each lead by its median beat, tiled back to full length.

    Used to build denoised corpora for reconstruction pretraining; the
    record length must divide evenly into ``n_beats``.
    """
    waveform = np.asarray(waveform, dtype=np.float64)
    if waveform.ndim != 2 or waveform.shape[0] != 12:
        raise ShapeError(f"waveform must be (12, T), got shape {waveform.shape}")
    t = waveform.shape[1]
    if n_beats < 1 or t % n_beats:
        raise DataError(f"cannot split T={t} into {n_beats} equal beats")
    beats = waveform.reshape(12, n_beats, t // n_beats)
    median = np.median(beats, axis=1)
    return np.tile(median, (1, n_beats))


def slice_items(sample):
    """Unroll a paired sample into per-slice training items."""
    items = []
    t_norm = sample.t_norm
    for s in range(sample.image.shape[0]):
        items.append(SliceItem(
            sample_id=sample.sample_id,
            slice_index=s,
            image=sample.image[s],
            prior=sample.prior.channels[:, s],
            labels=sample.labels.classes[s],
            waveform=sample.ecg.waveform,
            t_norm=t_norm,
        ))
    return items


@dataclass
class DatasetManifest:
    """Which sample id belongs to which split, and how that was decided."""

    seed: int
    ratios: tuple
    splits: dict  # split name -> list of sample ids

    def all_ids(self):
        out = []
        for name in ("train", "val", "test"):
            out.extend(self.splits[name])
        return out

    def split_of(self, sample_id):
        for name, ids in self.splits.items():
            if sample_id in ids:
                return name
        raise KeyError(sample_id)

    def to_json_dict(self):
        return {
            "seed": self.seed,
            "ratios": list(self.ratios),
            "splits": {k: list(v) for k, v in self.splits.items()},
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(seed=int(d["seed"]), ratios=tuple(d["ratios"]),
                   splits={k: list(v) for k, v in d["splits"].items()})

    def save(self, path):
        Path(path).write_text(_dump_json(self.to_json_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def split_dataset(ids, seed):
    """Shuffle ids with ``seed`` and split 7:1:2 using floor semantics.

    train gets floor(0.7 N), val gets floor(0.1 N), test gets the rest.
    Fewer than 10 ids cannot populate three splits and raise.
    """
    ids = list(ids)
    n = len(ids)
    if n < MIN_DATASET_SIZE:
        raise ConfigurationError(
            f"need at least {MIN_DATASET_SIZE} samples to split 7:1:2, got {n}"
        )
    if len(set(ids)) != n:
        raise DataError("sample ids must be unique")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    shuffled = [ids[i] for i in order]
    n_train = (7 * n) // 10
    n_val = n // 10
    return DatasetManifest(
        seed=int(seed),
        ratios=SPLIT_RATIOS,
        splits={
            "train": shuffled[:n_train],
            "val": shuffled[n_train:n_train + n_val],
            "test": shuffled[n_train + n_val:],
        },
    )


# --------------------------------------------------------------------------
# On-disk layout: one directory per sample.
#
#   <dir>/image.nii.gz    intensity-normalized MRI, float32
#   <dir>/labels.nii.gz   class volume, uint8
#   <dir>/prior.nii.gz    17-channel prior stored (S, H, W, 17), uint8
#   <dir>/prior.json      zone table and reference angle for the prior
#   <dir>/ecg.csv         one row per time sample, 12 columns, header = leads
#   <dir>/meta.json       dates, spacing, derived interval fields, extras
# --------------------------------------------------------------------------

def write_sample(sample_dir, sample):
    """Write one paired sample into its own directory (created if needed)."""
    from . import nifti

    sample_dir = Path(sample_dir)
    sample_dir.mkdir(parents=True, exist_ok=True)
    spacing = sample.labels.spacing

    nifti.write_nifti(sample_dir / "image.nii.gz", sample.image, spacing)
    nifti.write_nifti(sample_dir / "labels.nii.gz", sample.labels.classes, spacing)
    prior_disk = np.ascontiguousarray(np.moveaxis(sample.prior.channels, 0, -1))
    nifti.write_nifti(sample_dir / "prior.nii.gz", prior_disk, spacing + (1.0,))
    (sample_dir / "prior.json").write_text(_dump_json({
        "reference_angle": sample.prior.reference_angle,
        "zone_of_segment": {str(k): v for k, v in sample.prior.zone_of_segment.items()},
    }))

    with open(sample_dir / "ecg.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LEAD_NAMES)
        for row in sample.ecg.waveform.T:
            writer.writerow([repr(float(v)) for v in row])

    meta = {
        "sample_id": sample.sample_id,
        "mri_acquired_at": sample.mri_acquired_at.isoformat(),
        "ecg_acquired_at": sample.ecg.acquired_at.isoformat(),
        "spacing": list(spacing),
        "t_interval_days": sample.t_interval_days,
        "t_norm": sample.t_norm,
    }
    if sample.extras:
        meta["extras"] = sample.extras
    (sample_dir / "meta.json").write_text(_dump_json(meta))


def read_sample(sample_dir):
    """Load one paired sample; the prior is rebuilt from labels if absent."""
    from . import atlas, nifti

    sample_dir = Path(sample_dir)
    meta = json.loads((sample_dir / "meta.json").read_text())
    spacing = tuple(meta["spacing"])

    image, _ = nifti.read_nifti(sample_dir / "image.nii.gz")
    classes, _ = nifti.read_nifti(sample_dir / "labels.nii.gz")
    labels = LabelMask(classes=classes, spacing=spacing)

    prior_path = sample_dir / "prior.nii.gz"
    if prior_path.exists():
        prior_disk, _ = nifti.read_nifti(prior_path)
        prior_meta = json.loads((sample_dir / "prior.json").read_text())
        prior = atlas.Aha17Prior(
            channels=np.moveaxis(prior_disk, -1, 0).astype(np.uint8),
            zone_of_segment={int(k): v for k, v in prior_meta["zone_of_segment"].items()},
            reference_angle=float(prior_meta["reference_angle"]),
        )
    else:
        myo = (classes == MYOCARDIUM) | (classes == SCAR)
        bp = classes == BLOOD_POOL
        prior = atlas.build_aha17(myo, bp, atlas.PartitionConfig())

    waveform = _read_ecg_csv(sample_dir / "ecg.csv")
    ecg = EcgRecord(
        waveform=waveform,
        acquired_at=datetime.date.fromisoformat(meta["ecg_acquired_at"]),
    )
    return PairedSample(
        sample_id=meta["sample_id"],
        image=image,
        labels=labels,
        prior=prior,
        ecg=ecg,
        mri_acquired_at=datetime.date.fromisoformat(meta["mri_acquired_at"]),
        extras=meta.get("extras", {}),
    )


def _read_ecg_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != LEAD_NAMES:
            raise DataError(f"{path}: unexpected ECG header {header}")
        rows = [[float(v) for v in row] for row in reader]
    if not rows:
        raise DataError(f"{path}: ECG file has no samples")
    return np.asarray(rows, dtype=np.float64).T


def read_dataset(data_dir):
    """Load a generated dataset directory: returns (manifest, {id: sample})."""
    data_dir = Path(data_dir)
    manifest = DatasetManifest.load(data_dir / "manifest.json")
    samples = {}
    for sid in manifest.all_ids():
        samples[sid] = read_sample(data_dir / sid)
    return manifest, samples
