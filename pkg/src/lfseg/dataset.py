"""Sample storage, manifests, domain splits, augmentation, and batching.

On-disk layout: one directory per sample holding a multi-band TIFF for the
aerial patch, an .npz container for SITS frames and cloud masks, a plain-text
date sidecar, and a single-band TIFF label mask. A CSV manifest at the dataset
root lists (sample_dir, domain_id, split); normalization statistics live in a
stats.json sidecar computed over the train split at build time.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import tifffile

from .core import (
    N_AERIAL_BANDS,
    N_CLASSES,
    N_SITS_BANDS,
    AerialPatch,
    LabelMask,
    ScaleProfile,
    SitsStack,
)
from .synthetic import SyntheticSpec, generate_sample, sample_plan

MANIFEST_NAME = "manifest.csv"
STATS_NAME = "stats.json"
META_NAME = "meta.json"

AERIAL_FILE = "aerial.tif"
MASK_FILE = "mask.tif"
SITS_FILE = "sits.npz"
DATES_FILE = "dates.txt"
SITS_PRE_FILE = "sits_pre.npz"
DATES_PRE_FILE = "dates_pre.txt"

SPLITS = ("train", "val", "test")


class DatasetError(Exception):
    """Raised for malformed samples or manifests; message names the path."""


@dataclass(frozen=True)
class Sample:
    """One aligned aerial/SITS pair with an optional ground-truth mask."""

    aerial: AerialPatch
    sits: SitsStack
    mask: Optional[LabelMask]
    domain_id: str

    @property
    def patch_id(self) -> str:
        return self.aerial.patch_id


@dataclass(frozen=True)
class ManifestEntry:
    sample_dir: str  # relative to the manifest root
    domain_id: str
    split: str


@dataclass
class NormStats:
    """Per-channel standardization statistics computed on the train split."""

    aerial_mean: np.ndarray
    aerial_std: np.ndarray
    sits_mean: np.ndarray
    sits_std: np.ndarray

    def to_dict(self) -> dict:
        return {k: [float(x) for x in getattr(self, k)] for k in
                ("aerial_mean", "aerial_std", "sits_mean", "sits_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in
                     ("aerial_mean", "aerial_std", "sits_mean", "sits_std")))


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry]
    profile: Optional[ScaleProfile] = None
    stats: Optional[NormStats] = None

    def __post_init__(self):
        self.root = Path(self.root)
        self._check_domain_disjointness()

    def _check_domain_disjointness(self):
        domains = {s: set() for s in SPLITS}
        for e in self.entries:
            if e.split not in SPLITS:
                raise DatasetError(f"unknown split {e.split!r} for {e.sample_dir}")
            domains[e.split].add(e.domain_id)
        for a in SPLITS:
            for b in SPLITS:
                if a < b and domains[a] & domains[b]:
                    shared = sorted(domains[a] & domains[b])
                    raise DatasetError(
                        f"splits {a!r} and {b!r} share domains: {shared}"
                    )

    def split(self, name: str) -> list[ManifestEntry]:
        if name not in SPLITS:
            raise DatasetError(f"unknown split {name!r}")
        return [e for e in self.entries if e.split == name]

    def save(self):
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / MANIFEST_NAME
        with path.open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["sample_dir", "domain_id", "split"])
            for e in self.entries:
                writer.writerow([e.sample_dir, e.domain_id, e.split])
        if self.stats is not None:
            (self.root / STATS_NAME).write_text(json.dumps(self.stats.to_dict(), indent=2))
        if self.profile is not None:
            (self.root / META_NAME).write_text(
                json.dumps({"profile": self.profile.to_dict()}, indent=2)
            )

    @classmethod
    def load(cls, root: Path | str) -> "DatasetManifest":
        root = Path(root)
        path = root / MANIFEST_NAME
        if not path.exists():
            raise DatasetError(f"manifest not found: {path}")
        entries = []
        with path.open(newline="") as f:
            reader = csv.DictReader(f)
            for row in reader:
                entries.append(ManifestEntry(row["sample_dir"], row["domain_id"], row["split"]))
        stats = None
        if (root / STATS_NAME).exists():
            stats = NormStats.from_dict(json.loads((root / STATS_NAME).read_text()))
        profile = None
        if (root / META_NAME).exists():
            meta = json.loads((root / META_NAME).read_text())
            if "profile" in meta:
                profile = ScaleProfile.from_dict(meta["profile"])
        return cls(root=root, entries=entries, profile=profile, stats=stats)


def save_sample(sample_dir: Path, aerial: AerialPatch, sits: SitsStack,
                mask: Optional[LabelMask]):
    sample_dir = Path(sample_dir)
    sample_dir.mkdir(parents=True, exist_ok=True)
    tifffile.imwrite(sample_dir / AERIAL_FILE, aerial.pixels)
    np.savez(sample_dir / SITS_FILE, frames=sits.frames, masks=sits.cloud_snow_masks)
    (sample_dir / DATES_FILE).write_text(
        "\n".join(d.isoformat() for d in sits.dates) + "\n"
    )
    if mask is not None:
        tifffile.imwrite(sample_dir / MASK_FILE, mask.labels.astype(np.uint8))


def _read_dates(path: Path) -> tuple[date, ...]:
    try:
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
        return tuple(date.fromisoformat(ln.strip()) for ln in lines)
    except FileNotFoundError:
        raise DatasetError(f"missing file: {path}")
    except ValueError as e:
        raise DatasetError(f"bad date in {path}: {e}")


def load_sample(manifest: DatasetManifest, entry: ManifestEntry,
                preprocessed: bool = False, with_mask: bool = True) -> Sample:
    """Read one sample directory back into domain types.

    Every invariant violation is reported with the offending path. With
    preprocessed=True, the materialized filtered/averaged SITS files are
    required (training never re-filters).
    """
    sdir = manifest.root / entry.sample_dir
    aerial_path = sdir / AERIAL_FILE
    sits_path = sdir / (SITS_PRE_FILE if preprocessed else SITS_FILE)
    dates_path = sdir / (DATES_PRE_FILE if preprocessed else DATES_FILE)
    mask_path = sdir / MASK_FILE

    for p in (aerial_path, sits_path, dates_path):
        if not p.exists():
            raise DatasetError(f"missing file: {p}")

    pixels = tifffile.imread(aerial_path)
    if pixels.ndim != 3 or pixels.shape[0] != N_AERIAL_BANDS:
        raise DatasetError(f"{aerial_path}: expected [5, H, W], got {pixels.shape}")
    patch_id = sdir.name
    try:
        aerial = AerialPatch(pixels, patch_id=patch_id)
    except ValueError as e:
        raise DatasetError(f"{aerial_path}: {e}")

    with np.load(sits_path) as z:
        frames, masks = z["frames"], z["masks"]
    dates = _read_dates(dates_path)
    try:
        sits = SitsStack(frames, dates, masks, patch_id=patch_id)
    except ValueError as e:
        raise DatasetError(f"{sits_path}: {e}")

    mask = None
    if with_mask and mask_path.exists():
        labels = tifffile.imread(mask_path).astype(np.int64)
        if labels.size and labels.max() >= N_CLASSES:
            raise DatasetError(f"{mask_path}: invalid class id {int(labels.max())}")
        try:
            mask = LabelMask(labels)
        except ValueError as e:
            raise DatasetError(f"{mask_path}: {e}")
        if mask.shape != (aerial.size, aerial.size):
            raise DatasetError(
                f"{mask_path}: mask {mask.shape} does not match aerial "
                f"{(aerial.size, aerial.size)}"
            )
    if manifest.profile is not None:
        prof = manifest.profile
        if aerial.size != prof.aerial_size:
            raise DatasetError(
                f"{aerial_path}: size {aerial.size} != profile {prof.aerial_size}"
            )
        if sits.size != prof.sits_size:
            raise DatasetError(
                f"{sits_path}: size {sits.size} != profile {prof.sits_size}"
            )
    return Sample(aerial=aerial, sits=sits, mask=mask, domain_id=entry.domain_id)


def compute_stats(manifest: DatasetManifest, max_samples: int = 64) -> NormStats:
    """Per-channel mean/std over (up to max_samples of) the train split."""
    entries = manifest.split("train")[:max_samples]
    if not entries:
        raise DatasetError("cannot compute stats: empty train split")
    a_sum = np.zeros(N_AERIAL_BANDS)
    a_sq = np.zeros(N_AERIAL_BANDS)
    a_n = 0
    s_sum = np.zeros(N_SITS_BANDS)
    s_sq = np.zeros(N_SITS_BANDS)
    s_n = 0
    for e in entries:
        s = load_sample(manifest, e, with_mask=False)
        ap = s.aerial.pixels.astype(np.float64)
        a_sum += ap.sum(axis=(1, 2))
        a_sq += (ap ** 2).sum(axis=(1, 2))
        a_n += ap.shape[1] * ap.shape[2]
        fr = s.sits.frames.astype(np.float64)
        s_sum += fr.sum(axis=(0, 2, 3))
        s_sq += (fr ** 2).sum(axis=(0, 2, 3))
        s_n += fr.shape[0] * fr.shape[2] * fr.shape[3]
    a_mean = a_sum / a_n
    a_std = np.sqrt(np.maximum(a_sq / a_n - a_mean ** 2, 1e-12))
    s_mean = s_sum / s_n
    s_std = np.sqrt(np.maximum(s_sq / s_n - s_mean ** 2, 1e-12))
    return NormStats(a_mean, a_std, s_mean, s_std)


def generate_synthetic(spec: SyntheticSpec, out_dir: Path | str) -> DatasetManifest:
    """Materialize a synthetic dataset; same seed gives a bit-identical tree."""
    out_dir = Path(out_dir)
    plan = sample_plan(spec)
    entries = []
    for item in plan:
        aerial, sits, mask = generate_sample(spec, item["seed"], item["patch_id"])
        save_sample(out_dir / item["patch_id"], aerial, sits, mask)
        entries.append(ManifestEntry(item["patch_id"], item["domain_id"], item["split"]))
    manifest = DatasetManifest(root=out_dir, entries=entries, profile=spec.scale)
    manifest.stats = compute_stats(manifest)
    manifest.save()
    return manifest


# --- geometric augmentation ---------------------------------------------

FLIPS = ("none", "h", "v")
ROTATIONS = (0, 90, 180, 270)


def _transform_plane(arr: np.ndarray, flip: str, rot: int) -> np.ndarray:
    """Apply flip then rotation to the trailing two axes."""
    if flip == "h":
        arr = np.flip(arr, axis=-1)
    elif flip == "v":
        arr = np.flip(arr, axis=-2)
    k = rot // 90
    if k:
        arr = np.rot90(arr, k=k, axes=(-2, -1))
    return np.ascontiguousarray(arr)


def apply_dihedral(sample: Sample, flip: str, rot: int) -> Sample:
    """Apply one named flip/rotation to every raster of the sample."""
    if flip not in FLIPS or rot not in ROTATIONS:
        raise ValueError(f"unknown transform flip={flip!r} rot={rot}")
    aerial = AerialPatch(
        _transform_plane(sample.aerial.pixels, flip, rot), sample.aerial.patch_id
    )
    sits = SitsStack(
        _transform_plane(sample.sits.frames, flip, rot),
        sample.sits.dates,
        _transform_plane(sample.sits.cloud_snow_masks, flip, rot),
        sample.sits.patch_id,
    )
    mask = None
    if sample.mask is not None:
        mask = LabelMask(_transform_plane(sample.mask.labels, flip, rot))
    return Sample(aerial=aerial, sits=sits, mask=mask, domain_id=sample.domain_id)


def augment(sample: Sample, rng: np.random.Generator) -> Sample:
    """Random flip + right-angle rotation, identical on every raster.

    One flip from {none, h, v} and one rotation from {0, 90, 180, 270}, each
    uniform, covering the 8-element dihedral group.
    """
    if sample.mask is None:
        raise ValueError("augment requires a labelled sample (training only)")
    flip = FLIPS[rng.integers(0, len(FLIPS))]
    rot = ROTATIONS[rng.integers(0, len(ROTATIONS))]
    return apply_dihedral(sample, flip, rot)


# --- batching -------------------------------------------------------------


@dataclass
class SampleBatch:
    """Dense arrays for one batch; SITS padded along T with a validity mask."""

    aerial: np.ndarray        # [B, 5, H, W] float32
    sits: np.ndarray          # [B, T_max, 10, h, w] float32, zero padded
    day_of_year: np.ndarray   # [B, T_max] int64, padded with 1
    validity: np.ndarray      # [B, T_max] bool
    masks: Optional[np.ndarray]  # [B, H, W] int64
    patch_ids: list[str]

    def __len__(self) -> int:
        return self.aerial.shape[0]


def collate(samples: Sequence[Sample]) -> SampleBatch:
    if len({(s.aerial.size, s.sits.size) for s in samples}) > 1:
        raise DatasetError("cannot batch samples with mixed scale profiles")
    b = len(samples)
    t_max = max(s.sits.n_frames for s in samples)
    h = samples[0].aerial.size
    w = samples[0].sits.size
    aerial = np.stack([s.aerial.pixels for s in samples]).astype(np.float32)
    sits = np.zeros((b, t_max, N_SITS_BANDS, w, w), dtype=np.float32)
    doy = np.ones((b, t_max), dtype=np.int64)
    valid = np.zeros((b, t_max), dtype=bool)
    for i, s in enumerate(samples):
        t = s.sits.n_frames
        sits[i, :t] = s.sits.frames
        doy[i, :t] = s.sits.days_of_year
        valid[i, :t] = True
    masks = None
    if all(s.mask is not None for s in samples):
        masks = np.stack([s.mask.labels for s in samples]).astype(np.int64)
    return SampleBatch(aerial, sits, doy, valid, masks, [s.patch_id for s in samples])


def batch(samples: Sequence[Sample], size: int) -> Iterator[SampleBatch]:
    """Yield order-preserving batches of at most `size` samples."""
    if size < 1:
        raise ValueError("batch size must be positive")
    for start in range(0, len(samples), size):
        yield collate(samples[start:start + size])
