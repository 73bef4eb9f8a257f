"""Shared domain types: class nomenclature, scale profiles, raster containers."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from typing import Sequence

import numpy as np

# The 12 scored classes in fixed report order, then the unscored catch-all.
LANDCOVER_CLASSES = (
    "building",
    "pervious surface",
    "impervious surface",
    "bare soil",
    "water",
    "coniferous",
    "deciduous",
    "brushwood",
    "vineyard",
    "herbaceous vegetation",
    "agricultural land",
    "plowed land",
    "other",
)

N_CLASSES = 13
N_AERIAL_BANDS = 5   # R, G, B, NIR, elevation
N_SITS_BANDS = 10

# Per-pixel probability sums must match 1 within this tolerance. Loose enough
# for single-precision softmax, tight enough to catch unnormalized logits.
PROB_SUM_TOL = 1e-5

# SITS center-crop pixels per SITS extent; fixed at 10/40 across all profiles.
CROP_NUM, CROP_DEN = 10, 40

TOY_AERIAL_SIZES = (32, 64, 128)


@dataclass(frozen=True)
class Nomenclature:
    """Ordered land-cover classes: 12 scored plus one unscored 'other'."""

    classes: tuple[str, ...] = LANDCOVER_CLASSES
    other_index: int = 12

    def __post_init__(self):
        if len(self.classes) != N_CLASSES:
            raise ValueError(f"expected {N_CLASSES} classes, got {len(self.classes)}")
        if not (0 <= self.other_index < N_CLASSES):
            raise ValueError(f"other_index {self.other_index} out of range")
        if self.classes[self.other_index] != "other":
            raise ValueError("other_index must point at the 'other' class")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def scored_indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n_classes) if i != self.other_index)

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "other_index": self.other_index}

    @classmethod
    def from_dict(cls, d: dict) -> "Nomenclature":
        return cls(classes=tuple(d["classes"]), other_index=int(d["other_index"]))


DEFAULT_NOMENCLATURE = Nomenclature()


@dataclass(frozen=True)
class ScaleProfile:
    """Pins the pixel geometry shared by every module at one scale.

    center_crop is the SITS pixel count corresponding to the aerial footprint;
    its ratio to sits_size is fixed at 10/40 so the alignment code path is
    identical at every scale.
    """

    name: str
    aerial_size: int
    sits_size: int
    center_crop: int

    def __post_init__(self):
        if self.name not in ("toy", "full"):
            raise ValueError(f"unknown profile name {self.name!r}")
        if min(self.aerial_size, self.sits_size, self.center_crop) <= 0:
            raise ValueError("profile sizes must be positive")
        if self.center_crop * CROP_DEN != self.sits_size * CROP_NUM:
            raise ValueError(
                f"center_crop/sits_size must equal {CROP_NUM}/{CROP_DEN}, "
                f"got {self.center_crop}/{self.sits_size}"
            )
        if self.center_crop > self.sits_size:
            raise ValueError("center_crop cannot exceed sits_size")
        if self.name == "full" and (self.aerial_size, self.sits_size) != (512, 40):
            raise ValueError("full profile fixes aerial_size=512, sits_size=40")
        if self.name == "toy" and self.aerial_size not in TOY_AERIAL_SIZES:
            raise ValueError(f"toy aerial_size must be one of {TOY_AERIAL_SIZES}")
        if self.aerial_size % 32 != 0:
            raise ValueError("aerial_size must be divisible by 32 (encoder ladder)")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "aerial_size": self.aerial_size,
            "sits_size": self.sits_size,
            "center_crop": self.center_crop,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScaleProfile":
        return cls(d["name"], int(d["aerial_size"]), int(d["sits_size"]),
                   int(d["center_crop"]))


FULL_PROFILE = ScaleProfile("full", aerial_size=512, sits_size=40, center_crop=10)


def toy_profile(aerial_size: int = 64, sits_size: int = 8) -> ScaleProfile:
    """Desk-scale profile. Default 64px aerial over an 8px SITS extent."""
    return ScaleProfile("toy", aerial_size, sits_size, sits_size * CROP_NUM // CROP_DEN)


@dataclass(frozen=True)
class AerialPatch:
    """5-band aerial raster (R, G, B, NIR, elevation), square, channels first."""

    pixels: np.ndarray  # float32 [5, H, W]
    patch_id: str

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[0] != N_AERIAL_BANDS:
            raise ValueError(f"aerial pixels must be [5, H, W], got {px.shape}")
        if px.shape[1] != px.shape[2]:
            raise ValueError(f"aerial patch must be square, got {px.shape[1:]}")
        object.__setattr__(self, "pixels", px)

    @property
    def size(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class SitsStack:
    """Satellite reflectance sequence with acquisition dates and cloud masks."""

    frames: np.ndarray            # float32 [T, 10, h, w]
    dates: tuple[date, ...]
    cloud_snow_masks: np.ndarray  # float32 [T, h, w], probabilities in [0, 1]
    patch_id: str

    def __post_init__(self):
        fr = np.asarray(self.frames, dtype=np.float32)
        mk = np.asarray(self.cloud_snow_masks, dtype=np.float32)
        dts = tuple(self.dates)
        if fr.ndim != 4 or fr.shape[1] != N_SITS_BANDS:
            raise ValueError(f"frames must be [T, 10, h, w], got {fr.shape}")
        if fr.shape[2] != fr.shape[3]:
            raise ValueError(f"SITS frames must be square, got {fr.shape[2:]}")
        t = fr.shape[0]
        if t < 1:
            raise ValueError("need at least one frame")
        if len(dts) != t:
            raise ValueError(f"{len(dts)} dates for {t} frames")
        if mk.shape != (t, fr.shape[2], fr.shape[3]):
            raise ValueError(f"mask shape {mk.shape} does not match frames {fr.shape}")
        if any(b >= a for a, b in zip(dts[1:], dts[:-1])):
            raise ValueError("dates not increasing")
        if len({d.year for d in dts}) > 1:
            raise ValueError("dates must lie within one calendar year")
        if mk.size and (mk.min() < 0.0 or mk.max() > 1.0):
            raise ValueError("mask values must lie in [0, 1]")
        object.__setattr__(self, "frames", fr)
        object.__setattr__(self, "cloud_snow_masks", mk)
        object.__setattr__(self, "dates", dts)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def size(self) -> int:
        return self.frames.shape[2]

    @property
    def days_of_year(self) -> np.ndarray:
        return np.array([d.timetuple().tm_yday for d in self.dates], dtype=np.int64)


@dataclass(frozen=True)
class LabelMask:
    """Per-pixel integer class ids in [0, 12]."""

    labels: np.ndarray  # int64 [H, W]

    def __post_init__(self):
        lb = np.asarray(self.labels)
        if not np.issubdtype(lb.dtype, np.integer):
            raise ValueError(f"labels must be integer, got dtype {lb.dtype}")
        lb = lb.astype(np.int64)
        if lb.ndim != 2:
            raise ValueError(f"labels must be [H, W], got {lb.shape}")
        if lb.size and (lb.min() < 0 or lb.max() >= N_CLASSES):
            raise ValueError("invalid class id in mask")
        object.__setattr__(self, "labels", lb)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class ClassProbabilityMap:
    """Per-pixel distribution over the 13 classes; the inter-branch currency."""

    probs: np.ndarray  # float [13, H, W]

    def __post_init__(self):
        pr = np.asarray(self.probs)
        if pr.ndim != 3 or pr.shape[0] != N_CLASSES:
            raise ValueError(f"probs must be [{N_CLASSES}, H, W], got {pr.shape}")
        object.__setattr__(self, "probs", pr.astype(np.float64, copy=False))

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[1:]


def validate(p: ClassProbabilityMap) -> bool:
    """True iff probabilities are nonnegative and pixel sums are 1 within tolerance."""
    probs = p.probs
    if probs.size == 0:
        return False
    if probs.min() < 0.0:
        return False
    sums = probs.sum(axis=0)
    return bool(np.abs(sums - 1.0).max() <= PROB_SUM_TOL)


def argmax_labels(p: ClassProbabilityMap) -> LabelMask:
    """Per-pixel most probable class; ties resolve to the lowest class index."""
    return LabelMask(np.argmax(p.probs, axis=0).astype(np.int64))
