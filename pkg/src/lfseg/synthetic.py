"""Synthetic aerial + time-series dataset generation for desk-scale experiments.

Label geometry comes from seeded-region (Voronoi) growth in continuous SITS
coordinates, so regions look like land-cover parcels and stay consistent
between the SITS grid and the aerial center crop. Aerial pixels are a per-class
5-band palette plus noise; SITS reflectance follows a per-class, per-band
seasonal curve evaluated at each acquisition's day of year.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .core import (
    N_AERIAL_BANDS,
    N_CLASSES,
    N_SITS_BANDS,
    AerialPatch,
    LabelMask,
    ScaleProfile,
    SitsStack,
    toy_profile,
)

DAYS_PER_YEAR = 365.0
CLOUD_ALBEDO = 0.85  # bright-pixel value blended in under cloud cover


def default_palette() -> np.ndarray:
    """Per-class mean aerial spectra [13, 5] (R, G, B, NIR, elevation).

    Coniferous and deciduous share one palette (only their seasonal curves
    differ); building and impervious surface differ in palette while sharing
    the flat phenology from default_phenology().
    """
    p = np.array(
        [
            # R     G     B     NIR   elev
            [0.55, 0.50, 0.48, 0.30, 0.80],  # building
            [0.40, 0.42, 0.38, 0.35, 0.10],  # pervious surface
            [0.35, 0.33, 0.35, 0.18, 0.05],  # impervious surface
            [0.60, 0.52, 0.42, 0.40, 0.08],  # bare soil
            [0.08, 0.12, 0.20, 0.05, 0.00],  # water
            [0.12, 0.30, 0.14, 0.60, 0.55],  # coniferous
            [0.12, 0.30, 0.14, 0.60, 0.55],  # deciduous (same palette as coniferous)
            [0.22, 0.35, 0.20, 0.50, 0.20],  # brushwood
            [0.30, 0.35, 0.25, 0.45, 0.12],  # vineyard
            [0.25, 0.45, 0.22, 0.55, 0.04],  # herbaceous vegetation
            [0.35, 0.40, 0.28, 0.50, 0.03],  # agricultural land
            [0.50, 0.42, 0.36, 0.30, 0.03],  # plowed land
            [0.45, 0.45, 0.45, 0.33, 0.25],  # other
        ],
        dtype=np.float64,
    )
    return p


def default_phenology() -> np.ndarray:
    """Per-class seasonal curve parameters [13, 10, 3] = (amplitude, phase, baseline).

    Band value at day-of-year d is baseline + amplitude * sin(2*pi*d/365 + phase).
    Vegetation classes get strong seasonal swings; built surfaces are flat.
    Building and impervious surface share identical (flat) curves so they are
    separable only through the aerial palette.
    """
    bands = np.arange(N_SITS_BANDS, dtype=np.float64)
    ph = np.zeros((N_CLASSES, N_SITS_BANDS, 3), dtype=np.float64)

    flat_urban = np.stack(
        [np.zeros(N_SITS_BANDS), np.zeros(N_SITS_BANDS), 0.30 + 0.01 * bands], axis=-1
    )
    ph[0] = flat_urban   # building
    ph[2] = flat_urban   # impervious surface: same curves, different palette
    ph[1] = np.stack(
        [np.full(N_SITS_BANDS, 0.03), np.zeros(N_SITS_BANDS), 0.28 + 0.01 * bands],
        axis=-1,
    )
    ph[3] = np.stack(    # bare soil: weak seasonality
        [np.full(N_SITS_BANDS, 0.05), np.full(N_SITS_BANDS, 0.5), 0.40 + 0.005 * bands],
        axis=-1,
    )
    ph[4] = np.stack(    # water: low flat reflectance
        [np.full(N_SITS_BANDS, 0.02), np.zeros(N_SITS_BANDS), np.full(N_SITS_BANDS, 0.06)],
        axis=-1,
    )
    # coniferous: evergreen, nearly flat canopy signal
    ph[5] = np.stack(
        [np.full(N_SITS_BANDS, 0.04), np.zeros(N_SITS_BANDS), 0.45 + 0.01 * bands],
        axis=-1,
    )
    # deciduous: same palette as coniferous, strong summer peak
    ph[6] = np.stack(
        [np.full(N_SITS_BANDS, 0.30), np.full(N_SITS_BANDS, -math.pi / 2), 0.45 + 0.01 * bands],
        axis=-1,
    )
    ph[7] = np.stack(
        [np.full(N_SITS_BANDS, 0.15), np.full(N_SITS_BANDS, -math.pi / 3), 0.38 + 0.01 * bands],
        axis=-1,
    )
    ph[8] = np.stack(
        [np.full(N_SITS_BANDS, 0.20), np.full(N_SITS_BANDS, -math.pi / 2.5), 0.35 + 0.01 * bands],
        axis=-1,
    )
    ph[9] = np.stack(
        [np.full(N_SITS_BANDS, 0.18), np.full(N_SITS_BANDS, -math.pi / 2), 0.42 + 0.005 * bands],
        axis=-1,
    )
    ph[10] = np.stack(   # agricultural land: sharp crop cycle, early phase
        [np.full(N_SITS_BANDS, 0.35), np.full(N_SITS_BANDS, -math.pi), 0.40 + 0.005 * bands],
        axis=-1,
    )
    ph[11] = np.stack(   # plowed land: bare most of the year
        [np.full(N_SITS_BANDS, 0.08), np.full(N_SITS_BANDS, math.pi / 2), 0.42 + 0.005 * bands],
        axis=-1,
    )
    ph[12] = np.stack(
        [np.full(N_SITS_BANDS, 0.05), np.zeros(N_SITS_BANDS), np.full(N_SITS_BANDS, 0.35)],
        axis=-1,
    )
    return ph


def _rows_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return bool(np.allclose(a, b, atol=1e-9))


@dataclass
class SyntheticSpec:
    """Recipe for one deterministic synthetic dataset."""

    n_samples: int
    n_domains: int
    scale: ScaleProfile = field(default_factory=toy_profile)
    seed: int = 0
    class_palette: np.ndarray = field(default_factory=default_palette)
    class_phenology: np.ndarray = field(default_factory=default_phenology)
    cloud_rate: float = 0.2
    active_classes: tuple[int, ...] = tuple(range(N_CLASSES))
    regions_per_sample: int = 6
    frames_min: int = 20
    frames_max: int = 40
    aerial_noise: float = 0.02
    sits_noise: float = 0.015
    year: int = 2021
    # Snap label regions to the SITS pixel grid: every aerial label block then
    # corresponds to one SITS pixel, making classes resolvable at SITS scale.
    snap_to_sits_grid: bool = False

    def __post_init__(self):
        self.class_palette = np.asarray(self.class_palette, dtype=np.float64)
        self.class_phenology = np.asarray(self.class_phenology, dtype=np.float64)
        if self.class_palette.shape != (N_CLASSES, N_AERIAL_BANDS):
            raise ValueError(f"class_palette must be [{N_CLASSES}, {N_AERIAL_BANDS}]")
        if self.class_phenology.shape != (N_CLASSES, N_SITS_BANDS, 3):
            raise ValueError(f"class_phenology must be [{N_CLASSES}, {N_SITS_BANDS}, 3]")
        if not (0.0 <= self.cloud_rate <= 1.0):
            raise ValueError("cloud_rate must lie in [0, 1]")
        if self.n_samples < 1 or self.n_domains < 1:
            raise ValueError("need at least one sample and one domain")
        if not (1 <= self.frames_min <= self.frames_max):
            raise ValueError("invalid frame count range")
        if any(not (0 <= c < N_CLASSES) for c in self.active_classes):
            raise ValueError("active_classes out of range")
        self._check_separability_pairs()

    def _check_separability_pairs(self):
        """Require one pair split only by phenology and one only by palette."""
        pal, phe = self.class_palette, self.class_phenology
        same_pal_diff_phe = same_phe_diff_pal = False
        for i in range(N_CLASSES):
            for j in range(i + 1, N_CLASSES):
                pal_eq = _rows_equal(pal[i], pal[j])
                phe_eq = _rows_equal(phe[i], phe[j])
                same_pal_diff_phe |= pal_eq and not phe_eq
                same_phe_diff_pal |= phe_eq and not pal_eq
        if not same_pal_diff_phe:
            raise ValueError("no class pair shares palette while differing in phenology")
        if not same_phe_diff_pal:
            raise ValueError("no class pair shares phenology while differing in palette")


def seasonal_reflectance(phenology: np.ndarray, day_of_year: float) -> np.ndarray:
    """Evaluate per-class band curves at one day of year -> [13, 10]."""
    amp, phase, base = phenology[..., 0], phenology[..., 1], phenology[..., 2]
    return base + amp * np.sin(2.0 * math.pi * day_of_year / DAYS_PER_YEAR + phase)


class _VoronoiLabels:
    """Nearest-seed class labels over continuous SITS coordinates."""

    def __init__(self, seeds_yx: np.ndarray, seed_classes: np.ndarray):
        self.seeds_yx = seeds_yx
        self.seed_classes = seed_classes

    def classes_at(self, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
        pts = np.stack([ys.ravel(), xs.ravel()], axis=1)
        d2 = ((pts[:, None, :] - self.seeds_yx[None, :, :]) ** 2).sum(axis=2)
        nearest = np.argmin(d2, axis=1)
        return self.seed_classes[nearest].reshape(ys.shape)


def _grid_coords(n: int, extent: float, offset: float = 0.0) -> np.ndarray:
    """Pixel-center coordinates of an n-cell axis spanning `extent` units."""
    return offset + (np.arange(n) + 0.5) * (extent / n)


def _make_cloud_mask(rng: np.random.Generator, size: int, cloud_rate: float) -> np.ndarray:
    """Random blob mask with coverage governed by cloud_rate. Zero when rate is 0."""
    mask = np.zeros((size, size), dtype=np.float64)
    if cloud_rate <= 0.0:
        return mask
    if rng.random() >= cloud_rate:
        return mask
    target = rng.uniform(0.3, 1.0)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    for _ in range(24):
        cy, cx = rng.uniform(0, size, size=2)
        r = rng.uniform(0.2, 0.5) * size
        d = np.hypot(yy - cy, xx - cx)
        bump = np.clip(1.0 - (d / r) ** 2, 0.0, 1.0) * 0.98
        mask = np.maximum(mask, bump)
        if (mask > 0.5).mean() >= target:
            break
    return mask


def _sample_dates(rng: np.random.Generator, year: int, n: int) -> list[date]:
    days = np.sort(rng.choice(np.arange(1, 366), size=n, replace=False))
    start = date(year, 1, 1)
    return [start + timedelta(days=int(d) - 1) for d in days]


def generate_sample(spec: SyntheticSpec, sample_seed: int, patch_id: str):
    """Build one (AerialPatch, SitsStack, LabelMask) triple deterministically."""
    rng = np.random.default_rng(sample_seed)
    profile = spec.scale
    h = profile.sits_size
    big = profile.aerial_size

    n_regions = max(2, spec.regions_per_sample)
    seeds_yx = rng.uniform(0.0, h, size=(n_regions, 2))
    active = np.array(spec.active_classes, dtype=np.int64)
    seed_classes = active[rng.integers(0, len(active), size=n_regions)]
    world = _VoronoiLabels(seeds_yx, seed_classes)

    # SITS-grid labels at pixel centers.
    sy = _grid_coords(h, float(h))
    sits_labels = world.classes_at(*np.meshgrid(sy, sy, indexing="ij"))

    # Aerial labels live inside the center-crop window of the SITS extent.
    offset = (h - profile.center_crop) / 2.0
    ay = _grid_coords(big, float(profile.center_crop), offset)
    ayy, axx = np.meshgrid(ay, ay, indexing="ij")
    if spec.snap_to_sits_grid:
        ayy = np.floor(ayy) + 0.5
        axx = np.floor(axx) + 0.5
    aerial_labels = world.classes_at(ayy, axx)

    aerial = spec.class_palette[aerial_labels].transpose(2, 0, 1)
    aerial = aerial + rng.normal(0.0, spec.aerial_noise, size=aerial.shape)

    n_frames = int(rng.integers(spec.frames_min, spec.frames_max + 1))
    dates = _sample_dates(rng, spec.year, n_frames)
    frames = np.empty((n_frames, N_SITS_BANDS, h, h), dtype=np.float64)
    masks = np.empty((n_frames, h, h), dtype=np.float64)
    for t, d in enumerate(dates):
        spectra = seasonal_reflectance(spec.class_phenology, d.timetuple().tm_yday)
        frame = spectra[sits_labels].transpose(2, 0, 1)
        frame = frame + rng.normal(0.0, spec.sits_noise, size=frame.shape)
        cloud = _make_cloud_mask(rng, h, spec.cloud_rate)
        # Cloud cover contaminates reflectance toward a bright albedo.
        frame = frame * (1.0 - cloud[None]) + CLOUD_ALBEDO * cloud[None]
        frames[t] = frame
        masks[t] = cloud

    patch = AerialPatch(aerial.astype(np.float32), patch_id=patch_id)
    stack = SitsStack(
        frames.astype(np.float32),
        tuple(dates),
        masks.astype(np.float32),
        patch_id=patch_id,
    )
    mask = LabelMask(aerial_labels)
    return patch, stack, mask


def assign_domains(spec: SyntheticSpec) -> list[tuple[str, str]]:
    """Deterministic (domain_id, split) assignment with disjoint split domains.

    Domains are distributed 60/20/20 over train/val/test with at least one
    domain per split; samples are spread uniformly over domains by the caller.
    """
    if spec.n_domains < 3:
        raise ValueError("need at least 3 domains for disjoint train/val/test splits")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xD0]))
    order = rng.permutation(spec.n_domains)
    n_val = max(1, round(spec.n_domains * 0.2))
    n_test = max(1, round(spec.n_domains * 0.2))
    n_train = spec.n_domains - n_val - n_test
    if n_train < 1:
        raise ValueError("too few domains to keep a train split")
    split_of = {}
    for pos, dom in enumerate(order):
        if pos < n_train:
            split_of[dom] = "train"
        elif pos < n_train + n_val:
            split_of[dom] = "val"
        else:
            split_of[dom] = "test"
    return [(f"domain_{d:03d}", split_of[d]) for d in range(spec.n_domains)]


def sample_plan(spec: SyntheticSpec) -> list[dict]:
    """Per-sample metadata (id, domain, split, child seed) for the generator."""
    domains = assign_domains(spec)
    child_seeds = np.random.SeedSequence(spec.seed).generate_state(spec.n_samples)
    plan = []
    for i in range(spec.n_samples):
        domain_id, split = domains[i % spec.n_domains]
        plan.append(
            {
                "patch_id": f"sample_{i:05d}",
                "domain_id": domain_id,
                "split": split,
                "seed": int(child_seeds[i]),
            }
        )
    return plan
