"""SITS preprocessing: cloud/snow filtering and temporal monthly averaging.

Both strategies reduce a raw stack of 20-110 acquisitions to at most 12 clean
frames: frames whose cloudy-pixel fraction exceeds the policy bound are
dropped, then the survivors are averaged per calendar month.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np

from .core import SitsStack

# Mid-month representative date minimizes worst-case day-of-year error for the
# positional encodings downstream.
MONTH_DAY = 15


class NoCloudlessFramesError(Exception):
    """Every frame of a stack was rejected by the cloud filter."""

    def __init__(self, patch_id: str):
        super().__init__(f"no cloudless acquisitions for patch {patch_id!r}")
        self.patch_id = patch_id


@dataclass(frozen=True)
class FilterPolicy:
    """Cloud rejection rule: drop frames whose fraction of pixels with mask
    probability above prob_threshold exceeds max_cloudy_fraction."""

    prob_threshold: float = 0.5
    max_cloudy_fraction: float = 0.05

    def __post_init__(self):
        if not (0.0 <= self.prob_threshold <= 1.0):
            raise ValueError("prob_threshold must lie in [0, 1]")
        if not (0.0 <= self.max_cloudy_fraction <= 1.0):
            raise ValueError("max_cloudy_fraction must lie in [0, 1]")


def cloudy_fractions(stack: SitsStack, policy: FilterPolicy) -> np.ndarray:
    """Per-frame fraction of pixels whose mask probability exceeds the threshold."""
    exceed = stack.cloud_snow_masks > policy.prob_threshold
    return exceed.mean(axis=(1, 2))


def filter_cloudy(stack: SitsStack, policy: FilterPolicy) -> SitsStack:
    """Retain frames within the cloudy-fraction bound, order preserved."""
    keep = cloudy_fractions(stack, policy) <= policy.max_cloudy_fraction
    if not keep.any():
        raise NoCloudlessFramesError(stack.patch_id)
    idx = np.flatnonzero(keep)
    return SitsStack(
        stack.frames[idx],
        tuple(stack.dates[i] for i in idx),
        stack.cloud_snow_masks[idx],
        stack.patch_id,
    )


def monthly_average(stack: SitsStack) -> SitsStack:
    """Per-pixel arithmetic mean of each month's frames.

    Months without input frames yield no output frame; output dates sit on the
    15th of each contributing month. Masks are averaged alongside for
    diagnostics only; nothing downstream consumes them.
    """
    if stack.n_frames < 1:
        raise ValueError("empty input stack")
    year = stack.dates[0].year
    months = np.array([d.month for d in stack.dates])
    out_frames, out_masks, out_dates = [], [], []
    for m in range(1, 13):
        sel = np.flatnonzero(months == m)
        if sel.size == 0:
            continue
        out_frames.append(stack.frames[sel].mean(axis=0))
        out_masks.append(stack.cloud_snow_masks[sel].mean(axis=0))
        out_dates.append(date(year, m, MONTH_DAY))
    return SitsStack(
        np.stack(out_frames),
        tuple(out_dates),
        np.stack(out_masks),
        stack.patch_id,
    )


def preprocess(stack: SitsStack, policy: FilterPolicy) -> SitsStack:
    """filter_cloudy then monthly_average; output has 1..12 frames."""
    return monthly_average(filter_cloudy(stack, policy))


def materialize(manifest, policy: FilterPolicy, force: bool = False) -> int:
    """Write preprocessed SITS files next to each sample's raw ones.

    Returns the number of samples processed. Skips samples whose preprocessed
    files already exist unless force is set, so training never re-filters.
    """
    from .dataset import (
        DATES_PRE_FILE,
        SITS_PRE_FILE,
        load_sample,
    )

    n_done = 0
    for entry in manifest.entries:
        sdir = manifest.root / entry.sample_dir
        pre_path = sdir / SITS_PRE_FILE
        if pre_path.exists() and not force:
            continue
        sample = load_sample(manifest, entry, with_mask=False)
        clean = preprocess(sample.sits, policy)
        np.savez(pre_path, frames=clean.frames, masks=clean.cloud_snow_masks)
        (sdir / DATES_PRE_FILE).write_text(
            "\n".join(d.isoformat() for d in clean.dates) + "\n"
        )
        n_done += 1
    return n_done
