"""Synthetic dataset generator: determinism, geometry, split discipline."""

import numpy as np
import pytest

from lfseg.core import N_CLASSES, toy_profile
from lfseg.synthetic import (
    SyntheticSpec,
    assign_domains,
    default_palette,
    default_phenology,
    generate_sample,
    sample_plan,
    seasonal_reflectance,
)


def toy_spec(**kw):
    base = dict(n_samples=9, n_domains=3, scale=toy_profile(aerial_size=32),
                seed=5, frames_min=6, frames_max=9)
    base.update(kw)
    return SyntheticSpec(**base)


def test_default_tables_have_the_designed_ambiguities():
    pal, phe = default_palette(), default_phenology()
    assert pal.shape == (N_CLASSES, 5)
    assert phe.shape == (N_CLASSES, 10, 3)
    # coniferous (5) and deciduous (6): one palette, two seasonal curves
    np.testing.assert_allclose(pal[5], pal[6])
    assert not np.allclose(phe[5], phe[6])
    # building (0) and impervious surface (2): one curve, two palettes
    np.testing.assert_allclose(phe[0], phe[2])
    assert not np.allclose(pal[0], pal[2])


def test_seasonal_reflectance_formula():
    phe = np.zeros((2, 10, 3))
    phe[0, :, 2] = 0.4              # flat baseline
    phe[1, :, 0] = 0.3              # pure sinusoid, phase 0
    out = seasonal_reflectance(phe, 91.25)  # quarter year: sin == 1
    np.testing.assert_allclose(out[0], 0.4)
    np.testing.assert_allclose(out[1], 0.3 * np.sin(2 * np.pi * 91.25 / 365),
                               atol=1e-12)


def test_generate_sample_is_deterministic():
    spec = toy_spec()
    a1, s1, m1 = generate_sample(spec, sample_seed=77, patch_id="x")
    a2, s2, m2 = generate_sample(spec, sample_seed=77, patch_id="x")
    np.testing.assert_array_equal(a1.pixels, a2.pixels)
    np.testing.assert_array_equal(s1.frames, s2.frames)
    np.testing.assert_array_equal(m1.labels, m2.labels)
    assert s1.dates == s2.dates
    a3, _, _ = generate_sample(spec, sample_seed=78, patch_id="x")
    assert not np.array_equal(a1.pixels, a3.pixels)


def test_sample_shapes_follow_the_profile():
    spec = toy_spec()
    aerial, sits, mask = generate_sample(spec, sample_seed=1, patch_id="p")
    assert aerial.pixels.shape == (5, 32, 32)
    assert sits.frames.shape[1:] == (10, 8, 8)
    assert spec.frames_min <= sits.n_frames <= spec.frames_max
    assert mask.labels.shape == (32, 32)
    assert set(np.unique(mask.labels)) <= set(range(N_CLASSES))


def test_active_classes_bound_the_labels():
    spec = toy_spec(active_classes=(4, 6, 10), regions_per_sample=12)
    _, _, mask = generate_sample(spec, sample_seed=3, patch_id="p")
    assert set(np.unique(mask.labels)) <= {4, 6, 10}


def test_snap_to_sits_grid_makes_labels_blockwise():
    """With snapping on, the aerial mask is constant over each SITS cell."""
    spec = toy_spec(snap_to_sits_grid=True, regions_per_sample=10)
    _, _, mask = generate_sample(spec, sample_seed=9, patch_id="p")
    block = 32 // spec.scale.center_crop  # aerial pixels per SITS cell
    tiles = mask.labels.reshape(spec.scale.center_crop, block,
                                spec.scale.center_crop, block)
    for i in range(spec.scale.center_crop):
        for j in range(spec.scale.center_crop):
            assert len(np.unique(tiles[i, :, j, :])) == 1


def test_cloud_rate_zero_means_clean_masks():
    spec = toy_spec(cloud_rate=0.0)
    _, sits, _ = generate_sample(spec, sample_seed=2, patch_id="p")
    assert sits.cloud_snow_masks.max() == 0.0
    spec_cloudy = toy_spec(cloud_rate=1.0, frames_min=12, frames_max=12)
    _, sits_c, _ = generate_sample(spec_cloudy, sample_seed=2, patch_id="p")
    assert sits_c.cloud_snow_masks.max() > 0.5
    assert sits_c.cloud_snow_masks.min() >= 0.0
    assert sits_c.cloud_snow_masks.max() <= 1.0


def test_assign_domains_is_deterministic_and_disjoint():
    spec = toy_spec(n_domains=5, n_samples=20)
    plan1 = assign_domains(spec)
    plan2 = assign_domains(spec)
    assert plan1 == plan2
    splits = {}
    for domain_id, split in plan1:
        splits.setdefault(split, set()).add(domain_id)
    assert set(splits) == {"train", "val", "test"}
    assert not (splits["train"] & splits["val"])
    assert not (splits["train"] & splits["test"])
    assert not (splits["val"] & splits["test"])
    # 20% of 5 domains rounds to one val and one test domain
    assert len(splits["val"]) == 1 and len(splits["test"]) == 1


def test_assign_domains_needs_three():
    with pytest.raises(ValueError, match="at least 3"):
        assign_domains(toy_spec(n_domains=2))


def test_sample_plan_round_robin():
    spec = toy_spec(n_samples=10, n_domains=3)
    plan = sample_plan(spec)
    assert len(plan) == 10
    domains = [p["domain_id"] for p in plan]
    assert domains[:3] == domains[3:6]  # repeats with period n_domains
    seeds = [p["seed"] for p in plan]
    assert len(set(seeds)) == len(seeds)
    ids = [p["patch_id"] for p in plan]
    assert len(set(ids)) == len(ids)


def test_spec_validation():
    with pytest.raises(ValueError):
        toy_spec(cloud_rate=1.2)
    with pytest.raises(ValueError):
        toy_spec(frames_min=0)
    with pytest.raises(ValueError):
        toy_spec(frames_min=9, frames_max=6)
    with pytest.raises(ValueError):
        toy_spec(active_classes=(0, 13))
    with pytest.raises(ValueError):
        toy_spec(class_palette=np.zeros((4, 5)))
