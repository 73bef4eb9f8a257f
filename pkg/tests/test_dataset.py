"""Round-trips, manifests, augmentation group, and padded batching."""

import numpy as np
import pytest

from lfseg.core import toy_profile
from lfseg.dataset import (
    DatasetError,
    DatasetManifest,
    ManifestEntry,
    apply_dihedral,
    augment,
    batch,
    collate,
    compute_stats,
    generate_synthetic,
    load_sample,
    save_sample,
)
from lfseg.synthetic import SyntheticSpec


def test_generate_synthetic_layout_and_reload(tiny_manifest):
    m = tiny_manifest
    assert len(m.entries) == 6
    assert m.profile == toy_profile(aerial_size=32)
    assert m.stats is not None
    reloaded = DatasetManifest.load(m.root)
    assert [e.sample_dir for e in reloaded.entries] == \
        [e.sample_dir for e in m.entries]
    assert reloaded.profile == m.profile
    np.testing.assert_allclose(reloaded.stats.aerial_mean, m.stats.aerial_mean)


def test_generation_is_reproducible(tiny_manifest, tmp_path):
    spec = SyntheticSpec(n_samples=6, n_domains=3,
                         scale=toy_profile(aerial_size=32), seed=1234,
                         cloud_rate=0.5, frames_min=8, frames_max=12)
    again = generate_synthetic(spec, tmp_path / "again")
    for e1, e2 in zip(tiny_manifest.entries, again.entries):
        s1 = load_sample(tiny_manifest, e1)
        s2 = load_sample(again, e2)
        np.testing.assert_array_equal(s1.aerial.pixels, s2.aerial.pixels)
        np.testing.assert_array_equal(s1.sits.frames, s2.sits.frames)
        np.testing.assert_array_equal(s1.mask.labels, s2.mask.labels)
        assert s1.sits.dates == s2.sits.dates


def test_sample_round_trip(tiny_manifest, tmp_path):
    entry = tiny_manifest.entries[0]
    s = load_sample(tiny_manifest, entry)
    save_sample(tmp_path / "copy", s.aerial, s.sits, s.mask)
    m2 = DatasetManifest(root=tmp_path,
                         entries=[ManifestEntry("copy", "d", "train")])
    s2 = load_sample(m2, m2.entries[0])
    np.testing.assert_array_equal(s.aerial.pixels, s2.aerial.pixels)
    np.testing.assert_array_equal(s.sits.frames, s2.sits.frames)
    np.testing.assert_array_equal(s.sits.cloud_snow_masks,
                                  s2.sits.cloud_snow_masks)
    np.testing.assert_array_equal(s.mask.labels, s2.mask.labels)


def test_missing_files_reported_with_path(tiny_manifest, tmp_path):
    m = DatasetManifest(root=tmp_path,
                        entries=[ManifestEntry("nowhere", "d", "train")])
    with pytest.raises(DatasetError, match="nowhere"):
        load_sample(m, m.entries[0])


def test_split_domain_disjointness_enforced():
    entries = [
        ManifestEntry("a", "dom1", "train"),
        ManifestEntry("b", "dom1", "val"),
        ManifestEntry("c", "dom2", "test"),
    ]
    with pytest.raises(DatasetError, match="share domains"):
        DatasetManifest(root=".", entries=entries)


def test_unknown_split_rejected():
    with pytest.raises(DatasetError, match="unknown split"):
        DatasetManifest(root=".",
                        entries=[ManifestEntry("a", "d", "holdout")])
    m = DatasetManifest(root=".", entries=[ManifestEntry("a", "d", "train")])
    with pytest.raises(DatasetError):
        m.split("holdout")


def test_compute_stats_standardizes_train_split(tiny_manifest):
    stats = compute_stats(tiny_manifest)
    entries = tiny_manifest.split("train")
    pixels = np.concatenate(
        [load_sample(tiny_manifest, e).aerial.pixels.reshape(5, -1)
         for e in entries], axis=1)
    np.testing.assert_allclose(stats.aerial_mean, pixels.mean(axis=1),
                               rtol=1e-5)
    np.testing.assert_allclose(stats.aerial_std, pixels.std(axis=1),
                               rtol=1e-4)
    assert (stats.sits_std > 0).all()


def test_dihedral_transforms_move_rasters_together(tiny_manifest):
    s = load_sample(tiny_manifest, tiny_manifest.entries[0])
    out = apply_dihedral(s, "h", 90)
    # label and image must receive the same transform
    ref = np.rot90(np.flip(s.mask.labels, axis=-1), k=1, axes=(-2, -1))
    np.testing.assert_array_equal(out.mask.labels, ref)
    ref_a = np.rot90(np.flip(s.aerial.pixels, axis=-1), k=1, axes=(-2, -1))
    np.testing.assert_array_equal(out.aerial.pixels, ref_a)
    assert out.sits.dates == s.sits.dates


def test_dihedral_identity_and_round_trip(tiny_manifest):
    s = load_sample(tiny_manifest, tiny_manifest.entries[0])
    same = apply_dihedral(s, "none", 0)
    np.testing.assert_array_equal(same.aerial.pixels, s.aerial.pixels)
    # rotating four quarter turns comes back to the start
    out = s
    for _ in range(4):
        out = apply_dihedral(out, "none", 90)
    np.testing.assert_array_equal(out.aerial.pixels, s.aerial.pixels)
    np.testing.assert_array_equal(out.mask.labels, s.mask.labels)
    with pytest.raises(ValueError):
        apply_dihedral(s, "diag", 0)
    with pytest.raises(ValueError):
        apply_dihedral(s, "none", 45)


def test_augment_is_deterministic_under_seed(tiny_manifest):
    s = load_sample(tiny_manifest, tiny_manifest.entries[0])
    a = augment(s, np.random.default_rng(9))
    b = augment(s, np.random.default_rng(9))
    np.testing.assert_array_equal(a.aerial.pixels, b.aerial.pixels)
    unlabeled = load_sample(tiny_manifest, tiny_manifest.entries[0],
                            with_mask=False)
    with pytest.raises(ValueError):
        augment(unlabeled, np.random.default_rng(0))


def test_collate_pads_and_flags_validity(tiny_manifest):
    samples = [load_sample(tiny_manifest, e) for e in tiny_manifest.entries[:3]]
    sb = collate(samples)
    t_max = max(s.sits.n_frames for s in samples)
    assert sb.sits.shape[:3] == (3, t_max, 10)
    assert sb.aerial.shape == (3, 5, 32, 32)
    assert sb.masks.shape == (3, 32, 32)
    for i, s in enumerate(samples):
        t = s.sits.n_frames
        assert sb.validity[i, :t].all()
        assert not sb.validity[i, t:].any()
        assert (sb.sits[i, t:] == 0).all()
        np.testing.assert_array_equal(sb.day_of_year[i, :t],
                                      s.sits.days_of_year)
    assert len(sb) == 3


def test_batch_preserves_order_and_sizes(tiny_manifest):
    samples = [load_sample(tiny_manifest, e) for e in tiny_manifest.entries]
    chunks = list(batch(samples, 4))
    assert [len(c) for c in chunks] == [4, 2]
    assert chunks[0].patch_ids == [s.patch_id for s in samples[:4]]
    with pytest.raises(ValueError):
        list(batch(samples, 0))
