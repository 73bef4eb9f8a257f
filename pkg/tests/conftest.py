"""Shared fixtures: keep torch single-threaded and reuse one tiny dataset."""

import numpy as np
import pytest
import torch

torch.set_num_threads(1)

from lfseg.core import toy_profile
from lfseg.dataset import generate_synthetic
from lfseg.synthetic import SyntheticSpec


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    """Six-sample toy dataset (32px aerial, 8px SITS) shared across modules.

    Sessions must treat it as read-only; anything that mutates files on disk
    gets its own copy.
    """
    spec = SyntheticSpec(
        n_samples=6,
        n_domains=3,
        scale=toy_profile(aerial_size=32),
        seed=1234,
        cloud_rate=0.5,
        frames_min=8,
        frames_max=12,
    )
    out = tmp_path_factory.mktemp("tiny_data")
    return generate_synthetic(spec, out)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
