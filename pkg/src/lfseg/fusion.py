"""Late fusion of per-branch class probabilities.

Branch outputs are combined per pixel and class with a weighted geometric
mean: f_c proportional to prod_i max(p_ic, eps)^w_i, renormalized over classes.
Computed in log space for numerical stability; the epsilon floor keeps a
single zero in one branch from annihilating a class the other branch is
confident about.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ClassProbabilityMap

WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True)
class FusionSpec:
    members: tuple[tuple[str, float], ...] = (("aerial", 0.7), ("temporal", 0.3))
    epsilon: float = 1e-8

    def __post_init__(self):
        object.__setattr__(
            self, "members",
            tuple((str(b), float(w)) for b, w in self.members),
        )
        if not self.members:
            raise ValueError("fusion needs at least one member")
        if any(w < 0 for _, w in self.members):
            raise ValueError("fusion weights must be nonnegative")
        total = sum(w for _, w in self.members)
        if not math.isclose(total, 1.0, abs_tol=WEIGHT_SUM_TOL):
            raise ValueError(f"fusion weights must sum to 1, got {total!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def branch_ids(self) -> tuple[str, ...]:
        return tuple(b for b, _ in self.members)

    @property
    def weights(self) -> tuple[float, ...]:
        return tuple(w for _, w in self.members)

    def to_dict(self) -> dict:
        return {"members": [list(m) for m in self.members],
                "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, d: dict) -> "FusionSpec":
        return cls(members=tuple(tuple(m) for m in d["members"]),
                   epsilon=float(d.get("epsilon", 1e-8)))


def fuse_arrays(arrays: Sequence[np.ndarray], weights: Sequence[float],
                epsilon: float = 1e-8) -> np.ndarray:
    """Weighted geometric mean over the leading (class) axis of each array."""
    if len(arrays) != len(weights):
        raise ValueError(
            f"{len(arrays)} maps for {len(weights)} weights"
        )
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch among fusion inputs: {sorted(shapes)}")
    log_acc = np.zeros(arrays[0].shape, dtype=np.float64)
    for arr, w in zip(arrays, weights):
        log_acc += w * np.log(np.maximum(arr.astype(np.float64), epsilon))
    log_acc -= log_acc.max(axis=0, keepdims=True)
    out = np.exp(log_acc)
    out /= out.sum(axis=0, keepdims=True)
    return out


def fuse(maps: Sequence[ClassProbabilityMap], spec: FusionSpec) -> ClassProbabilityMap:
    if len(maps) != len(spec.members):
        raise ValueError(
            f"{len(maps)} maps but spec has {len(spec.members)} members"
        )
    fused = fuse_arrays([m.probs for m in maps], spec.weights, spec.epsilon)
    return ClassProbabilityMap(fused)


ENSEMBLE_WEIGHTS = (0.35, 0.35, 0.3)


def ensemble_lfdlm(aerial_probs_1: ClassProbabilityMap,
                   aerial_probs_2: ClassProbabilityMap,
                   temporal_probs: ClassProbabilityMap,
                   weights: Sequence[float] = ENSEMBLE_WEIGHTS,
                   epsilon: float = 1e-8) -> ClassProbabilityMap:
    """Three-member fusion: two aerial models plus the time-series branch.

    The default weights split the aerial branch's 0.7 mass equally between
    the two aerial members, keeping the published modality balance.
    """
    spec = FusionSpec(
        members=(("aerial_1", weights[0]), ("aerial_2", weights[1]),
                 ("temporal", weights[2])),
        epsilon=epsilon,
    )
    return fuse([aerial_probs_1, aerial_probs_2, temporal_probs], spec)
