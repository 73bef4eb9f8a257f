"""Experiment configuration: one YAML file drives every CLI subcommand.

Sections map to the component configs (scale, data, aerial, temporal, fusion,
train, budget, filter) plus an output directory. Dotted-path overrides such
as `train.seed=7` are applied on the raw mapping before construction, so a
run is fully described by (config file, overrides) and the resulting digest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .benchmark import TimingBudget
from .core import FULL_PROFILE, ScaleProfile, toy_profile
from .fusion import FusionSpec
from .models import AerialBranchConfig, TemporalBranchConfig
from .preprocess import FilterPolicy
from .train import TrainConfig


class ConfigError(Exception):
    pass


@dataclass
class DataSpec:
    """Where the dataset lives, and optionally how to synthesize it."""

    manifest_dir: str = "data"
    synthetic: Optional[dict] = None  # SyntheticSpec kwargs minus `scale`

    def to_dict(self) -> dict:
        d = {"manifest_dir": self.manifest_dir}
        if self.synthetic is not None:
            d["synthetic"] = dict(self.synthetic)
        return d


@dataclass
class ExperimentConfig:
    scale: ScaleProfile = field(default_factory=toy_profile)
    data: DataSpec = field(default_factory=DataSpec)
    aerial: AerialBranchConfig = field(default_factory=AerialBranchConfig.toy)
    temporal: TemporalBranchConfig = field(default_factory=TemporalBranchConfig.toy)
    fusion: FusionSpec = field(default_factory=FusionSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    budget: TimingBudget = field(default_factory=TimingBudget)
    filter: FilterPolicy = field(default_factory=FilterPolicy)
    output_dir: Path = Path("runs/toy")

    def __post_init__(self):
        self.output_dir = Path(self.output_dir)
        self.validate()

    def validate(self):
        problems = []
        if self.aerial.n_classes != self.temporal.n_classes:
            problems.append(
                f"aerial.n_classes ({self.aerial.n_classes}) != "
                f"temporal.n_classes ({self.temporal.n_classes})"
            )
        if self.aerial.in_channels != 5:
            problems.append(
                f"aerial.in_channels must be 5 (R,G,B,NIR,elevation), "
                f"got {self.aerial.in_channels}"
            )
        if self.temporal.in_channels != 10:
            problems.append(
                f"temporal.in_channels must be 10 spectral bands, "
                f"got {self.temporal.in_channels}"
            )
        halvings = self.temporal.n_levels - 1
        if self.scale.sits_size % (1 << halvings):
            problems.append(
                f"scale.sits_size {self.scale.sits_size} is not divisible by "
                f"2^{halvings}, required by the {self.temporal.n_levels}-level "
                "temporal encoder"
            )
        known = {"aerial", "temporal"}
        ids = self.fusion.branch_ids
        if len(set(ids)) != len(ids):
            problems.append(f"fusion member ids must be unique, got {ids}")
        unknown = [b for b in ids if b not in known]
        if unknown:
            problems.append(
                f"fusion members {unknown} are not produced by this pipeline; "
                f"known branches: {sorted(known)}"
            )
        if problems:
            raise ConfigError("invalid configuration:\n  - " + "\n  - ".join(problems))

    def to_dict(self) -> dict:
        return {
            "scale": self.scale.to_dict(),
            "data": self.data.to_dict(),
            "aerial": self.aerial.to_dict(),
            "temporal": self.temporal.to_dict(),
            "fusion": self.fusion.to_dict(),
            "train": self.train.to_dict(),
            "budget": self.budget.to_dict(),
            "filter": {"prob_threshold": self.filter.prob_threshold,
                       "max_cloudy_fraction": self.filter.max_cloudy_fraction},
            "output_dir": str(self.output_dir),
        }

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        return path

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d or {})
        try:
            kw = {}
            if "scale" in d:
                sd = dict(d["scale"])
                if "center_crop" not in sd and "sits_size" in sd:
                    sd["center_crop"] = int(sd["sits_size"]) * 10 // 40
                kw["scale"] = ScaleProfile.from_dict(sd)
            scale = kw.get("scale", toy_profile())
            if "data" in d:
                kw["data"] = DataSpec(**d["data"])
            if "aerial" in d:
                kw["aerial"] = AerialBranchConfig(**_tupled(
                    d["aerial"], "stage_channels", "blocks_per_stage"))
            elif scale.name == "full":
                kw["aerial"] = AerialBranchConfig()
            if "temporal" in d:
                kw["temporal"] = TemporalBranchConfig(**_tupled(
                    d["temporal"], "widths", "mlp_widths"))
            elif scale.name == "full":
                kw["temporal"] = TemporalBranchConfig()
            if "fusion" in d:
                kw["fusion"] = FusionSpec.from_dict(d["fusion"])
            if "train" in d:
                kw["train"] = TrainConfig.from_dict(d["train"])
            if "budget" in d:
                kw["budget"] = TimingBudget.from_dict(d["budget"])
            if "filter" in d:
                kw["filter"] = FilterPolicy(**d["filter"])
            if "output_dir" in d:
                kw["output_dir"] = Path(d["output_dir"])
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc


def _tupled(d: dict, *keys: str) -> dict:
    out = dict(d)
    for k in keys:
        if k in out and isinstance(out[k], list):
            out[k] = tuple(out[k])
    return out


def apply_overrides(d: dict, overrides: Sequence[str]) -> dict:
    """Apply `a.b.c=value` overrides onto a raw config mapping."""
    out = json.loads(json.dumps(d)) if d else {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {raw!r}: {exc}")
        if isinstance(value, str):
            # YAML 1.1 reads `1e-3` as a string; on the command line it is
            # clearly meant as a number.
            try:
                value = float(value)
            except ValueError:
                pass
        node = out
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"override {item!r} has an empty key")
        for part in parts[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        node[parts[-1]] = value
    return out


def load_config(path: Optional[Path] = None,
                overrides: Sequence[str] = ()) -> ExperimentConfig:
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text())
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be a mapping: {path}")
        raw = loaded
    raw = apply_overrides(raw, overrides)
    return ExperimentConfig.from_dict(raw)
