"""End-to-end pipeline steps behind the CLI subcommands.

Each step is idempotent: when its output already exists it is skipped unless
forced. Every step writes a run manifest recording the config digest, seed
and library versions, and takes a lock on the output directory so concurrent
runs cannot interleave writes.
"""

from __future__ import annotations

import contextlib
import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from . import __version__
from . import benchmark as bench
from . import dataset as ds
from . import fusion as fus
from . import metrics
from . import preprocess as prep
from . import reports as rep
from .config import ExperimentConfig
from .core import DEFAULT_NOMENCLATURE
from .models import align_to_aerial
from .models.temporal import TemporalBatch
from .synthetic import SyntheticSpec
from .train import (
    TrainResult,
    _resolve_preprocessed,
    load_checkpoint,
    normalize_batch,
    train_branch,
)

FUSED_ID = "fused"


class MissingArtifactError(Exception):
    """A prerequisite output of an earlier subcommand is absent."""


@contextlib.contextmanager
def run_lock(out_dir: Path):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(
            f"another run holds the lock {lock}; remove it if stale"
        ) from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
    finally:
        os.close(fd)
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def write_run_manifest(cfg: ExperimentConfig, subcommand: str,
                       outputs: dict) -> Path:
    record = {
        "subcommand": subcommand,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "config_digest": cfg.digest(),
        "seed": cfg.train.seed,
        "versions": {
            "package": __version__,
            "torch": torch.__version__,
            "numpy": np.__version__,
        },
        "outputs": {k: str(v) for k, v in outputs.items()},
        "config": cfg.to_dict(),
    }
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.output_dir / f"run_{subcommand.replace('-', '_')}.json"
    path.write_text(json.dumps(record, indent=2))
    return path


def data_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.data.manifest_dir)


def load_manifest(cfg: ExperimentConfig) -> ds.DatasetManifest:
    root = data_dir(cfg)
    if not (root / ds.MANIFEST_NAME).exists():
        raise MissingArtifactError(
            f"no dataset manifest at {root / ds.MANIFEST_NAME}; "
            "run `gen-data` first or point data.manifest_dir at a dataset"
        )
    return ds.DatasetManifest.load(root)


def gen_data(cfg: ExperimentConfig, force: bool = False) -> ds.DatasetManifest:
    root = data_dir(cfg)
    if (root / ds.MANIFEST_NAME).exists() and not force:
        return ds.DatasetManifest.load(root)
    if cfg.data.synthetic is None:
        raise MissingArtifactError(
            f"no dataset at {root} and no data.synthetic section to generate one"
        )
    kw = dict(cfg.data.synthetic)
    if "active_classes" in kw:
        kw["active_classes"] = tuple(kw["active_classes"])
    spec = SyntheticSpec(scale=cfg.scale, **kw)
    return ds.generate_synthetic(spec, root)


def do_preprocess(cfg: ExperimentConfig, force: bool = False) -> int:
    manifest = load_manifest(cfg)
    return prep.materialize(manifest, cfg.filter, force=force)


def _branch_config(cfg: ExperimentConfig, branch: str):
    if branch == "aerial":
        return cfg.aerial
    if branch == "temporal":
        return cfg.temporal
    raise ValueError(f"unknown branch {branch!r}")


def checkpoint_path(cfg: ExperimentConfig, branch: str) -> Path:
    return cfg.output_dir / f"{branch}_best.pt"


def do_train(cfg: ExperimentConfig, branch: str,
             force: bool = False,
             progress: Optional[Callable[[str], None]] = None
             ) -> Optional[TrainResult]:
    """Returns the TrainResult, or None when an existing checkpoint is kept."""
    ckpt = checkpoint_path(cfg, branch)
    if ckpt.exists() and not force:
        return None
    manifest = load_manifest(cfg)
    return train_branch(branch, manifest, cfg.train, _branch_config(cfg, branch),
                        out_dir=cfg.output_dir, progress=progress)


def _batched_probs(branch: str, model, samples, stats, profile,
                   batch_size: int) -> dict[str, np.ndarray]:
    """Per-sample class probabilities at aerial resolution, keyed by patch."""
    out: dict[str, np.ndarray] = {}
    with torch.no_grad():
        for sb in ds.batch(samples, batch_size):
            aerial, sits, doy, valid, _ = normalize_batch(sb, stats)
            if branch == "aerial":
                probs = torch.softmax(model(aerial), dim=1)
            else:
                logits = model(TemporalBatch(sits, doy, valid))
                probs = align_to_aerial(torch.softmax(logits, dim=1), profile,
                                        renormalize=True)
            arr = probs.numpy().astype(np.float32)
            for pid, p in zip(sb.patch_ids, arr):
                out[pid] = p
    return out


def probs_path(cfg: ExperimentConfig, model_id: str, split: str) -> Path:
    return cfg.output_dir / "probs" / f"{model_id}_{split}.npz"


def do_predict(cfg: ExperimentConfig, branch: str, split: str = "test",
               out: Optional[Path] = None, force: bool = False) -> Path:
    out_path = Path(out) if out else probs_path(cfg, branch, split)
    if out_path.exists() and not force:
        return out_path
    ckpt = checkpoint_path(cfg, branch)
    if not ckpt.exists():
        raise MissingArtifactError(
            f"missing checkpoint {ckpt}; run `train --branch {branch}` first"
        )
    model, _ = load_checkpoint(ckpt, expect_digest=_branch_config(cfg, branch).digest())
    manifest = load_manifest(cfg)
    entries = manifest.split(split)
    if not entries:
        raise MissingArtifactError(f"split {split!r} is empty")
    use_pre = _resolve_preprocessed(manifest, "auto")
    samples = [ds.load_sample(manifest, e, preprocessed=use_pre) for e in entries]
    probs = _batched_probs(branch, model, samples, manifest.stats,
                           manifest.profile, cfg.train.batch_size)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(out_path, **probs)
    return out_path


def do_fuse(cfg: ExperimentConfig, split: str = "test",
            out: Optional[Path] = None, force: bool = False) -> Path:
    out_path = Path(out) if out else probs_path(cfg, FUSED_ID, split)
    if out_path.exists() and not force:
        return out_path
    member_paths = {bid: probs_path(cfg, bid, split)
                    for bid in cfg.fusion.branch_ids}
    missing = [str(p) for p in member_paths.values() if not p.exists()]
    if missing:
        raise MissingArtifactError(
            "missing branch probabilities: " + ", ".join(missing)
            + "; run `predict --branch <name>` first"
        )
    archives = {bid: np.load(p) for bid, p in member_paths.items()}
    key_sets = {bid: set(a.files) for bid, a in archives.items()}
    base = key_sets[cfg.fusion.branch_ids[0]]
    for bid, keys in key_sets.items():
        if keys != base:
            raise MissingArtifactError(
                f"branch probability archives disagree on patches: "
                f"{bid} differs from {cfg.fusion.branch_ids[0]}"
            )
    fused = {}
    for pid in sorted(base):
        maps = [archives[bid][pid] for bid in cfg.fusion.branch_ids]
        fused[pid] = fus.fuse_arrays(maps, cfg.fusion.weights,
                                     cfg.fusion.epsilon).astype(np.float32)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(out_path, **fused)
    return out_path


def evaluation_path(cfg: ExperimentConfig) -> Path:
    return cfg.output_dir / "evaluation.json"


def do_evaluate(cfg: ExperimentConfig, split: str = "test") -> Path:
    manifest = load_manifest(cfg)
    entries = manifest.split(split)
    if not entries:
        raise MissingArtifactError(f"split {split!r} is empty")
    truth = {}
    for e in entries:
        s = ds.load_sample(manifest, e, preprocessed=False)
        if s.mask is None:
            raise MissingArtifactError(f"sample {e.sample_dir} has no mask")
        truth[s.patch_id] = s.mask.labels

    candidates = list(cfg.fusion.branch_ids) + [FUSED_ID]
    available = {m: probs_path(cfg, m, split) for m in candidates
                 if probs_path(cfg, m, split).exists()}
    if not available:
        raise MissingArtifactError(
            f"no probability archives under {cfg.output_dir / 'probs'}; "
            "run `predict` (and `fuse`) first"
        )
    results = {}
    for model_id, path in available.items():
        archive = np.load(path)
        cm = metrics.ConfusionMatrix()
        for pid, mask in truth.items():
            if pid not in archive.files:
                raise MissingArtifactError(
                    f"{path} has no probabilities for patch {pid}"
                )
            pred = np.argmax(archive[pid], axis=0).astype(np.int64)
            cm.accumulate(pred, mask)
        report = metrics.iou_report(cm, DEFAULT_NOMENCLATURE)
        results[model_id] = {
            "counts": cm.counts.tolist(),
            "report": report.to_dict(),
            "pixel_count": cm.total,
        }
    payload = {"split": split, "config_digest": cfg.digest(), "models": results}
    path = evaluation_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2))
    return path


def do_report(cfg: ExperimentConfig) -> dict[str, Path]:
    eval_path = evaluation_path(cfg)
    if not eval_path.exists():
        raise MissingArtifactError(
            f"no evaluation results at {eval_path}; run `evaluate` first"
        )
    payload = json.loads(eval_path.read_text())
    reports = {}
    cms = {}
    for model_id, rec in payload["models"].items():
        cm = metrics.ConfusionMatrix(counts=np.asarray(rec["counts"]))
        cms[model_id] = cm
        reports[model_id] = metrics.iou_report(cm, DEFAULT_NOMENCLATURE)
    return rep.render_reports(reports, cms, cfg.output_dir / "reports")


def _inference_runner(cfg: ExperimentConfig, manifest: ds.DatasetManifest,
                      mode: str, models: dict) -> Callable:
    """Full inference pass: load, forward, (fuse,) argmax."""
    use_pre = _resolve_preprocessed(manifest, "auto")
    batch_size = cfg.train.batch_size

    def run(entries):
        samples = [ds.load_sample(manifest, e, preprocessed=use_pre)
                   for e in entries]
        labels = {}
        with torch.no_grad():
            for sb in ds.batch(samples, batch_size):
                aerial, sits, doy, valid, _ = normalize_batch(sb, manifest.stats)
                member_probs = []
                if mode in ("aerial", "late_fusion"):
                    member_probs.append(
                        torch.softmax(models["aerial"](aerial), dim=1).numpy())
                if mode in ("temporal", "late_fusion"):
                    logits = models["temporal"](TemporalBatch(sits, doy, valid))
                    aligned = align_to_aerial(torch.softmax(logits, dim=1),
                                              manifest.profile, renormalize=True)
                    member_probs.append(aligned.numpy())
                if mode == "late_fusion":
                    for i, pid in enumerate(sb.patch_ids):
                        fused = fus.fuse_arrays(
                            [m[i] for m in member_probs],
                            cfg.fusion.weights, cfg.fusion.epsilon)
                        labels[pid] = np.argmax(fused, axis=0)
                else:
                    for i, pid in enumerate(sb.patch_ids):
                        labels[pid] = np.argmax(member_probs[0][i], axis=0)
        return labels

    return run


def do_benchmark(cfg: ExperimentConfig, split: str = "test"):
    """Time aerial-only, temporal-only and late-fusion inference passes.

    At toy scale the configured full-scale baseline is meaningless, so ratios
    are re-based on the measured aerial branch, the slower single branch of
    the published system; the raw seconds are always reported.
    """
    manifest = load_manifest(cfg)
    entries = manifest.split(split)
    if not entries:
        raise MissingArtifactError(f"split {split!r} is empty")
    models = {}
    for branch in ("aerial", "temporal"):
        ckpt = checkpoint_path(cfg, branch)
        if not ckpt.exists():
            raise MissingArtifactError(
                f"missing checkpoint {ckpt}; run `train --branch {branch}` first"
            )
        models[branch], _ = load_checkpoint(ckpt)
        models[branch].eval()

    measured = {}
    for mode in ("aerial", "temporal", "late_fusion"):
        runner = _inference_runner(cfg, manifest, mode, models)
        measured[mode] = bench.time_inference(
            runner, entries, cfg.budget, model_id=mode)

    budget = cfg.budget
    baseline_source = "config"
    if cfg.scale.name == "toy":
        budget = bench.TimingBudget(
            baseline_seconds=measured["aerial"].seconds,
            max_ratio=cfg.budget.max_ratio)
        baseline_source = "measured aerial branch"
    final = [bench.TimingReport.from_seconds(r.model_id, r.seconds, budget,
                                             r.n_samples)
             for r in measured.values()]
    table = bench.compare(final)
    out_dir = cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "benchmark.json").write_text(json.dumps({
        "split": split,
        "baseline_source": baseline_source,
        "baseline_seconds": budget.baseline_seconds,
        "max_ratio": budget.max_ratio,
        "reports": [r.to_dict() for r in final],
    }, indent=2))
    (out_dir / "benchmark.txt").write_text(table + "\n")
    return final, table
