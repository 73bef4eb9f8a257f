"""Training engine shared by both branches.

Combined cross-entropy + Dice objective, AdamW with polynomial learning-rate
decay, early stopping monitored on validation loss, and best-checkpoint
selection by validation mIoU. The time-series branch is supervised at aerial
resolution by default: its logits are aligned (crop + upsample) before the
loss, mirroring how the branch is evaluated standalone.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn.functional as F

from . import dataset as ds
from . import metrics
from .core import DEFAULT_NOMENCLATURE, ScaleProfile
from .models import (
    AerialBranch,
    AerialBranchConfig,
    TemporalBranch,
    TemporalBranchConfig,
    align_to_aerial,
)
from .models.temporal import TemporalBatch

BRANCHES = ("aerial", "temporal")
DICE_SMOOTHING = 1.0


@dataclass
class TrainConfig:
    lr_init: float = 1e-4
    lr_final: float = 1e-7
    decay_power: float = 1.0
    max_epochs: int = 30
    patience: int = 15
    batch_size: int = 12
    loss_weights: tuple[float, float] = (1.0, 1.0)  # (ce, dice)
    seed: int = 0
    ignore_index: Optional[int] = None  # None: 'other' still supervised
    weight_decay: float = 0.01
    supervise_at_aerial: bool = True  # temporal standalone loss resolution

    def __post_init__(self):
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if not self.lr_final < self.lr_init:
            raise ValueError("lr_final must be below lr_init")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if any(w < 0 for w in self.loss_weights):
            raise ValueError("loss weights must be nonnegative")

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["loss_weights"] = list(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kw = dict(d)
        if "loss_weights" in kw:
            kw["loss_weights"] = tuple(kw["loss_weights"])
        return cls(**kw)


@dataclass
class TrainState:
    epoch: int = 0
    global_step: int = 0
    best_val_metric: float = float("-inf")
    best_val_loss: float = float("inf")
    epochs_since_improvement: int = 0
    rng_states: dict = field(default_factory=dict)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_miou: float
    lr: float


@dataclass
class TrainResult:
    branch: str
    history: list[EpochRecord]
    best_epoch: int
    best_val_miou: float
    checkpoint_path: Optional[Path]
    model: torch.nn.Module
    state: TrainState


def combined_loss(logits: torch.Tensor, target: torch.Tensor,
                  weights: tuple[float, float] = (1.0, 1.0),
                  ignore_index: Optional[int] = None,
                  smoothing: float = DICE_SMOOTHING) -> torch.Tensor:
    """ce_weight * mean-NLL + dice_weight * macro Dice over all classes."""
    if logits.ndim != 4 or target.ndim != 3 or logits.shape[0] != target.shape[0] \
            or logits.shape[2:] != target.shape[1:]:
        raise ValueError(
            f"shape mismatch: logits {tuple(logits.shape)} vs target "
            f"{tuple(target.shape)}"
        )
    n_classes = logits.shape[1]
    if target.numel() and (int(target.min()) < 0 or int(target.max()) >= n_classes):
        raise ValueError("target contains invalid class ids")

    ce = F.cross_entropy(
        logits, target,
        ignore_index=ignore_index if ignore_index is not None else -100,
    )

    probs = torch.softmax(logits, dim=1)
    if ignore_index is not None:
        keep = (target != ignore_index).unsqueeze(1)
        probs = probs * keep
        onehot_target = torch.where(target == ignore_index,
                                    torch.zeros_like(target), target)
    else:
        onehot_target = target
    onehot = F.one_hot(onehot_target, n_classes).permute(0, 3, 1, 2)
    onehot = onehot.to(probs.dtype)
    if ignore_index is not None:
        onehot = onehot * keep
    dims = (0, 2, 3)
    intersection = (probs * onehot).sum(dim=dims)
    cardinality = probs.sum(dim=dims) + onehot.sum(dim=dims)
    dice_score = (2.0 * intersection + smoothing) / (cardinality + smoothing)
    dice = 1.0 - dice_score.mean()

    return weights[0] * ce + weights[1] * dice


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    frac = 1.0 - step / total_steps
    return cfg.lr_final + (cfg.lr_init - cfg.lr_final) * frac ** cfg.decay_power


def build_model(branch: str, model_config) -> torch.nn.Module:
    if branch == "aerial":
        return AerialBranch(model_config)
    if branch == "temporal":
        return TemporalBranch(model_config)
    raise ValueError(f"unknown branch {branch!r}; expected one of {BRANCHES}")


def save_checkpoint(path: Path, model: torch.nn.Module, model_config,
                    branch: str, state: TrainState, extra: Optional[dict] = None):
    payload = {
        "branch": branch,
        "config": model_config.to_dict(),
        "config_digest": model_config.digest(),
        "model_state": model.state_dict(),
        "global_step": state.global_step,
        "epoch": state.epoch,
        "best_val_metric": state.best_val_metric,
    }
    if extra:
        payload.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path: Path, expect_digest: Optional[str] = None):
    """Rebuild the branch model stored at `path`; returns (model, payload)."""
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    branch = payload["branch"]
    cfg_cls = AerialBranchConfig if branch == "aerial" else TemporalBranchConfig
    cfg = cfg_cls(**payload["config"])
    digest = cfg.digest()
    if digest != payload.get("config_digest"):
        raise ValueError(f"checkpoint config digest mismatch in {path}")
    if expect_digest is not None and digest != expect_digest:
        raise ValueError(
            f"checkpoint {path} built from config {digest}, expected {expect_digest}"
        )
    model = build_model(branch, cfg)
    model.load_state_dict(payload["model_state"])
    model.eval()
    return model, payload


def normalize_batch(batch: ds.SampleBatch, stats: ds.NormStats):
    """Standardize the collated arrays and return torch tensors."""
    am = stats.aerial_mean.astype(np.float32)[None, :, None, None]
    asd = stats.aerial_std.astype(np.float32)[None, :, None, None]
    sm = stats.sits_mean.astype(np.float32)[None, None, :, None, None]
    ssd = stats.sits_std.astype(np.float32)[None, None, :, None, None]
    aerial = torch.from_numpy((batch.aerial - am) / asd)
    sits = torch.from_numpy((batch.sits - sm) / ssd)
    doy = torch.from_numpy(batch.day_of_year)
    valid = torch.from_numpy(batch.validity)
    masks = torch.from_numpy(batch.masks) if batch.masks is not None else None
    return aerial, sits, doy, valid, masks


def _forward_for_loss(branch: str, model, batch_tensors, profile: ScaleProfile,
                      cfg: TrainConfig):
    aerial, sits, doy, valid, masks = batch_tensors
    if branch == "aerial":
        return model(aerial), masks
    tb = TemporalBatch(sits, doy, valid)
    logits = model(tb)
    if cfg.supervise_at_aerial:
        logits = align_to_aerial(logits, profile, renormalize=False)
        return logits, masks
    crop = profile.center_crop
    start = (profile.sits_size - crop) // 2
    logits = logits[:, :, start:start + crop, start:start + crop]
    small = F.interpolate(masks[:, None].float(), size=(crop, crop),
                          mode="nearest").squeeze(1).long()
    return logits, small


def predict_labels(branch: str, model, batch_tensors, profile: ScaleProfile,
                   cfg: TrainConfig) -> torch.Tensor:
    """Aerial-resolution argmax labels for validation scoring."""
    aerial, sits, doy, valid, _ = batch_tensors
    with torch.no_grad():
        if branch == "aerial":
            logits = model(aerial)
        else:
            logits = model(TemporalBatch(sits, doy, valid))
            logits = align_to_aerial(logits, profile, renormalize=False)
    return logits.argmax(dim=1)


def _load_split(manifest: ds.DatasetManifest, name: str, preprocessed: bool):
    entries = manifest.split(name)
    if not entries:
        raise ds.DatasetError(f"split {name!r} is empty")
    return [ds.load_sample(manifest, e, preprocessed=preprocessed)
            for e in entries]


def _resolve_preprocessed(manifest: ds.DatasetManifest, requested) -> bool:
    if requested != "auto":
        return bool(requested)
    if not manifest.entries:
        return False
    first = manifest.root / manifest.entries[0].sample_dir / ds.SITS_PRE_FILE
    return first.exists()


def write_history(path: Path, history: list[EpochRecord]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "val_loss", "val_miou", "lr"])
        for r in history:
            writer.writerow([r.epoch, f"{r.train_loss:.6f}", f"{r.val_loss:.6f}",
                             f"{r.val_miou:.6f}", f"{r.lr:.3e}"])


def train_branch(branch: str, manifest: ds.DatasetManifest, cfg: TrainConfig,
                 model_config, out_dir: Optional[Path] = None,
                 preprocessed="auto",
                 progress: Optional[Callable[[str], None]] = None) -> TrainResult:
    if branch not in BRANCHES:
        raise ValueError(f"unknown branch {branch!r}; expected one of {BRANCHES}")
    if manifest.profile is None:
        raise ds.DatasetError("manifest has no scale profile sidecar")
    if manifest.stats is None:
        raise ds.DatasetError("manifest has no normalization stats; "
                              "regenerate the dataset or compute stats first")
    profile = manifest.profile
    use_pre = _resolve_preprocessed(manifest, preprocessed)
    train_samples = _load_split(manifest, "train", use_pre)
    val_samples = _load_split(manifest, "val", use_pre)

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = build_model(branch, model_config)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr_init,
                                  weight_decay=cfg.weight_decay)

    steps_per_epoch = math.ceil(len(train_samples) / cfg.batch_size)
    total_steps = cfg.max_epochs * steps_per_epoch
    state = TrainState()
    best_state_dict = copy.deepcopy(model.state_dict())
    best_epoch = 0
    history: list[EpochRecord] = []

    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        order = rng.permutation(len(train_samples))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            chunk = [train_samples[i] for i in order[start:start + cfg.batch_size]]
            augmented = [ds.augment(s, rng) for s in chunk]
            tensors = normalize_batch(ds.collate(augmented), manifest.stats)
            logits, target = _forward_for_loss(branch, model, tensors, profile, cfg)
            loss = combined_loss(logits, target, cfg.loss_weights,
                                 cfg.ignore_index)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} step {state.global_step} "
                    f"(branch {branch}, lr {optimizer.param_groups[0]['lr']:.3e})"
                )
            lr = lr_at(state.global_step, total_steps, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            state.global_step += 1
            epoch_losses.append(float(loss.detach()))

        model.eval()
        val_losses = []
        cm = metrics.ConfusionMatrix()
        with torch.no_grad():
            for vb in ds.batch(val_samples, cfg.batch_size):
                tensors = normalize_batch(vb, manifest.stats)
                logits, target = _forward_for_loss(branch, model, tensors,
                                                   profile, cfg)
                val_losses.append(float(combined_loss(
                    logits, target, cfg.loss_weights, cfg.ignore_index)))
                if branch == "aerial" or cfg.supervise_at_aerial:
                    pred = logits.argmax(dim=1)
                else:
                    pred = predict_labels(branch, model, tensors, profile, cfg)
                cm.accumulate(pred.numpy(), tensors[4].numpy())
        val_loss = float(np.mean(val_losses))
        val_miou = metrics.iou_report(cm, DEFAULT_NOMENCLATURE).miou

        state.epoch = epoch
        record = EpochRecord(epoch, float(np.mean(epoch_losses)), val_loss,
                             val_miou, lr)
        history.append(record)
        if progress:
            progress(f"epoch {epoch}: train {record.train_loss:.4f} "
                     f"val {val_loss:.4f} mIoU {val_miou:.4f}")

        if val_miou > state.best_val_metric:
            state.best_val_metric = val_miou
            best_state_dict = copy.deepcopy(model.state_dict())
            best_epoch = epoch
        if val_loss < state.best_val_loss:
            state.best_val_loss = val_loss
            state.epochs_since_improvement = 0
        else:
            state.epochs_since_improvement += 1
            if state.epochs_since_improvement >= cfg.patience:
                break

    model.load_state_dict(best_state_dict)
    model.eval()
    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        checkpoint_path = save_checkpoint(
            out_dir / f"{branch}_best.pt", model, model_config, branch, state,
            extra={"norm_stats": manifest.stats.to_dict(),
                   "profile": profile.to_dict(),
                   "best_epoch": best_epoch,
                   "train_config": cfg.to_dict()},
        )
        write_history(out_dir / f"{branch}_history.csv", history)

    return TrainResult(branch=branch, history=history, best_epoch=best_epoch,
                       best_val_miou=state.best_val_metric,
                       checkpoint_path=checkpoint_path, model=model,
                       state=state)
