"""Evaluation report rendering.

Emits a per-label IoU table (fixed class row order) as CSV, a row-normalized
confusion-matrix heatmap as PNG next to its numeric grid as CSV, and a
machine-readable JSON summary.

Full-scale reference results for context when reading toy-scale reports:
the published late-fusion run reaches water 91.08, building 85.14, and
mIoU 63.10 (%); the three-model ensemble reaches mIoU 64.52. Those numbers
require the full dataset and training budget and are documentation targets,
not assertions made by this module.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping

from matplotlib.figure import Figure

from .core import DEFAULT_NOMENCLATURE, Nomenclature
from .metrics import ConfusionMatrix, IoUReport

FULL_SCALE_REFERENCE = {
    "late_fusion": {"water": 91.08, "building": 85.14, "miou": 63.10},
    "ensemble": {"miou": 64.52},
}


def write_iou_table(path: Path, reports: Mapping[str, IoUReport],
                    nomenclature: Nomenclature = DEFAULT_NOMENCLATURE) -> Path:
    """One row per scored class in nomenclature order, one column per model."""
    path = Path(path)
    model_ids = list(reports)
    names = [nomenclature.classes[c] for c in nomenclature.scored_indices]
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class"] + model_ids)
        for i, name in enumerate(names):
            row = [name]
            for m in model_ids:
                v = reports[m].per_label[i]
                row.append("" if v is None else f"{v:.4f}")
            writer.writerow(row)
        writer.writerow(["mIoU"] + [f"{reports[m].miou:.4f}" for m in model_ids])
    return path


def write_confusion_grid(path: Path, cm: ConfusionMatrix,
                         nomenclature: Nomenclature = DEFAULT_NOMENCLATURE) -> Path:
    path = Path(path)
    grid = cm.row_normalized()
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["truth\\pred"] + list(nomenclature.classes))
        for name, row in zip(nomenclature.classes, grid):
            writer.writerow([name] + [f"{v:.4f}" for v in row])
    return path


def render_confusion_heatmap(path: Path, cm: ConfusionMatrix,
                             nomenclature: Nomenclature = DEFAULT_NOMENCLATURE,
                             title: str = "") -> Path:
    path = Path(path)
    grid = cm.row_normalized()
    n = cm.n_classes
    fig = Figure(figsize=(8.5, 7.5))
    ax = fig.subplots()
    im = ax.imshow(grid, cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(n), labels=nomenclature.classes, rotation=45,
                  ha="right", fontsize=7)
    ax.set_yticks(range(n), labels=nomenclature.classes, fontsize=7)
    ax.set_xlabel("prediction")
    ax.set_ylabel("ground truth")
    if title:
        ax.set_title(title)
    for i in range(n):
        for j in range(n):
            v = grid[i, j]
            if v >= 0.005:
                ax.text(j, i, f"{v:.2f}", ha="center", va="center", fontsize=5,
                        color="white" if v < 0.6 else "black")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    return path


def render_reports(reports: Mapping[str, IoUReport],
                   cms: Mapping[str, ConfusionMatrix],
                   out_dir: Path,
                   nomenclature: Nomenclature = DEFAULT_NOMENCLATURE) -> dict[str, Path]:
    """Write all report files; returns a name -> path map of what was written."""
    if not reports:
        raise ValueError("nothing evaluated; refusing to write an empty report")
    for model_id, cm in cms.items():
        if cm.total == 0:
            raise ValueError(
                f"evaluation set for {model_id!r} is empty; refusing to write "
                "a zero-filled report"
            )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    written["iou_table"] = write_iou_table(out_dir / "iou_table.csv", reports,
                                           nomenclature)
    for model_id, cm in cms.items():
        written[f"confusion_{model_id}_grid"] = write_confusion_grid(
            out_dir / f"confusion_{model_id}.csv", cm, nomenclature)
        written[f"confusion_{model_id}_png"] = render_confusion_heatmap(
            out_dir / f"confusion_{model_id}.png", cm, nomenclature,
            title=model_id)
    summary = {
        "models": [
            {
                "model_id": m,
                **r.to_dict(),
                "pixel_count": int(cms[m].total) if m in cms else None,
            }
            for m, r in reports.items()
        ],
        "full_scale_reference": FULL_SCALE_REFERENCE,
    }
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2))
    written["summary"] = summary_path
    return written
