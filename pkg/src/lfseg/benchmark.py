"""Inference wall-clock measurement against a configured baseline budget.

The published full-scale reference times (seconds, on one A100 against a
396 s baseline): time-series branch 229 (0.58x), aerial branch 429 (1.08x),
two-branch late fusion 594 (1.5x), three-model ensemble 943 (2.38x). They are
stored here as documentation constants; desk-scale runs measure their own
times and reuse only the ratio arithmetic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

BASELINE_SECONDS = 396.0
MAX_RATIO = 2.5

REFERENCE_SECONDS = {
    "baseline": 396.0,
    "temporal": 229.0,
    "aerial": 429.0,
    "late_fusion": 594.0,
    "ensemble": 943.0,
}


@dataclass(frozen=True)
class TimingBudget:
    baseline_seconds: float = BASELINE_SECONDS
    max_ratio: float = MAX_RATIO

    def __post_init__(self):
        if not self.baseline_seconds > 0:
            raise ValueError("baseline_seconds must be positive")
        if not self.max_ratio > 0:
            raise ValueError("max_ratio must be positive")

    def to_dict(self) -> dict:
        return {"baseline_seconds": self.baseline_seconds,
                "max_ratio": self.max_ratio}

    @classmethod
    def from_dict(cls, d: dict) -> "TimingBudget":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class TimingReport:
    model_id: str
    seconds: float
    ratio: float
    within_budget: bool
    n_samples: int = 0

    @classmethod
    def from_seconds(cls, model_id: str, seconds: float, budget: TimingBudget,
                     n_samples: int = 0) -> "TimingReport":
        ratio = seconds / budget.baseline_seconds
        return cls(model_id=model_id, seconds=seconds, ratio=ratio,
                   within_budget=ratio <= budget.max_ratio,
                   n_samples=n_samples)

    def to_dict(self) -> dict:
        return {"model_id": self.model_id, "seconds": self.seconds,
                "ratio": self.ratio, "within_budget": self.within_budget,
                "n_samples": self.n_samples}


def time_inference(runner: Callable, entries: Sequence, budget: TimingBudget,
                   model_id: str = "model", warmup: bool = True,
                   prepare: Optional[Callable] = None) -> TimingReport:
    """Time one full inference pass of `runner` over `entries`.

    A warm-up pass over the first entry runs untimed so one-time costs
    (allocator growth, kernel selection) do not distort the measurement.
    When `prepare` is given, it loads the data outside the timed window and
    `runner` receives its result; otherwise `runner` receives the entries and
    the measurement includes data loading.
    """
    if not entries:
        raise ValueError("cannot time an empty manifest")
    payload = list(entries)
    if prepare is not None:
        payload = prepare(payload)
    if warmup:
        runner(payload[:1])
    start = time.perf_counter()
    runner(payload)
    seconds = time.perf_counter() - start
    return TimingReport.from_seconds(model_id, seconds, budget,
                                     n_samples=len(entries))


def compare(reports: Sequence[TimingReport]) -> str:
    """Text table (model, seconds, relative time), ratio ascending."""
    if not reports:
        raise ValueError("no timing reports to compare")
    rows = sorted(reports, key=lambda r: r.ratio)
    name_w = max(len("Model"), max(len(r.model_id) for r in rows))
    lines = [
        f"{'Model':<{name_w}}  {'Inference time (sec.)':>21}  {'Relative time':>13}",
        "-" * (name_w + 40),
    ]
    for r in rows:
        flag = "" if r.within_budget else "  [over budget]"
        lines.append(
            f"{r.model_id:<{name_w}}  {r.seconds:>21.2f}  {r.ratio:>13.2f}{flag}"
        )
    return "\n".join(lines)
