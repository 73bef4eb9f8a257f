"""Timing harness: pure ratio arithmetic, warmup exclusion, comparisons."""

import time

import pytest

from lfseg.benchmark import (
    BASELINE_SECONDS,
    MAX_RATIO,
    REFERENCE_SECONDS,
    TimingBudget,
    TimingReport,
    compare,
    time_inference,
)


def test_reference_ratios():
    assert BASELINE_SECONDS == 396.0
    assert MAX_RATIO == 2.5
    budget = TimingBudget()
    ratios = {m: s / BASELINE_SECONDS for m, s in REFERENCE_SECONDS.items()}
    assert ratios["late_fusion"] == pytest.approx(1.5)
    assert ratios["temporal"] == pytest.approx(0.58, abs=0.005)
    assert ratios["aerial"] == pytest.approx(1.08, abs=0.005)
    assert ratios["ensemble"] == pytest.approx(2.38, abs=0.005)
    for model, sec in REFERENCE_SECONDS.items():
        rep = TimingReport.from_seconds(model, sec, budget)
        assert rep.ratio == pytest.approx(ratios[model])
        assert rep.within_budget == (ratios[model] <= 2.5)


def test_from_seconds_is_pure_arithmetic():
    budget = TimingBudget(baseline_seconds=10.0, max_ratio=2.0)
    rep = TimingReport.from_seconds("x", 25.0, budget, n_samples=7)
    assert rep.ratio == 2.5
    assert not rep.within_budget
    assert rep.n_samples == 7
    assert rep.to_dict()["within_budget"] is False
    # boundary is inclusive
    assert TimingReport.from_seconds("x", 20.0, budget).within_budget


def test_budget_validation():
    with pytest.raises(ValueError):
        TimingBudget(baseline_seconds=0.0)
    with pytest.raises(ValueError):
        TimingBudget(max_ratio=-1.0)
    b = TimingBudget(baseline_seconds=100.0, max_ratio=3.0)
    assert TimingBudget.from_dict(b.to_dict()) == b


def test_time_inference_counts_warmup_separately():
    calls = []

    def runner(batch):
        calls.append(list(batch))
        time.sleep(0.01)

    entries = ["a", "b", "c"]
    rep = time_inference(runner, entries, TimingBudget(baseline_seconds=1.0),
                         model_id="probe")
    # warmup pass over the first entry, then the timed full pass
    assert calls == [["a"], ["a", "b", "c"]]
    assert rep.model_id == "probe"
    assert rep.n_samples == 3
    assert rep.seconds >= 0.01
    # warmup must not be part of the measurement
    assert rep.seconds < 0.02 + 0.05

    calls.clear()
    time_inference(runner, entries, TimingBudget(), warmup=False)
    assert calls == [["a", "b", "c"]]


def test_prepare_runs_outside_the_timed_window():
    def prepare(entries):
        time.sleep(0.05)
        return [e.upper() for e in entries]

    seen = []

    def runner(batch):
        seen.extend(batch)

    rep = time_inference(runner, ["a", "b"], TimingBudget(), warmup=False,
                         prepare=prepare)
    assert seen == ["A", "B"]
    assert rep.seconds < 0.05


def test_time_inference_rejects_empty():
    with pytest.raises(ValueError, match="empty"):
        time_inference(lambda b: None, [], TimingBudget())


def test_compare_table():
    budget = TimingBudget()
    reps = [TimingReport.from_seconds(m, s, budget)
            for m, s in REFERENCE_SECONDS.items()]
    text = compare(reps)
    lines = text.splitlines()
    assert "Model" in lines[0] and "Relative time" in lines[0]
    body = lines[2:]
    # sorted by ratio ascending
    assert body[0].startswith("temporal")
    assert body[-1].startswith("baseline") is False
    order = [l.split()[0] for l in body]
    assert order == ["temporal", "baseline", "aerial", "late_fusion",
                     "ensemble"]
    assert "1.50" in [l for l in body if l.startswith("late_fusion")][0]

    over = TimingReport.from_seconds("slow", 396.0 * 3, budget)
    assert "[over budget]" in compare([over])
    with pytest.raises(ValueError):
        compare([])
