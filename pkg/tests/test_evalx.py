import math

import numpy as np
import pytest

from ntl.evalx import (
    DEFAULT_THRESHOLD,
    MetricsReport,
    canonical_answer,
    compare_runs,
    compute_metrics,
    first_crossing,
    parse_prediction,
    signed_log10,
)
from ntl.numvocab import default_vocabulary
from ntl.train import LogRecord, TrainLog

V = default_vocabulary()


def ids(text):
    return list(V.encode_text(text).ids)


def metrics(preds, truths, log_transform=True):
    return compute_metrics([ids(p) for p in preds], truths, V, log_transform)


def test_all_correct():
    r = metrics(["12", "-3", "400"], ["12", "-3", "400"])
    assert r.exact_match_accuracy == 1.0
    assert r.mae == 0.0 and r.mape == 0.0 and r.r2 == 1.0
    assert r.parse_failure_rate == 0.0 and r.n == 3


def test_mape_definition():
    assert metrics(["90"], ["100"]).mape == pytest.approx(0.1, abs=1e-15)
    assert metrics(["2"], ["0"]).mape == 2.0


def test_signed_log_error():
    r = metrics(["100"], ["1000"])
    assert r.mae == pytest.approx(math.log10(1001) - math.log10(101), abs=1e-15)
    assert r.mae == pytest.approx(1.0, abs=0.01)
    assert metrics(["100"], ["1000"], log_transform=False).mae == 900.0
    assert signed_log10(-9.0) == pytest.approx(-1.0)
    assert signed_log10(0.0) == 0.0


def test_r2_of_constant_mean_prediction_is_zero():
    r = metrics(["20", "20", "20"], ["10", "20", "30"], log_transform=False)
    assert r.r2 == pytest.approx(0.0, abs=1e-15)
    assert r.pearson is None and r.spearman is None


def test_spearman_invariant_under_monotone_transform():
    rng = np.random.default_rng(0)
    pred = rng.integers(1, 60, size=30)
    true = pred + rng.integers(-9, 10, size=30)
    base = metrics([str(p) for p in pred], [str(t) for t in true])
    cubed = metrics([str(p ** 3) for p in pred], [str(t ** 3) for t in true])
    assert base.spearman == pytest.approx(cubed.spearman, abs=1e-12)


def test_parse_failures_are_wrong_and_excluded():
    r = compute_metrics([ids("12"), ids("a"), [], ids("1 2")], ["12", "5", "7", "12"], V)
    assert r.exact_match_accuracy == 0.25
    assert r.parse_failure_rate == 0.75
    assert r.exact_match_accuracy + r.parse_failure_rate <= 1
    assert r.mae == 0.0
    none = compute_metrics([ids("x")], ["1"], V)
    assert none.mae is None and none.mape is None and none.parse_failure_rate == 1.0


def test_canonical_answers():
    assert canonical_answer("007") == "7"
    assert canonical_answer("-0") == "0"
    assert metrics(["-0"], ["0"]).exact_match_accuracy == 1.0
    assert parse_prediction(ids("-12"), V) == -12.0
    assert parse_prediction(ids("12-"), V) is None


def test_report_serialization():
    r = metrics(["90"], ["100"])
    lines = r.to_csv().splitlines()
    assert lines[0] == MetricsReport.HEADER
    assert len(lines) == 2 and lines[1].endswith(",1,true")
    assert "mape" in r.to_text()
    with pytest.raises(ValueError):
        compute_metrics([], [], V)


def log_with(series):
    tlog = TrainLog()
    for step, buckets in series:
        tlog.append(LogRecord(step, 1.0, 1.0, 0.0, None, None, None, 0.0, buckets))
    return tlog


def test_compare_runs():
    a = log_with([(100, {1: 0.9, 2: 2.0}), (200, {1: 0.4, 2: 1.0}), (300, {1: 0.1, 2: 0.6})])
    b = log_with([(100, {1: 0.45, 2: 2.0}), (200, {1: 0.3, 2: 0.49}), (300, {1: 0.1, 2: 0.2})])
    out = compare_runs(a, b)
    assert DEFAULT_THRESHOLD == 0.5
    assert (out[1].step_a, out[1].step_b) == (200, 100)
    assert (out[2].step_a, out[2].step_b) == (None, 200)
    same = compare_runs(a, a)
    assert all(c.step_a == c.step_b for c in same.values())
    with pytest.raises(ValueError):
        compare_runs(a, log_with([(100, {}), (250, {})]))


def test_first_crossing_skips_missing_values():
    assert first_crossing([(1, None), (2, 0.7), (3, 0.2)], 0.5) == 3
    assert first_crossing([(1, 0.5)], 0.5) is None
