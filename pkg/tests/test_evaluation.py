import csv
import json
import math
import random
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edaregress.baselines import user_request_predict
from edaregress.checkpoint import load_checkpoint
from edaregress.decoder import ParseFailure
from edaregress.errors import DegenerateInput, EmptyInput, LengthMismatch
from edaregress.evaluation import (
    ModelPredictor,
    average_ranks,
    bench_decode,
    evaluate,
    mae,
    oracle_predictor,
    pearson,
    report_from_predictions,
    spearman,
    temporal_eval,
    track_ce_vs_mae,
    write_csv,
)
from edaregress.serializer import METRICS, TargetMetrics

FIXTURES = Path(__file__).parent / "fixtures"


def oracle_pearson(x, y):
    # exact rational moments, one final rounding
    fx = [Fraction(v) for v in x]
    fy = [Fraction(v) for v in y]
    n = len(fx)
    mx, my = sum(fx) / n, sum(fy) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(fx, fy))
    sxx = sum((a - mx) ** 2 for a in fx)
    syy = sum((b - my) ** 2 for b in fy)
    return float(sxy) / math.sqrt(float(sxx * syy))


def brute_ranks(x):
    return [1 + sum(1 for b in x if b < a) + (sum(1 for b in x if b == a) - 1) / 2 for a in x]


def test_mae_examples():
    assert mae([1, 2, 3], [1, 2, 6]) == 1.0
    assert mae([4.5, 2], [4.5, 2]) == 0.0
    rng = random.Random(0)
    a = [rng.uniform(-100, 100) for _ in range(100)]
    b = [rng.uniform(-100, 100) for _ in range(100)]
    assert mae(a, b) == pytest.approx(float(sum(abs(Fraction(p) - Fraction(t)) for p, t in zip(a, b)) / 100), abs=1e-12)


def test_mae_errors():
    with pytest.raises(LengthMismatch):
        mae([1], [1, 2])
    with pytest.raises(EmptyInput):
        mae([], [])


def test_pearson_examples():
    x = [0.5, 1.0, 2.0, 7.0, 3.0]
    assert pearson(x, [2 * v + 1 for v in x]) == pytest.approx(1.0, abs=1e-15)
    assert pearson(x, [-v for v in x]) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(DegenerateInput):
        pearson(x, [3.0] * 5)
    with pytest.raises(EmptyInput):
        pearson([1.0], [2.0])


def test_pearson_ten_pair_fixture():
    x = [1.0, 2.5, 3.1, 4.7, 5.0, 6.2, 7.7, 8.1, 9.9, 10.4]
    y = [2.1, 2.9, 3.3, 5.8, 4.9, 7.7, 7.1, 9.5, 9.8, 12.0]
    assert abs(pearson(x, y) - oracle_pearson(x, y)) < 1e-12


@pytest.mark.parametrize("ties", [False, True])
def test_metric_oracles_on_1000_vectors(ties):
    rng = np.random.default_rng(5 + ties)
    for _ in range(1000):
        n = int(rng.integers(2, 30))
        if ties:
            x = rng.integers(0, 4, n).astype(float).tolist()
            y = rng.integers(0, 4, n).astype(float).tolist()
        else:
            x = rng.normal(size=n).tolist()
            y = rng.lognormal(size=n).tolist()
        assert abs(mae(x, y) - float(sum(abs(Fraction(a) - Fraction(b)) for a, b in zip(x, y)) / n)) < 1e-12
        if len(set(x)) < 2 or len(set(y)) < 2:
            with pytest.raises(DegenerateInput):
                pearson(x, y)
            continue
        assert abs(pearson(x, y) - oracle_pearson(x, y)) < 1e-12
        assert list(average_ranks(x)) == brute_ranks(x)
        assert abs(spearman(x, y) - oracle_pearson(brute_ranks(x), brute_ranks(y))) < 1e-12


def test_spearman_examples():
    x = [0.1, 0.5, 2.0, 9.0, 33.0]
    assert spearman(x, [math.exp(v) for v in x]) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(DegenerateInput):
        spearman([1.0] * 4, [1.0, 2.0, 3.0, 4.0])
    tie_heavy = [1, 1, 2, 2, 2, 3, 3, 3, 3, 5]
    assert list(average_ranks(tie_heavy)) == brute_ranks(tie_heavy)
    y = [3, 1, 4, 1, 5, 9, 2, 6, 5, 3]
    assert abs(spearman(tie_heavy, y) - oracle_pearson(brute_ranks(tie_heavy), brute_ranks(y))) < 1e-12


@settings(max_examples=50, deadline=None)
@given(
    ints=st.lists(st.integers(-1000, 1000), min_size=3, max_size=40, unique=True),
    a=st.floats(0.01, 100),
    b=st.floats(-100, 100),
)
def test_scale_invariance(ints, a, b):
    xs = [v / 8 for v in ints]
    ys = [math.sin(v) + 0.1 * v for v in xs]
    if len(set(ys)) < 2:
        return
    try:
        base = pearson(xs, ys)
    except DegenerateInput:
        return
    scaled = [a * v + b for v in xs]
    if len(set(scaled)) < len(set(xs)):
        return
    assert pearson(scaled, ys) == pytest.approx(base, abs=1e-9)
    assert spearman([v**3 + math.exp(v / 100) for v in xs], ys) == spearman(xs, ys)
    assert -1.0 <= base <= 1.0


def test_oracle_predictor_perfect(small_dataset):
    rep = evaluate(oracle_predictor, small_dataset)
    assert all(v == 0.0 for v in rep.mae.values())
    assert all(v == pytest.approx(1.0, abs=1e-12) for v in rep.pearson.values())
    assert all(v == pytest.approx(1.0, abs=1e-12) for v in rep.spearman.values())
    assert rep.pearson_avg == pytest.approx(1.0, abs=1e-12)


def test_life_time_reported_in_minutes():
    truths = [TargetMetrics(60.0, 1, 1, 1), TargetMetrics(120.0, 2, 2, 2)]
    preds = [{"life_time": 120.0, "cpu_max": 1, "ram_max": 1, "disk_max": 1},
             {"life_time": 240.0, "cpu_max": 2, "ram_max": 2, "disk_max": 2}]
    rep = report_from_predictions(preds, truths)
    assert rep.mae["life_time"] == 1.5
    assert rep.units["life_time"] == "min"


def test_user_request_reports_na_life_time(small_dataset):
    rep = evaluate(user_request_predict, small_dataset)
    assert rep.mae["life_time"] is None and rep.pearson["life_time"] is None
    avail = [rep.pearson[m] for m in METRICS[1:]]
    assert rep.pearson_avg == pytest.approx(sum(avail) / 3, abs=1e-15)


def test_degenerate_column_not_coerced():
    truths = [TargetMetrics(1, 1, 1, 1), TargetMetrics(2, 2, 2, 2), TargetMetrics(3, 1, 5, 2)]
    preds = [{"life_time": 1, "cpu_max": 7, "ram_max": 1, "disk_max": 1},
             {"life_time": 2, "cpu_max": 7, "ram_max": 2, "disk_max": 3},
             {"life_time": 3, "cpu_max": 7, "ram_max": 4, "disk_max": 2}]
    rep = report_from_predictions(preds, truths)
    assert rep.pearson["cpu_max"] is None and rep.degenerate == ["cpu_max"]
    assert rep.pearson_avg is None


def test_parse_failures_counted():
    truths = [TargetMetrics(1, 1, 1, 1), TargetMetrics(2, 2, 2, 2), TargetMetrics(3, 1, 5, 2)]
    preds = [ParseFailure("malformed_json"), {m: 1.0 + i for i, m in enumerate(METRICS)}, {m: 2.0 + i for i, m in enumerate(METRICS)}]
    rep = report_from_predictions(preds, truths)
    assert rep.parse_failures == {"malformed_json": 1}
    assert rep.n_examples == 2


def test_shuffle_invariance(small_dataset):
    rep = evaluate(user_request_predict, small_dataset)
    shuffled = list(small_dataset)
    random.Random(3).shuffle(shuffled)
    assert evaluate(user_request_predict, shuffled).mae == rep.mae
    other = evaluate(user_request_predict, shuffled)
    for m in METRICS[1:]:
        assert other.pearson[m] == pytest.approx(rep.pearson[m], abs=1e-14)


def test_report_golden(small_dataset):
    rep = evaluate(user_request_predict, small_dataset[:50])
    text = rep.to_json()
    assert json.loads(text) == rep.to_dict()
    assert text == (FIXTURES / "report_user_request_seed3_50.json").read_text().rstrip("\n")


def test_empty_test_set():
    with pytest.raises(EmptyInput):
        evaluate(user_request_predict, [])


def test_model_predictor_and_temporal_eval(tiny_run, small_dataset):
    _, final = tiny_run
    ckpt = load_checkpoint(final)
    windows = [small_dataset[240:250], small_dataset[250:260], small_dataset[260:270]]
    reports = temporal_eval(ckpt, windows)
    assert len(reports) == 3 and all(r.n_examples == 10 for r in reports)
    pred = ModelPredictor(ckpt)(small_dataset[0])
    assert set(pred) == set(METRICS)
    with pytest.raises(ValueError):
        ModelPredictor(ckpt, mode="beam")


def test_bench_decode(tiny_run, small_dataset):
    _, final = tiny_run
    summary = bench_decode(load_checkpoint(final), small_dataset[270:275])
    for mode in ("constrained", "vanilla"):
        assert summary[mode]["n"] == 5
        assert summary[mode]["mean_wall_time_s"] > 0
    assert summary["constrained"]["parsed"] == 5
    assert summary["step_ratio"] == pytest.approx(
        summary["constrained"]["mean_sampled_steps"] / summary["vanilla"]["mean_generated_tokens"])
    assert summary["fewer_steps_on_all_parsed"] in (True, False)


def test_track_ce_vs_mae(tiny_run, small_dataset, tmp_path):
    out, final = tiny_run
    ckpts = sorted(out.glob("ckpt_step*.ckpt")) + [final]
    assert len(ckpts) == 3
    rows, corr = track_ce_vs_mae(ckpts, small_dataset[200:220], small_dataset[280:290])
    assert [r["step"] for r in rows] == [5, 10, 15]
    assert set(corr) == set(METRICS)
    path = tmp_path / "ce.csv"
    write_csv(rows, path)
    with open(path) as fh:
        header = next(csv.reader(fh))
    assert header == ["checkpoint", "step", "val_ce"] + [f"mae_{m}" for m in METRICS]
