import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edaregress.datagen import (
    DAY,
    DEFAULT_CATALOG,
    GeneratorSpec,
    generate_dataset,
    generate_record,
    ground_truth,
    manifest,
    skewness,
    split_dataset,
    split_temporal,
)
from edaregress.errors import ConfigError, EmptySplit
from edaregress.serializer import dumps_record

from conftest import make_config

# Independent transcription of the documented gt-v1 formula.
BASES = {
    "simv": (900.0, 1.0, 4.0, 2.0),
    "xrun": (1200.0, 2.0, 6.0, 3.0),
    "vsim": (600.0, 1.0, 3.0, 1.5),
    "vltr": (450.0, 4.0, 2.5, 1.0),
    "jgpv": (2400.0, 4.0, 16.0, 1.0),
    "sgsh": (300.0, 1.0, 2.0, 0.5),
}
VERSIONS = {"2023.09": 1.0, "2024.03": 0.85, "2024.09": 0.7}


def oracle(tool, kgates, priority, version, failed, replication):
    L, C, R, D = BASES[tool]
    size = (kgates / 64) ** 1.5
    prio = (100 / priority) ** 0.3
    life = L * size * prio * VERSIONS[version] * (0.25 if failed else 1.0)
    return (life, C * size * replication, R * size, D * size * replication * (0.5 if failed else 1.0))


def cfg_for(tool, kgates, priority, version, failed, replication):
    return make_config(
        priority=priority,
        build_config={"design_kgates": kgates},
        exec_spec={"command": tool, "tool": tool, "version": version},
        expected_state="fail" if failed else "success",
        replication=replication,
    )


def test_unit_factors_give_base_cost():
    for tool, base in BASES.items():
        got = ground_truth(cfg_for(tool, 64, 100, "2023.09", False, 1))
        assert got.as_tuple() == base


def test_doubling_size_scales_by_2_pow_1_5():
    a = ground_truth(cfg_for("xrun", 64, 100, "2023.09", False, 1)).as_tuple()
    b = ground_truth(cfg_for("xrun", 128, 100, "2023.09", False, 1)).as_tuple()
    for x, y in zip(a, b):
        assert y / x == pytest.approx(2**1.5, rel=1e-15)


def test_seed0_job0_ground_truth():
    # sgsh (lint), 16 kgates, priority 100, 2024.09, success, replication 3 (worked by hand)
    rec = generate_record(GeneratorSpec(seed=0), 0)
    assert ground_truth(rec.config).as_tuple() == (26.25, 0.375, 0.25, 0.1875)


def test_oracle_matches_on_1000_random_configs():
    rng = np.random.default_rng(123)
    for _ in range(1000):
        args = (
            str(rng.choice(list(BASES))),
            int(2 ** rng.integers(0, 12)),
            int(rng.choice([1, 50, 100, 200, 999])),
            str(rng.choice(list(VERSIONS))),
            bool(rng.random() < 0.5),
            int(rng.integers(1, 9)),
        )
        assert ground_truth(cfg_for(*args)).as_tuple() == oracle(*args)


def test_generated_records_match_oracle_without_noise():
    spec = GeneratorSpec(seed=5, n_jobs=200, noise_sigma=0.0)
    for r in generate_dataset(spec):
        c = r.config
        want = oracle(
            c.exec_spec["tool"], c.build_config["design_kgates"], c.priority,
            c.exec_spec["version"], c.expected_state == "fail", c.replication,
        )
        assert r.metrics.as_tuple() == want


def test_same_seed_byte_identical():
    a = [dumps_record(r) for r in generate_dataset(GeneratorSpec(seed=11, n_jobs=100))]
    b = [dumps_record(r) for r in generate_dataset(GeneratorSpec(seed=11, n_jobs=100))]
    c = [dumps_record(r) for r in generate_dataset(GeneratorSpec(seed=12, n_jobs=100))]
    assert a == b and a != c


def test_record_independent_of_dataset_size():
    small = generate_dataset(GeneratorSpec(seed=2, n_jobs=10))
    large = generate_dataset(GeneratorSpec(seed=2, n_jobs=50))
    assert [dumps_record(r) for r in small] == [dumps_record(r) for r in large[:10]]


def test_records_valid_and_in_span(small_dataset):
    spec = GeneratorSpec(seed=3, n_jobs=300)
    for r in small_dataset:
        r.config.validate()
        assert all(v >= 0 for v in r.metrics.as_tuple())
        assert spec.start_epoch <= r.timestamp < spec.start_epoch + spec.span_days * DAY
    assert len({r.job_id for r in small_dataset}) == len(small_dataset)


def test_requested_paths():
    recs = generate_dataset(GeneratorSpec(seed=4, n_jobs=2000, noise_sigma=0.0))
    ratios = np.array([[q / t for q, t in zip(r.requested.as_tuple(), r.metrics.as_tuple())] for r in recs])
    heuristic = np.all(ratios <= 1.5 + 1e-9, axis=1)
    inflated = np.all(ratios >= 2.0 - 1e-9, axis=1)
    assert np.all(heuristic | inflated)
    assert np.all(ratios >= 1.0 - 1e-12) and np.all(ratios <= 20.0 + 1e-9)
    assert heuristic.mean() == pytest.approx(0.64, abs=0.04)


def test_default_spec_right_skewed():
    recs = generate_dataset(GeneratorSpec(seed=0, n_jobs=10000))
    stats = manifest(GeneratorSpec(seed=0, n_jobs=10000), recs)["metrics"]
    for m, s in stats.items():
        assert s["skewness"] > 1, m


def test_skewness_against_oracle():
    x = [1.0, 2.0, 2.0, 3.0, 10.0]
    n = len(x)
    mean = sum(x) / n
    m2 = sum((v - mean) ** 2 for v in x) / n
    m3 = sum((v - mean) ** 3 for v in x) / n
    assert skewness(x) == pytest.approx(m3 / m2**1.5, rel=1e-12)
    assert skewness([4.0, 4.0]) == 0.0


def test_noise_free_lookup_oracle_is_perfect():
    from edaregress.evaluation import pearson

    recs = generate_dataset(GeneratorSpec(seed=6, n_jobs=300, noise_sigma=0.0))
    for j in range(4):
        truth = [r.metrics.as_tuple()[j] for r in recs]
        pred = [ground_truth(r.config).as_tuple()[j] for r in recs]
        assert pearson(pred, truth) == pytest.approx(1.0, abs=1e-12)


def test_default_noise_keeps_oracle_above_095():
    from edaregress.evaluation import pearson

    recs = generate_dataset(GeneratorSpec(seed=0, n_jobs=2000))
    for j in range(4):
        truth = [r.metrics.as_tuple()[j] for r in recs]
        pred = [ground_truth(r.config).as_tuple()[j] for r in recs]
        assert pearson(pred, truth) >= 0.95


def test_split_sizes_and_membership():
    recs = generate_dataset(GeneratorSpec(seed=1, n_jobs=10))
    tr, va, te = split_dataset(recs, (8, 1, 1), seed=0)
    assert (len(tr), len(va), len(te)) == (8, 1, 1)
    ids = [r.job_id for part in (tr, va, te) for r in part]
    assert sorted(ids) == sorted(r.job_id for r in recs)
    again = split_dataset(recs, (8, 1, 1), seed=0)
    assert [r.job_id for r in again[2]] == [r.job_id for r in te]


def test_split_empty_part_raises():
    recs = generate_dataset(GeneratorSpec(seed=1, n_jobs=5))
    with pytest.raises(EmptySplit):
        split_dataset(recs, (8, 1, 1))
    with pytest.raises(EmptySplit):
        split_dataset([], (8, 1, 1))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(10, 300), seed=st.integers(0, 2**31))
def test_split_disjoint_exhaustive(n, seed):
    recs = generate_dataset(GeneratorSpec(seed=7, n_jobs=n))
    parts = split_dataset(recs, (8, 1, 1), seed)
    ids = [r.job_id for p in parts for r in p]
    assert len(ids) == len(set(ids)) == n


def test_temporal_36_days():
    recs = generate_dataset(GeneratorSpec(seed=8, n_jobs=3000, span_days=36))
    train, windows = split_temporal(recs, train_days=10, window_days=5)
    assert len(windows) == 5
    origin = GeneratorSpec().start_epoch
    assert all((r.timestamp - origin) // DAY < 10 for r in train)
    for k, w in enumerate(windows):
        days = {(r.timestamp - origin) // DAY for r in w}
        assert min(days) >= 10 + 5 * k and max(days) < 15 + 5 * k
    # the 1-day remainder (day 35) is dropped
    kept = len(train) + sum(map(len, windows))
    assert kept == sum(1 for r in recs if (r.timestamp - origin) // DAY < 35)


def test_temporal_window_boundary():
    recs = generate_dataset(GeneratorSpec(seed=9, n_jobs=400, span_days=20))
    origin = GeneratorSpec().start_epoch
    train, windows = split_temporal(recs, 10, 5, origin=origin)
    assert all(r.timestamp < origin + 10 * DAY for r in train)
    assert all(r.timestamp >= origin + 10 * DAY for r in windows[0])


def test_spec_validation():
    for bad in ({"n_jobs": 0}, {"noise_sigma": -1.0}, {"heuristic_coverage": 1.5}, {"design_size_range": (100, 90)}):
        with pytest.raises(ConfigError):
            GeneratorSpec(**bad).validate()
    with pytest.raises(ConfigError):
        GeneratorSpec.from_dict({"bogus": 1})


def test_spec_roundtrip():
    spec = GeneratorSpec(seed=4, filler_tags=3)
    assert GeneratorSpec.from_dict(spec.to_dict()) == spec


def test_filler_tags_lengthen_prompt():
    from edaregress.serializer import serialize_job

    a = generate_record(GeneratorSpec(seed=0), 0)
    b = generate_record(GeneratorSpec(seed=0, filler_tags=30), 0)
    assert len(serialize_job(b.config)) > len(serialize_job(a.config)) + 30 * 15
    assert ground_truth(a.config) == ground_truth(b.config)
