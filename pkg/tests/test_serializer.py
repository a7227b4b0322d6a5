import json
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_config
from edaregress.datagen import GeneratorSpec, generate_record
from edaregress.errors import ContextOverflow, SchemaViolation
from edaregress.serializer import (
    JOB_KEYS,
    METRICS,
    SYSTEM_PROMPT,
    TARGET_BUDGET,
    JobConfig,
    JobRecord,
    TargetMetrics,
    build_prompt,
    read_jsonl,
    serialize_job,
    serialize_targets,
    write_jsonl,
)
from edaregress.tokenizer import BOS, EOS, decode, encode

FIXTURES = Path(__file__).parent / "fixtures"


def test_minimal_config_key_order():
    cfg = make_config(tags={"action_type": "", "application_type": ""}, build_config={}, exec_spec={"command": "", "tool": "", "version": ""})
    text = serialize_job(cfg)
    assert "\n" not in text and ", " not in text
    assert list(json.loads(text)) == list(JOB_KEYS)
    assert '"dependencies":[]' in text and '"build_config":{}' in text


def test_tag_order_canonical():
    a = make_config(tags={"action_type": "x", "application_type": "y", "owner": "z"})
    b = make_config(tags={"owner": "z", "application_type": "y", "action_type": "x"})
    assert serialize_job(a) == serialize_job(b)


def test_golden_job_seed0_index0():
    rec = generate_record(GeneratorSpec(seed=0), 0)
    assert serialize_job(rec.config) == (FIXTURES / "job_seed0_idx0.txt").read_text(encoding="utf-8").rstrip("\n")


def test_schema_rejects_unknown_and_bad_values():
    data = make_config().to_dict()
    with pytest.raises(SchemaViolation):
        JobConfig.from_dict({**data, "gpu": 1})
    with pytest.raises(SchemaViolation):
        JobConfig.from_dict({k: v for k, v in data.items() if k != "priority"})
    for bad in ({"replication": 0}, {"priority": 5000}, {"expected_state": "maybe"}, {"caching_policy": "lru"}, {"tags": {"action_type": "a"}}):
        with pytest.raises(SchemaViolation):
            serialize_job(make_config(**bad))


def test_serialize_targets_examples():
    assert serialize_targets(TargetMetrics(12300, 1, 0, 2.5)) == (
        '{"life_time": "1.23e+04", "cpu_max": "1.00e+00", "ram_max": "0.00e+00", "disk_max": "2.50e+00"}'
    )
    zeros = json.loads(serialize_targets(TargetMetrics.zeros()))
    assert list(zeros) == list(METRICS) and set(zeros.values()) == {"0.00e+00"}
    assert json.loads(serialize_targets(TargetMetrics(59.9999, 0, 0, 0)))["life_time"] == "6.00e+01"


def test_target_metrics_validation():
    with pytest.raises(SchemaViolation):
        TargetMetrics(-1, 0, 0, 0)
    with pytest.raises(SchemaViolation):
        TargetMetrics(float("nan"), 0, 0, 0)


def test_build_prompt_short():
    cfg = make_config()
    y = TargetMetrics(100, 1, 2, 3)
    seq = build_prompt(cfg, y, 2048)
    target = encode(serialize_targets(y)).ids
    assert seq.ids[0] == BOS and seq.ids[-1] == EOS
    assert sum(seq.loss_mask) == len(target) + 1
    assert decode(seq) == SYSTEM_PROMPT + serialize_job(cfg) + serialize_targets(y)
    masked = [i for i, m in zip(seq.ids, seq.loss_mask) if m]
    assert masked == target + [EOS]


def test_build_prompt_truncates_tail():
    long_cfg = make_config(build_config={"design_kgates": 64, "blob": "x" * 10000})
    full = serialize_job(long_cfg)
    assert len(encode(full)) > 10000
    y = TargetMetrics(1, 1, 1, 1)
    seq = build_prompt(long_cfg, y, 512)
    assert len(seq) == 512
    text = decode(seq)
    job_part = text[len(SYSTEM_PROMPT) : -len(serialize_targets(y))]
    assert full.startswith(job_part) and len(job_part) > 0


def test_build_prompt_inference_shape():
    cfg = make_config()
    seq = build_prompt(cfg, None, 2048)
    assert not any(seq.loss_mask)
    assert decode(seq).endswith(serialize_job(cfg))
    # training and inference cut the job text identically
    long_cfg = make_config(build_config={"blob": "y" * 3000})
    train = build_prompt(long_cfg, TargetMetrics(1, 2, 3, 4), 700)
    infer = build_prompt(long_cfg, None, 700)
    assert train.ids[: len(infer)] == infer.ids
    assert len(infer) == 700 - TARGET_BUDGET


def test_context_overflow():
    with pytest.raises(ContextOverflow):
        build_prompt(make_config(), TargetMetrics(1, 1, 1, 1), 150)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(200, 900))
def test_mask_discipline_and_length(index, max_len):
    rec = generate_record(GeneratorSpec(seed=11), index)
    seq = build_prompt(rec.config, rec.metrics, max_len)
    assert len(seq) <= max_len
    n_answer = len(encode(serialize_targets(rec.metrics))) + 1
    assert seq.loss_mask == [False] * (len(seq) - n_answer) + [True] * n_answer
    job = decode(seq)[len(SYSTEM_PROMPT) :][: -(n_answer - 1)]
    assert serialize_job(rec.config).startswith(job)


def test_jsonl_roundtrip(tmp_path, small_dataset):
    path = tmp_path / "d.jsonl"
    write_jsonl(small_dataset, path)
    back = read_jsonl(path)
    assert [r.to_dict() for r in back] == [r.to_dict() for r in small_dataset]
    write_jsonl(back, tmp_path / "e.jsonl")
    assert path.read_bytes() == (tmp_path / "e.jsonl").read_bytes()
