"""Ablation harnesses: attention mode, max sequence length, temporal drift, decode cost."""

from __future__ import annotations

import logging
import statistics

import numpy as np
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .baselines import HeuristicBaseline, user_request_predict
from .checkpoint import load_checkpoint
from .config import RunConfig
from .datagen import split_dataset, split_temporal
from .evaluation import ModelPredictor, MetricsReport, bench_decode, evaluate, temporal_eval, write_csv
from .serializer import METRICS, JobRecord, build_prompt
from .trainer import train

log = logging.getLogger(__name__)


def median_prompt_length(records: Sequence[JobRecord], max_len: int, system_prompt: str) -> int:
    return int(statistics.median(len(build_prompt(r.config, r.metrics, max_len, system_prompt)) for r in records))


def _subset(records: Sequence[JobRecord], n: int | None) -> list[JobRecord]:
    return list(records if n is None else records[:n])


def train_and_evaluate(
    run: RunConfig,
    train_set: Sequence[JobRecord],
    val_set: Sequence[JobRecord],
    test_set: Sequence[JobRecord],
    out_dir: Path,
) -> MetricsReport:
    ckpt_path = train(train_set, val_set, replace(run.model), run.train, out_dir, system_prompt=run.system_prompt,
                      extra={"run_config_sha256": run.sha256()})
    return evaluate(ModelPredictor.load(ckpt_path), test_set)


def attention_ablation(run: RunConfig, records: Sequence[JobRecord], out_dir: str | Path, window: int | None = None) -> list[dict]:
    """Train full and sliding-window models on identical data and seed."""
    out = Path(out_dir)
    train_set, val_set, test_set = split_dataset(records, run.split_ratios, run.split_seed)
    test_set = _subset(test_set, run.eval.n_test)
    if window is None:
        median = median_prompt_length(train_set, run.train.max_seq_len, run.system_prompt)
        window = max(1, int(run.eval.sliding_fraction * median))
    reports = {}
    for mode in ("full", "sliding"):
        model = replace(run.model, attention=mode, window=window if mode == "sliding" else None)
        sub = replace(run, model=model)
        reports[mode] = train_and_evaluate(sub, train_set, val_set, test_set, out / mode)
    rows = []
    for m in METRICS + ("avg",):
        row = {"metric": m, "window": window}
        for mode, rep in reports.items():
            row[f"{mode}_pearson"] = rep.pearson_avg if m == "avg" else rep.pearson[m]
            row[f"{mode}_spearman"] = rep.spearman_avg if m == "avg" else rep.spearman[m]
        rows.append(row)
    write_csv(rows, out / "attention_ablation.csv")
    return rows


def seq_len_ablation(run: RunConfig, records: Sequence[JobRecord], out_dir: str | Path, lengths: Sequence[int] | None = None) -> list[dict]:
    """Train one model per max sequence length; report MAE normalized by the test mean."""
    out = Path(out_dir)
    lengths = list(lengths or run.eval.seq_lens)
    train_set, val_set, test_set = split_dataset(records, run.split_ratios, run.split_seed)
    test_set = _subset(test_set, run.eval.n_test)
    means = {m: statistics.fmean(getattr(r.metrics, m) for r in test_set) for m in METRICS}
    rows = []
    for n in lengths:
        model = replace(run.model, max_seq=max(run.model.max_seq, n))
        sub = replace(run, model=model, train=replace(run.train, max_seq_len=n))
        report = train_and_evaluate(sub, train_set, val_set, test_set, out / f"len{n}")
        norm = report.normalized_mae(means)
        row = {"max_seq_len": n}
        row.update({f"nmae_{m}": norm[m] for m in METRICS})
        row["nmae_avg"] = statistics.fmean(norm.values())
        row["pearson_avg"] = report.pearson_avg
        rows.append(row)
    write_csv(rows, out / "seq_len_ablation.csv")
    return rows


def temporal_ablation(run: RunConfig, records: Sequence[JobRecord], out_dir: str | Path, window_days: int | None = None) -> list[dict]:
    out = Path(out_dir)
    window_days = window_days or run.eval.window_days
    period, windows = split_temporal(records, run.eval.train_days, window_days)
    # the training period itself is split 9:1 into train/validation
    train_set, val_set = _split_train_val(period, run.split_seed)
    ckpt_path = train(train_set, val_set, replace(run.model), run.train, out / "model", system_prompt=run.system_prompt,
                      extra={"run_config_sha256": run.sha256()})
    ckpt = load_checkpoint(ckpt_path)
    windows = [_subset(w, run.eval.n_test) for w in windows]
    reports = temporal_eval(ckpt, windows)
    rows = []
    for i, (w, rep) in enumerate(zip(windows, reports)):
        first = run.eval.train_days + i * window_days + 1
        row = {"window": i, "day_shift": f"{first - run.eval.train_days}-{first - run.eval.train_days + window_days - 1}", "n": rep.n_examples}
        row.update({f"mae_{m}": rep.mae[m] for m in METRICS})
        row["pearson_avg"] = rep.pearson_avg
        rows.append(row)
    write_csv(rows, out / "temporal_drift.csv")
    return rows


def _split_train_val(records: Sequence[JobRecord], seed: int) -> tuple[list[JobRecord], list[JobRecord]]:
    order = np.random.default_rng(seed).permutation(len(records))
    n_val = max(1, len(records) // 10)
    val = [records[i] for i in order[:n_val]]
    train_set = [records[i] for i in order[n_val:]]
    return train_set, val


def decode_benchmark(checkpoint: str | Path, test: Sequence[JobRecord], out_dir: str | Path) -> dict:
    out = Path(out_dir)
    summary = bench_decode(load_checkpoint(checkpoint), test)
    rows = [
        {"mode": mode, **{k: v for k, v in summary[mode].items()}}
        for mode in ("constrained", "vanilla")
    ]
    write_csv(rows, out / "decode_bench.csv")
    return summary


def baseline_reports(records: Sequence[JobRecord], test: Sequence[JobRecord], window_days: float) -> dict[str, MetricsReport]:
    return {
        "user": evaluate(user_request_predict, test),
        "heuristic": evaluate(HeuristicBaseline(records, window_days), test),
    }
