"""Regression metrics, reports and the experiment harnesses built on them."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint
from .decoder import ParseFailure, constrained_generate, default_template, vanilla_generate
from .errors import DegenerateInput, EmptyInput, LengthMismatch
from .serializer import METRICS, TARGET_BUDGET, JobRecord, TargetMetrics, build_prompt
from .trainer import evaluate_ce, tokenize_records

SECONDS_PER_MINUTE = 60.0
MAE_UNITS = {"life_time": "min", "cpu_max": "vCPU", "ram_max": "GB", "disk_max": "GB"}


def _check(pred: Sequence[float], truth: Sequence[float], minimum: int = 1) -> None:
    if len(pred) != len(truth):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(truth)} targets")
    if len(pred) < minimum:
        raise EmptyInput(f"need at least {minimum} values, got {len(pred)}")


def mae(pred: Sequence[float], truth: Sequence[float]) -> float:
    _check(pred, truth)
    # fsum is exactly rounded, so the result does not depend on record order
    return math.fsum(abs(float(p) - float(t)) for p, t in zip(pred, truth)) / len(pred)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    _check(x, y, 2)
    n = len(x)
    mx = math.fsum(map(float, x)) / n
    my = math.fsum(map(float, y)) / n
    dx = [float(a) - mx for a in x]
    dy = [float(b) - my for b in y]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise DegenerateInput("correlation undefined for a constant input")
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    return max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))


def average_ranks(x: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    a = np.asarray(x, dtype=np.float64)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a), dtype=np.float64)
    sorted_a = a[order]
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and sorted_a[j + 1] == sorted_a[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    _check(x, y, 2)
    return pearson(average_ranks(x), average_ranks(y))


@dataclass
class MetricsReport:
    n_examples: int
    mae: dict[str, float | None]
    pearson: dict[str, float | None]
    spearman: dict[str, float | None]
    pearson_avg: float | None
    spearman_avg: float | None
    degenerate: list[str] = field(default_factory=list)
    parse_failures: dict[str, int] | None = None
    units: dict[str, str] = field(default_factory=lambda: dict(MAE_UNITS))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_row(self) -> dict:
        row = {"n_examples": self.n_examples}
        for m in METRICS:
            row[f"mae_{m}"] = self.mae[m]
        for m in METRICS:
            row[f"pearson_{m}"] = self.pearson[m]
            row[f"spearman_{m}"] = self.spearman[m]
        row["pearson_avg"] = self.pearson_avg
        row["spearman_avg"] = self.spearman_avg
        return row

    def normalized_mae(self, truth_means: dict[str, float]) -> dict[str, float]:
        out = {}
        for m in METRICS:
            if self.mae[m] is None:
                continue
            scale = truth_means[m] / (SECONDS_PER_MINUTE if m == "life_time" else 1.0)
            out[m] = self.mae[m] / scale
        return out


Predictor = Callable[[JobRecord], "dict | ParseFailure"]


def report_from_predictions(
    preds: Sequence[dict | ParseFailure],
    truths: Sequence[TargetMetrics],
) -> MetricsReport:
    """Aggregate per-record predictions (metric -> value or None) into a report."""
    if not preds:
        raise EmptyInput("no examples to evaluate")
    failures: dict[str, int] = {}
    pairs: list[tuple[dict, TargetMetrics]] = []
    for p, t in zip(preds, truths):
        if isinstance(p, ParseFailure):
            failures[p.category] = failures.get(p.category, 0) + 1
        else:
            pairs.append((p, t))
    maes: dict[str, float | None] = {}
    rs: dict[str, float | None] = {}
    rss: dict[str, float | None] = {}
    degenerate = []
    for m in METRICS:
        xs = [p[m] for p, _ in pairs]
        if not pairs or any(v is None for v in xs):
            maes[m] = rs[m] = rss[m] = None
            continue
        ys = [getattr(t, m) for _, t in pairs]
        scale = SECONDS_PER_MINUTE if m == "life_time" else 1.0
        maes[m] = mae(xs, ys) / scale
        try:
            rs[m] = pearson(xs, ys)
            rss[m] = spearman(xs, ys)
        except (DegenerateInput, EmptyInput):
            rs[m] = rss[m] = None
            degenerate.append(m)
    available = [m for m in METRICS if maes[m] is not None]
    # an undefined correlation makes the average undefined rather than inflating it
    if available and not degenerate:
        p_avg = math.fsum(rs[m] for m in available) / len(available)
        s_avg = math.fsum(rss[m] for m in available) / len(available)
    else:
        p_avg = s_avg = None
    return MetricsReport(
        n_examples=len(pairs),
        mae=maes,
        pearson=rs,
        spearman=rss,
        pearson_avg=p_avg,
        spearman_avg=s_avg,
        degenerate=degenerate,
        parse_failures=failures if failures else None,
    )


def evaluate(predictor: Predictor, test: Sequence[JobRecord]) -> MetricsReport:
    if not test:
        raise EmptyInput("empty test set")
    preds = [predictor(r) for r in test]
    return report_from_predictions(preds, [r.metrics for r in test])


def oracle_predictor(record: JobRecord) -> dict:
    return record.metrics.to_dict()


class ModelPredictor:
    """Runs a checkpoint over job configs in constrained or vanilla mode."""

    def __init__(self, ckpt: Checkpoint, mode: str = "constrained", max_len: int | None = None, max_new_tokens: int | None = None):
        if mode not in ("constrained", "vanilla"):
            raise ValueError(f"unknown decode mode {mode!r}")
        self.ckpt = ckpt
        self.mode = mode
        train_cfg = ckpt.extra.get("train_config", {})
        self.max_len = max_len or train_cfg.get("max_seq_len") or ckpt.config.max_seq
        self.max_new_tokens = max_new_tokens or TARGET_BUDGET + 16
        self.template = default_template(ckpt.value_ranges)
        self.stats: list[dict] = []
        self.outputs: list[dict] = []

    @classmethod
    def load(cls, path: str | Path, **kwargs) -> "ModelPredictor":
        return cls(load_checkpoint(path), **kwargs)

    def __call__(self, record: JobRecord) -> dict | ParseFailure:
        model = self.ckpt.model
        if self.mode == "constrained":
            res = constrained_generate(model, record.config, self.template, self.max_len, self.ckpt.system_prompt)
            pred: dict | ParseFailure = res.metrics.to_dict()
            stats = res.stats
            text = res.text
        else:
            vres = vanilla_generate(model, record.config, self.max_new_tokens, self.max_len, self.ckpt.system_prompt)
            pred = vres.outcome.to_dict() if vres.ok else vres.outcome
            stats = vres.stats
            text = vres.text
        self.stats.append(stats.to_dict())
        out = {"job_id": record.job_id, "mode": self.mode, "text": text, "decode_stats": stats.to_dict()}
        if isinstance(pred, ParseFailure):
            out.update(predictions=None, failure=pred.category)
        else:
            out.update(predictions=pred, failure=None)
        self.outputs.append(out)
        return pred


def temporal_eval(ckpt: Checkpoint, windows: Sequence[Sequence[JobRecord]]) -> list[MetricsReport]:
    predictor = ModelPredictor(ckpt)
    return [evaluate(predictor, w) for w in windows]


def bench_decode(ckpt: Checkpoint, test: Sequence[JobRecord], modes: Iterable[str] = ("constrained", "vanilla")) -> dict:
    """Per-mode mean wall time, sampled steps and generated tokens."""
    per_mode: dict[str, list[dict]] = {}
    summary: dict[str, dict] = {}
    for mode in modes:
        predictor = ModelPredictor(ckpt, mode=mode)
        outs = [predictor(r) for r in test]
        per_mode[mode] = predictor.outputs
        stats = predictor.stats
        summary[mode] = {
            "n": len(stats),
            "parsed": sum(not isinstance(o, ParseFailure) for o in outs),
            "mean_wall_time_s": float(np.mean([s["wall_time"] for s in stats])),
            "mean_sampled_steps": float(np.mean([s["sampled_steps"] for s in stats])),
            "mean_generated_tokens": float(np.mean([s["generated_tokens"] for s in stats])),
            "mean_forward_calls": float(np.mean([s["forward_calls"] for s in stats])),
        }
    if "constrained" in summary and "vanilla" in summary:
        c, v = summary["constrained"], summary["vanilla"]
        summary["step_ratio"] = c["mean_sampled_steps"] / v["mean_generated_tokens"]
        summary["step_reduction"] = 1.0 - summary["step_ratio"]
        summary["wall_time_ratio"] = c["mean_wall_time_s"] / v["mean_wall_time_s"]
        parsed = [
            (co["decode_stats"]["sampled_steps"], vo["decode_stats"]["generated_tokens"])
            for co, vo in zip(per_mode["constrained"], per_mode["vanilla"])
            if vo["failure"] is None
        ]
        summary["vanilla_parsed_examples"] = len(parsed)
        summary["fewer_steps_on_all_parsed"] = all(cs < vg for cs, vg in parsed)
    return summary


def track_ce_vs_mae(
    checkpoints: Sequence[str | Path],
    val: Sequence[JobRecord],
    test: Sequence[JobRecord],
) -> tuple[list[dict], dict[str, float | None]]:
    """Validation CE and test MAE per checkpoint, plus Spearman(CE, MAE) per metric."""
    rows = []
    for path in checkpoints:
        ckpt = load_checkpoint(path)
        max_len = ckpt.extra.get("train_config", {}).get("max_seq_len", ckpt.config.max_seq)
        ce = evaluate_ce(ckpt.model, tokenize_records(val, max_len, ckpt.system_prompt))
        report = evaluate(ModelPredictor(ckpt), test)
        row = {"checkpoint": Path(path).name, "step": ckpt.step, "val_ce": ce}
        row.update({f"mae_{m}": report.mae[m] for m in METRICS})
        rows.append(row)
    corr: dict[str, float | None] = {}
    for m in METRICS:
        try:
            corr[m] = spearman([r["val_ce"] for r in rows], [r[f"mae_{m}"] for r in rows])
        except (DegenerateInput, EmptyInput):
            corr[m] = None
    return rows, corr


def write_csv(rows: Sequence[dict], path: str | Path) -> None:
    if not rows:
        raise EmptyInput("no rows to write")
    fields = list(rows[0])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
