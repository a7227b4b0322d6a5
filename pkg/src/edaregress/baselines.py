"""Comparison predictors: user-requested allocations and historical peak."""

from __future__ import annotations

import bisect
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Hashable, Sequence

import numpy as np

from .datagen import DAY
from .serializer import METRICS, JobConfig, JobRecord, TargetMetrics

Prediction = dict  # metric name -> float, or None where a method has no answer


def similarity_key(cfg: JobConfig) -> tuple:
    return (
        cfg.source_file_name,
        cfg.tags.get("action_type"),
        cfg.tags.get("application_type"),
        cfg.exec_spec.get("tool"),
    )


@dataclass(frozen=True)
class NoHistory:
    job_id: str


def user_request_predict(record: JobRecord) -> Prediction:
    """Requested cpu/ram/disk; users request no lifetime."""
    req = record.requested
    return {"life_time": None, "cpu_max": req.cpu_max, "ram_max": req.ram_max, "disk_max": req.disk_max}


def heuristic_predict(
    history: Sequence[JobRecord],
    job: JobRecord,
    window_days: float = 10,
    key: Callable[[JobConfig], Hashable] = similarity_key,
) -> TargetMetrics | NoHistory:
    """Per-metric peak over similar jobs that ran in ``[t - window, t)``."""
    k = key(job.config)
    lo = job.timestamp - window_days * DAY
    peak = None
    for past in history:
        if lo <= past.timestamp < job.timestamp and key(past.config) == k:
            vals = np.array(past.metrics.as_tuple())
            peak = vals if peak is None else np.maximum(peak, vals)
    if peak is None:
        return NoHistory(job.job_id)
    return TargetMetrics(*map(float, peak))


class HeuristicIndex:
    """Indexed equivalent of :func:`heuristic_predict` for repeated queries."""

    def __init__(
        self,
        history: Sequence[JobRecord],
        window_days: float = 10,
        key: Callable[[JobConfig], Hashable] = similarity_key,
    ):
        self.window = window_days * DAY
        self.key = key
        groups: dict[Hashable, list[JobRecord]] = defaultdict(list)
        for r in history:
            groups[key(r.config)].append(r)
        self._times: dict[Hashable, list[int]] = {}
        self._values: dict[Hashable, np.ndarray] = {}
        for k, rs in groups.items():
            rs.sort(key=lambda r: r.timestamp)
            self._times[k] = [r.timestamp for r in rs]
            self._values[k] = np.array([r.metrics.as_tuple() for r in rs])

    def predict(self, job: JobRecord) -> TargetMetrics | NoHistory:
        k = self.key(job.config)
        times = self._times.get(k)
        if times is None:
            return NoHistory(job.job_id)
        start = bisect.bisect_left(times, job.timestamp - self.window)
        stop = bisect.bisect_left(times, job.timestamp)
        if start >= stop:
            return NoHistory(job.job_id)
        return TargetMetrics(*map(float, self._values[k][start:stop].max(axis=0)))


class HeuristicBaseline:
    """Heuristic allocation with user-request fallback when no similar job ran recently.

    Lifetime is not an allocation, so it is reported as unavailable.
    """

    def __init__(self, history: Sequence[JobRecord], window_days: float = 10):
        self.index = HeuristicIndex(history, window_days)
        self.fallbacks = 0

    def __call__(self, record: JobRecord) -> Prediction:
        pred = self.index.predict(record)
        if isinstance(pred, NoHistory):
            self.fallbacks += 1
            return user_request_predict(record)
        out = pred.to_dict()
        out["life_time"] = None
        return out
