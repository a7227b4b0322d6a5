"""Job configuration schema, text serialization and prompt assembly."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

from .codec import format_number
from .errors import ContextOverflow, DataError, SchemaViolation
from .tokenizer import BOS, EOS, TokenSequence, encode

# Fixed serialization order, most important first; truncation drops the tail.
JOB_KEYS = (
    "source_file_name",
    "tags",
    "priority",
    "build_config",
    "exec_spec",
    "dependencies",
    "caching_policy",
    "expected_state",
    "replication",
)
METRICS = ("life_time", "cpu_max", "ram_max", "disk_max")
CACHING_POLICIES = ("none", "read", "save", "sync")
EXPECTED_STATES = ("success", "fail")
REQUIRED_TAGS = ("action_type", "application_type")
REQUIRED_EXEC = ("command", "tool", "version")
PRIORITY_BAND = (0, 1000)

SYSTEM_PROMPT = "Predict life_time(s), cpu_max(vCPU), ram_max(GB), disk_max(GB) of this EDA job as JSON, d.dde+dd.\n"


def prompt_hash(system_prompt: str) -> str:
    return hashlib.sha256(system_prompt.encode("utf-8")).hexdigest()


def _canonical(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _canonical(value[k]) for k in sorted(value)}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


@dataclass
class JobConfig:
    source_file_name: str
    tags: dict[str, str]
    priority: int
    build_config: dict[str, Any]
    exec_spec: dict[str, Any]
    dependencies: list[str]
    caching_policy: str
    expected_state: str
    replication: int

    def validate(self) -> None:
        if not isinstance(self.source_file_name, str):
            raise SchemaViolation("source_file_name must be a string")
        if not isinstance(self.tags, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in self.tags.items()
        ):
            raise SchemaViolation("tags must map strings to strings")
        missing = [k for k in REQUIRED_TAGS if k not in self.tags]
        if missing:
            raise SchemaViolation(f"tags missing {missing}")
        if isinstance(self.priority, bool) or not isinstance(self.priority, int):
            raise SchemaViolation("priority must be an integer")
        lo, hi = PRIORITY_BAND
        if not lo <= self.priority <= hi:
            raise SchemaViolation(f"priority {self.priority} outside [{lo}, {hi}]")
        if not isinstance(self.build_config, dict):
            raise SchemaViolation("build_config must be a map")
        if not isinstance(self.exec_spec, dict):
            raise SchemaViolation("exec_spec must be a map")
        missing = [k for k in REQUIRED_EXEC if k not in self.exec_spec]
        if missing:
            raise SchemaViolation(f"exec_spec missing {missing}")
        if not isinstance(self.dependencies, list) or not all(
            isinstance(d, str) for d in self.dependencies
        ):
            raise SchemaViolation("dependencies must be a list of job names")
        if self.caching_policy not in CACHING_POLICIES:
            raise SchemaViolation(f"caching_policy {self.caching_policy!r} not in {CACHING_POLICIES}")
        if self.expected_state not in EXPECTED_STATES:
            raise SchemaViolation(f"expected_state {self.expected_state!r} not in {EXPECTED_STATES}")
        if isinstance(self.replication, bool) or not isinstance(self.replication, int) or self.replication < 1:
            raise SchemaViolation("replication must be an integer >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {key: _canonical(getattr(self, key)) for key in JOB_KEYS}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "JobConfig":
        if not isinstance(data, dict):
            raise SchemaViolation("job config must be a JSON object")
        unknown = sorted(set(data) - set(JOB_KEYS))
        if unknown:
            raise SchemaViolation(f"unknown job config keys: {unknown}")
        missing = [k for k in JOB_KEYS if k not in data]
        if missing:
            raise SchemaViolation(f"missing job config keys: {missing}")
        cfg = cls(**{k: data[k] for k in JOB_KEYS})
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class TargetMetrics:
    life_time: float
    cpu_max: float
    ram_max: float
    disk_max: float

    def __post_init__(self) -> None:
        for name in METRICS:
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
                raise SchemaViolation(f"{name}={v!r} must be finite and nonnegative")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.life_time, self.cpu_max, self.ram_max, self.disk_max)

    def to_dict(self) -> dict[str, float]:
        return {name: float(getattr(self, name)) for name in METRICS}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TargetMetrics":
        if set(data) != set(METRICS):
            raise SchemaViolation(f"metrics must have exactly the keys {METRICS}, got {sorted(data)}")
        return cls(**{k: float(data[k]) for k in METRICS})

    @classmethod
    def zeros(cls) -> "TargetMetrics":
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass
class JobRecord:
    config: JobConfig
    requested: TargetMetrics
    metrics: TargetMetrics
    timestamp: int
    job_id: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "job_id": self.job_id,
            "timestamp": self.timestamp,
            "config": self.config.to_dict(),
            "requested": self.requested.to_dict(),
            "metrics": self.metrics.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "JobRecord":
        expected = {"job_id", "timestamp", "config", "requested", "metrics"}
        if set(data) != expected:
            raise SchemaViolation(f"record keys must be {sorted(expected)}, got {sorted(data)}")
        return cls(
            config=JobConfig.from_dict(data["config"]),
            requested=TargetMetrics.from_dict(data["requested"]),
            metrics=TargetMetrics.from_dict(data["metrics"]),
            timestamp=int(data["timestamp"]),
            job_id=str(data["job_id"]),
        )


@dataclass
class PromptBundle:
    system_prompt: str
    job_text: str
    target_text: str = ""

    @property
    def text(self) -> str:
        return self.system_prompt + self.job_text + self.target_text


def serialize_job(cfg: JobConfig) -> str:
    cfg.validate()
    return json.dumps(cfg.to_dict(), separators=(",", ":"), ensure_ascii=False)


def serialize_targets(y: TargetMetrics) -> str:
    return json.dumps({name: format_number(getattr(y, name)) for name in METRICS})


def make_bundle(cfg: JobConfig, y: TargetMetrics | None = None, system_prompt: str = SYSTEM_PROMPT) -> PromptBundle:
    return PromptBundle(system_prompt, serialize_job(cfg), serialize_targets(y) if y is not None else "")


# Tokens reserved for the answer when building an inference prompt. Nonnegative
# values all render at the same width, so this equals every training target + EOS.
TARGET_BUDGET = len(encode(serialize_targets(TargetMetrics.zeros()))) + 1


def build_prompt(
    cfg: JobConfig,
    y: TargetMetrics | None,
    max_len: int,
    system_prompt: str = SYSTEM_PROMPT,
) -> TokenSequence:
    """Assemble ``BOS + system + job [+ target + EOS]`` within ``max_len`` tokens.

    The job text loses tokens from its tail until everything fits. At
    inference (``y is None``) the answer budget is still reserved so the job
    text is cut exactly as it was during training.
    """
    bundle = make_bundle(cfg, y, system_prompt)
    sys_ids = encode(bundle.system_prompt).ids
    job_ids = encode(bundle.job_text).ids
    target_ids = encode(bundle.target_text).ids
    reserve = len(target_ids) + 1 if y is not None else TARGET_BUDGET
    fixed = 1 + len(sys_ids) + reserve
    if fixed > max_len:
        raise ContextOverflow(f"system prompt and answer need {fixed} tokens, max_len is {max_len}")
    job_ids = job_ids[: max_len - fixed]
    context = [BOS] + sys_ids + job_ids
    if y is None:
        return TokenSequence(context, [False] * len(context))
    answer = target_ids + [EOS]
    return TokenSequence(context + answer, [False] * len(context) + [True] * len(answer))


def read_jsonl(path: str | Path) -> list[JobRecord]:
    return list(iter_jsonl(path))


def iter_jsonl(path: str | Path) -> Iterator[JobRecord]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield JobRecord.from_dict(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            except DataError as exc:
                raise type(exc)(f"{path}:{lineno}: {exc}") from exc


def dumps_record(record: JobRecord) -> str:
    return json.dumps(record.to_dict(), separators=(",", ":"), ensure_ascii=False)


def write_jsonl(records: Iterable[JobRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(dumps_record(record) + "\n")
