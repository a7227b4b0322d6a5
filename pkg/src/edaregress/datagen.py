"""Synthetic EDA workload generator.

Ground truth (formula version ``gt-v1``), for a job using tool ``T`` with
catalog base costs ``(L, C, R, D)``::

    size  = (design_kgates / 64) ** size_exponent        # size_exponent = 1.5
    prio  = (100 / priority) ** 0.3
    ver   = VERSION_LIFE_FACTOR[exec_spec.version]      # 1.0, 0.85, 0.7
    fail  = expected_state == "fail"

    life_time = L * size * prio * ver * (0.25 if fail else 1)
    cpu_max   = C * size * replication
    ram_max   = R * size
    disk_max  = D * size * replication * (0.5 if fail else 1)

Measured metrics multiply each ground-truth value by an independent
``lognormal(0, noise_sigma)`` draw. Requested resources are the noise-free
ground truth times ``U(1.0, 1.5)`` for heuristic-managed jobs and times
``U(2, 20)`` for user-guessed ones.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, EmptySplit
from .serializer import CACHING_POLICIES, METRICS, JobConfig, JobRecord, TargetMetrics

FORMULA_VERSION = "gt-v1"
REF_KGATES = 64
REF_PRIORITY = 100
PRIORITY_EXPONENT = 0.3
FAIL_LIFE_FACTOR = 0.25
FAIL_DISK_FACTOR = 0.5
VERSION_LIFE_FACTOR = {"2023.09": 1.0, "2024.03": 0.85, "2024.09": 0.7}
DAY = 86400
DEFAULT_START = 1735689600  # 2025-01-01T00:00:00Z


@dataclass(frozen=True)
class ToolSpec:
    name: str
    action_type: str
    # life_time (s), cpu_max (vCPU), ram_max (GB), disk_max (GB) at unit factors
    base: tuple[float, float, float, float]


DEFAULT_CATALOG = (
    ToolSpec("simv", "sim", (900.0, 1.0, 4.0, 2.0)),
    ToolSpec("xrun", "sim", (1200.0, 2.0, 6.0, 3.0)),
    ToolSpec("vsim", "sim", (600.0, 1.0, 3.0, 1.5)),
    ToolSpec("vltr", "sim", (450.0, 4.0, 2.5, 1.0)),
    ToolSpec("jgpv", "fpv", (2400.0, 4.0, 16.0, 1.0)),
    ToolSpec("sgsh", "lnt", (300.0, 1.0, 2.0, 0.5)),
)

# Names within each vocabulary share one width so informative fields land at
# nearly fixed byte offsets; variable-width clutter before them makes the
# key lookup much slower to learn for a small model trained from scratch.
BLOCKS = (
    "alu0", "dmac", "pcie", "ddrc", "noc0", "l2c0", "gpio", "uart",
    "usb3", "aes0", "npu0", "isp0", "eth0", "spi0", "pmu0", "fab0",
)
TESTS = ("smoke0", "sanity", "random", "stress", "regr_a", "regr_b", "corner", "lowpwr")
APPLICATIONS = ("rtl", "gls", "pwr")
OWNERS = ("anna", "bela", "chen", "dave", "elif", "fynn", "gaby", "hugo")
DEFINES = ("FASTSIM", "NOASSRT", "COVERON", "DUMPWAV", "XPROPON")
OPT_LEVELS = ("O1", "O2", "O3")
WORDS = ("alpha", "bravo", "gamma", "delta", "omega", "sigma", "kappa", "tango", "theta", "lemon")


@dataclass
class GeneratorSpec:
    seed: int = 0
    n_jobs: int = 10000
    span_days: int = 10
    tool_catalog: tuple[ToolSpec, ...] = DEFAULT_CATALOG
    design_size_range: tuple[int, int] = (16, 512)
    noise_sigma: float = 0.1
    heuristic_coverage: float = 0.64
    size_exponent: float = 1.5
    priority_levels: tuple[int, ...] = (50, 100, 200)
    fail_rate: float = 0.1
    max_replication: int = 4
    overprovision_range: tuple[float, float] = (2.0, 20.0)
    heuristic_margin_range: tuple[float, float] = (1.0, 1.5)
    # free-form tags padded in front of the informative fields; lengthens the prompt
    filler_tags: int = 0
    start_epoch: int = DEFAULT_START

    def validate(self) -> None:
        if self.n_jobs < 1:
            raise ConfigError("n_jobs must be >= 1")
        if self.span_days < 1:
            raise ConfigError("span_days must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        for name in ("heuristic_coverage", "fail_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        lo, hi = self.design_size_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad design_size_range {self.design_size_range}")
        if not self.tool_catalog:
            raise ConfigError("tool_catalog is empty")
        if not self.priority_levels or min(self.priority_levels) < 1:
            raise ConfigError("priority_levels must be positive")
        if self.max_replication < 1:
            raise ConfigError("max_replication must be >= 1")
        if self.filler_tags < 0:
            raise ConfigError("filler_tags must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tool_catalog"] = [
            {"name": t.name, "action_type": t.action_type, "base": list(t.base)} for t in self.tool_catalog
        ]
        d["design_size_range"] = list(self.design_size_range)
        d["priority_levels"] = list(self.priority_levels)
        d["overprovision_range"] = list(self.overprovision_range)
        d["heuristic_margin_range"] = list(self.heuristic_margin_range)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorSpec":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown generator keys: {unknown}")
        data = dict(data)
        if "tool_catalog" in data:
            data["tool_catalog"] = tuple(
                ToolSpec(t["name"], t["action_type"], tuple(float(b) for b in t["base"]))
                for t in data["tool_catalog"]
            )
        for key in ("design_size_range", "priority_levels", "overprovision_range", "heuristic_margin_range"):
            if key in data:
                data[key] = tuple(data[key])
        spec = cls(**data)
        spec.validate()
        return spec


def _size_levels(lo: int, hi: int) -> list[int]:
    levels = [2**k for k in range(0, 31) if lo <= 2**k <= hi]
    if not levels:
        raise ConfigError(f"design_size_range {lo}-{hi} contains no power of two")
    return levels


def ground_truth(
    config: JobConfig,
    catalog: Sequence[ToolSpec] = DEFAULT_CATALOG,
    size_exponent: float = 1.5,
) -> TargetMetrics:
    tools = {t.name: t for t in catalog}
    tool = tools[config.exec_spec["tool"]]
    life, cpu, ram, disk = tool.base
    size = (config.build_config["design_kgates"] / REF_KGATES) ** size_exponent
    prio = (REF_PRIORITY / config.priority) ** PRIORITY_EXPONENT
    ver = VERSION_LIFE_FACTOR[config.exec_spec["version"]]
    fail = config.expected_state == "fail"
    rep = config.replication
    return TargetMetrics(
        life_time=life * size * prio * ver * (FAIL_LIFE_FACTOR if fail else 1.0),
        cpu_max=cpu * size * rep,
        ram_max=ram * size,
        disk_max=disk * size * rep * (FAIL_DISK_FACTOR if fail else 1.0),
    )


def _pick(rng: np.random.Generator, items: Sequence):
    return items[int(rng.integers(len(items)))]


def _version(rng: np.random.Generator, frac: float) -> str:
    # newer releases take over as the collection window advances
    versions = list(VERSION_LIFE_FACTOR)
    weights = np.array([1.0 - 0.8 * frac, 1.0, 0.2 + frac])
    return versions[int(rng.choice(len(versions), p=weights / weights.sum()))]


def generate_record(spec: GeneratorSpec, index: int) -> JobRecord:
    # one counter-based stream per record keeps records independent of each other
    rng = np.random.default_rng([spec.seed, index])
    tool = _pick(rng, spec.tool_catalog)
    block = _pick(rng, BLOCKS)
    test = _pick(rng, TESTS)
    frac = float(rng.random())
    timestamp = spec.start_epoch + int(frac * spec.span_days * DAY)

    tags = {
        "action_type": tool.action_type,
        "application_type": _pick(rng, APPLICATIONS),
        "owner": _pick(rng, OWNERS),
    }
    # separate stream so padding leaves every other field unchanged
    filler_rng = np.random.default_rng([spec.seed, index, 1])
    for k in range(spec.filler_tags):
        tags[f"note_{k:03d}"] = "_".join(_pick(filler_rng, WORDS) for _ in range(3))

    kgates = _pick(rng, _size_levels(*spec.design_size_range))
    defines = [_pick(rng, DEFINES)]
    seed = int(rng.integers(100000))
    version = _version(rng, frac)
    config = JobConfig(
        source_file_name=f"tb/{block}/{test}.sv",
        tags=tags,
        priority=int(_pick(rng, spec.priority_levels)),
        build_config={
            "defines": defines,
            "design_kgates": int(kgates),
            "opt": _pick(rng, OPT_LEVELS),
            "target": block,
        },
        exec_spec={
            "command": f"run -f {block}.f -seed {seed:05d}",
            "tool": tool.name,
            "version": version,
        },
        dependencies=[f"build_{block}_{int(rng.integers(10))}"],
        caching_policy=_pick(rng, CACHING_POLICIES),
        expected_state="fail" if rng.random() < spec.fail_rate else "success",
        replication=int(rng.integers(1, spec.max_replication + 1)),
    )

    truth = ground_truth(config, spec.tool_catalog, spec.size_exponent)
    noise = np.exp(spec.noise_sigma * rng.standard_normal(len(METRICS)))
    measured = TargetMetrics(*(float(v * n) for v, n in zip(truth.as_tuple(), noise)))
    if rng.random() < spec.heuristic_coverage:
        factors = rng.uniform(*spec.heuristic_margin_range, size=len(METRICS))
    else:
        factors = rng.uniform(*spec.overprovision_range, size=len(METRICS))
    requested = TargetMetrics(*(float(v * f) for v, f in zip(truth.as_tuple(), factors)))
    return JobRecord(
        config=config,
        requested=requested,
        metrics=measured,
        timestamp=timestamp,
        job_id=f"job-{spec.seed}-{index:06d}",
    )


def generate_dataset(spec: GeneratorSpec) -> list[JobRecord]:
    spec.validate()
    return [generate_record(spec, i) for i in range(spec.n_jobs)]


def split_dataset(
    records: Sequence[JobRecord],
    ratios: tuple[int, int, int] = (8, 1, 1),
    seed: int = 0,
) -> tuple[list[JobRecord], list[JobRecord], list[JobRecord]]:
    """Random seed-deterministic split into (train, val, test)."""
    if not records:
        raise EmptySplit("no records to split")
    if len(ratios) != 3 or min(ratios) < 0 or sum(ratios) <= 0:
        raise ConfigError(f"bad split ratios {ratios}")
    n = len(records)
    total = sum(ratios)
    n_val = n * ratios[1] // total
    n_test = n * ratios[2] // total
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) == 0:
        raise EmptySplit(f"{n} records cannot fill an {':'.join(map(str, ratios))} split")
    order = np.random.default_rng(seed).permutation(n)
    train = [records[i] for i in order[:n_train]]
    val = [records[i] for i in order[n_train : n_train + n_val]]
    test = [records[i] for i in order[n_train + n_val :]]
    return train, val, test


def split_temporal(
    records: Sequence[JobRecord],
    train_days: int,
    window_days: int = 5,
    origin: int | None = None,
) -> tuple[list[JobRecord], list[list[JobRecord]]]:
    """Split into a training period and consecutive future windows.

    A trailing partial window is dropped.
    """
    if not records:
        raise EmptySplit("no records to split")
    if train_days < 1 or window_days < 1:
        raise ConfigError("train_days and window_days must be >= 1")
    if origin is None:
        origin = min(r.timestamp for r in records) // DAY * DAY
    last_day = max((r.timestamp - origin) // DAY for r in records)
    n_windows = (last_day + 1 - train_days) // window_days
    train = [r for r in records if (r.timestamp - origin) // DAY < train_days]
    windows: list[list[JobRecord]] = [[] for _ in range(max(n_windows, 0))]
    for r in records:
        day = (r.timestamp - origin) // DAY
        if day < train_days:
            continue
        w = (day - train_days) // window_days
        if w < n_windows:
            windows[w].append(r)
    if not train or not windows or any(not w for w in windows):
        raise EmptySplit("temporal split produced an empty part")
    return train, windows


def metric_ranges(records: Sequence[JobRecord]) -> dict[str, tuple[float, float]]:
    values = np.array([r.metrics.as_tuple() for r in records])
    return {m: (float(values[:, j].min()), float(values[:, j].max())) for j, m in enumerate(METRICS)}


def skewness(values: Sequence[float]) -> float:
    x = np.asarray(values, dtype=np.float64)
    d = x - x.mean()
    m2 = np.mean(d**2)
    if m2 == 0:
        return 0.0
    return float(np.mean(d**3) / m2**1.5)


def manifest(spec: GeneratorSpec, records: Sequence[JobRecord]) -> dict:
    stats = {}
    values = np.array([r.metrics.as_tuple() for r in records])
    for j, m in enumerate(METRICS):
        col = values[:, j]
        stats[m] = {
            "min": float(col.min()),
            "max": float(col.max()),
            "mean": float(col.mean()),
            "skewness": skewness(col),
        }
    return {
        "formula_version": FORMULA_VERSION,
        "spec": spec.to_dict(),
        "n_records": len(records),
        "metrics": stats,
    }
