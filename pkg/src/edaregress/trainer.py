"""Training loop: batching, LR schedule, periodic validation CE, checkpoints."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .codec import ValueRange
from .datagen import metric_ranges
from .errors import ConfigError
from .model import ModelConfig, Transformer, build_model, make_optimizer, masked_ce_loss, pad_batch, train_step
from .serializer import SYSTEM_PROMPT, JobRecord, build_prompt
from .tokenizer import TokenSequence

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "epoch", "lr", "train_loss", "val_ce")


@dataclass
class TrainConfig:
    lr: float = 3e-4
    min_lr_ratio: float = 0.1
    warmup_steps: int = 100
    batch_size: int = 16
    epochs: float = 2.0
    max_steps: int | None = None
    max_seq_len: int = 1024
    seed: int = 0
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    eval_interval: int = 100
    ckpt_interval: int = 500
    val_subsample: int = 200
    threads: int = 1
    deterministic: bool = True

    def validate(self) -> None:
        if self.lr < 0 or self.batch_size < 1 or self.max_seq_len < 1:
            raise ConfigError("lr, batch_size and max_seq_len must be positive")
        if self.epochs <= 0 and not self.max_steps:
            raise ConfigError("need epochs > 0 or max_steps")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"unknown training keys: {unknown}")
        cfg = cls(**data)
        cfg.validate()
        return cfg


def set_determinism(threads: int = 1, deterministic: bool = True) -> None:
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(deterministic)


def tokenize_records(records: Sequence[JobRecord], max_len: int, system_prompt: str = SYSTEM_PROMPT) -> list[TokenSequence]:
    return [build_prompt(r.config, r.metrics, max_len, system_prompt) for r in records]


def lr_at(step: int, total: int, cfg: TrainConfig) -> float:
    if step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / max(1, total - cfg.warmup_steps)
    cosine = 0.5 * (1 + math.cos(math.pi * min(1.0, progress)))
    return cfg.lr * (cfg.min_lr_ratio + (1 - cfg.min_lr_ratio) * cosine)


@torch.no_grad()
def evaluate_ce(model: Transformer, seqs: Sequence[TokenSequence], batch_size: int = 16) -> float:
    """Token-weighted mean CE over the loss-masked positions of ``seqs``."""
    model.eval()
    total, count = 0.0, 0
    for i in range(0, len(seqs), batch_size):
        ids, mask = pad_batch(seqs[i : i + batch_size])
        n = int(mask[:, 1:].sum())
        total += float(masked_ce_loss(model(ids), ids, mask)) * n
        count += n
    return total / count


def value_ranges(records: Sequence[JobRecord]) -> dict[str, ValueRange]:
    return {m: ValueRange(lo, hi) for m, (lo, hi) in metric_ranges(records).items()}


def _batch_indices(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def train(
    train_records: Sequence[JobRecord],
    val_records: Sequence[JobRecord],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    out_dir: str | Path,
    resume: str | Path | None = None,
    system_prompt: str = SYSTEM_PROMPT,
    extra: dict | None = None,
    on_log: Callable[[dict], None] | None = None,
) -> Path:
    """Train a model and return the path of the final checkpoint.

    Writes ``loss_log.csv``, ``ckpt_step{N}.ckpt`` every ``ckpt_interval``
    steps and ``final.ckpt`` into ``out_dir``.
    """
    cfg.validate()
    set_determinism(cfg.threads, cfg.deterministic)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    model_cfg.max_seq = max(model_cfg.max_seq, cfg.max_seq_len)
    train_seqs = tokenize_records(train_records, cfg.max_seq_len, system_prompt)
    val_pick = np.random.default_rng([cfg.seed, 7]).permutation(len(val_records))[: cfg.val_subsample]
    val_seqs = tokenize_records([val_records[i] for i in sorted(val_pick)], cfg.max_seq_len, system_prompt)
    ranges = value_ranges(train_records)

    steps_per_epoch = math.ceil(len(train_seqs) / cfg.batch_size)
    total = cfg.max_steps or int(round(cfg.epochs * steps_per_epoch))

    rows: list[dict] = []
    if resume is not None:
        ckpt = load_checkpoint(resume)
        model = ckpt.model
        optimizer = ckpt.make_optimizer(weight_decay=cfg.weight_decay)
        step = ckpt.step
        if ckpt.rng_state is not None:
            torch.set_rng_state(ckpt.rng_state)
        log_path = out / "loss_log.csv"
        if log_path.exists():
            with open(log_path, newline="") as fh:
                rows = [r for r in csv.DictReader(fh) if int(r["step"]) <= step]
    else:
        model = build_model(model_cfg, cfg.seed)
        optimizer = make_optimizer(model, lr=cfg.lr, weight_decay=cfg.weight_decay)
        step = 0

    run_extra = {"train_config": asdict(cfg), "n_train": len(train_seqs), **(extra or {})}

    def snapshot(name: str) -> Path:
        path = out / name
        save_checkpoint(
            Checkpoint(
                model=model,
                system_prompt=system_prompt,
                value_ranges=ranges,
                step=step,
                optimizer_state=optimizer.state_dict(),
                rng_state=torch.get_rng_state(),
                extra=run_extra,
            ),
            path,
        )
        return path

    def write_log() -> None:
        with open(out / "loss_log.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)

    start = time.perf_counter()
    epoch_batches: dict[int, list[np.ndarray]] = {}
    while step < total:
        epoch, k = divmod(step, steps_per_epoch)
        if epoch not in epoch_batches:
            epoch_batches = {epoch: _batch_indices(len(train_seqs), cfg.batch_size, cfg.seed, epoch)}
        ids, mask = pad_batch([train_seqs[i] for i in epoch_batches[epoch][k]])
        lr = lr_at(step, total, cfg)
        loss = train_step(model, optimizer, ids, mask, lr, cfg.grad_clip)
        step += 1
        row = {"step": step, "epoch": f"{step / steps_per_epoch:.4f}", "lr": f"{lr:.6g}", "train_loss": f"{loss:.6f}", "val_ce": ""}
        if step % cfg.eval_interval == 0 or step == total:
            row["val_ce"] = f"{evaluate_ce(model, val_seqs):.6f}"
            # wall time is kept out of the CSV determinism contract: only logged
            log.info("step %d/%d loss %.4f val_ce %s (%.0fs)", step, total, loss, row["val_ce"], time.perf_counter() - start)
        rows.append(row)
        if on_log is not None:
            on_log(row)
        if step % cfg.ckpt_interval == 0 and step != total:
            snapshot(f"ckpt_step{step:06d}.ckpt")
            write_log()
    final = snapshot("final.ckpt")
    write_log()
    return final
