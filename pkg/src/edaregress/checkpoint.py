"""Self-describing checkpoint container.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
then a flat blob of raw tensor bytes. The header lists every tensor's name,
dtype, shape and byte offset, plus model config, vocabulary, system prompt,
clip ranges and training progress. Output is byte-stable for equal inputs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .codec import ValueRange
from .errors import DataError
from .model import ModelConfig, Transformer, make_optimizer
from .serializer import METRICS, prompt_hash
from .tokenizer import VOCAB, Vocabulary

MAGIC = b"EDARGCK1"
FORMAT_VERSION = 1

_DTYPES = {
    torch.float32: "float32",
    torch.float64: "float64",
    torch.int64: "int64",
    torch.uint8: "uint8",
    torch.bool: "bool",
}
_NP = {"float32": np.float32, "float64": np.float64, "int64": np.int64, "uint8": np.uint8, "bool": np.bool_}


@dataclass
class Checkpoint:
    model: Transformer
    system_prompt: str
    value_ranges: dict[str, ValueRange]
    step: int = 0
    optimizer_state: dict | None = None
    rng_state: torch.Tensor | None = None
    extra: dict[str, Any] = field(default_factory=dict)
    vocab: Vocabulary = VOCAB

    @property
    def config(self) -> ModelConfig:
        return self.model.cfg

    def make_optimizer(self, **kwargs) -> torch.optim.AdamW:
        opt = make_optimizer(self.model, **kwargs)
        if self.optimizer_state is not None:
            opt.load_state_dict(self.optimizer_state)
        return opt


def _flatten_optimizer(state: dict, tensors: dict[str, torch.Tensor]) -> dict:
    entries = {}
    for idx, pstate in state["state"].items():
        keys = {}
        for key, value in pstate.items():
            if torch.is_tensor(value):
                name = f"optim.{idx}.{key}"
                tensors[name] = value
                keys[key] = {"tensor": name}
            else:
                keys[key] = {"value": value}
        entries[str(idx)] = keys
    return {"param_groups": state["param_groups"], "state": entries}


def _unflatten_optimizer(meta: dict, tensors: dict[str, torch.Tensor]) -> dict:
    state = {}
    for idx, keys in meta["state"].items():
        state[int(idx)] = {
            key: tensors[spec["tensor"]] if "tensor" in spec else spec["value"] for key, spec in keys.items()
        }
    return {"param_groups": meta["param_groups"], "state": state}


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    tensors: dict[str, torch.Tensor] = {}
    for name, t in ckpt.model.state_dict().items():
        tensors[f"model.{name}"] = t
    optim_meta = None
    if ckpt.optimizer_state is not None:
        optim_meta = _flatten_optimizer(ckpt.optimizer_state, tensors)
    if ckpt.rng_state is not None:
        tensors["rng"] = ckpt.rng_state

    index, chunks, offset = [], [], 0
    for name, t in tensors.items():
        t = t.detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise DataError(f"cannot store tensor {name} of dtype {t.dtype}")
        raw = t.numpy().tobytes()
        index.append({"name": name, "dtype": _DTYPES[t.dtype], "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)

    header = {
        "format": FORMAT_VERSION,
        "model_config": ckpt.model.cfg.to_dict(),
        "vocab": ckpt.vocab.to_dict(),
        "system_prompt": ckpt.system_prompt,
        "system_prompt_sha256": prompt_hash(ckpt.system_prompt),
        "value_ranges": {m: [ckpt.value_ranges[m].min, ckpt.value_ranges[m].max] for m in METRICS},
        "step": ckpt.step,
        "optimizer": optim_meta,
        "extra": ckpt.extra,
        "tensors": index,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for raw in chunks:
            fh.write(raw)
    tmp.replace(path)


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise DataError(f"{path} is not a checkpoint file")
        (n,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(n).decode("utf-8"))


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path} is not a checkpoint file")
    (n,) = struct.unpack("<Q", data[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(data[start : start + n].decode("utf-8"))
    if header.get("format") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format {header.get('format')}")
    blob = memoryview(data)[start + n :]
    if prompt_hash(header["system_prompt"]) != header["system_prompt_sha256"]:
        raise DataError("system prompt hash mismatch")

    tensors = {}
    for spec in header["tensors"]:
        raw = blob[spec["offset"] : spec["offset"] + spec["nbytes"]]
        arr = np.frombuffer(raw, dtype=_NP[spec["dtype"]]).reshape(spec["shape"]).copy()
        tensors[spec["name"]] = torch.from_numpy(arr)

    cfg = ModelConfig.from_dict(header["model_config"])
    model = Transformer(cfg)
    model.load_state_dict({k[len("model.") :]: v for k, v in tensors.items() if k.startswith("model.")})
    optimizer_state = None
    if header["optimizer"] is not None:
        optimizer_state = _unflatten_optimizer(header["optimizer"], tensors)
    return Checkpoint(
        model=model,
        system_prompt=header["system_prompt"],
        value_ranges={m: ValueRange(*header["value_ranges"][m]) for m in METRICS},
        step=header["step"],
        optimizer_state=optimizer_state,
        rng_state=tensors.get("rng"),
        extra=header["extra"],
        vocab=Vocabulary.from_dict(header["vocab"]),
    )
