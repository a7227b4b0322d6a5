"""Decoder-only transformer with causal full or sliding-window attention.

Pre-norm residual blocks, learned positional embeddings, optional low-rank
adapters on selected linear layers. Kept small enough to train on a CPU.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, EmptyMask, NoAdapters, NonFiniteLoss, SequenceTooLong
from .tokenizer import PAD, VOCAB_SIZE, TokenSequence

LINEAR_NAMES = ("q", "k", "v", "o", "fc1", "fc2")


@dataclass
class LoraConfig:
    rank: int = 8
    alpha: float = 16.0
    dropout: float = 0.05
    targets: tuple[str, ...] = ("q", "k", "v", "o")

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank


@dataclass
class ModelConfig:
    d_model: int = 192
    n_layers: int = 4
    n_heads: int = 6
    d_ff: int = 768
    vocab_size: int = VOCAB_SIZE
    max_seq: int = 1024
    attention: str = "full"  # "full" or "sliding"
    window: int | None = None
    dropout: float = 0.0
    tie_embeddings: bool = False
    lora: LoraConfig | None = None

    def validate(self) -> None:
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.attention not in ("full", "sliding"):
            raise ConfigError(f"attention must be 'full' or 'sliding', got {self.attention!r}")
        if self.attention == "sliding":
            if self.window is None or not 1 <= self.window <= self.max_seq:
                raise ConfigError(f"sliding window must lie in [1, {self.max_seq}], got {self.window}")
        if self.lora is not None:
            if self.lora.rank < 1:
                raise ConfigError("lora rank must be >= 1")
            bad = set(self.lora.targets) - set(LINEAR_NAMES)
            if bad:
                raise ConfigError(f"unknown lora targets {sorted(bad)}")
        if min(self.d_model, self.n_layers, self.d_ff, self.vocab_size, self.max_seq) < 1:
            raise ConfigError("model dimensions must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.lora is not None:
            d["lora"]["targets"] = list(self.lora.targets)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"unknown model keys: {unknown}")
        data = dict(data)
        lora = data.get("lora")
        if lora is not None:
            lora = dict(lora)
            if "targets" in lora:
                lora["targets"] = tuple(lora["targets"])
            data["lora"] = LoraConfig(**lora)
        cfg = cls(**data)
        cfg.validate()
        return cfg


def param_count(cfg: ModelConfig, trainable_only: bool = False) -> int:
    """Closed-form parameter count for a config."""
    d, f, V = cfg.d_model, cfg.d_ff, cfg.vocab_size
    shapes = {"q": (d, d), "k": (d, d), "v": (d, d), "o": (d, d), "fc1": (d, f), "fc2": (f, d)}
    adapters = 0
    if cfg.lora is not None:
        r = cfg.lora.rank
        adapters = sum(r * (d_in + d_out) for name, (d_in, d_out) in shapes.items() if name in cfg.lora.targets)
    if trainable_only and cfg.lora is not None:
        return cfg.n_layers * adapters
    per_layer = 4 * d + sum(d_in * d_out + d_out for d_in, d_out in shapes.values()) + adapters
    head = 0 if cfg.tie_embeddings else V * d
    return V * d + cfg.max_seq * d + cfg.n_layers * per_layer + 2 * d + head


class Linear(nn.Module):
    """Affine layer with an optional low-rank adapter ``scaling * B @ A``."""

    def __init__(self, d_in: int, d_out: int, lora: LoraConfig | None = None):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(d_out, d_in))
        self.bias = nn.Parameter(torch.zeros(d_out))
        nn.init.normal_(self.weight, std=0.02)
        self.lora_A = self.lora_B = None
        if lora is not None:
            self.lora_A = nn.Parameter(torch.empty(lora.rank, d_in))
            self.lora_B = nn.Parameter(torch.zeros(d_out, lora.rank))
            nn.init.kaiming_uniform_(self.lora_A, a=math.sqrt(5))
            self.scaling = lora.scaling
            self.lora_dropout = nn.Dropout(lora.dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = F.linear(x, self.weight, self.bias)
        if self.lora_A is not None:
            y = y + F.linear(F.linear(self.lora_dropout(x), self.lora_A), self.lora_B) * self.scaling
        return y


class KVCache:
    """Per-generation key/value store; one caller at a time."""

    def __init__(self, n_layers: int):
        self.keys: list[torch.Tensor | None] = [None] * n_layers
        self.values: list[torch.Tensor | None] = [None] * n_layers
        self.length = 0


def attention_mask(q_len: int, k_len: int, offset: int, window: int | None, device=None) -> torch.Tensor:
    """Boolean (q_len, k_len) mask, True where query ``offset+i`` may see key ``j``."""
    q_pos = torch.arange(offset, offset + q_len, device=device).unsqueeze(1)
    k_pos = torch.arange(k_len, device=device).unsqueeze(0)
    allowed = k_pos <= q_pos
    if window is not None:
        allowed &= (q_pos - k_pos) < window
    return allowed


class SelfAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.head_dim = d // cfg.n_heads
        self.window = cfg.window if cfg.attention == "sliding" else None
        lora = cfg.lora
        targets = lora.targets if lora is not None else ()
        for name in ("q", "k", "v", "o"):
            setattr(self, name, Linear(d, d, lora if name in targets else None))
        self.dropout = cfg.dropout

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        B, T, _ = x.shape
        return x.view(B, T, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(self, x, cache: KVCache | None = None, layer: int = 0, weights_out: list | None = None):
        B, T, D = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        offset = 0
        if cache is not None:
            offset = cache.length
            if cache.keys[layer] is not None:
                k = torch.cat([cache.keys[layer], k], dim=2)
                v = torch.cat([cache.values[layer], v], dim=2)
            cache.keys[layer], cache.values[layer] = k, v
        S = k.shape[2]
        if weights_out is not None:
            mask = attention_mask(T, S, offset, self.window, x.device)
            scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
            probs = scores.masked_fill(~mask, float("-inf")).softmax(dim=-1)
            weights_out.append(probs)
            out = probs @ v
        else:
            p = self.dropout if self.training else 0.0
            if self.window is None and offset == 0:
                out = F.scaled_dot_product_attention(q, k, v, dropout_p=p, is_causal=True)
            elif self.window is None and T == 1:
                out = F.scaled_dot_product_attention(q, k, v, dropout_p=p)
            else:
                mask = attention_mask(T, S, offset, self.window, x.device)
                out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask, dropout_p=p)
        out = out.transpose(1, 2).reshape(B, T, D)
        return self.o(out)


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        targets = cfg.lora.targets if cfg.lora is not None else ()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = SelfAttention(cfg)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.fc1 = Linear(cfg.d_model, cfg.d_ff, cfg.lora if "fc1" in targets else None)
        self.fc2 = Linear(cfg.d_ff, cfg.d_model, cfg.lora if "fc2" in targets else None)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, cache=None, layer=0, weights_out=None):
        x = x + self.drop(self.attn(self.ln1(x), cache, layer, weights_out))
        x = x + self.drop(self.fc2(F.gelu(self.fc1(self.ln2(x)))))
        return x


class Transformer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb = nn.Embedding(cfg.max_seq, cfg.d_model)
        nn.init.normal_(self.tok_emb.weight, std=0.02)
        nn.init.normal_(self.pos_emb.weight, std=0.02)
        self.blocks = nn.ModuleList([Block(cfg) for _ in range(cfg.n_layers)])
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = None
        if not cfg.tie_embeddings:
            self.head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)
            nn.init.normal_(self.head.weight, std=0.02)
        self.drop = nn.Dropout(cfg.dropout)
        if cfg.lora is not None:
            for name, p in self.named_parameters():
                p.requires_grad_("lora_" in name)

    def forward(
        self,
        ids: torch.Tensor,
        cache: KVCache | None = None,
        weights_out: list | None = None,
    ) -> torch.Tensor:
        """Logits of shape (batch, length, vocab) for ``ids`` of shape (batch, length).

        With a cache, ``ids`` continue the cached prefix and the cache is extended.
        """
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
        T = ids.shape[1]
        offset = cache.length if cache is not None else 0
        if offset + T > self.cfg.max_seq:
            raise SequenceTooLong(f"{offset + T} tokens exceed max_seq {self.cfg.max_seq}")
        pos = torch.arange(offset, offset + T, device=ids.device)
        x = self.drop(self.tok_emb(ids) + self.pos_emb(pos))
        for i, block in enumerate(self.blocks):
            x = block(x, cache, i, weights_out)
        if cache is not None:
            cache.length += T
        x = self.ln_f(x)
        w = self.tok_emb.weight if self.head is None else self.head.weight
        return F.linear(x, w)

    def new_cache(self) -> KVCache:
        return KVCache(self.cfg.n_layers)

    def attention_weights(self, ids: torch.Tensor) -> list[torch.Tensor]:
        """Per-layer softmax attention matrices, shape (batch, heads, q, k)."""
        out: list[torch.Tensor] = []
        self.forward(ids, weights_out=out)
        return out

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]


def build_model(cfg: ModelConfig, seed: int = 0) -> Transformer:
    torch.manual_seed(seed)
    return Transformer(cfg)


def pad_batch(seqs: Sequence[TokenSequence], pad_to: int | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad sequences with PAD; padded positions never carry loss."""
    width = max(len(s) for s in seqs) if pad_to is None else pad_to
    ids = torch.full((len(seqs), width), PAD, dtype=torch.long)
    mask = torch.zeros((len(seqs), width), dtype=torch.bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.tensor(s.ids, dtype=torch.long)
        mask[i, : len(s)] = torch.tensor(s.loss_mask, dtype=torch.bool)
    mask &= ids != PAD
    return ids, mask


def masked_ce_loss(logits: torch.Tensor, ids: torch.Tensor, loss_mask: torch.Tensor) -> torch.Tensor:
    """Mean next-token NLL over positions whose *next* token is loss-masked."""
    if logits.dim() == 2:
        logits, ids, loss_mask = logits.unsqueeze(0), ids.unsqueeze(0), loss_mask.unsqueeze(0)
    sel = loss_mask[:, 1:].bool()
    if not sel.any():
        raise EmptyMask("no loss-masked target positions")
    pred = logits[:, :-1][sel]
    target = ids[:, 1:][sel]
    return F.cross_entropy(pred.float() if pred.dtype == torch.float16 else pred, target)


def make_optimizer(
    model: Transformer,
    lr: float = 3e-4,
    weight_decay: float = 0.01,
    betas: tuple[float, float] = (0.9, 0.95),
) -> torch.optim.AdamW:
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        (decay if p.dim() >= 2 and "emb" not in name else no_decay).append(p)
    groups = [
        {"params": decay, "weight_decay": weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]
    return torch.optim.AdamW(groups, lr=lr, betas=betas, eps=1e-8)


def train_step(
    model: Transformer,
    optimizer: torch.optim.Optimizer,
    ids: torch.Tensor,
    loss_mask: torch.Tensor,
    lr: float,
    grad_clip: float | None = 1.0,
) -> float:
    """One AdamW update on the trainable parameters; returns the pre-update loss."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    for group in optimizer.param_groups:
        group["lr"] = lr
    model.train()
    loss = masked_ce_loss(model(ids), ids, loss_mask)
    if not torch.isfinite(loss):
        n_targets = int(loss_mask[:, 1:].sum())
        bad = [n for n, p in model.named_parameters() if not torch.isfinite(p).all()]
        raise NonFiniteLoss(
            f"loss={loss.item()} on batch {tuple(ids.shape)} with {n_targets} targets; "
            f"non-finite parameters: {bad or 'none'}"
        )
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(model.trainable_parameters(), grad_clip)
    optimizer.step()
    return float(loss.detach())


def merge_lora(model: Transformer) -> Transformer:
    """Fold every adapter into its base weight and return an adapter-free copy."""
    if model.cfg.lora is None:
        raise NoAdapters("model has no low-rank adapters to merge")
    merged = Transformer(replace(model.cfg, lora=None))
    state = {}
    with torch.no_grad():
        modules = dict(model.named_modules())
        for name, tensor in model.state_dict().items():
            if "lora_" in name:
                continue
            owner, _, leaf = name.rpartition(".")
            mod = modules.get(owner)
            if leaf == "weight" and isinstance(mod, Linear) and mod.lora_A is not None:
                tensor = tensor + mod.scaling * (mod.lora_B @ mod.lora_A)
            state[name] = tensor.clone()
    merged.load_state_dict(state)
    return merged
