"""Template-constrained and free-running generation.

Constrained mode splits the answer into literal segments (JSON keys and
punctuation), which are pushed into the KV cache in one forward pass without
sampling, and value segments, where a small finite-state grammar restricts
each step to the tokens that keep the value in ``[-]d.dde[+-]dd`` form.
"""

from __future__ import annotations

import enum
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence, Union

import torch

from .codec import ValueRange, clip_value, decode_number
from .model import Transformer
from .serializer import METRICS, SYSTEM_PROMPT, JobConfig, TargetMetrics, build_prompt, serialize_targets
from .tokenizer import DIGIT_IDS, EOS, SYMBOL_IDS, decode, encode

MINUS = SYMBOL_IDS["-"]
PLUS = SYMBOL_IDS["+"]
DOT = SYMBOL_IDS["."]
EXP = SYMBOL_IDS["e"]
ZERO = DIGIT_IDS[0]
ALL_DIGITS = frozenset(DIGIT_IDS)
NONZERO_DIGITS = frozenset(DIGIT_IDS[1:])


class Phase(enum.Enum):
    SIGN_OR_DIGIT = 0
    LEAD_DIGIT = 1  # after a leading minus
    DOT = 2
    FRAC1 = 3
    FRAC2 = 4
    EXP_MARK = 5
    EXP_SIGN = 6
    EXP_D1 = 7
    EXP_D2 = 8
    DONE = 9


@dataclass(frozen=True)
class GrammarState:
    phase: Phase = Phase.SIGN_OR_DIGIT
    zero: bool = False  # a leading '0' forces the rest of 0.00e+00
    exp_negative: bool = False
    exp_lead_zero: bool = False


def allowed_tokens(state: GrammarState) -> frozenset[int]:
    p = state.phase
    if p is Phase.SIGN_OR_DIGIT:
        return ALL_DIGITS | {MINUS}
    if p is Phase.LEAD_DIGIT:
        return NONZERO_DIGITS
    if p is Phase.DOT:
        return frozenset({DOT})
    if p is Phase.EXP_MARK:
        return frozenset({EXP})
    if state.zero:
        return frozenset({PLUS}) if p is Phase.EXP_SIGN else frozenset({ZERO})
    if p in (Phase.FRAC1, Phase.FRAC2, Phase.EXP_D1):
        return ALL_DIGITS
    if p is Phase.EXP_SIGN:
        return frozenset({PLUS, MINUS})
    if p is Phase.EXP_D2:
        # e-00 is not canonical
        return NONZERO_DIGITS if state.exp_negative and state.exp_lead_zero else ALL_DIGITS
    raise ValueError("no tokens are allowed once the value is complete")


_NEXT = {
    Phase.LEAD_DIGIT: Phase.DOT,
    Phase.DOT: Phase.FRAC1,
    Phase.FRAC1: Phase.FRAC2,
    Phase.FRAC2: Phase.EXP_MARK,
    Phase.EXP_MARK: Phase.EXP_SIGN,
    Phase.EXP_SIGN: Phase.EXP_D1,
    Phase.EXP_D1: Phase.EXP_D2,
    Phase.EXP_D2: Phase.DONE,
}


def advance(state: GrammarState, token: int) -> GrammarState:
    if token not in allowed_tokens(state):
        raise ValueError(f"token {token!r} not allowed in {state.phase.name}")
    p = state.phase
    if p is Phase.SIGN_OR_DIGIT:
        if token == MINUS:
            return GrammarState(Phase.LEAD_DIGIT)
        return GrammarState(Phase.DOT, zero=token == ZERO)
    nxt = GrammarState(_NEXT[p], state.zero, state.exp_negative, state.exp_lead_zero)
    if p is Phase.EXP_SIGN:
        nxt = GrammarState(nxt.phase, nxt.zero, exp_negative=token == MINUS)
    elif p is Phase.EXP_D1:
        nxt = GrammarState(nxt.phase, nxt.zero, nxt.exp_negative, exp_lead_zero=token == ZERO)
    return nxt


@dataclass(frozen=True)
class Literal:
    text: str


@dataclass(frozen=True)
class Value:
    metric: str
    range: ValueRange | None = None


Segment = Union[Literal, Value]


@dataclass(frozen=True)
class DecodeTemplate:
    segments: tuple[Segment, ...]

    def render(self, values: dict[str, str]) -> str:
        return "".join(s.text if isinstance(s, Literal) else values[s.metric] for s in self.segments)

    def validate(self) -> None:
        metrics = [s.metric for s in self.segments if isinstance(s, Value)]
        if tuple(metrics) != METRICS:
            raise ValueError(f"template values {metrics} must follow {METRICS}")
        if not isinstance(self.segments[-1], Literal):
            raise ValueError("template must end with a literal")
        parsed = json.loads(self.render({m: "0.00e+00" for m in METRICS}))
        if list(parsed) != list(METRICS):
            raise ValueError("template does not render the target schema")


def default_template(ranges: dict[str, ValueRange] | None = None) -> DecodeTemplate:
    """Template matching :func:`serialize_targets` byte for byte."""
    marker = "\x00"
    skeleton = serialize_targets(TargetMetrics.zeros()).replace("0.00e+00", marker)
    pieces = skeleton.split(marker)
    segments: list[Segment] = []
    for metric, text in zip(METRICS, pieces):
        segments += [Literal(text), Value(metric, (ranges or {}).get(metric))]
    segments.append(Literal(pieces[-1]))
    template = DecodeTemplate(tuple(segments))
    template.validate()
    return template


@dataclass
class DecodeStats:
    sampled_steps: int = 0
    deterministic_tokens: int = 0
    prefill_tokens: int = 0
    generated_tokens: int = 0
    forward_calls: int = 0
    prompt_tokens: int = 0
    wall_time: float = 0.0

    @property
    def output_tokens(self) -> int:
        return self.sampled_steps + self.deterministic_tokens + self.prefill_tokens

    def to_dict(self) -> dict:
        d = asdict(self)
        d["output_tokens"] = self.output_tokens
        return d


@dataclass
class ConstrainedResult:
    metrics: TargetMetrics
    raw: dict[str, str]  # generated notation before clipping
    text: str
    stats: DecodeStats


@dataclass
class ParseFailure:
    category: str  # malformed_json | unknown_key | missing_key | non_numeric_value | budget_exhausted
    detail: str = ""


@dataclass
class VanillaResult:
    outcome: TargetMetrics | ParseFailure
    text: str
    stats: DecodeStats

    @property
    def ok(self) -> bool:
        return isinstance(self.outcome, TargetMetrics)


def _argmax_over(logits: torch.Tensor, allowed: frozenset[int]) -> int:
    ids = sorted(allowed)
    sub = logits[torch.tensor(ids)]
    return ids[int(torch.argmax(sub))]


def _sample_over(logits: torch.Tensor, allowed: frozenset[int], temperature: float, generator: torch.Generator | None) -> int:
    ids = sorted(allowed)
    probs = torch.softmax(logits[torch.tensor(ids)].double() / temperature, dim=0)
    return ids[int(torch.multinomial(probs, 1, generator=generator))]


@torch.no_grad()
def constrained_generate(
    model: Transformer,
    cfg: JobConfig,
    template: DecodeTemplate,
    max_len: int,
    system_prompt: str = SYSTEM_PROMPT,
    temperature: float = 0.0,
    generator: torch.Generator | None = None,
) -> ConstrainedResult:
    """Template-constrained decoding; the result always parses.

    ``temperature`` 0 is greedy (argmax over the allowed set); a positive
    temperature samples from the renormalized allowed-set distribution.
    """
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    t0 = time.perf_counter()
    model.eval()
    stats = DecodeStats()
    prompt = build_prompt(cfg, None, max_len, system_prompt)
    stats.prompt_tokens = len(prompt)
    cache = model.new_cache()
    pending: list[int] = list(prompt.ids)
    last: torch.Tensor | None = None
    output: list[int] = []
    raw: dict[str, str] = {}
    values: dict[str, float] = {}

    def flush() -> torch.Tensor:
        nonlocal last
        if pending:
            last = model(torch.tensor(pending, dtype=torch.long), cache)[0, -1]
            stats.forward_calls += 1
            pending.clear()
        return last

    for seg in template.segments:
        if isinstance(seg, Literal):
            ids = encode(seg.text).ids
            pending.extend(ids)
            output.extend(ids)
            stats.prefill_tokens += len(ids)
            continue
        state = GrammarState()
        value_ids: list[int] = []
        while state.phase is not Phase.DONE:
            allowed = allowed_tokens(state)
            if len(allowed) == 1:
                (tok,) = allowed
                stats.deterministic_tokens += 1
            else:
                logits = flush()
                tok = _argmax_over(logits, allowed) if temperature == 0 else _sample_over(logits, allowed, temperature, generator)
                stats.sampled_steps += 1
            pending.append(tok)
            value_ids.append(tok)
            state = advance(state, tok)
        output.extend(value_ids)
        text = decode(value_ids)
        raw[seg.metric] = text
        x = decode_number(text)
        values[seg.metric] = clip_value(x, seg.range) if seg.range is not None else x
    stats.generated_tokens = len(output)
    stats.wall_time = time.perf_counter() - t0
    metrics = TargetMetrics(**{m: max(0.0, values[m]) for m in METRICS})
    return ConstrainedResult(metrics, raw, decode(output), stats)


def parse_answer(text: str) -> TargetMetrics | ParseFailure:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        return ParseFailure("malformed_json", str(exc))
    if not isinstance(obj, dict):
        return ParseFailure("malformed_json", f"top level is {type(obj).__name__}")
    unknown = sorted(set(obj) - set(METRICS))
    if unknown:
        return ParseFailure("unknown_key", ",".join(unknown))
    missing = [m for m in METRICS if m not in obj]
    if missing:
        return ParseFailure("missing_key", ",".join(missing))
    values = {}
    for m in METRICS:
        v = obj[m]
        try:
            x = float(v) if isinstance(v, str) else math.nan
        except ValueError:
            x = math.nan
        if not math.isfinite(x) or x < 0:
            return ParseFailure("non_numeric_value", f"{m}={v!r}")
        values[m] = x
    return TargetMetrics(**values)


@torch.no_grad()
def vanilla_generate(
    model: Transformer,
    cfg: JobConfig,
    max_new_tokens: int,
    max_len: int,
    system_prompt: str = SYSTEM_PROMPT,
) -> VanillaResult:
    """Greedy free-running generation until EOS or budget, then strict parsing."""
    t0 = time.perf_counter()
    model.eval()
    stats = DecodeStats()
    prompt = build_prompt(cfg, None, max_len, system_prompt)
    stats.prompt_tokens = len(prompt)
    budget = min(max_new_tokens, model.cfg.max_seq - len(prompt) + 1)
    out: list[int] = []
    finished = False
    if budget > 0:
        cache = model.new_cache()
        logits = model(torch.tensor(prompt.ids, dtype=torch.long), cache)[0, -1]
        stats.forward_calls += 1
        while True:
            tok = int(torch.argmax(logits))
            out.append(tok)
            stats.sampled_steps += 1
            if tok == EOS:
                finished = True
                break
            if len(out) >= budget:
                break
            logits = model(torch.tensor([tok], dtype=torch.long), cache)[0, -1]
            stats.forward_calls += 1
    stats.generated_tokens = len(out)
    text = decode(out)
    outcome = parse_answer(text) if finished else ParseFailure("budget_exhausted", f"{len(out)} tokens")
    stats.wall_time = time.perf_counter() - t0
    return VanillaResult(outcome, text, stats)
