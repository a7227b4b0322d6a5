"""Byte-level tokenizer.

Raw bytes map to ids 0-255 (id == byte value) and the special markers sit
above them, so every digit character is always exactly one token.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import UnknownToken

PAD = 256
BOS = 257
EOS = 258
SPECIALS = {"<pad>": PAD, "<bos>": BOS, "<eos>": EOS}
VOCAB_SIZE = 256 + len(SPECIALS)

DIGIT_IDS = tuple(range(ord("0"), ord("9") + 1))
SYMBOLS = '.e+-",:{}'
SYMBOL_IDS = {ch: ord(ch) for ch in SYMBOLS}


@dataclass(frozen=True)
class Vocabulary:
    size: int = VOCAB_SIZE
    pad_id: int = PAD
    bos_id: int = BOS
    eos_id: int = EOS
    digit_ids: tuple[int, ...] = DIGIT_IDS
    symbol_ids: dict[str, int] = field(default_factory=lambda: dict(SYMBOL_IDS))

    def unit(self, token_id: int) -> bytes | str:
        """Return the unit behind an id: a single byte, or a special marker name."""
        if 0 <= token_id < 256:
            return bytes([token_id])
        for name, sid in SPECIALS.items():
            if sid == token_id:
                return name
        raise UnknownToken(f"token id {token_id} outside vocabulary of size {self.size}")

    def id_of(self, unit: bytes | str) -> int:
        if isinstance(unit, bytes):
            if len(unit) != 1:
                raise UnknownToken(f"not a single byte: {unit!r}")
            return unit[0]
        if unit in SPECIALS:
            return SPECIALS[unit]
        raise UnknownToken(f"unknown special {unit!r}")

    def to_dict(self) -> dict:
        return {
            "kind": "byte",
            "size": self.size,
            "specials": dict(SPECIALS),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabulary":
        if data.get("kind") != "byte" or data.get("specials") != SPECIALS:
            raise UnknownToken(f"incompatible vocabulary: {data}")
        return cls()


VOCAB = Vocabulary()


@dataclass
class TokenSequence:
    ids: list[int]
    loss_mask: list[bool]

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.loss_mask):
            raise ValueError("ids and loss_mask differ in length")

    def __len__(self) -> int:
        return len(self.ids)

    def __add__(self, other: "TokenSequence") -> "TokenSequence":
        return TokenSequence(self.ids + other.ids, self.loss_mask + other.loss_mask)

    def with_mask(self, value: bool) -> "TokenSequence":
        return TokenSequence(list(self.ids), [value] * len(self.ids))


def _as_bytes(text: str | bytes) -> bytes:
    if isinstance(text, (bytes, bytearray)):
        return bytes(text)
    # surrogateescape lets strings produced by decode() carry arbitrary bytes
    return text.encode("utf-8", errors="surrogateescape")


def encode(text: str | bytes) -> TokenSequence:
    ids = list(_as_bytes(text))
    return TokenSequence(ids, [False] * len(ids))


def decode_bytes(seq: TokenSequence | Sequence[int]) -> bytes:
    ids: Iterable[int] = seq.ids if isinstance(seq, TokenSequence) else seq
    out = bytearray()
    for i in ids:
        i = int(i)
        if 0 <= i < 256:
            out.append(i)
        elif i in (PAD, BOS, EOS):
            continue
        else:
            raise UnknownToken(f"token id {i} outside vocabulary of size {VOCAB_SIZE}")
    return bytes(out)


def decode(seq: TokenSequence | Sequence[int]) -> str:
    """Inverse of :func:`encode`; special markers are dropped."""
    return decode_bytes(seq).decode("utf-8", errors="surrogateescape")
