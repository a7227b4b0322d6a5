"""Fixed-width scientific notation for metric values.

Every value renders as ``[-]d.dde[+-]dd``: three significant digits, a
mandatory exponent sign and two exponent digits. Zero is ``0.00e+00``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal, localcontext

from .errors import MalformedNotation, NotFinite, OutOfRange

MANTISSA_DIGITS = 3
EXPONENT_DIGITS = 2
MAX_EXPONENT = 10**EXPONENT_DIGITS - 1
RENDERED_WIDTH = MANTISSA_DIGITS + 1 + 1 + 1 + EXPONENT_DIGITS  # d.dd e +dd

_PATTERN = re.compile(r"^(-?)([0-9])\.([0-9]{2})e([+-])([0-9]{2})$")
_QUANTUM = Decimal(1).scaleb(-(MANTISSA_DIGITS - 1))


@dataclass(frozen=True)
class SciNotation:
    mantissa_sign: str  # "+" or "-"
    mantissa_digits: str  # three digits, first one nonzero unless the value is zero
    exponent_sign: str  # "+" or "-"
    exponent_digits: str  # two digits

    @property
    def is_zero(self) -> bool:
        return self.mantissa_digits == "0" * MANTISSA_DIGITS

    def render(self) -> str:
        sign = "-" if self.mantissa_sign == "-" else ""
        m = self.mantissa_digits
        return f"{sign}{m[0]}.{m[1:]}e{self.exponent_sign}{self.exponent_digits}"

    __str__ = render

    @classmethod
    def parse(cls, text: str) -> "SciNotation":
        match = _PATTERN.match(text)
        if match is None:
            raise MalformedNotation(f"not in d.dde+dd form: {text!r}")
        neg, lead, frac, esign, edigits = match.groups()
        digits = lead + frac
        if lead == "0":
            if text != "0.00e+00":
                raise MalformedNotation(f"non-canonical zero or leading zero: {text!r}")
        elif edigits == "00" and esign == "-":
            raise MalformedNotation(f"zero exponent must carry '+': {text!r}")
        return cls("-" if neg else "+", digits, esign, edigits)


ZERO = SciNotation("+", "000", "+", "00")


@dataclass(frozen=True)
class ValueRange:
    min: float
    max: float

    def __post_init__(self) -> None:
        if not self.min <= self.max:
            raise ValueError(f"invalid range [{self.min}, {self.max}]")


def encode_number(x: float) -> SciNotation:
    """Round ``x`` half-to-even to three significant digits."""
    if not math.isfinite(x):
        raise NotFinite(f"cannot encode {x!r}")
    if x == 0:
        return ZERO
    d = Decimal(x)  # exact binary value
    exponent = d.adjusted()
    with localcontext() as ctx:
        # a double has at most ~770 significant decimal digits; keep them all so
        # the only rounding step is the half-even one below
        ctx.prec = 1000
        mantissa = abs(d).scaleb(-exponent).quantize(_QUANTUM, rounding=ROUND_HALF_EVEN)
        if mantissa >= 10:
            mantissa = (mantissa / 10).quantize(_QUANTUM, rounding=ROUND_HALF_EVEN)
            exponent += 1
    if abs(exponent) > MAX_EXPONENT:
        raise OutOfRange(f"{x!r} needs exponent {exponent}, limit is +/-{MAX_EXPONENT}")
    digits = str(mantissa).replace(".", "")
    return SciNotation(
        "-" if x < 0 else "+",
        digits,
        "-" if exponent < 0 else "+",
        f"{abs(exponent):0{EXPONENT_DIGITS}d}",
    )


def decode_number(s: SciNotation | str) -> float:
    if isinstance(s, str):
        s = SciNotation.parse(s)
    return float(s.render())


def format_number(x: float) -> str:
    return encode_number(x).render()


def clip_value(x: float, r: ValueRange) -> float:
    return min(max(x, r.min), r.max)
