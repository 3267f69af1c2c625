"""Helpers shared by the exact-arithmetic code paths."""

from __future__ import annotations

from decimal import Decimal
from fractions import Fraction
from numbers import Rational

import numpy as np


def to_fraction(value) -> Fraction:
    """Convert ints, decimal strings, ``"p/q"`` strings, Decimals or floats.

    Floats go through their shortest ``repr`` so ``0.1`` becomes ``1/10``
    rather than the binary approximation.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (bool, np.bool_)):
        raise TypeError("booleans are not numbers here")
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, Rational):
        return Fraction(value.numerator, value.denominator)
    if isinstance(value, (float, np.floating)):
        if not np.isfinite(value):
            raise ValueError(f"non-finite value {value!r}")
        return Fraction(repr(float(value)))
    if isinstance(value, (str, Decimal)):
        return Fraction(str(value).strip())
    raise TypeError(f"cannot convert {type(value).__name__} to Fraction")


def format_fraction(q: Fraction) -> str:
    """Decimal string when the expansion terminates, ``"p/q"`` otherwise."""
    den = q.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{q.numerator}/{q.denominator}"
    digits = max(twos, fives)
    if digits == 0:
        return str(q.numerator)
    scaled = q * 10**digits
    sign = "-" if scaled < 0 else ""
    n = abs(scaled.numerator)
    whole, frac = divmod(n, 10**digits)
    return f"{sign}{whole}.{frac:0{digits}d}"


def fraction_array(values) -> np.ndarray:
    """Object ndarray of Fractions with the shape of ``values``."""
    arr = np.asarray(values, dtype=object)
    out = np.empty(arr.shape, dtype=object)
    for idx, v in np.ndenumerate(arr):
        out[idx] = to_fraction(v)
    return out


def is_exact(arr: np.ndarray) -> bool:
    return arr.dtype == object
