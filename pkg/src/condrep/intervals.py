"""Exact finite unions of half-open rational intervals inside [0, 1].

An :class:`IntervalSet` is the computable stand-in for a Borel subset of the
unit interval: all endpoints are :class:`fractions.Fraction` so lengths,
intersections and images under rational affine maps are exact.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Iterator, Sequence

from ._exact import to_fraction

__all__ = ["IntervalSet"]

ZERO = Fraction(0)
ONE = Fraction(1)


def _normalize(pairs: Iterable[tuple[Fraction, Fraction]]) -> tuple[tuple[Fraction, Fraction], ...]:
    items = sorted((a, b) for a, b in pairs if a < b)
    merged: list[list[Fraction]] = []
    for a, b in items:
        if merged and a <= merged[-1][1]:
            if b > merged[-1][1]:
                merged[-1][1] = b
        else:
            merged.append([a, b])
    return tuple((a, b) for a, b in merged)


class IntervalSet:
    """Sorted, disjoint union of intervals ``[a, b)`` with ``0 <= a < b <= 1``.

    Touching intervals are merged, so the representation is canonical and
    ``==`` is set equality.
    """

    __slots__ = ("_parts",)

    def __init__(self, intervals: Iterable[Sequence] = ()):
        pairs = []
        for item in intervals:
            a, b = (to_fraction(v) for v in item)
            if a > b:
                raise ValueError(f"interval [{a}, {b}) has a > b")
            if a < ZERO or b > ONE:
                raise ValueError(f"interval [{a}, {b}) leaves [0, 1]")
            pairs.append((a, b))
        self._parts = _normalize(pairs)

    @classmethod
    def _raw(cls, parts: tuple[tuple[Fraction, Fraction], ...]) -> "IntervalSet":
        obj = cls.__new__(cls)
        obj._parts = parts
        return obj

    @classmethod
    def empty(cls) -> "IntervalSet":
        return cls._raw(())

    @classmethod
    def unit(cls) -> "IntervalSet":
        return cls._raw(((ZERO, ONE),))

    @classmethod
    def interval(cls, a, b) -> "IntervalSet":
        return cls([(a, b)])

    # -- container protocol -------------------------------------------------
    @property
    def intervals(self) -> tuple[tuple[Fraction, Fraction], ...]:
        return self._parts

    def __iter__(self) -> Iterator[tuple[Fraction, Fraction]]:
        return iter(self._parts)

    def __len__(self) -> int:
        return len(self._parts)

    def __bool__(self) -> bool:
        return bool(self._parts)

    def __eq__(self, other) -> bool:
        return isinstance(other, IntervalSet) and self._parts == other._parts

    def __hash__(self) -> int:
        return hash(self._parts)

    def __repr__(self) -> str:
        body = " ∪ ".join(f"[{a}, {b})" for a, b in self._parts)
        return f"IntervalSet({body or '∅'})"

    def __contains__(self, x) -> bool:
        x = to_fraction(x)
        lo, hi = 0, len(self._parts)
        while lo < hi:
            mid = (lo + hi) // 2
            a, b = self._parts[mid]
            if x < a:
                hi = mid
            elif x >= b:
                lo = mid + 1
            else:
                return True
        return False

    # -- measure ------------------------------------------------------------
    @property
    def length(self) -> Fraction:
        """Lebesgue measure of the set (exact)."""
        return sum((b - a for a, b in self._parts), ZERO)

    def bounds(self) -> tuple[Fraction, Fraction] | None:
        if not self._parts:
            return None
        return self._parts[0][0], self._parts[-1][1]

    # -- algebra ------------------------------------------------------------
    def union(self, other: "IntervalSet") -> "IntervalSet":
        return IntervalSet._raw(_normalize(self._parts + other._parts))

    def intersection(self, other: "IntervalSet") -> "IntervalSet":
        out = []
        i = j = 0
        p, q = self._parts, other._parts
        while i < len(p) and j < len(q):
            a = max(p[i][0], q[j][0])
            b = min(p[i][1], q[j][1])
            if a < b:
                out.append((a, b))
            if p[i][1] < q[j][1]:
                i += 1
            else:
                j += 1
        return IntervalSet._raw(tuple(out))

    def complement(self) -> "IntervalSet":
        """Complement inside ``[0, 1)``."""
        out = []
        cursor = ZERO
        for a, b in self._parts:
            if cursor < a:
                out.append((cursor, a))
            cursor = b
        if cursor < ONE:
            out.append((cursor, ONE))
        return IntervalSet._raw(tuple(out))

    def difference(self, other: "IntervalSet") -> "IntervalSet":
        return self.intersection(other.complement())

    __or__ = union
    __and__ = intersection
    __sub__ = difference

    def __invert__(self) -> "IntervalSet":
        return self.complement()

    def shift(self, delta) -> "IntervalSet":
        """Translate by ``delta``; the image must stay inside [0, 1]."""
        delta = to_fraction(delta)
        return IntervalSet((a + delta, b + delta) for a, b in self._parts)

    def clip(self, a, b) -> "IntervalSet":
        return self & IntervalSet.interval(max(to_fraction(a), ZERO), min(to_fraction(b), ONE))

    # -- serialization ------------------------------------------------------
    def to_json(self) -> list[list[int]]:
        return [[a.numerator, a.denominator, b.numerator, b.denominator] for a, b in self._parts]

    @classmethod
    def from_json(cls, data: Iterable[Sequence[int]]) -> "IntervalSet":
        pairs = []
        for quad in data:
            if len(quad) != 4:
                raise ValueError(f"expected [num, den, num, den], got {quad!r}")
            pairs.append((Fraction(int(quad[0]), int(quad[1])), Fraction(int(quad[2]), int(quad[3]))))
        return cls(pairs)

    @classmethod
    def parse(cls, text: str) -> "IntervalSet":
        """Parse ``"0.3:0.4,0.6:0.7"`` into ``[0.3,0.4) ∪ [0.6,0.7)``."""
        pairs = []
        for chunk in text.split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            lo, _, hi = chunk.partition(":")
            if not hi:
                raise ValueError(f"bad interval {chunk!r}, expected lo:hi")
            pairs.append((lo, hi))
        return cls(pairs)
