"""Sets of constant mass ``a`` that mix with every fixed set.

Digits of ``U`` in [0, 1] are dealt out to the sequences ``U_m`` through the
bijection ``φ(m, p) = 2^m (2p - 1)``; the ``U_m`` are i.i.d. uniform and the
sets ``{U_m <= a}`` have the required intersections.  Sets for a diffuse
``η`` are pulled back through its distribution function.

Single points are handled exactly from their decimal expansion.  The Monte
Carlo draws ``U`` digit by digit: position ``n`` of chunk ``c`` comes from a
Philox stream keyed by ``(seed, c, n)``, so only the positions actually used
are generated and results do not depend on the thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from ._exact import to_fraction
from ._parallel import CHUNK, map_chunks, philox
from .intervals import IntervalSet

__all__ = [
    "DigitScheme",
    "MixingReport",
    "digit",
    "membership",
    "mixing_check",
    "phi",
    "u_m",
]

LEAD_DIGITS = 18


def phi(m: int, p: int) -> int:
    if m < 0 or p < 1:
        raise ValueError("need m >= 0 and p >= 1")
    return 2**m * (2 * p - 1)


def digit(x, n: int) -> int:
    """``n``-th decimal digit of ``x`` (terminating expansion for decimal fractions)."""
    x = to_fraction(x)
    if n < 1:
        raise ValueError("digits are numbered from 1")
    return (x * 10**n).__floor__() - 10 * (x * 10 ** (n - 1)).__floor__()


def u_m(x, m: int, P: int = 12) -> Fraction:
    """``Σ_{p<=P} D_{φ(m,p)} / 10^p`` (exact)."""
    x = to_fraction(x)
    if not 0 <= x <= 1:
        raise ValueError("x must lie in [0, 1]")
    if P < 1:
        raise ValueError("P must be >= 1")
    return sum((Fraction(digit(x, phi(m, p)), 10**p) for p in range(1, P + 1)), Fraction(0))


def _uniform_cdf(x):
    return min(max(to_fraction(x), Fraction(0)), Fraction(1))


@dataclass(frozen=True)
class DigitScheme:
    """``A_m = {x : u_m(F_eta(x)) <= a}``.

    ``F_eta`` defaults to the uniform law on [0, 1].  A cdf returning floats
    only carries about 17 significant digits, so deep positions read as 0;
    pass a cdf returning Fractions (or decimal strings) when that matters.
    """

    a: object
    P: int = 12
    F_eta: Callable = _uniform_cdf
    eta_name: str = "uniform"

    def __post_init__(self):
        a = to_fraction(self.a)
        if not 0 < a < 1:
            raise ValueError("a must lie in (0, 1)")
        if self.P < 1:
            raise ValueError("P must be >= 1")
        object.__setattr__(self, "a", a)

    @classmethod
    def named(cls, a, eta: str = "uniform", P: int = 12) -> "DigitScheme":
        if eta == "uniform":
            return cls(a, P)
        if eta == "normal":
            from scipy.stats import norm

            return cls(a, P, lambda x: to_fraction(float(norm.cdf(float(x)))), "normal")
        if eta == "exponential":
            return cls(a, P, lambda x: to_fraction(-math.expm1(-max(float(x), 0.0))), "exponential")
        raise ValueError(f"unknown eta {eta!r}; use uniform, normal or exponential")

    def to_unit(self, pairs: Sequence[tuple]) -> IntervalSet:
        """Image of a union of ``[lo, hi)`` in η-space under ``F_eta``."""
        return IntervalSet((self.F_eta(lo), self.F_eta(hi)) for lo, hi in pairs)


def membership(x, m: int, scheme: DigitScheme) -> bool:
    return u_m(scheme.F_eta(x), m, scheme.P) <= scheme.a


# -- Monte Carlo -------------------------------------------------------------------


@dataclass
class MixingReport:
    a: float
    n: int
    eta_hat_mass: float
    rows: list[dict] = field(default_factory=list)
    pairs: list[dict] = field(default_factory=list)
    eta_hat_empirical: float = float("nan")

    @property
    def target(self) -> float:
        return self.a * self.eta_hat_mass

    def within(self, k: float = 3.0) -> dict:
        """Which checks fall within ``k`` standard errors of their targets."""
        return {
            "mass": all(abs(r["mass"] - self.a) <= k * r["mass_se"] for r in self.rows),
            "pairs": all(abs(r["est"] - self.a**2) <= k * r["se"] for r in self.pairs),
            "tail": abs(self.rows[-1]["hat"] - self.target) <= k * self.rows[-1]["hat_se"] if self.rows else True,
        }

    def to_rows(self) -> list[dict]:
        out = [dict(kind="single", **r) for r in self.rows]
        out += [dict(kind="pair", **r) for r in self.pairs]
        return out


def _se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n)


def mixing_check(
    scheme: DigitScheme,
    A_hat: IntervalSet | Iterable[tuple] = IntervalSet.unit(),
    m_list: Sequence[int] = (0, 1, 2, 5, 10),
    N: int = 1_000_000,
    seed: int = 0,
    pairs: Sequence[tuple[int, int]] | None = None,
) -> MixingReport:
    """Estimate ``η(A_m)``, ``η(Â ∩ A_m)`` and ``η(A_m ∩ A_m')`` from ``N`` draws of ``U``.

    ``A_hat`` is an :class:`IntervalSet` when η is uniform on [0, 1],
    otherwise a list of ``[lo, hi)`` pairs in η-space.
    """
    if N < 10_000:
        raise ValueError("N must be >= 10^4")
    m_list = list(m_list)
    if not m_list or any(m < 0 for m in m_list):
        raise ValueError("m_list must be nonempty and nonnegative")
    if pairs is None:
        pairs = [(m_list[i], m_list[i + 1]) for i in range(len(m_list) - 1)]
        if len(m_list) > 2:
            pairs.append((m_list[0], m_list[-1]))
    pairs = [tuple(p) for p in pairs]
    if any(m == mm for m, mm in pairs):
        raise ValueError("pairs need distinct indices")
    if scheme.P > 18:
        raise ValueError("Monte Carlo needs P <= 18 (int64 digit packing)")
    hat = A_hat if isinstance(A_hat, IntervalSet) else scheme.to_unit(list(A_hat))
    P = scheme.P
    thresh = (scheme.a * 10**P).__floor__()
    scale = 10**LEAD_DIGITS
    # U in [lo, hi) read off the leading digits; ties have probability 10^-18
    bounds = [((lo * scale).__ceil__(), (hi * scale).__ceil__()) for lo, hi in hat]
    ms = sorted(set(m_list) | {m for pr in pairs for m in pr})
    weights = 10 ** np.arange(P - 1, -1, -1, dtype=np.int64)

    def run_chunk(c: int, size: int):
        cache: dict[int, np.ndarray] = {}

        def dig(n):
            if n not in cache:
                cache[n] = philox(seed, c, n).integers(0, 10, size=size, dtype=np.int64)
            return cache[n]

        lead = np.zeros(size, dtype=np.int64)
        for n in range(1, LEAD_DIGITS + 1):
            lead = lead * 10 + dig(n)
        in_hat = np.zeros(size, dtype=bool)
        for lo, hi in bounds:
            in_hat |= (lead >= lo) & (lead < hi)
        member = {}
        for m in ms:
            val = np.zeros(size, dtype=np.int64)
            for p in range(1, P + 1):
                val += dig(phi(m, p)) * weights[p - 1]
            member[m] = val <= thresh
        return (
            int(in_hat.sum()),
            {m: int(member[m].sum()) for m in ms},
            {m: int((member[m] & in_hat).sum()) for m in ms},
            {pr: int((member[pr[0]] & member[pr[1]]).sum()) for pr in pairs},
        )

    sizes = [CHUNK] * (N // CHUNK) + ([N % CHUNK] if N % CHUNK else [])
    chunks = map_chunks(run_chunk, sizes)

    n_hat = sum(ch[0] for ch in chunks)
    rep = MixingReport(float(scheme.a), N, float(hat.length))
    for m in m_list:
        mass = sum(ch[1][m] for ch in chunks) / N
        joint = sum(ch[2][m] for ch in chunks) / N
        rep.rows.append(
            {"m": m, "mass": mass, "mass_se": _se(mass, N), "hat": joint, "hat_se": _se(joint, N),
             "hat_target": float(scheme.a) * float(hat.length)}
        )
    for pr in pairs:
        est = sum(ch[3][pr] for ch in chunks) / N
        rep.pairs.append({"m": pr[0], "m2": pr[1], "est": est, "se": _se(est, N), "target": float(scheme.a) ** 2})
    rep.eta_hat_empirical = n_hat / N
    return rep
