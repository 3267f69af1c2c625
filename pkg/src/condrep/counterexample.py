"""A law with absolutely continuous marginals, no Dirac part, and (R+).

``Y`` has density 15 on the bands ``B_m = [2^-m - 4^-(m+1), 2^-m - 4^-(2m+1)]``
and given ``Y = y`` in ``B_m``, ``X`` is ``a_m(y)`` or ``b_m(y)`` with probability
1/2 each.  Both branches have slope ``4^(m+1)`` and differ by ``4^-m``, so every
``π_{Y=y}`` has two atoms and the Dirac set is empty.

Indicators of interval sets are represented by pairing the two halves of a
dyadic cell ``I_m^k`` (length ``α_m = 2·4^-m``): a point ``y`` whose images
fall in both halves carries a weight that feeds exactly those two ``x``.
Everything below is exact rational arithmetic except the Monte Carlo check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from ._exact import to_fraction
from ._parallel import chunked
from .intervals import IntervalSet

__all__ = [
    "AtlasPiece",
    "BandFamily",
    "CondLaw",
    "DomainError",
    "IndicatorRepresentation",
    "RangeError",
    "StepRepresentation",
    "WeightedAtlas",
    "alpha",
    "admissible_range",
    "band_interval",
    "f_mu",
    "mc_check",
    "mu_cdf",
    "mu_measure",
    "nu_density",
    "pi_x_given",
    "represent_function",
    "represent_indicator",
    "soussolution",
    "t_apply",
]

ZERO = Fraction(0)
ONE = Fraction(1)
NU_HEIGHT = Fraction(15)


class DomainError(ValueError):
    pass


class RangeError(ValueError):
    pass


def _q(v) -> Fraction:
    return to_fraction(v)


# -- bands and branches ------------------------------------------------------------


def band_interval(m: int) -> tuple[Fraction, Fraction]:
    if m < 1:
        raise ValueError("bands start at m = 1")
    return Fraction(1, 2**m) - Fraction(1, 4 ** (m + 1)), Fraction(1, 2**m) - Fraction(1, 4 ** (2 * m + 1))


def a_map(m: int, y) -> Fraction:
    return 4 ** (m + 1) * (_q(y) - Fraction(1, 2**m)) + 1


def b_map(m: int, y) -> Fraction:
    return a_map(m, y) + Fraction(1, 4**m)


def a_inv(m: int, x) -> Fraction:
    return Fraction(1, 2**m) + (_q(x) - 1) / 4 ** (m + 1)


def b_inv(m: int, x) -> Fraction:
    return a_inv(m, _q(x) - Fraction(1, 4**m))


@dataclass(frozen=True)
class BandFamily:
    """Bands ``1..m_max`` with their branch maps."""

    m_max: int = 25

    def __post_init__(self):
        if self.m_max < 3:
            raise ValueError("m_max must be >= 3")

    @property
    def bands(self) -> list[tuple[Fraction, Fraction]]:
        return [band_interval(m) for m in range(1, self.m_max + 1)]

    def band_of(self, y) -> int | None:
        return _band_of(_q(y), self.m_max)

    a = staticmethod(a_map)
    b = staticmethod(b_map)
    a_inv = staticmethod(a_inv)
    b_inv = staticmethod(b_inv)

    def nu_mass(self) -> Fraction:
        return sum((NU_HEIGHT * (hi - lo) for lo, hi in self.bands), ZERO)


def _band_of(y: Fraction, m_max: int | None = None) -> int | None:
    if y <= 0 or y > Fraction(1, 2):
        return None
    # B_m sits inside (2^-(m+1), 2^-m]
    m = 0
    while Fraction(1, 2 ** (m + 1)) >= y:
        m += 1
    if m < 1 or (m_max is not None and m > m_max):
        return None
    lo, hi = band_interval(m)
    return m if lo <= y <= hi else None


def nu_density(y) -> Fraction:
    return NU_HEIGHT if _band_of(_q(y)) is not None else ZERO


def nu_density_array(y: np.ndarray, m_max: int = 40) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    for m in range(1, m_max + 1):
        lo, hi = (float(v) for v in band_interval(m))
        out[(y >= lo) & (y <= hi)] = 15.0
    return out


# -- the X marginal ---------------------------------------------------------------


def _edge_level(x: Fraction) -> int:
    """``M`` with ``x`` in ``[4^-(M+1), 4^-M)`` for ``0 < x < 1/4``."""
    M = 1
    while x < Fraction(1, 4 ** (M + 1)):
        M += 1
    return M


def _right_level(e: Fraction) -> int:
    """``M`` with ``1 - e`` in ``[1 - 4^-M, 1 - 4^-(M+1))``."""
    M = 1
    while e <= Fraction(1, 4 ** (M + 1)):
        M += 1
    return M


def f_mu(x) -> Fraction:
    """Density of ``X``, exact and right-continuous (every piece is ``[lo, hi)``)."""
    x = _q(x)
    if not 0 <= x <= 1:
        raise ValueError("x must lie in [0, 1]")
    if Fraction(1, 4) <= x < Fraction(3, 4):
        return Fraction(5, 4)
    if x == 0 or x == 1:
        return Fraction(5, 8)  # limit value, measure zero
    M = _edge_level(x) if x < Fraction(1, 4) else _right_level(1 - x)
    return Fraction(5, 8) * (1 + Fraction(1, 4**M))


def f_mu_array(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    e = np.minimum(x, 1 - x)
    with np.errstate(divide="ignore"):
        M = np.floor(-np.log(np.maximum(e, 1e-300)) / np.log(4.0))
    M = np.maximum(M, 1)
    out = 0.625 * (1 + 4.0**-M)
    return np.where((x >= 0.25) & (x < 0.75), 1.25, out)


def _mu_edge(M: int) -> Fraction:
    """``μ([0, 4^-M))``."""
    return Fraction(5, 8) / 4**M + Fraction(1, 2) / 16**M


def mu_cdf(x) -> Fraction:
    x = _q(x)
    if x <= 0:
        return ZERO
    if x >= 1:
        return ONE
    if x > Fraction(3, 4):
        return 1 - mu_cdf(1 - x)
    if x >= Fraction(1, 4):
        return _mu_edge(1) + (x - Fraction(1, 4)) * Fraction(5, 4)
    M = _edge_level(x)
    lo = Fraction(1, 4 ** (M + 1))
    return _mu_edge(M + 1) + (x - lo) * f_mu(x)


def mu_measure(S: IntervalSet) -> Fraction:
    return sum((mu_cdf(b) - mu_cdf(a) for a, b in S), ZERO)


# -- conditional law of Y given X -----------------------------------------------------


def _atom_weight(m: int, x: Fraction) -> Fraction:
    return Fraction(15, 2) / 4 ** (m + 1) / f_mu(x)


@dataclass
class CondLaw:
    """Atoms ``(m, branch, y, weight)`` of ``π_{X=x}`` for ``m <= m_max`` plus the tail."""

    x: Fraction
    atoms: list[tuple[int, str, Fraction, Fraction]]
    tail: Fraction
    tail_bound: Fraction

    @property
    def total(self) -> Fraction:
        return sum((w for *_, w in self.atoms), ZERO) + self.tail


def pi_x_given(x, m_max: int = 25) -> CondLaw:
    x = _q(x)
    if m_max < 3:
        raise ValueError("m_max must be >= 3")
    if not 0 < x < 1:
        raise DomainError("x must lie strictly inside (0, 1)")
    atoms = []
    for m in range(1, m_max + 1):
        w = _atom_weight(m, x)
        if x <= 1 - Fraction(1, 4**m):
            atoms.append((m, "a", a_inv(m, x), w))
        if x >= Fraction(1, 4**m):
            atoms.append((m, "b", b_inv(m, x), w))
    tail = 1 - sum((w for *_, w in atoms), ZERO)
    bound = 5 / Fraction(4 ** (m_max + 1)) / f_mu(x)
    return CondLaw(x, atoms, tail, bound)


# -- representing functions on y --------------------------------------------------------


@dataclass(frozen=True)
class AtlasPiece:
    """``g = weight`` on ``a_m^{-1}(xset)``, a subset of band ``m``.

    The piece is stored through its ``a_m``-image ``xset`` (a subset of
    ``[0, 1]``) so that sampling and evaluation stay well conditioned.
    """

    m: int
    xset: IntervalSet
    weight: Fraction

    def yset(self) -> IntervalSet:
        return IntervalSet((a_inv(self.m, a), a_inv(self.m, b)) for a, b in self.xset)


@dataclass
class WeightedAtlas:
    """Nonnegative step function on y-space: the sum of its pieces."""

    pieces: list[AtlasPiece] = field(default_factory=list)

    def __add__(self, other: "WeightedAtlas") -> "WeightedAtlas":
        return WeightedAtlas(self.pieces + other.pieces)

    def scale(self, c) -> "WeightedAtlas":
        c = _q(c)
        if c < 0:
            raise ValueError("scale must be nonnegative")
        if c == 0:
            return WeightedAtlas()
        return WeightedAtlas([AtlasPiece(p.m, p.xset, p.weight * c) for p in self.pieces])

    def __call__(self, y) -> Fraction:
        y = _q(y)
        m = _band_of(y)
        if m is None:
            return ZERO
        u = a_map(m, y)
        return sum((p.weight for p in self.pieces if p.m == m and u in p.xset), ZERO)

    def nu_integral(self) -> Fraction:
        """``∫ g dν`` (exact)."""
        return sum((p.weight * NU_HEIGHT * p.xset.length / 4 ** (p.m + 1) for p in self.pieces), ZERO)

    def to_dict(self) -> dict:
        from ._exact import format_fraction

        return {
            "pieces": [
                {
                    "m": p.m,
                    "weight": format_fraction(p.weight),
                    "a_image": p.xset.to_json(),
                    "y": p.yset().to_json(),
                }
                for p in self.pieces
            ]
        }

    def tables(self) -> dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Per band: sorted float endpoints and weights for vectorized lookup."""
        out: dict[int, list] = {}
        for p in self.pieces:
            for a, b in p.xset:
                out.setdefault(p.m, []).append((a, b, p.weight))
        tabs = {}
        for m, rows in out.items():
            rows.sort()
            tabs[m] = (
                np.array([float(r[0]) for r in rows]),
                np.array([float(r[1]) for r in rows]),
                np.array([float(r[2]) for r in rows]),
            )
        return tabs


def t_apply(g: WeightedAtlas, x) -> Fraction:
    """Exact ``E[g(Y) | X = x]``; no truncation since ``g`` lives on finitely many bands."""
    x = _q(x)
    if not 0 < x < 1:
        raise DomainError("x must lie strictly inside (0, 1)")
    total = ZERO
    for p in g.pieces:
        w = _atom_weight(p.m, x)
        if x <= 1 - Fraction(1, 4**p.m) and x in p.xset:
            total += p.weight * w
        shifted = x - Fraction(1, 4**p.m)
        if x >= Fraction(1, 4**p.m) and shifted in p.xset:
            total += p.weight * w
    return total


# -- single-cell pairing ----------------------------------------------------------------


def alpha(m: int) -> Fraction:
    return Fraction(2, 4**m)


def admissible_range(m: int) -> range:
    """Cells ``I_m^k`` inside ``[2α_m, 1 - 2α_m]``."""
    return range(2, 4**m // 2 - 3 + 1)


def soussolution(A: IntervalSet, m: int, k: int) -> tuple[IntervalSet, WeightedAtlas]:
    """Paired subset ``A_m^k`` of ``A ∩ I_m^k`` and a ``g`` with ``T g = 1_{A_m^k}``."""
    if m < 3 or k not in admissible_range(m):
        raise RangeError(f"(m, k) = ({m}, {k}) is not admissible")
    al = alpha(m)
    lo, mid, hi = k * al, k * al + al / 2, (k + 1) * al
    left, right = IntervalSet.interval(lo, mid), IntervalSet.interval(mid, hi)
    S = A & IntervalSet.interval(lo, hi)
    RS = (S & left).shift(al / 2) | (S & right).shift(-al / 2)
    Amk = S & RS
    if not Amk:
        return Amk, WeightedAtlas()
    # f_mu is constant on the cell; the a-gate is open there
    weight = f_mu(lo) / (Fraction(15, 2) / 4 ** (m + 1))
    return Amk, WeightedAtlas([AtlasPiece(m, Amk & left, weight)])


# -- covering ------------------------------------------------------------------------------


@dataclass
class IndicatorRepresentation:
    g: WeightedAtlas
    covered: IntervalSet
    remainder: IntervalSet
    iterations: int
    history: list[Fraction]
    levels: list[int]

    @property
    def target(self) -> IntervalSet:
        return self.covered | self.remainder


def _level_for(eta: Fraction) -> int:
    # smallest m >= 3 with alpha_m <= eta / 2, so alpha_m lies in (eta/8, eta/2]
    m = 3
    while alpha(m) > eta / 2:
        m += 1
    return m


def _cover_component(R: IntervalSet, a: Fraction, b: Fraction) -> tuple[IntervalSet, WeightedAtlas, int]:
    m = _level_for(b - a)
    while True:
        al = alpha(m)
        adm = admissible_range(m)
        k_lo = max((a / al).__floor__(), adm.start)
        k_hi = min((b / al).__ceil__() - 1, adm.stop - 1)
        # progress needs one admissible cell inside [a, b)
        if any(a <= k * al and (k + 1) * al <= b for k in (k_lo, k_lo + 1, k_hi - 1, k_hi) if k_lo <= k <= k_hi):
            break
        m += 1
    ks = range(k_lo, k_hi + 1)
    covered = IntervalSet.empty()
    g = WeightedAtlas()
    for k in ks:
        Amk, gk = soussolution(R, m, k)
        covered = covered | Amk
        g = g + gk
    return covered, g, m


def represent_indicator(A: IntervalSet, target_resid, max_iter: int = 600) -> IndicatorRepresentation:
    """Cover ``A`` by paired cells until ``λ(remainder) <= target_resid``.

    Each iteration visits every component of the current remainder, picks
    the level ``m`` from its length ``η`` (``α_m`` in ``(η/8, η/2]``, larger if no
    admissible cell meets it) and applies :func:`soussolution` to every
    admissible cell meeting the component.
    """
    target = _q(target_resid)
    if target <= 0:
        raise ValueError("target_resid must be positive")
    if not A:
        raise ValueError("A must be nonempty")
    R = A
    covered = IntervalSet.empty()
    g = WeightedAtlas()
    history = [R.length]
    levels: list[int] = []
    it = 0
    while R.length > target and it < max_iter:
        it += 1
        for a, b in list(R.intervals):
            if not (R & IntervalSet.interval(a, b)):
                continue
            c, gc, m = _cover_component(R, a, b)
            R = R - c
            covered = covered | c
            g = g + gc
            levels.append(m)
        history.append(R.length)
    return IndicatorRepresentation(g, covered, R, it, history, levels)


@dataclass
class StepRepresentation:
    g: WeightedAtlas
    layers: list[tuple[Fraction, IndicatorRepresentation]]
    l1_error: Fraction
    mass_gap: Fraction

    def tf(self, x) -> Fraction:
        return t_apply(self.g, x)


def _step_pieces(terms: Sequence[tuple[object, IntervalSet]]) -> list[tuple[Fraction, Fraction, Fraction]]:
    cuts = {ZERO, ONE}
    for _, S in terms:
        for a, b in S:
            cuts.update((a, b))
    cuts = sorted(cuts)
    out = []
    for a, b in zip(cuts, cuts[1:]):
        mid = (a + b) / 2
        v = sum((_q(c) for c, S in terms if mid in S), ZERO)
        out.append((a, b, v))
    return out


def represent_function(terms: Iterable[tuple[object, IntervalSet]], tol) -> StepRepresentation:
    """Represent ``f = Σ c_i 1_{A_i}`` (``c_i >= 0``) by layer cake.

    ``f = Σ_l (v_l - v_{l-1}) 1_{f >= v_l}``; each layer is represented with a
    remainder budget so that ``∫ |T g - f| dλ <= tol``.
    """
    terms = [(_q(c), S) for c, S in terms]
    if any(c < 0 for c, _ in terms):
        raise ValueError("coefficients must be nonnegative")
    tol = _q(tol)
    if tol <= 0:
        raise ValueError("tol must be positive")
    pieces = _step_pieces(terms)
    values = sorted({v for *_, v in pieces if v > 0})
    g = WeightedAtlas()
    layers = []
    l1 = ZERO
    gap = ZERO
    prev = ZERO
    for v in values:
        step = v - prev
        prev = v
        level = IntervalSet((a, b) for a, b, w in pieces if w >= v)
        rep = represent_indicator(level, tol / (len(values) * step))
        g = g + rep.g.scale(step)
        layers.append((step, rep))
        l1 += step * rep.remainder.length
        gap -= step * mu_measure(rep.remainder)
    return StepRepresentation(g, layers, l1, gap)


# -- Monte Carlo ---------------------------------------------------------------------------


def _band_probs(m_max: int) -> np.ndarray:
    w = np.array([float(NU_HEIGHT * (hi - lo)) for lo, hi in (band_interval(m) for m in range(1, m_max + 1))])
    return w / w.sum()


def sample_pairs(rng: np.random.Generator, n: int, m_max: int = 25):
    """Draw ``(m, u, X)`` with ``Y = a_m^{-1}(u)`` from the joint law."""
    probs = _band_probs(m_max)
    m = rng.choice(np.arange(1, m_max + 1), size=n, p=probs)
    shift = 4.0**-m
    u = rng.random(n) * (1 - shift)
    X = np.where(rng.random(n) < 0.5, u, u + shift)
    return m, u, X


def g_from_samples(tabs, m: np.ndarray, u: np.ndarray) -> np.ndarray:
    out = np.zeros(u.shape)
    for level, (lo, hi, w) in tabs.items():
        sel = np.flatnonzero(m == level)
        if not sel.size:
            continue
        uu = u[sel]
        idx = np.searchsorted(lo, uu, side="right") - 1
        ok = idx >= 0
        hit = np.zeros(sel.size, dtype=bool)
        hit[ok] = uu[ok] < hi[idx[ok]]
        out[sel[hit]] = w[idx[hit]]
    return out


@dataclass
class MCBin:
    lo: float
    hi: float
    count: int
    mean: float
    se: float
    expected: float
    indicator: float | None

    @property
    def z(self) -> float:
        d = abs(self.mean - self.expected)
        if self.se == 0:
            return 0.0 if d == 0 else float("inf")
        return d / self.se


def mc_check(g: WeightedAtlas, covered: IntervalSet, target: IntervalSet, n: int = 1_000_000,
             bins: int = 64, seed: int = 0, m_max: int = 25) -> list[MCBin]:
    """Estimate ``E[g(Y) | X in bin]`` on ``bins`` equal x-bins.

    ``expected`` is the exact value ``μ(covered ∩ bin) / μ(bin)``;
    ``indicator`` is ``1_target`` when the bin lies inside or outside
    ``target`` and ``None`` for bins cut by its boundary.
    """
    tabs = g.tables()

    def run(rng, size):
        m, u, X = sample_pairs(rng, size, m_max)
        gy = g_from_samples(tabs, m, u)
        b = np.minimum((X * bins).astype(int), bins - 1)
        return (np.bincount(b, minlength=bins), np.bincount(b, gy, minlength=bins),
                np.bincount(b, gy * gy, minlength=bins))

    parts = chunked(n, seed, run)
    cnt = sum(p[0] for p in parts)
    s1 = sum(p[1] for p in parts)
    s2 = sum(p[2] for p in parts)
    out = []
    for i in range(bins):
        lo, hi = Fraction(i, bins), Fraction(i + 1, bins)
        B = IntervalSet.interval(lo, hi)
        exp = float(mu_measure(covered & B) / mu_measure(B))
        inside = (target & B).length
        ind = 1.0 if inside == B.length else 0.0 if inside == 0 else None
        c = int(cnt[i])
        if c == 0:
            out.append(MCBin(float(lo), float(hi), 0, float("nan"), float("nan"), exp, ind))
            continue
        mean = s1[i] / c
        var = max(s2[i] / c - mean * mean, 0.0)
        se = float(np.sqrt(var / (c - 1))) if c > 1 else float("inf")
        out.append(MCBin(float(lo), float(hi), c, float(mean), se, exp, ind))
    return out
