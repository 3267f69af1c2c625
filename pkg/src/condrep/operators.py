"""The conditional-expectation operator ``T`` and its adjoint.

``T g(x_i) = sum_j M[i, j] g(y_j)`` maps ``L1(nu)`` to ``L1(mu)`` and
``T* f(y_j) = sum_i M*[j, i] f(x_i)`` maps ``L∞(mu)`` to ``L∞(nu)``.  Surjectivity
of ``T`` is equivalent to a lower bound ``‖T* f‖∞ >= δ ‖f‖∞``; this module
estimates that constant from above by sampling and certifies it from below
with the ``ξ`` criterion.  Also here: the Bernoulli-mixture law (surjective
``T`` without the nonnegative representation property) and the interval
window family whose ``T`` is surjective although ``π`` has a density.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from ._exact import fraction_array, to_fraction
from .intervals import IntervalSet
from .measures import DiscreteJoint, kernel_x_given, kernel_y_given, marginals
from .representation import DimensionMismatch

__all__ = [
    "BernoulliMixture",
    "Cor2Law",
    "Cor2Result",
    "MixtureSolution",
    "NormReport",
    "TooLarge",
    "XiReport",
    "apply_T",
    "apply_Tstar",
    "bernoulli_mixture_g",
    "cor2_check",
    "cor2_search",
    "cor2_windows",
    "operator_norm_bounds",
    "solve_unconstrained",
    "xi_criterion",
    "xi_singletons",
]


class TooLarge(ValueError):
    pass


def _vec(dj: DiscreteJoint, v, n: int, name: str) -> np.ndarray:
    arr = fraction_array(v) if dj.exact else np.asarray(v, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != n:
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected ({n},)")
    return arr


def apply_T(dj: DiscreteJoint, g) -> np.ndarray:
    I, J = dj.shape
    return kernel_x_given(dj).rows @ _vec(dj, g, J, "g")


def apply_Tstar(dj: DiscreteJoint, fstar) -> np.ndarray:
    I, J = dj.shape
    return kernel_y_given(dj).rows @ _vec(dj, fstar, I, "fstar")


# -- norms -------------------------------------------------------------------


@dataclass
class NormReport:
    """Sampled operator-norm checks.

    ``delta_sampled`` is the smallest ratio ``‖T* f‖∞ / ‖f‖∞`` seen over the
    sampled ``f``; the best surjectivity constant can only be smaller, so
    it is an upper bound.  ``delta_certified`` (``2ξ - 1`` when ``ξ > 1/2``)
    is a guaranteed lower bound.
    """

    trials: int
    l1_ratio_max: float
    linf_ratio_max: float
    delta_sampled: float
    delta_certified: float | None
    xi: float

    @property
    def l1_ok(self) -> bool:
        return self.l1_ratio_max <= 1 + 1e-12

    @property
    def linf_ok(self) -> bool:
        return self.linf_ratio_max <= 1 + 1e-12

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "l1_nonexpansive": self.l1_ok,
            "linf_nonexpansive": self.linf_ok,
            "l1_ratio_max": self.l1_ratio_max,
            "linf_ratio_max": self.linf_ratio_max,
            "delta_sampled_upper": self.delta_sampled,
            "delta_certified_lower": self.delta_certified,
            "xi": self.xi,
        }


def operator_norm_bounds(dj: DiscreteJoint, trials: int = 1000, seed: int = 0) -> NormReport:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    I, J = dj.shape
    mu, nu = (np.asarray(v, dtype=float) for v in marginals(dj))
    M = np.asarray(kernel_x_given(dj).rows, dtype=float)
    Ms = np.asarray(kernel_y_given(dj).rows, dtype=float)

    G = rng.standard_normal((trials, J))
    l1 = (np.abs(G @ M.T) @ mu) / (np.abs(G) @ nu)

    F = rng.choice([-1.0, 1.0], size=(trials, I))
    # half the trials use graded magnitudes so non-sign extremals are probed too
    F[trials // 2 :] *= rng.random((trials - trials // 2, I))
    TF = F @ Ms.T
    norm_f = np.abs(F).max(axis=1)
    keep = norm_f > 0
    linf = np.abs(TF).max(axis=1)[keep] / norm_f[keep]

    xi = float(xi_singletons(dj).xi)
    return NormReport(
        trials=trials,
        l1_ratio_max=float(l1.max()),
        linf_ratio_max=float(linf.max()),
        delta_sampled=float(min(linf.min(), 1.0)),
        delta_certified=2 * xi - 1 if xi > 0.5 else None,
        xi=xi,
    )


# -- ξ criterion -------------------------------------------------------------


@dataclass
class XiReport:
    xi: Fraction | float
    argmin: tuple[int, ...]
    surjective: bool
    delta: Fraction | float | None
    subsets_checked: int

    @property
    def verdict(self) -> str:
        return "Surjective" if self.surjective else "Inconclusive"

    def to_dict(self) -> dict:
        from ._exact import format_fraction

        def fmt(v):
            return format_fraction(v) if isinstance(v, Fraction) else v

        return {
            "xi": fmt(self.xi),
            "argmin": list(self.argmin),
            "verdict": self.verdict,
            "delta": fmt(self.delta) if self.delta is not None else None,
            "subsets_checked": self.subsets_checked,
        }


def _report(dj, xi, argmin, count) -> XiReport:
    half = Fraction(1, 2) if dj.exact else 0.5
    ok = xi > half
    return XiReport(xi, tuple(argmin), ok, 2 * xi - 1 if ok else None, count)


def xi_singletons(dj: DiscreteJoint) -> XiReport:
    """``ξ`` via singletons: ``π_{Y=y}(A)`` grows with ``A``, so the minimum is at ``|A| = 1``."""
    Ms = kernel_y_given(dj).rows
    col_max = [max(Ms[:, i]) for i in range(dj.shape[0])]
    i = min(range(len(col_max)), key=lambda k: col_max[k])
    return _report(dj, col_max[i], (i,), dj.shape[0])


def xi_criterion(dj: DiscreteJoint, max_I: int = 12) -> XiReport:
    """Exhaustive ``min_A max_j π_{Y=y_j}(A)`` over nonempty row subsets.

    Subset sums are built in float, then every subset within rounding of the
    float minimum is re-evaluated exactly in rational mode.
    """
    if max_I > 20:
        raise ValueError("max_I above 20 is not supported")
    I, J = dj.shape
    if I > max_I:
        raise TooLarge(f"I = {I} exceeds max_I = {max_I}")
    Ms = kernel_y_given(dj).rows
    W = np.asarray(Ms, dtype=float).T  # I x J

    lo = min(I, 12)
    hi = I - lo
    low = np.zeros((1 << lo, J))
    for mask in range(1, 1 << lo):
        b = (mask & -mask).bit_length() - 1
        low[mask] = low[mask & (mask - 1)] + W[b]

    best = np.inf
    maxes = []
    for h in range(1 << hi):
        base = sum((W[lo + b] for b in range(hi) if h >> b & 1), np.zeros(J))
        m = (low + base).max(axis=1)
        if h == 0:
            m[0] = np.inf  # empty set
        maxes.append(m)
        best = min(best, float(m.min()))
    maxes = np.concatenate(maxes)

    cand = np.flatnonzero(maxes <= best + 1e-9)
    def rows_of(mask):
        return tuple(i for i in range(I) if mask >> i & 1)

    if dj.exact:
        vals = {int(c): max(sum((Ms[j, i] for i in rows_of(int(c))), Fraction(0)) for j in range(J)) for c in cand}
        c = min(vals, key=lambda k: (vals[k], bin(k).count("1"), k))
        return _report(dj, vals[c], rows_of(c), (1 << I) - 1)
    c = int(min(cand, key=lambda k: (maxes[k], bin(int(k)).count("1"), int(k))))
    return _report(dj, float(maxes[c]), rows_of(c), (1 << I) - 1)


def solve_unconstrained(dj: DiscreteJoint, f) -> tuple[np.ndarray, float]:
    """Least-squares ``g`` (no sign constraint) for ``M g = f``; returns ``(g, max residual)``."""
    I, _ = dj.shape
    f = np.asarray(_vec(dj, f, I, "f"), dtype=float)
    M = np.asarray(kernel_x_given(dj).rows, dtype=float)
    g, *_ = np.linalg.lstsq(M, f, rcond=None)
    return g, float(np.max(np.abs(M @ g - f)))


# -- Bernoulli mixture ---------------------------------------------------------


@dataclass(frozen=True)
class BernoulliMixture:
    """``Y = X`` with probability ``p``, otherwise an independent copy of ``X``.

    Give ``mu`` as a weight vector (with optional atoms ``xs``) or pass a
    ``sampler(rng, n)`` for a continuous law.
    """

    p: object
    mu: Sequence | None = None
    xs: Sequence | None = None
    sampler: Callable | None = None

    def __post_init__(self):
        p = self.p
        if not isinstance(p, float):
            p = to_fraction(p)
        if not 0 < p < 1:
            raise ValueError("p must lie in (0, 1)")
        object.__setattr__(self, "p", p)
        if (self.mu is None) == (self.sampler is None):
            raise ValueError("give exactly one of mu and sampler")
        if self.mu is not None:
            exact = isinstance(p, Fraction) and not any(isinstance(v, float) for v in self.mu)
            mu = fraction_array(self.mu) if exact else np.asarray(self.mu, dtype=float)
            if any(v <= 0 for v in mu):
                raise ValueError("mu must have positive weights (minimal support)")
            total = mu.sum()
            if (total != 1) if exact else abs(total - 1) > 1e-12:
                raise ValueError("mu must sum to 1")
            object.__setattr__(self, "mu", mu)
            object.__setattr__(self, "xs", tuple(range(len(mu))) if self.xs is None else tuple(self.xs))

    @property
    def discrete(self) -> bool:
        return self.mu is not None

    @classmethod
    def uniform(cls, p, K: int) -> "BernoulliMixture":
        return cls(p, [Fraction(1, K)] * K)

    def to_joint(self) -> DiscreteJoint:
        if not self.discrete:
            raise ValueError("continuous mixture has no finite joint")
        mu, p = self.mu, self.p
        K = len(mu)
        P = np.outer(mu, mu) * (1 - p)
        for i in range(K):
            P[i, i] += p * mu[i]
        return DiscreteJoint(self.xs, self.xs, P, mode="rational" if P.dtype == object else "float")

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` pairs ``(X, Y)``."""
        if self.discrete:
            w = np.asarray(self.mu, dtype=float)
            vals = np.asarray(self.xs, dtype=float)
            X = vals[rng.choice(len(w), size=n, p=w)]
            Xp = vals[rng.choice(len(w), size=n, p=w)]
        else:
            X = np.asarray(self.sampler(rng, n), dtype=float)
            Xp = np.asarray(self.sampler(rng, n), dtype=float)
        keep = rng.random(n) < float(self.p)
        return X, np.where(keep, X, Xp)


@dataclass
class MixtureSolution:
    g: np.ndarray | Callable
    mean_f: object
    has_negative: bool | None
    max_error: float | None = None
    extras: dict = field(default_factory=dict)


def bernoulli_mixture_g(bm: BernoulliMixture, f, n_samples: int = 200_000, seed: int = 0) -> MixtureSolution:
    """Closed-form ``g = (f - E f)/p + E f`` with ``T g = f``.

    Discrete mixtures take ``f`` as a vector and are exact in rational mode.
    Continuous mixtures take a callable; ``E f`` is estimated from
    ``n_samples`` draws and ``T g = f`` is checked on fresh draws, using
    ``T g(x) = p g(x) + (1 - p) E g``.
    """
    p = bm.p
    if bm.discrete:
        K = len(bm.mu)
        exact = bm.mu.dtype == object
        fv = fraction_array(f) if exact else np.asarray(f, dtype=float)
        if fv.shape != (K,):
            raise DimensionMismatch(f"f has shape {fv.shape}, expected ({K},)")
        ef = bm.mu @ fv
        g = (fv - ef) / p + ef
        return MixtureSolution(g, ef, bool(any(v < 0 for v in g)))

    rng = np.random.default_rng(seed)
    ef = float(np.mean(f(bm.sampler(rng, n_samples))))
    pf = float(p)

    def g(y):
        return (np.asarray(f(y)) - ef) / pf + ef

    x = np.asarray(bm.sampler(rng, n_samples))
    eg = float(np.mean(g(bm.sampler(rng, n_samples))))
    err = np.abs(pf * g(x) + (1 - pf) * eg - f(x))
    return MixtureSolution(g, ef, bool(np.any(g(x) < 0)), float(err.max()), {"mean_g": eg})


# -- interval windows ------------------------------------------------------------


@dataclass(frozen=True)
class Cor2Law:
    """``π_{Y=y}`` uniform on the window ``A_y`` around ``{y}`` of half-width ``2^-⌊y⌋``.

    ``nu_mode`` is ``"density"`` (ν equivalent to Lebesgue on ℝ₊) or
    ``"discrete"`` (ν charging every nonnegative rational).  Both charge
    every interval, so the same witnesses apply; in discrete mode they are
    returned as rationals.
    """

    nu_mode: str = "density"

    def __post_init__(self):
        if self.nu_mode not in ("density", "discrete"):
            raise ValueError("nu_mode must be 'density' or 'discrete'")


def cor2_windows(law: Cor2Law, y) -> IntervalSet:
    y = to_fraction(y)
    if y < 0:
        raise ValueError("y must be nonnegative")
    n = y.numerator // y.denominator
    frac = y - n
    r = Fraction(1, 2**n)
    return IntervalSet.interval(max(frac - r, Fraction(0)), min(frac + r, Fraction(1)))


@dataclass
class Cor2Result:
    found: bool
    y: Fraction | None = None
    window: IntervalSet | None = None
    ratio: Fraction | None = None
    n: int | None = None

    def __bool__(self) -> bool:
        return self.found


def cor2_search(law: Cor2Law, A: IntervalSet, delta, n_max: int = 60, per_interval: int = 16) -> Cor2Result:
    """Find ``y`` with ``λ(A ∩ A_y) / λ(A_y) > delta``.

    For each ``n`` the window centres run over the grid of step ``2^-(n+2)``
    restricted to the components of ``A``, nearest to each midpoint first.
    Returns an unsuccessful result (not an error) when ``n_max`` is exhausted.
    """
    delta = to_fraction(delta)
    if not Fraction(1, 2) < delta < 1:
        raise ValueError("delta must lie in (1/2, 1)")
    if A.length <= 0:
        raise ValueError("A must have positive length")
    for n in range(n_max + 1):
        step = Fraction(1, 2 ** (n + 2))
        for a, b in sorted(A.intervals, key=lambda ab: ab[0] - ab[1]):
            mid = (a + b) / 2
            k0 = (mid / step).__floor__()
            ks = []
            for d in range(4 * per_interval):
                for k in (k0 - d, k0 + d + 1):
                    if a <= k * step < b and k * step < 1 and k not in ks:
                        ks.append(k)
                if len(ks) >= per_interval:
                    break
            for k in ks:
                y = n + k * step
                W = cor2_windows(law, y)
                ratio = (A & W).length / W.length
                if ratio > delta:
                    return Cor2Result(True, y, W, ratio, n)
    return Cor2Result(False)


def cor2_check(law: Cor2Law, A: IntervalSet, delta, n_max: int = 60) -> bool:
    return cor2_search(law, A, delta, n_max=n_max).found
