"""Particle calibration of path-dependent volatility to a call surface.

The model is ``dX/X = σ(t, Y) dW`` with ``Y`` built from exponentially
weighted returns and squared returns.  At each date ``kh`` the unknown
``σ²(kh, ·)`` must satisfy ``E[σ²(kh, Y) | X] = σ²_loc(kh, X)``, which on
binned particles is a finite instance of ``M g = f`` and is handed to
:func:`condrep.representation.solve_nonneg`.  When no nonnegative solution
exists the nonnegative weighted least-squares fit is returned together with
its residual.

Zero rates, repo and dividends throughout.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import nnls
from scipy.special import ndtr

from ._parallel import CHUNK, map_chunks, philox
from .measures import DiscreteJoint
from .representation import solve_nonneg

__all__ = [
    "ArbitrageError",
    "CalibrationConfig",
    "CalibrationReport",
    "CallSurface",
    "DegenerateDenominator",
    "DisplacedDiffusion",
    "EmptyCloud",
    "FeatureSpec",
    "FlatVol",
    "CondExp",
    "Leverage",
    "LocalVolGrid",
    "NonFiniteState",
    "ParticleCloud",
    "StepCalibration",
    "TermStructureVol",
    "assign_bins",
    "bs_call",
    "calibrate_slv_step",
    "calibrate_step",
    "dupire_localvol",
    "estimate_cond_exp",
    "implied_total_variance",
    "parse_vol_model",
    "quantile_edges",
    "run_calibration",
    "step_simulate",
    "synth_call_surface",
]


class ArbitrageError(ValueError):
    pass


class NonFiniteState(ArithmeticError):
    pass


class EmptyCloud(ValueError):
    pass


class DegenerateDenominator(ArithmeticError):
    pass


# -- market input ------------------------------------------------------------------


def bs_call(S0: float, x, w):
    """Black-Scholes call with total variance ``w = σ² t`` (zero rates)."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    x, w = np.broadcast_arrays(x, w)
    out = np.array(np.maximum(S0 - x, 0.0), dtype=float)
    live = (w > 0) & (x > 0)
    sw = np.sqrt(w[live])
    d1 = (np.log(S0 / x[live]) + 0.5 * w[live]) / sw
    out[live] = S0 * ndtr(d1) - x[live] * ndtr(d1 - sw)
    out[x <= 0] = S0 - x[x <= 0]
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class FlatVol:
    sigma: float = 0.2

    def total_variance(self, t, x):
        return self.sigma**2 * np.asarray(t, dtype=float) + 0 * np.asarray(x, dtype=float)

    def call(self, S0, t, x):
        return bs_call(S0, x, self.total_variance(t, x))

    def locvar(self, t, x, S0=1.0):
        return self.sigma**2 + 0 * np.asarray(t, dtype=float) + 0 * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class TermStructureVol:
    """``σ²(t) = v0 + v1·t``."""

    v0: float = 0.04
    v1: float = 0.02

    def __post_init__(self):
        if self.v0 <= 0 or self.v0 + self.v1 <= 0:
            raise ValueError("variance must stay positive up to t = 1")

    def total_variance(self, t, x):
        t = np.asarray(t, dtype=float)
        return self.v0 * t + 0.5 * self.v1 * t**2 + 0 * np.asarray(x, dtype=float)

    def call(self, S0, t, x):
        return bs_call(S0, x, self.total_variance(t, x))

    def locvar(self, t, x, S0=1.0):
        return self.v0 + self.v1 * np.asarray(t, dtype=float) + 0 * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class DisplacedDiffusion:
    """``dX = σ (X + d) dW``: a downward skew for ``d > 0``."""

    sigma: float = 0.2
    d: float = 0.5

    def __post_init__(self):
        if self.sigma <= 0 or self.d < 0:
            raise ValueError("need sigma > 0 and d >= 0")

    def call(self, S0, t, x):
        t = np.asarray(t, dtype=float)
        return bs_call(S0 + self.d, np.asarray(x, dtype=float) + self.d, self.sigma**2 * t)

    def locvar(self, t, x, S0=1.0):
        x = np.asarray(x, dtype=float)
        return (self.sigma * (x + self.d) / x) ** 2 + 0 * np.asarray(t, dtype=float)


def parse_vol_model(spec: str):
    """``flat:0.2``, ``term:v0,v1`` or ``dd:sigma,d``."""
    name, _, args = spec.partition(":")
    vals = [float(v) for v in args.split(",") if v.strip()]
    try:
        if name == "flat":
            return FlatVol(*vals)
        if name == "term":
            return TermStructureVol(*vals)
        if name == "dd":
            return DisplacedDiffusion(*vals)
    except TypeError:
        raise ValueError(f"bad parameters in {spec!r}") from None
    raise ValueError(f"unknown vol model {spec!r}; use flat:, term: or dd:")


@dataclass(frozen=True, eq=False)
class CallSurface:
    times: np.ndarray
    strikes: np.ndarray
    C: np.ndarray
    S0: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.strikes, dtype=float)
        C = np.asarray(self.C, dtype=float)
        if t.ndim != 1 or x.ndim != 1 or C.shape != (t.size, x.size):
            raise ValueError("C must be len(times) x len(strikes)")
        if np.any(np.diff(t) <= 0) or np.any(np.diff(x) <= 0):
            raise ValueError("grids must be strictly increasing")
        if t[0] < 0 or x[0] <= 0:
            raise ValueError("need t >= 0 and x > 0")
        if not np.all(np.isfinite(C)):
            raise ValueError("non-finite call price")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "strikes", x)
        object.__setattr__(self, "C", C)

    def price(self, t: float, x) -> np.ndarray:
        """Prices at maturity ``t``, linear in ``t`` between grid rows and in ``x`` between strikes."""
        t = float(np.clip(t, self.times[0], self.times[-1]))
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(i, self.times.size - 2) if self.times.size > 1 else 0
        row = self.C[i]
        if self.times.size > 1 and t != self.times[i]:
            a = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
            row = (1 - a) * self.C[i] + a * self.C[i + 1]
        return np.interp(np.asarray(x, dtype=float), self.strikes, row)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "C"])
            for i, t in enumerate(self.times):
                for j, x in enumerate(self.strikes):
                    w.writerow([repr(float(t)), repr(float(x)), repr(float(self.C[i, j]))])

    @classmethod
    def from_csv(cls, path, S0: float = 1.0) -> "CallSurface":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or not {"t", "x", "C"} <= set(rows[0]):
            raise ValueError("surface csv needs columns t,x,C")
        t = np.array([float(r["t"]) for r in rows])
        x = np.array([float(r["x"]) for r in rows])
        ts, xs = np.unique(t), np.unique(x)
        if ts.size * xs.size != len(rows):
            raise ValueError("surface csv must be a full t x x grid without duplicates")
        C = np.full((ts.size, xs.size), np.nan)
        C[np.searchsorted(ts, t), np.searchsorted(xs, x)] = [float(r["C"]) for r in rows]
        return cls(ts, xs, C, S0)


def synth_call_surface(model, times: Sequence[float], strikes: Sequence[float], S0: float = 1.0) -> CallSurface:
    t = np.asarray(times, dtype=float)
    x = np.asarray(strikes, dtype=float)
    return CallSurface(t, x, model.call(S0, t[:, None], x[None, :]), S0)


# -- Dupire ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LocalVolGrid:
    times: np.ndarray
    strikes: np.ndarray
    locvar: np.ndarray
    floored: int = 0
    filled: int = 0

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0) or np.any(np.diff(self.strikes) <= 0):
            raise ValueError("grids must be strictly increasing")
        if self.locvar.shape != (self.times.size, self.strikes.size):
            raise ValueError("locvar shape does not match the grids")
        if np.any(self.locvar < 0) or not np.all(np.isfinite(self.locvar)):
            raise ValueError("local variances must be finite and >= 0")

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.locvar)

    def at(self, t: float, x) -> np.ndarray:
        """Linear in ``t`` between rows, linear in ``x`` with flat extrapolation."""
        x = np.asarray(x, dtype=float)
        t = float(np.clip(t, self.times[0], self.times[-1]))
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        row = np.interp(x, self.strikes, self.locvar[i])
        if i + 1 < self.times.size and t > self.times[i]:
            a = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
            row = (1 - a) * row + a * np.interp(x, self.strikes, self.locvar[i + 1])
        return row


def _second_diff(C: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Three-point second derivative along the last axis (interior strikes)."""
    dl = np.diff(C, axis=-1) / np.diff(x)
    return 2 * np.diff(dl, axis=-1) / (x[2:] - x[:-2])


def implied_total_variance(S0: float, x, C, w_max: float = 25.0, tv_floor: float = 1e-12):
    """Invert Black-Scholes for ``w`` by bisection; NaN where time value is below ``tv_floor``."""
    x = np.asarray(x, dtype=float)
    C = np.asarray(C, dtype=float)
    x, C = np.broadcast_arrays(x, C)
    lo = np.zeros(C.shape)
    hi = np.full(C.shape, w_max)
    ok = (C - np.maximum(S0 - x, 0.0) > tv_floor * S0) & (C < bs_call(S0, x, hi))
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        up = bs_call(S0, x, mid) < C
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    return np.where(ok, 0.5 * (lo + hi), np.nan)


def _fill_rows(v: np.ndarray, strikes: np.ndarray) -> tuple[np.ndarray, int]:
    v = v.copy()
    filled = 0
    for i in range(v.shape[0]):
        bad = ~np.isfinite(v[i])
        if bad.all():
            continue
        if bad.any():
            v[i, bad] = np.interp(strikes[bad], strikes[~bad], v[i, ~bad])
            filled += int(bad.sum())
    return v, filled


def dupire_localvol(
    surface: CallSurface,
    method: str = "implied",
    gamma_tol: float = 1e-8,
    gamma_floor: float = 1e-10,
) -> LocalVolGrid:
    """Local variances on the surface grid.

    ``method="price"`` is the textbook ``2 ∂_t C / (x² ∂_xx C)`` with central
    differences.  The default ``"implied"`` evaluates the same quantity through
    total implied variance ``w(t, log x)``, whose derivatives are far better
    behaved near ``t = 0``.  Either way the price grid is first checked for
    butterfly arbitrage and ``ArbitrageError`` raised if ``∂_xx C < -gamma_tol``.

    Negative numerators are set to zero (counted in ``floored``); cells where
    the formula is undefined take values interpolated along the strike axis
    (counted in ``filled``).  The row at ``t = 0`` copies the first positive
    time.  Strikes at the two edges are dropped.
    """
    t, x, C, S0 = surface.times, surface.strikes, surface.C, surface.S0
    if x.size < 3:
        raise ValueError("need at least 3 strikes")
    pos = t > 0
    if pos.sum() < 1 or t.size < 2:
        raise ValueError("need at least two maturities, one of them positive")
    gamma = _second_diff(C, x)
    bad = gamma[pos] < -gamma_tol
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ArbitrageError(
            f"call prices not convex in strike at t={t[pos][i]:g}, x={x[j + 1]:g} (d2C={gamma[pos][i, j]:.3g})"
        )
    xi = x[1:-1]
    floored = 0
    if method == "price":
        num = 2 * np.gradient(C, t, axis=0, edge_order=1)[:, 1:-1]
        den = xi**2 * gamma
        floored = int((num < 0)[pos].sum())
        num = np.maximum(num, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            lv = np.where(den > gamma_floor * xi**2, num / den, np.nan)
    elif method == "implied":
        w = implied_total_variance(S0, x[None, :], C)
        w[~pos] = 0.0
        k = np.log(x / S0)
        wt = np.gradient(w, t, axis=0, edge_order=1 if t.size < 3 else 2)
        wk = np.gradient(w, k, axis=1)
        wkk = np.gradient(wk, k, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            den = (
                1 - k / w * wk
                + 0.25 * (-0.25 - 1 / w + k**2 / w**2) * wk**2
                + 0.5 * wkk
            )
            floored = int((wt < 0)[pos].sum())
            lv = np.where(den > gamma_floor, np.maximum(wt, 0.0) / den, np.nan)[:, 1:-1]
    else:
        raise ValueError("method must be 'implied' or 'price'")
    lv[~pos] = np.nan
    lv, filled = _fill_rows(lv, xi)
    first = int(np.argmax(pos))
    if not np.all(np.isfinite(lv[first])):
        raise ArbitrageError("no usable local variance at the first positive maturity")
    lv[:first] = lv[first]
    rows_bad = ~np.all(np.isfinite(lv), axis=1)
    for i in np.flatnonzero(rows_bad):
        lv[i] = lv[i - 1]
        filled += xi.size
    return LocalVolGrid(t, xi, lv, floored, filled)


# -- particles -------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureSpec:
    """Decay rates ``λ_{1,0}, λ_{1,1}, λ_{2,0}, λ_{2,1}``, mixing weights ``θ``, and the ``σ`` map ``β``."""

    lambdas: tuple = (55.0, 10.0, 20.0, 3.0)
    thetas: tuple = (0.25, 0.5)
    betas: tuple = (0.04, -0.13, 0.65)

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambdas)
        th = tuple(float(v) for v in self.thetas)
        be = tuple(float(v) for v in self.betas)
        if len(lam) != 4 or any(not v > 0 for v in lam):
            raise ValueError("need four positive decay rates")
        if len(th) != 2 or any(not 0 <= v <= 1 for v in th):
            raise ValueError("need two thetas in [0, 1]")
        if len(be) != 3:
            raise ValueError("need three betas")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "betas", be)

    def to_dict(self) -> dict:
        return {"lambdas": list(self.lambdas), "thetas": list(self.thetas), "betas": list(self.betas)}

    def sigma(self, cloud: "ParticleCloud") -> tuple[np.ndarray, int]:
        """``β0 + β1 R1 + β2 √R2`` clipped at 0, with the number of clipped particles."""
        b0, b1, b2 = self.betas
        s = b0 + b1 * cloud.R1(self) + b2 * np.sqrt(cloud.R2(self))
        neg = s < 0
        return np.where(neg, 0.0, s), int(neg.sum())


@dataclass(frozen=True, eq=False)
class ParticleCloud:
    x: np.ndarray
    r1a: np.ndarray
    r1b: np.ndarray
    r2a: np.ndarray
    r2b: np.ndarray
    w: np.ndarray
    z: np.ndarray | None = None

    def __post_init__(self):
        n = self.x.size
        arrs = [self.r1a, self.r1b, self.r2a, self.r2b, self.w] + ([self.z] if self.z is not None else [])
        if any(a.shape != (n,) for a in arrs):
            raise ValueError("particle arrays must share one length")
        if n and abs(self.w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        if np.any(self.r2a < 0) or np.any(self.r2b < 0):
            raise ValueError("squared-return accumulators must be >= 0")

    @classmethod
    def initial(cls, n: int, S0: float = 1.0, z0: float | None = None) -> "ParticleCloud":
        """``n`` particles at ``S0`` with zero feature history."""
        if n < 0:
            raise ValueError("n must be >= 0")
        zero = np.zeros(n)
        z = None if z0 is None else np.full(n, float(z0))
        return cls(np.full(n, float(S0)), zero, zero.copy(), zero.copy(), zero.copy(),
                   np.full(n, 1.0 / n) if n else zero.copy(), z)

    @property
    def n(self) -> int:
        return self.x.size

    def R1(self, spec: FeatureSpec) -> np.ndarray:
        th = spec.thetas[0]
        return (1 - th) * self.r1a + th * self.r1b

    def R2(self, spec: FeatureSpec) -> np.ndarray:
        th = spec.thetas[1]
        return (1 - th) * self.r2a + th * self.r2b

    def mean(self, values=None) -> float:
        v = self.x if values is None else values
        return float(self.w @ v)


def _normals(seed: int, k: int, n: int, stream: int = 0) -> np.ndarray:
    """Standard normals for step ``k``; particle ``i`` always gets the same draw whatever ``n`` is."""
    sizes = [CHUNK] * (n // CHUNK) + ([n % CHUNK] if n % CHUNK else [])
    parts = map_chunks(lambda c, size: philox(seed, k, c, stream).standard_normal(size), sizes)
    return np.concatenate(parts) if parts else np.zeros(0)


def step_simulate(
    cloud: ParticleCloud,
    sigma2,
    h: float,
    seed: int,
    k: int = 0,
    spec: FeatureSpec | None = None,
    additive: bool = False,
    dW: np.ndarray | None = None,
) -> ParticleCloud:
    """Advance every particle by one Euler step of length ``h``.

    ``sigma2`` is a per-particle array or a callable of the cloud.  The update
    is ``X(1 + σΔW)`` unless ``additive``, in which case ``X + σΔW``.  Feature
    accumulators decay exactly over the step and absorb ``λ·r`` (or ``λ·r²``)
    where ``r`` is the step return.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    spec = spec or FeatureSpec()
    s2 = np.asarray(sigma2(cloud) if callable(sigma2) else sigma2, dtype=float)
    if s2.shape != cloud.x.shape:
        raise ValueError("sigma2 must give one value per particle")
    if np.any(s2 < 0):
        raise ValueError("sigma2 must be nonnegative")
    if dW is None:
        dW = math.sqrt(h) * _normals(seed, k, cloud.n)
    inc = np.sqrt(s2) * dW
    if additive:
        x = cloud.x + inc
        with np.errstate(divide="ignore", invalid="ignore"):
            r = inc / cloud.x
    else:
        x = cloud.x * (1 + inc)
        r = inc
    l10, l11, l20, l21 = spec.lambdas
    dec = [math.exp(-lam * h) for lam in spec.lambdas]
    out = replace(
        cloud,
        x=x,
        r1a=dec[0] * cloud.r1a + l10 * r,
        r1b=dec[1] * cloud.r1b + l11 * r,
        r2a=dec[2] * cloud.r2a + l20 * r * r,
        r2b=dec[3] * cloud.r2b + l21 * r * r,
    )
    for name in ("x", "r1a", "r1b", "r2a", "r2b"):
        if not np.all(np.isfinite(getattr(out, name))):
            raise NonFiniteState(f"non-finite {name} after step {k}")
    return out


# -- binning ---------------------------------------------------------------------


def quantile_edges(values, weights, n: int) -> np.ndarray:
    """Interior cut points of ``n`` weighted-quantile bins (duplicates removed)."""
    if n < 1:
        raise ValueError("need at least one bin")
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if v.size == 0 or n == 1:
        return np.zeros(0)
    order = np.argsort(v, kind="stable")
    cw = np.cumsum(w[order])
    cw /= cw[-1]
    idx = np.searchsorted(cw, np.arange(1, n) / n, side="left")
    cuts = np.unique(v[order][np.minimum(idx, v.size - 1)])
    # a cut at the minimum would leave its bin empty
    return cuts[cuts > v[order][0]]


def assign_bins(values, cuts) -> np.ndarray:
    """Bin ``b`` holds ``cuts[b-1] <= v < cuts[b]``; there are ``len(cuts) + 1`` bins."""
    return np.searchsorted(np.asarray(cuts, dtype=float), np.asarray(values, dtype=float), side="right")


@dataclass(frozen=True, eq=False)
class CondExp:
    values: np.ndarray
    mass: np.ndarray
    count: np.ndarray

    @property
    def occupied(self) -> np.ndarray:
        return self.count > 0


def estimate_cond_exp(cloud: ParticleCloud, values, bins, n_bins: int | None = None) -> CondExp:
    """Weighted within-bin means of ``values``; empty bins are NaN.

    ``bins`` is a per-particle bin index (see :func:`assign_bins`).
    """
    v = np.asarray(values, dtype=float)
    b = np.asarray(bins, dtype=np.int64)
    if v.shape != cloud.x.shape or b.shape != cloud.x.shape:
        raise ValueError("values and bins must give one entry per particle")
    n_bins = int(b.max()) + 1 if n_bins is None and b.size else (n_bins or 0)
    mass = np.bincount(b, weights=cloud.w, minlength=n_bins)
    count = np.bincount(b, minlength=n_bins)
    tot = np.bincount(b, weights=cloud.w * v, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(count > 0, tot / np.where(mass > 0, mass, 1.0), np.nan)
    return CondExp(means, mass, count)


# -- one calibration step ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StepCalibration:
    """Solution of the binned calibration equation at one date.

    ``labels`` are the y-bins carrying mass, ``sigma2`` the value on each,
    ``f``/``mu`` the local variances and masses per occupied x-bin.
    ``residual`` is ``Σ_i μ_i ((Mg)_i − f_i)²``.
    """

    x_cuts: np.ndarray
    labels: np.ndarray
    sigma2: np.ndarray
    residual: float
    feasibility: str
    f: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    counts: np.ndarray
    M: np.ndarray

    def lookup(self, labels) -> np.ndarray:
        """``σ²`` for per-particle labels."""
        idx = np.searchsorted(self.labels, labels)
        idx = np.minimum(idx, self.labels.size - 1)
        if np.any(self.labels[idx] != labels):
            raise KeyError("label not seen at calibration")
        return self.sigma2[idx]


def _nearest(M, nu, v, g0, g_ref):
    """Among ``g >= 0`` with ``M g = v``, a point close to ``g0`` in ``L²(ν)``.

    The unconstrained projection is ``g0 + diag(1/ν) Mᵀ λ``; if it leaves the
    orthant it is pulled back toward the feasible ``g_ref`` along the segment.
    """
    Dinv_Mt = M.T / nu[:, None]
    lam = np.linalg.lstsq(M @ Dinv_Mt, v - M @ g0, rcond=None)[0]
    g = g0 + Dinv_Mt @ lam
    if np.all(g >= 0):
        return g
    neg = g < 0
    t = np.min(g_ref[neg] / (g_ref[neg] - g[neg]))
    return np.clip(g_ref + t * (g - g_ref), 0.0, None)


def calibrate_step(
    cloud: ParticleCloud,
    locvar,
    x_bins,
    y_labels,
    prior=None,
    tol: float = 1e-9,
    independent: int | None = None,
) -> StepCalibration:
    """Solve ``E[σ²(Y) | X-bin] = σ²_loc`` for ``σ² >= 0`` on y-bins.

    ``locvar`` is a per-particle array or a callable of ``x``.  ``x_bins`` is
    an int (quantile bins) or an array of cut points.  ``y_labels`` gives the
    y-bin of each particle.  With ``independent=J`` the labels are taken to be
    uniform on ``range(J)`` and independent of ``X``, and the joint used is the
    exact product ``μ̂ ⊗ uniform`` rather than the sampled one.

    ``prior`` (per particle) selects among multiple exact solutions the one
    nearest its bin averages; by default the constant ``μ·f``.
    """
    if cloud.n == 0:
        raise EmptyCloud("no particles to calibrate on")
    lv = np.asarray(locvar(cloud.x) if callable(locvar) else locvar, dtype=float)
    if lv.shape != cloud.x.shape:
        raise ValueError("locvar must give one value per particle")
    if np.any(lv < 0):
        raise ValueError("local variances must be >= 0")
    cuts = quantile_edges(cloud.x, cloud.w, x_bins) if np.isscalar(x_bins) else np.asarray(x_bins, dtype=float)
    xb = assign_bins(cloud.x, cuts)
    ce = estimate_cond_exp(cloud, lv, xb, cuts.size + 1)
    occ = ce.mass > 0
    f = ce.values[occ]
    mu = ce.mass[occ] / ce.mass[occ].sum()
    xrow = np.cumsum(occ) - 1

    if independent is not None:
        J = int(independent)
        if J < 1:
            raise ValueError("independent needs J >= 1")
        labels = np.arange(J)
        P = np.outer(mu, np.full(J, 1.0 / J))
        counts = np.full(J, cloud.n / J)
        ylab = None
    else:
        ylab = np.asarray(y_labels, dtype=np.int64)
        if ylab.shape != cloud.x.shape:
            raise ValueError("y_labels must give one label per particle")
        labels, ycol = np.unique(ylab, return_inverse=True)
        J = labels.size
        I = f.size
        P = np.bincount(xrow[xb] * J + ycol, weights=cloud.w, minlength=I * J).reshape(I, J)
        P /= P.sum()
        counts = np.bincount(ycol, minlength=J)
        keep = P.sum(axis=0) > 0
        labels, P, counts = labels[keep], P[:, keep], counts[keep]
        ycol_kept = ycol
    nu = P.sum(axis=0)
    M = P / P.sum(axis=1, keepdims=True)

    if prior is None:
        g0 = np.full(labels.size, float(mu @ f))
    else:
        pr = np.asarray(prior, dtype=float)
        if ylab is None:
            g0 = np.full(labels.size, float(cloud.w @ pr))
        else:
            tot = np.bincount(ycol_kept, weights=cloud.w * pr)
            mass = np.bincount(ycol_kept, weights=cloud.w)
            g0 = (tot / mass)[keep]

    scale = max(float(np.max(f)), 1e-300)
    res = None
    try:
        dj = DiscreteJoint(tuple(float(i) for i in range(f.size)), tuple(int(l) for l in labels), P, "float")
        res = solve_nonneg(dj, f / scale, tol=tol)
    except (RuntimeError, ValueError):
        res = None
    if res is not None and res.feasible:
        g = scale * _nearest(M, nu, f / scale, g0 / scale, res.g)
        feas = "exact"
    else:
        A = np.sqrt(mu)[:, None] * M
        g_ls = scale * nnls(A, np.sqrt(mu) * f / scale, maxiter=50 * labels.size)[0]
        g = scale * _nearest(M, nu, M @ g_ls / scale, g0 / scale, g_ls / scale)
        feas = "least-squares"
    resid = float(mu @ (M @ g - f) ** 2)
    if feas == "exact" and resid > tol:
        feas = "least-squares"
    return StepCalibration(cuts, labels, g, resid, feas, f, mu, nu, counts, M)


@dataclass(frozen=True, eq=False)
class Leverage:
    x_cuts: np.ndarray
    lev2: np.ndarray
    denom: np.ndarray
    locvar: np.ndarray

    def lookup(self, x) -> np.ndarray:
        return self.lev2[assign_bins(x, self.x_cuts)]


def calibrate_slv_step(
    cloud: ParticleCloud,
    locvar,
    x_bins,
    phi: Callable = np.sqrt,
    floor: float = 1e-12,
) -> Leverage:
    """``ℓ² = σ²_loc / E[φ(Z)² | X-bin]`` on quantile (or given) x-bins."""
    if cloud.n == 0:
        raise EmptyCloud("no particles to calibrate on")
    if cloud.z is None:
        raise ValueError("cloud carries no Z")
    lv = np.asarray(locvar(cloud.x) if callable(locvar) else locvar, dtype=float)
    cuts = quantile_edges(cloud.x, cloud.w, x_bins) if np.isscalar(x_bins) else np.asarray(x_bins, dtype=float)
    xb = assign_bins(cloud.x, cuts)
    den = estimate_cond_exp(cloud, np.asarray(phi(np.maximum(cloud.z, 0.0)), dtype=float) ** 2, xb, cuts.size + 1)
    num = estimate_cond_exp(cloud, lv, xb, cuts.size + 1)
    occ = den.occupied
    if np.any(den.values[occ] <= floor):
        raise DegenerateDenominator("E[phi(Z)^2 | X] vanishes on an occupied bin")
    lev2 = np.where(occ, num.values / np.where(occ, den.values, 1.0), np.nan)
    return Leverage(cuts, lev2, den.values, num.values)


# -- driver ----------------------------------------------------------------------


@dataclass
class CalibrationConfig:
    surface: CallSurface
    features: FeatureSpec = field(default_factory=FeatureSpec)
    particles: int = 100_000
    steps: int = 50
    h: float = 0.02
    xbins: int = 40
    ybins: tuple = (20, 20)
    seed: int = 7
    additive: bool = False
    mode: str = "pdv"
    slv: dict = field(default_factory=lambda: {"kappa": 1.0, "theta": 1.0, "xi": 0.5, "rho": -0.5, "z0": 1.0})
    dupire_method: str = "implied"
    tol: float = 1e-9

    def __post_init__(self):
        if self.mode not in ("pdv", "independent", "slv"):
            raise ValueError("mode must be pdv, independent or slv")
        if self.particles < 1 or self.steps < 0 or not self.h > 0 or self.xbins < 1:
            raise ValueError("need particles >= 1, steps >= 0, h > 0, xbins >= 1")
        self.ybins = tuple(int(v) for v in self.ybins)
        if len(self.ybins) != 2 or min(self.ybins) < 1:
            raise ValueError("ybins must be two positive ints")


@dataclass
class StepRecord:
    k: int
    t: float
    residual: float
    feasibility: str
    n_xbins: int
    n_ybins: int
    clipped: int = 0
    calib: object = None

    def row(self) -> dict:
        return {"k": self.k, "t": self.t, "residual": self.residual, "feasibility": self.feasibility,
                "n_xbins": self.n_xbins, "n_ybins": self.n_ybins, "clipped": self.clipped}


@dataclass
class CalibrationReport:
    steps: list = field(default_factory=list)
    reprice: list = field(default_factory=list)
    localvol: LocalVolGrid | None = None
    mean_x: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"steps": [s.row() for s in self.steps], "reprice": self.reprice}


def _pdv_labels(cloud: ParticleCloud, spec: FeatureSpec, ybins: tuple) -> np.ndarray:
    n1, n2 = ybins
    b1 = assign_bins(cloud.R1(spec), quantile_edges(cloud.R1(spec), cloud.w, n1))
    b2 = assign_bins(cloud.R2(spec), quantile_edges(cloud.R2(spec), cloud.w, n2))
    return b1 * n2 + b2


def run_calibration(config: CalibrationConfig) -> CalibrationReport:
    """Calibrate step by step, then reprice the final maturity against the surface.

    ``σ²(kh, ·)`` is solved on the cloud at ``kh`` before it is advanced, so
    each step only depends on the calibration at earlier dates.
    """
    cfg = config
    report = CalibrationReport()
    if cfg.steps == 0:
        return report
    lvg = dupire_localvol(cfg.surface, cfg.dupire_method)
    report.localvol = lvg
    S0 = cfg.surface.S0
    slv = cfg.mode == "slv"
    cloud = ParticleCloud.initial(cfg.particles, S0, cfg.slv["z0"] if slv else None)
    J = cfg.ybins[0] * cfg.ybins[1]
    sqh = math.sqrt(cfg.h)
    report.mean_x.append(cloud.mean())
    for k in range(cfg.steps):
        t = k * cfg.h
        locvar = lvg.at(t, cloud.x)
        dW = sqh * _normals(cfg.seed, k, cloud.n, 0)
        if slv:
            lev = calibrate_slv_step(cloud, locvar, cfg.xbins)
            zp = np.maximum(cloud.z, 0.0)
            s2 = lev.lookup(cloud.x) * zp
            rec = StepRecord(k, t, 0.0, "exact", int(np.sum(lev.denom > 0)), 0, 0, lev)
            p = cfg.slv
            dB = p["rho"] * dW + math.sqrt(1 - p["rho"] ** 2) * sqh * _normals(cfg.seed, k, cloud.n, 1)
            znew = cloud.z + p["kappa"] * (p["theta"] - zp) * cfg.h + p["xi"] * np.sqrt(zp) * dB
        else:
            if cfg.mode == "independent":
                labels = philox(cfg.seed, k, 0, 2).integers(0, J, size=cloud.n)
                cal = calibrate_step(cloud, locvar, cfg.xbins, None, tol=cfg.tol, independent=J)
                clipped = 0
            else:
                labels = _pdv_labels(cloud, cfg.features, cfg.ybins)
                sig, clipped = cfg.features.sigma(cloud)
                cal = calibrate_step(cloud, locvar, cfg.xbins, labels, prior=sig**2, tol=cfg.tol)
            s2 = cal.lookup(labels)
            rec = StepRecord(k, t, cal.residual, cal.feasibility, cal.f.size, cal.labels.size, clipped, cal)
        report.steps.append(rec)
        cloud = step_simulate(cloud, s2, cfg.h, cfg.seed, k, cfg.features, cfg.additive, dW=dW)
        if slv:
            cloud = replace(cloud, z=znew)
        report.mean_x.append(cloud.mean())

    T = cfg.steps * cfg.h
    market = cfg.surface.price(T, cfg.surface.strikes)
    for x, c in zip(cfg.surface.strikes, market):
        pay = np.maximum(cloud.x - x, 0.0)
        mean = float(cloud.w @ pay)
        se = float(np.sqrt(max(cloud.w @ (pay - mean) ** 2, 0.0) / cloud.n))
        report.reprice.append({"t": T, "x": float(x), "model_price": mean, "market_price": float(c), "mc_se": se})
    return report
