"""Deciding and solving ``E[g(Y) | X] = f(X)`` with ``g >= 0`` on finite supports.

On a finite support the representation property holds exactly when every
row ``i`` owns a column carried by ``x_i`` alone (an injective ``tau``); the
LP route in :func:`decide_rplus` re-derives that verdict independently by
trying every indicator ``f = e_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from ._exact import fraction_array
from .lp import exact_phase_one, float_phase_one
from .measures import DiscreteJoint, dirac_set, dirac_target, kernel_x_given, marginals

__all__ = [
    "ConditionDViolated",
    "DimensionMismatch",
    "EmptyA",
    "FeasibilityResult",
    "NecessaryReport",
    "RplusReport",
    "check_condition_d",
    "check_necessary",
    "construct_g_dirac",
    "decide_rplus",
    "find_tau",
    "necessary_report",
    "solve_nonneg",
]


class DimensionMismatch(ValueError):
    pass


class ConditionDViolated(ValueError):
    """Some row puts no mass on columns concentrated at a single x."""


class EmptyA(ValueError):
    pass


def _as_vector(dj: DiscreteJoint, v, length: int, name: str) -> np.ndarray:
    if dj.exact:
        arr = fraction_array(v)
    else:
        arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != length:
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected ({length},)")
    return arr


def find_tau(dj: DiscreteJoint) -> tuple[int, ...] | None:
    """Injective ``tau`` with column ``tau(i)`` carried by row ``i`` alone.

    Picks the smallest admissible column for each row; returns ``None`` if
    some row has none.
    """
    I, J = dj.shape
    owner = [dirac_target(dj, j) for j in range(J)]
    tau = []
    for i in range(I):
        j = next((j for j in range(J) if owner[j] == i), None)
        if j is None:
            return None
        tau.append(j)
    return tuple(tau)


def check_condition_d(dj: DiscreteJoint) -> bool:
    D = dirac_set(dj)
    return all(any(dj.P[i, j] > 0 for j in D) for i in range(dj.shape[0]))


def construct_g_dirac(dj: DiscreteJoint, f) -> np.ndarray:
    """Nonnegative ``g`` supported on Dirac columns with ``M g = f``.

    Every column concentrated at ``x_i`` gets ``f_i / M_i(D_i)``, where
    ``M_i(D_i)`` is the conditional mass row ``i`` puts on those columns.
    """
    I, J = dj.shape
    f = _as_vector(dj, f, I, "f")
    if any(v < 0 for v in f):
        raise ValueError("f must be nonnegative")
    if not check_condition_d(dj):
        raise ConditionDViolated("condition (D) fails: some x gives no mass to Dirac columns")
    M = kernel_x_given(dj).rows
    owner = [dirac_target(dj, j) for j in range(J)]
    zero = Fraction(0) if dj.exact else 0.0
    mass = [sum((M[i, j] for j in range(J) if owner[j] == i), zero) for i in range(I)]
    g = np.empty(J, dtype=object if dj.exact else float)
    for j in range(J):
        i = owner[j]
        g[j] = f[i] / mass[i] if i is not None else zero
    return g


@dataclass(frozen=True, eq=False)
class FeasibilityResult:
    """Outcome of :func:`solve_nonneg`.

    Exactly one of ``g`` (a nonnegative vertex solution) and ``certificate``
    (a Farkas vector ``c`` with ``c^T M <= 0`` and ``c^T f > 0``) is set.
    """

    feasible: bool
    g: np.ndarray | None = None
    certificate: np.ndarray | None = None
    residual: float = 0.0

    def __bool__(self) -> bool:
        return self.feasible


def verify_certificate(M: np.ndarray, f: np.ndarray, cert: np.ndarray, tol) -> bool:
    lhs = cert @ M
    return all(v <= tol for v in lhs) and (cert @ f) > tol


def solve_nonneg(dj: DiscreteJoint, f, tol: float = 1e-9) -> FeasibilityResult:
    """Find ``g >= 0`` with ``M g = f`` or a Farkas certificate that none exists.

    Rational joints use the exact Bland's-rule simplex (the tolerance is not
    needed there and the verification is exact); float joints use HiGHS and
    are verified to ``tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    I, J = dj.shape
    f = _as_vector(dj, f, I, "f")
    if any(v < 0 for v in f):
        raise ValueError("f must be nonnegative")
    M = kernel_x_given(dj).rows
    if dj.exact:
        g, y = exact_phase_one(M.tolist(), list(f))
        if g is not None:
            g = fraction_array(g)
            assert all(v == 0 for v in M @ g - f)
            return FeasibilityResult(True, g=g)
        y = fraction_array(y)
        scale = max(abs(v) for v in y)
        y = y / scale
        assert verify_certificate(M, f, y, 0)
        return FeasibilityResult(False, certificate=y)

    g, y = float_phase_one(M, f, tol=tol)
    if g is not None:
        resid = float(np.max(np.abs(M @ g - f)))
        if resid <= tol:
            return FeasibilityResult(True, g=g, residual=resid)
        y = None
    if y is None or not np.any(y):
        raise RuntimeError("float LP returned neither a solution nor a usable certificate")
    y = y / np.max(np.abs(y))
    if not verify_certificate(M, f, y, tol):
        raise RuntimeError("Farkas certificate failed verification; problem is too ill-conditioned for tol")
    return FeasibilityResult(False, certificate=y)


@dataclass
class RplusReport:
    rplus: bool
    tau: tuple[int, ...] | None
    dirac: tuple[int, ...]
    lp_feasible: dict[int, bool]
    certificates: dict[int, list] = field(default_factory=dict)

    @property
    def agrees(self) -> bool:
        return self.rplus == (self.tau is not None)

    def to_dict(self) -> dict:
        from ._exact import format_fraction

        def fmt(v):
            return format_fraction(v) if isinstance(v, Fraction) else float(v)

        return {
            "Rplus": self.rplus,
            "tau": list(self.tau) if self.tau is not None else None,
            "D": list(self.dirac),
            "agrees_with_tau": self.agrees,
            "certificates": {str(i): [fmt(v) for v in c] for i, c in self.certificates.items()},
        }


def decide_rplus(dj: DiscreteJoint, tol: float = 1e-9) -> RplusReport:
    """LP decision over every coordinate indicator, cross-checked against ``tau``."""
    I, _ = dj.shape
    one = Fraction(1) if dj.exact else 1.0
    zero = Fraction(0) if dj.exact else 0.0
    feasible: dict[int, bool] = {}
    certs: dict[int, list] = {}
    for i in range(I):
        e = [one if k == i else zero for k in range(I)]
        res = solve_nonneg(dj, e, tol=tol)
        feasible[i] = res.feasible
        if not res.feasible:
            certs[i] = list(res.certificate)
    return RplusReport(
        rplus=all(feasible.values()),
        tau=find_tau(dj),
        dirac=tuple(sorted(dirac_set(dj))),
        lp_feasible=feasible,
        certificates=certs,
    )


@dataclass
class NecessaryReport:
    holds: bool
    vacuous: bool
    rows: tuple[int, ...]
    witnesses: tuple[int, ...]
    dirac: tuple[int, ...]


def necessary_report(dj: DiscreteJoint, A: Iterable[int]) -> NecessaryReport:
    """Test the necessary condition on ``A`` restricted to rows with no Dirac mass.

    The condition only speaks about subsets of ``{x : P(Y in D | X = x) = 0}``;
    when ``A`` misses that set entirely the statement is vacuous and holds.
    Dirac columns are excluded from the witnesses and listed separately.
    """
    I, J = dj.shape
    A = sorted(set(int(a) for a in A))
    if not A:
        raise EmptyA("A must contain at least one row")
    if any(a < 0 or a >= I for a in A):
        raise IndexError("row index out of range")
    D = dirac_set(dj)
    no_d = {i for i in range(I) if not any(dj.P[i, j] > 0 for j in D)}
    rows = tuple(i for i in A if i in no_d)
    if not rows:
        return NecessaryReport(True, True, rows, (), tuple(sorted(D)))
    inside = set(rows)
    witnesses = tuple(
        j for j in range(J) if j not in D and all(i in inside for i in range(I) if dj.P[i, j] > 0)
    )
    return NecessaryReport(bool(witnesses), False, rows, witnesses, tuple(sorted(D)))


def check_necessary(dj: DiscreteJoint, A: Iterable[int]) -> bool:
    return necessary_report(dj, A).holds


def all_row_subsets(I: int):
    for size in range(1, I + 1):
        yield from combinations(range(I), size)


def mass_gap(dj: DiscreteJoint, f: Sequence, g: Sequence):
    """``sum_j nu_j g_j - sum_i mu_i f_i`` (zero for any exact solution)."""
    mu, nu = marginals(dj)
    f = _as_vector(dj, f, dj.shape[0], "f")
    g = _as_vector(dj, g, dj.shape[1], "g")
    return nu @ g - mu @ f
