"""Finitely supported joint laws of (X, Y) and their disintegrations.

A :class:`DiscreteJoint` stores the joint probability matrix ``P`` with
``P[i, j] = P(X = xs[i], Y = ys[j])``.  Two arithmetic modes coexist:

* rational: ``P`` is an object array of :class:`~fractions.Fraction`, every
  identity is exact;
* float: ``P`` is ``float64`` and identities hold up to ``FLOAT_TOL``.

Rows and columns with zero mass are rejected so both conditional kernels are
always defined.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from ._exact import format_fraction, fraction_array, is_exact, to_fraction

__all__ = [
    "FLOAT_TOL",
    "ConditionalKernel",
    "DiscreteJoint",
    "InvalidJointError",
    "d_epsilon_set",
    "dirac_set",
    "kernel_x_given",
    "kernel_y_given",
    "marginals",
    "product_law",
]

FLOAT_TOL = 1e-12


class InvalidJointError(ValueError):
    """The matrix does not describe a minimal-support probability law."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteJoint:
    xs: tuple
    ys: tuple
    P: np.ndarray
    mode: str = field(default="")

    def __post_init__(self):
        xs = tuple(self.xs)
        ys = tuple(self.ys)
        mode = self.mode or ("rational" if _has_fraction(self.P) else "float")
        if mode == "rational":
            P = fraction_array(self.P)
            xs = tuple(to_fraction(x) for x in xs)
        elif mode == "float":
            P = np.array(self.P, dtype=float)
            xs = tuple(float(x) for x in xs)
        else:
            raise InvalidJointError(f"unknown mode {mode!r}")
        if P.ndim != 2:
            raise InvalidJointError("P must be a matrix")
        I, J = P.shape
        if I < 1 or J < 1:
            raise InvalidJointError("need at least one support point on each side")
        if len(xs) != I or len(ys) != J:
            raise InvalidJointError(f"P is {I}x{J} but got {len(xs)} xs and {len(ys)} ys")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise InvalidJointError("xs must be strictly increasing")
        if len(set(ys)) != J:
            raise InvalidJointError("ys must be pairwise distinct")
        if any(v < 0 for v in P.flat):
            raise InvalidJointError("negative probability")
        total = P.sum()
        if mode == "rational":
            if total != 1:
                raise InvalidJointError(f"probabilities sum to {total}, not 1")
        elif abs(total - 1.0) > FLOAT_TOL:
            raise InvalidJointError(f"probabilities sum to {total!r}, not 1")
        if any(r <= 0 for r in P.sum(axis=1)):
            raise InvalidJointError("some x has zero mass (support must be minimal)")
        if any(c <= 0 for c in P.sum(axis=0)):
            raise InvalidJointError("some y has zero mass (support must be minimal)")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "P", _readonly(P))
        object.__setattr__(self, "mode", mode)

    @property
    def shape(self) -> tuple[int, int]:
        return self.P.shape

    @property
    def exact(self) -> bool:
        return self.mode == "rational"

    def __eq__(self, other) -> bool:
        if not isinstance(other, DiscreteJoint):
            return NotImplemented
        return (
            self.mode == other.mode
            and self.xs == other.xs
            and self.ys == other.ys
            and self.P.shape == other.P.shape
            and bool(np.all(self.P == other.P))
        )

    __hash__ = None

    def to_float(self) -> "DiscreteJoint":
        if not self.exact:
            return self
        return DiscreteJoint(
            [float(x) for x in self.xs], self.ys, self.P.astype(float) / float(self.P.sum()), mode="float"
        )

    # -- JSON ---------------------------------------------------------------
    def to_dict(self) -> dict:
        if self.exact:
            P = [[format_fraction(v) for v in row] for row in self.P]
            xs = [format_fraction(x) for x in self.xs]
        else:
            P = self.P.tolist()
            xs = list(self.xs)
        return {"xs": xs, "ys": list(self.ys), "P": P}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data: dict, mode: str | None = None) -> "DiscreteJoint":
        try:
            xs, ys, P = data["xs"], data["ys"], data["P"]
        except KeyError as exc:
            raise InvalidJointError(f"missing key {exc}") from None
        if mode is None:
            mode = "rational" if any(isinstance(v, str) for row in P for v in row) else "float"
        if mode == "rational":
            return cls(xs, ys, fraction_array(P), mode="rational")
        return cls([float(x) for x in xs], ys, np.array(P, dtype=float), mode="float")

    @classmethod
    def from_json(cls, text: str, mode: str | None = None) -> "DiscreteJoint":
        return cls.from_dict(json.loads(text), mode=mode)


def _has_fraction(P) -> bool:
    if isinstance(P, np.ndarray) and P.dtype == object:
        return True
    arr = np.asarray(P, dtype=object)
    return any(isinstance(v, (Fraction, str)) for v in arr.flat)


@dataclass(frozen=True, eq=False)
class ConditionalKernel:
    """Row-stochastic matrix: row ``r`` is the law given the r-th atom."""

    rows: np.ndarray

    def __post_init__(self):
        rows = self.rows
        exact = is_exact(rows)
        if any(v < 0 for v in rows.flat):
            raise ValueError("kernel has negative entries")
        for s in rows.sum(axis=1):
            if (s != 1) if exact else abs(s - 1.0) > FLOAT_TOL:
                raise ValueError(f"kernel row sums to {s}")
        object.__setattr__(self, "rows", _readonly(rows))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.rows, dtype=dtype)

    @property
    def shape(self):
        return self.rows.shape


def marginals(dj: DiscreteJoint) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(mu, nu)``: row sums and column sums of ``P``."""
    return dj.P.sum(axis=1), dj.P.sum(axis=0)


def kernel_x_given(dj: DiscreteJoint) -> ConditionalKernel:
    """``M[i, j] = P(Y = y_j | X = x_i)``."""
    mu, _ = marginals(dj)
    return ConditionalKernel(dj.P / mu[:, None])


def kernel_y_given(dj: DiscreteJoint) -> ConditionalKernel:
    """``M*[j, i] = P(X = x_i | Y = y_j)``."""
    _, nu = marginals(dj)
    return ConditionalKernel((dj.P / nu[None, :]).T.copy())


def dirac_set(dj: DiscreteJoint, tol: float = 0.0) -> frozenset[int]:
    """Columns whose reverse conditional law is (within ``tol``) a point mass."""
    if not 0 <= tol <= 1e-6:
        raise ValueError("tol must lie in [0, 1e-6]")
    if tol == 0:
        return frozenset(j for j in range(dj.shape[1]) if sum(1 for v in dj.P[:, j] if v > 0) == 1)
    Mstar = np.asarray(kernel_y_given(dj).rows, dtype=float)
    return frozenset(int(j) for j in np.flatnonzero(Mstar.max(axis=1) >= 1 - tol))


def dirac_target(dj: DiscreteJoint, j: int) -> int | None:
    """Row carrying all of column ``j``'s mass, or None if the column is spread."""
    rows = [i for i, v in enumerate(dj.P[:, j]) if v > 0]
    return rows[0] if len(rows) == 1 else None


def d_epsilon_set(dj: DiscreteJoint, eps) -> frozenset[int]:
    """Columns whose x-support fits in some half-open interval ``(c, c + eps]``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    out = []
    for j in range(dj.shape[1]):
        support = [dj.xs[i] for i, v in enumerate(dj.P[:, j]) if v > 0]
        if max(support) - min(support) < eps:
            out.append(j)
    return frozenset(out)


def product_law(mu: Sequence, nu: Sequence, xs: Sequence | None = None, ys: Sequence | None = None) -> DiscreteJoint:
    """Independent coupling ``P = mu ⊗ nu`` (rational if the inputs are)."""
    exact = any(isinstance(v, (Fraction, str, int)) for v in list(mu) + list(nu))
    if exact:
        mu_a = fraction_array(mu)
        nu_a = fraction_array(nu)
    else:
        mu_a = np.asarray(mu, dtype=float)
        nu_a = np.asarray(nu, dtype=float)
    P = np.outer(mu_a, nu_a)
    xs = list(range(len(mu_a))) if xs is None else list(xs)
    ys = list(range(len(nu_a))) if ys is None else list(ys)
    return DiscreteJoint(xs, ys, P, mode="rational" if exact else "float")
