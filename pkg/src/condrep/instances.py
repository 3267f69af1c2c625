"""Reference and random discrete instances used by tests, the CLI and benchmarks."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .measures import DiscreteJoint

__all__ = ["pattern_joint", "product_joint", "random_joint", "joint_from_counts"]


def joint_from_counts(counts, xs=None, ys=None) -> DiscreteJoint:
    """Normalize a nonnegative integer matrix into a rational joint law."""
    counts = np.asarray(counts, dtype=object)
    total = int(sum(int(v) for v in counts.flat))
    P = np.empty(counts.shape, dtype=object)
    for idx, v in np.ndenumerate(counts):
        P[idx] = Fraction(int(v), total)
    I, J = counts.shape
    return DiscreteJoint(list(range(I)) if xs is None else xs, list(range(J)) if ys is None else ys, P, mode="rational")


def pattern_joint(free=(1, 2)) -> DiscreteJoint:
    """4x6 law whose columns 0, 1, 3, 5 are point masses at rows 1, 0, 2, 3.

    Columns 2 and 4 are spread over every row, with integer weights ``free``.
    """
    a, b = free
    counts = [
        [0, 3, a, 0, b, 0],
        [2, 0, a, 0, b, 0],
        [0, 0, a, 1, b, 0],
        [0, 0, a, 0, b, 4],
    ]
    return joint_from_counts(counts)


def product_joint(mu=(Fraction(1, 2), Fraction(1, 2)), nu=(Fraction(1, 2), Fraction(1, 2))) -> DiscreteJoint:
    P = np.empty((len(mu), len(nu)), dtype=object)
    for i, m in enumerate(mu):
        for j, n in enumerate(nu):
            P[i, j] = Fraction(m) * Fraction(n)
    return DiscreteJoint(list(range(len(mu))), list(range(len(nu))), P, mode="rational")


def random_joint(
    rng: np.random.Generator,
    I: int,
    J: int,
    plant_tau: bool = False,
    density: float = 0.6,
    max_weight: int = 9,
) -> DiscreteJoint:
    """Random rational joint with minimal support.

    With ``plant_tau`` an injective tau is drawn and each column ``tau(i)``
    is made a point mass at row ``i`` (needs ``J >= I``).  Without it the
    columns are sparse random patterns, so a tau may or may not exist.
    """
    if plant_tau and J < I:
        raise ValueError("planting tau needs J >= I")
    counts = np.zeros((I, J), dtype=np.int64)
    mask = rng.random((I, J)) < density
    counts[mask] = rng.integers(1, max_weight + 1, size=int(mask.sum()))
    if plant_tau:
        tau = rng.permutation(J)[:I]
        for i, j in enumerate(tau):
            counts[:, j] = 0
            counts[i, j] = rng.integers(1, max_weight + 1)
    for i in range(I):
        if counts[i].sum() == 0:
            counts[i, rng.integers(J)] = rng.integers(1, max_weight + 1)
    for j in range(J):
        if counts[:, j].sum() == 0:
            counts[rng.integers(I), j] = rng.integers(1, max_weight + 1)
    return joint_from_counts(counts)
