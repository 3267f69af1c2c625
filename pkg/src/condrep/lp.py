"""Phase-one simplex for ``{x >= 0 : A x = b}`` with Farkas certificates.

Two back ends share one contract:

* :func:`exact_phase_one` pivots a Fraction tableau with Bland's rule, so it
  never cycles and its answers are exact;
* :func:`float_phase_one` hands the same auxiliary LP to HiGHS and reads the
  certificate off the equality duals.

Both return ``(x, None)`` with ``x`` a basic feasible point, or
``(None, y)`` with ``y^T A <= 0`` and ``y^T b > 0``.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
from scipy.optimize import linprog

__all__ = ["exact_phase_one", "float_phase_one"]


def exact_phase_one(A, b) -> tuple[list[Fraction] | None, list[Fraction] | None]:
    A = [[Fraction(v) for v in row] for row in A]
    b = [Fraction(v) for v in b]
    m = len(A)
    n = len(A[0]) if m else 0
    signs = [1 if bi >= 0 else -1 for bi in b]
    # tableau columns: n originals, m artificials, then the right-hand side
    T = []
    for i in range(m):
        s = signs[i]
        row = [s * v for v in A[i]] + [Fraction(int(k == i)) for k in range(m)] + [s * b[i]]
        T.append(row)
    basis = [n + i for i in range(m)]
    width = n + m
    # reduced costs of the phase-one objective sum(artificials)
    r = [-sum((T[i][j] for i in range(m)), Fraction(0)) for j in range(n)] + [Fraction(0)] * m
    obj = sum((T[i][width] for i in range(m)), Fraction(0))

    while True:
        enter = next((j for j in range(width) if r[j] < 0), None)
        if enter is None:
            break
        best = None
        for i in range(m):
            a = T[i][enter]
            if a > 0:
                ratio = T[i][width] / a
                key = (ratio, basis[i])
                if best is None or key < best[0]:
                    best = (key, i)
        if best is None:  # unbounded direction; impossible for a phase-one objective bounded below by 0
            raise RuntimeError("phase-one LP reported unbounded")
        row = best[1]
        piv = T[row][enter]
        T[row] = [v / piv for v in T[row]]
        for i in range(m):
            if i != row and T[i][enter] != 0:
                factor = T[i][enter]
                Ti, Tr = T[i], T[row]
                T[i] = [vi - factor * vr for vi, vr in zip(Ti, Tr)]
        factor = r[enter]
        r = [rj - factor * vr for rj, vr in zip(r, T[row][:width])]
        obj += factor * T[row][width]
        basis[row] = enter

    if obj > 0:
        # y = c_B B^{-1}; artificial reduced costs are 1 - y_i
        y = [(1 - r[n + i]) * signs[i] for i in range(m)]
        return None, y
    x = [Fraction(0)] * n
    for i, var in enumerate(basis):
        if var < n:
            x[var] = T[i][width]
    return x, None


def float_phase_one(A: np.ndarray, b: np.ndarray, tol: float = 1e-9):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    signs = np.where(b >= 0, 1.0, -1.0)
    As = A * signs[:, None]
    bs = b * signs
    c = np.concatenate([np.zeros(n), np.ones(m)])
    res = linprog(
        c,
        A_eq=np.hstack([As, np.eye(m)]),
        b_eq=bs,
        bounds=[(0, None)] * (n + m),
        method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"HiGHS failed: {res.message}")
    if res.fun <= tol:
        x = np.clip(res.x[:n], 0.0, None)
        return x, None
    y = np.asarray(res.eqlin.marginals, dtype=float) * signs
    return None, y
