"""Locally smooth orthogonal frames n -> M_n with M_n e_d = n.

The frame is built by induction on the dimension: X_d(n) has first column
(a_1, ..., a_{d-1}, 1), the remaining columns are those of X_{d-1}(n_1..n_{d-1})
padded by a bottom row (0, ..., 0, n_d), and the row vector a = A_d(n) solves
a X_{d-1} = (0, ..., 0, -n_d) so that the first column is orthogonal to the
others. Normalizing the columns gives M_n.

Frames are chart dependent. Values of M_n coming from different charts must
never be compared with each other.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfChartError

GRAM_TOL = 1e-12


def build_X(n, threshold: float = 0.0) -> np.ndarray:
    """Unnormalized orthogonal-column matrix X_d(n) with last column n.

    ``n`` need not be a unit vector (the induction feeds truncated vectors).
    Raises :class:`OutOfChartError` if ``|n_1| <= threshold`` or ``n_1 == 0``.
    """
    n = np.asarray(n, dtype=float)
    if abs(n[0]) <= threshold or n[0] == 0.0:
        raise OutOfChartError(f"|n_1| = {abs(n[0]):.3g} outside chart (threshold {threshold:.3g})")
    d = n.size
    if d == 1:
        return n.reshape(1, 1)
    if d == 2:
        return np.array([[-n[1] / n[0], n[0]], [1.0, n[1]]])
    X_prev = build_X(n[:-1])
    rhs = np.zeros(d - 1)
    rhs[-1] = -n[-1]
    a = np.linalg.solve(X_prev.T, rhs)  # a X_prev = rhs with a a row vector
    X = np.zeros((d, d))
    X[:-1, 0] = a
    X[-1, 0] = 1.0
    X[:-1, 1:] = X_prev
    X[-1, -1] = n[-1]
    return X


def normalize_to_orthogonal(X, tol: float = 1e-12) -> np.ndarray:
    """Divide each column by its length; the last (unit) column is kept as is."""
    X = np.asarray(X, dtype=float)
    lengths = np.linalg.norm(X, axis=0)
    if np.any(lengths < tol):
        raise ValueError("near-zero column: numerically degenerate frame")
    M = X / lengths
    M[:, -1] = X[:, -1]
    return M


@dataclass(frozen=True)
class RotationField:
    """Chart around an anchor p, with a permutation moving a nonzero entry of p to slot 1."""
    anchor: np.ndarray
    perm: np.ndarray  # n_perm = n[perm]

    @classmethod
    def around(cls, p):
        p = np.asarray(p, dtype=float)
        k = int(np.argmax(np.abs(p)))
        perm = np.arange(p.size)
        perm[0], perm[k] = k, 0
        return cls(p, perm)

    @property
    def threshold(self) -> float:
        # every unit vector has some |n_k| >= 1/sqrt(d), so half of that covers the sphere
        return abs(self.anchor[self.perm[0]]) / (2.0 * np.sqrt(self.anchor.size))

    def contains(self, n) -> bool:
        return abs(np.asarray(n)[self.perm[0]]) > self.threshold

    def X(self, n):
        n = np.asarray(n, dtype=float)
        Xp = build_X(n[self.perm], threshold=self.threshold)
        P = np.eye(n.size)[self.perm]  # (P v) = v[perm]
        return P.T @ Xp

    def __call__(self, n):
        """Orthogonal M_n with M_n e_d = n."""
        return normalize_to_orthogonal(self.X(n))


def atlas(d: int):
    """The 2d charts anchored at +-e_k."""
    charts = []
    for k in range(d):
        for s in (1.0, -1.0):
            p = np.zeros(d)
            p[k] = s
            charts.append(RotationField.around(p))
    return charts


def chart_for(n) -> RotationField:
    """Chart anchored at the signed coordinate vector nearest to n."""
    n = np.asarray(n, dtype=float)
    k = int(np.argmax(np.abs(n)))
    p = np.zeros(n.size)
    p[k] = np.sign(n[k]) or 1.0
    field = RotationField.around(p)
    if not field.contains(n):
        raise OutOfChartError("no chart of the coordinate atlas contains n")
    return field


def rotation(n) -> np.ndarray:
    """M_n from the chart selected by :func:`chart_for`."""
    return chart_for(n)(n)


def _tangent_basis(n):
    n = np.asarray(n, dtype=float)
    # orthonormal complement from a QR factorization
    Q, _ = np.linalg.qr(np.column_stack([n, np.eye(n.size)]))
    return Q[:, 1:n.size]


def smoothness_probe(field: RotationField, n, h: float, direction=None):
    """Central finite differences of n -> M_n along a great circle through n.

    Returns a dict with the Frobenius norms of the first and second differences
    ``|M(+h) - M(-h)| / 2h`` and ``|M(+h) - 2 M(0) + M(-h)| / h^2``.
    """
    n = np.asarray(n, dtype=float)
    v = _tangent_basis(n)[:, 0] if direction is None else np.asarray(direction, dtype=float)
    v = v - (v @ n) * n
    v /= np.linalg.norm(v)
    pts = [np.cos(s) * n + np.sin(s) * v for s in (-h, 0.0, h)]
    for q in pts:
        if not field.contains(q):
            raise OutOfChartError("finite-difference step leaves the chart")
    Mm, M0, Mp = (field(q) for q in pts)
    return {
        "h": h,
        "first": float(np.linalg.norm(Mp - Mm) / (2 * h)),
        "second": float(np.linalg.norm(Mp - 2 * M0 + Mm) / h ** 2),
        "d1": (Mp - Mm) / (2 * h),
    }
