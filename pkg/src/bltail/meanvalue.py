"""Means of quasi-periodic functions over hyperplanes with irrational normal.

A quasi-periodic series is f(y) = sum_xi c_xi exp(2 pi i (T xi) . y) with T a
rational matrix. Restricted to the hyperplane {y . n = 0} with n irrational,
a frequency T xi averages to zero unless T xi = 0, so the mean is the sum of
the coefficients on that resonance set. Membership tests run in exact
rational arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .lattice import Direction, rationalize
from .rotations import rotation


@dataclass
class QuasiPeriodicSeries:
    """Series with frequency matrix T (exact rationals) and coefficients over Z^d."""
    T: list  # d x d list of Fractions
    freqs: np.ndarray  # (nf, d) int
    coeffs: np.ndarray  # (nf, *vshape) complex
    rationalization_error: float = 0.0
    _Tf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not isinstance(self.T[0][0], Fraction):
            self.T, err = rationalize(np.asarray(self.T))
            self.rationalization_error = max(self.rationalization_error, err)
        self.freqs = np.asarray(self.freqs, dtype=np.int64).reshape(len(self.coeffs), -1)
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        self._Tf = np.array([[float(x) for x in row] for row in self.T])

    @classmethod
    def periodic(cls, freqs, coeffs):
        freqs = np.asarray(freqs, dtype=np.int64)
        d = freqs.shape[1]
        I = [[Fraction(int(i == j)) for j in range(d)] for i in range(d)]
        return cls(I, freqs, coeffs)

    @property
    def d(self):
        return self.freqs.shape[1]

    def image(self, xi):
        """Exact T xi as a tuple of Fractions."""
        return tuple(sum((a * int(b) for a, b in zip(row, xi)), Fraction(0)) for row in self.T)

    def real_freqs(self):
        return self.freqs @ self._Tf.T

    def evaluate(self, y):
        y = np.asarray(y, dtype=float)
        phase = np.exp(2j * np.pi * (y @ self.real_freqs().T))
        return np.tensordot(phase, self.coeffs, axes=([-1], [0]))


def _require_irrational(n):
    if isinstance(n, Direction):
        if n.rational:
            raise ValueError("mean-value rule needs an irrational normal; "
                             f"witness {n.witness} found")
        return n.n
    raise TypeError("expected a classified Direction")


def hyperplane_mean(f: QuasiPeriodicSeries, n: Direction):
    """Sum of c_xi over the exact resonance set {xi : T xi = 0}."""
    _require_irrational(n)
    total = np.zeros(f.coeffs.shape[1:], dtype=complex)
    for xi, c in zip(f.freqs.tolist(), f.coeffs):
        if all(x == 0 for x in f.image(xi)):
            total = total + c
    return total


def _mul(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.ndim == 0 or b.ndim == 0:
        return a * b
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"value shapes {a.shape} and {b.shape} do not multiply")
    return a @ b


def product_mean(f: QuasiPeriodicSeries, g, n: Direction, contract=None):
    """Mean of f g over the hyperplane: sum over T xi in Z^d of c_xi(f) c_{-T xi}(g).

    ``g`` is a periodic series exposing ``coefficient(xi)``. Values are combined
    as ``c(f) @ c(g)`` (f on the left), or by ``contract(cf, cg)`` if given.
    """
    _require_irrational(n)
    mul = _mul if contract is None else contract
    total = None
    for xi, c in zip(f.freqs.tolist(), f.coeffs):
        img = f.image(xi)
        if all(x.denominator == 1 for x in img):
            cg = g.coefficient([-int(x) for x in img])
            term = mul(c, cg)
            total = term if total is None else total + term
    if total is None:
        total = mul(f.coeffs[0] * 0, g.values[0] * 0)
    return total


def bump(s):
    """C-infinity bump prod exp(-1/(1-s^2)) on the cube (-1, 1)^k."""
    s = np.asarray(s, dtype=float)
    inside = np.all(np.abs(s) < 1, axis=-1)
    out = np.zeros(s.shape[:-1])
    si = s[inside]
    out[inside] = np.exp(-np.sum(1.0 / (1.0 - si * si), axis=-1))
    return out


def windowed_average_oracle(f_eval, n, lam: float, phi=bump, points: int | None = None, M=None):
    """Midpoint-rule value of int phi(z') f(M (lam z', 0)) dz' / int phi.

    ``f_eval`` maps points of shape (P, d) to values (P, ...). ``M`` defaults
    to the atlas rotation with M e_d = n.
    """
    n = n.n if isinstance(n, Direction) else np.asarray(n, dtype=float)
    d = n.size
    M = rotation(n) if M is None else M
    if points is None:
        points = int(min(max(400, 40 * lam), 20000 if d == 2 else 1200))
    s = (np.arange(points) + 0.5) / points * 2.0 - 1.0
    grids = np.meshgrid(*([s] * (d - 1)), indexing="ij")
    zp = np.stack([g.ravel() for g in grids], axis=1)
    w = phi(zp)
    keep = w > 0
    zp, w = zp[keep], w[keep]
    z = np.hstack([lam * zp, np.zeros((len(zp), 1))])
    y = z @ M.T
    vals = np.asarray(f_eval(y))
    num = np.tensordot(w, vals, axes=([0], [0]))
    return num / np.sum(w)
