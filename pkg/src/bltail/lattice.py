"""Integer and rational direction analysis, unimodular completion, shears and
coefficient transforms under linear changes of variables."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DegenerateDirectionError, ValidationError

DELTA_DEFAULT = 0.05
RATIONAL_TOL = 1e-12
UNIT_TOL = 1e-12


def default_bound(d: int) -> int:
    """Default lattice scan bound Q for direction classification."""
    return {2: 1000, 3: 64}.get(d, 16)


def default_exponent(d: int) -> float:
    """Diophantine exponent l with (d - 1) l > 1."""
    return 2.0 / (d - 1) + 0.1


@dataclass(frozen=True)
class Direction:
    """Unit vector with its rationality classification at a lattice bound."""
    n: np.ndarray
    rational: bool
    witness: tuple | None
    kappa_est: float
    Q: int
    l: float
    layer_angle: float | None = None

    def to_json(self):
        return {
            "n": [float(x) for x in self.n],
            "rational": self.rational,
            "witness": None if self.witness is None else list(self.witness),
            "kappa_est": float(self.kappa_est),
            "Q": self.Q,
            "l": self.l,
            "layer_angle": self.layer_angle,
        }


def _box_half(d, Q):
    """Nonzero integer vectors in the sup-norm box of radius Q, one of each +-pair."""
    r = np.arange(-Q, Q + 1)
    grids = np.meshgrid(*([r] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    # keep the lexicographically positive representative
    nz = pts != 0
    first = np.argmax(nz, axis=1)
    lead = pts[np.arange(len(pts)), first]
    return pts[(lead > 0) & nz.any(axis=1)]


def _scan_chunks(d, Q, chunk=1 << 20):
    if d == 2:
        # iterate over the first coordinate to keep memory bounded
        r = np.arange(-Q, Q + 1)
        yield np.stack([np.zeros(Q, dtype=np.int64), np.arange(1, Q + 1)], axis=1)
        for a in range(1, Q + 1):
            yield np.stack([np.full(r.size, a), r], axis=1)
        return
    pts = _box_half(d, Q)
    for s in range(0, len(pts), chunk):
        yield pts[s:s + chunk]


def classify_direction(n, Q: int | None = None, l: float | None = None, nu0=None) -> Direction:
    """Classify a unit vector as rational or irrational at lattice bound ``Q``.

    ``n`` is flagged rational when some integer ``q`` with ``0 < |q|_inf <= Q``
    satisfies ``|n - q/|q|| <= 1e-12``; the witness of smallest norm is kept.
    ``kappa_est`` is ``min |P_{n-perp} xi| |xi|^l`` over the same box, and is 0
    for rational directions.
    """
    n = np.asarray(n, dtype=float)
    d = n.size
    if abs(np.linalg.norm(n) - 1.0) > UNIT_TOL:
        raise ValueError("direction must be a unit vector")
    Q = default_bound(d) if Q is None else int(Q)
    l = default_exponent(d) if l is None else float(l)
    if Q < 1:
        raise ValueError("Q must be >= 1")
    best_w, best_norm, kappa = None, np.inf, np.inf
    for pts in _scan_chunks(d, Q):
        p = pts.astype(float)
        norm = np.sqrt(np.sum(p * p, axis=1))
        dot = p @ n
        perp = np.sqrt(np.maximum(norm ** 2 - dot ** 2, 0.0))
        kappa = min(kappa, float(np.min(perp * norm ** l)))
        # |n - s q/|q|| for the sign s that matches n
        dist = np.sqrt(np.maximum(2.0 - 2.0 * np.abs(dot) / norm, 0.0))
        hit = dist <= RATIONAL_TOL
        if np.any(hit):
            k = np.flatnonzero(hit)[np.argmin(norm[hit])]
            if norm[k] < best_norm:
                best_norm = norm[k]
                best_w = pts[k] * (1 if dot[k] > 0 else -1)
    angle = None
    if nu0 is not None:
        angle = float(n @ np.asarray(nu0, dtype=float))
    if best_w is not None:
        return Direction(n, True, tuple(int(x) for x in best_w), 0.0, Q, l, angle)
    return Direction(n, False, None, kappa, Q, l, angle)


# ---------------------------------------------------------------------------
# unimodular completion


def _egcd(a: int, b: int):
    """Return (g, u, v) with u a + v b = g = gcd(a, b) >= 0."""
    u0, v0, u1, v1 = 1, 0, 0, 1
    while b:
        q, a, b = a // b, b, a % b
        u0, u1 = u1, u0 - q * u1
        v0, v1 = v1, v0 - q * v1
    if a < 0:
        a, u0, v0 = -a, -u0, -v0
    return a, u0, v0


def int_det(T) -> int:
    """Exact determinant of an integer matrix (fraction-free Bareiss)."""
    M = [[int(x) for x in row] for row in T]
    n = len(M)
    sign, prev = 1, 1
    for k in range(n - 1):
        if M[k][k] == 0:
            for r in range(k + 1, n):
                if M[r][k] != 0:
                    M[k], M[r] = M[r], M[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                M[i][j] = (M[i][j] * M[k][k] - M[i][k] * M[k][j]) // prev
        prev = M[k][k]
    return sign * M[n - 1][n - 1]


def _matmul_int(A, B):
    return [[sum(a * b for a, b in zip(row, col)) for col in zip(*B)] for row in A]


def complete_unimodular(a) -> np.ndarray:
    """Integer matrix T with det T = 1 and T e_d = a, for gcd(a) = 1.

    Base case d = 2 uses the extended Euclidean algorithm. For larger d the
    last two entries are merged into g = gcd(a_{d-1}, a_d) = x a_{d-1} + y a_d,
    the shorter vector is completed recursively, and the Bezout pair (x, y)
    re-expands g into the two original entries with a determinant-one block.
    """
    a = [int(x) for x in a]
    if len(a) < 2:
        raise ValueError("need d >= 2")
    g = 0
    for x in a:
        g = math.gcd(g, x)
    if g != 1:
        raise ValueError("gcd of entries must be one; the condition on the greatest "
                         "common divisor is necessary")
    T = _complete(a)
    return np.array(T, dtype=np.int64)


def _complete(a):
    d = len(a)
    if d == 2:
        _, u, v = _egcd(a[0], a[1])
        # columns (v, -u) and a: det = v a1 + u a0 = 1
        return [[v, a[0]], [-u, a[1]]]
    g, x, y = _egcd(a[d - 2], a[d - 1])
    S = _complete(a[:d - 2] + [g])  # (d-1) x (d-1), last column b
    S_ext = [row + [0] for row in S] + [[0] * (d - 1) + [1]]
    # R maps (b, 0) to a and has det (x a_{d-1} + y a_d) / g = 1
    R = [[int(i == j) for j in range(d)] for i in range(d)]
    if g != 0:
        R[d - 2][d - 2], R[d - 2][d - 1] = a[d - 2] // g, -y
        R[d - 1][d - 2], R[d - 1][d - 1] = a[d - 1] // g, x
    # rotate the last two basis vectors: e_d -> e_{d-1}, e_{d-1} -> -e_d
    P = [[int(i == j) for j in range(d)] for i in range(d)]
    P[d - 2][d - 2], P[d - 1][d - 1] = 0, 0
    P[d - 2][d - 1], P[d - 1][d - 2] = 1, -1
    return _matmul_int(_matmul_int(R, S_ext), P)


def unimodular_inverse(T) -> np.ndarray:
    """Exact inverse of a determinant-one integer matrix (adjugate)."""
    T = np.asarray(T, dtype=np.int64)
    d = T.shape[0]
    if int_det(T.tolist()) != 1:
        raise ValueError("matrix is not in SL(d, Z)")
    inv = np.zeros_like(T)
    for i in range(d):
        for j in range(d):
            minor = np.delete(np.delete(T, j, axis=0), i, axis=1)
            inv[i, j] = (-1) ** (i + j) * (int_det(minor.tolist()) if d > 1 else 1)
    return inv


# ---------------------------------------------------------------------------
# shears and transforms


def shear_matrix(m, delta: float = DELTA_DEFAULT):
    """Shear pair (Tn, Tn_inv) attached to a vector m with |m_d| >= delta.

    Tn is the identity except for the last row (-m_1/m_d, ..., -m_{d-1}/m_d, 1);
    Tn_inv flips those signs. With y = Tn z one has y . m = m_d z_d, so Tn maps
    {z_d > 0} onto {y . m > 0} when m_d > 0.
    """
    m = np.asarray(m, dtype=float)
    if abs(m[-1]) < delta:
        raise DegenerateDirectionError(
            f"|m_d| = {abs(m[-1]):.3g} below delta = {delta}: degenerate direction")
    d = m.size
    Tn = np.eye(d)
    Tn_inv = np.eye(d)
    Tn[-1, :-1] = -m[:-1] / m[-1]
    Tn_inv[-1, :-1] = m[:-1] / m[-1]
    return Tn, Tn_inv


def singular_value_lower_bound(T) -> float:
    """Lower bound ((d-1)/d)^{(d-1)/2} |det T| max(c_min/prod c, r_min/prod r)
    on the least singular value, with c and r the column and row norms."""
    T = np.asarray(T, dtype=float)
    d = T.shape[0]
    det = abs(np.linalg.det(T))
    c = np.linalg.norm(T, axis=0)
    r = np.linalg.norm(T, axis=1)
    if det == 0.0 or np.any(c == 0) or np.any(r == 0):
        return 0.0
    # products through logs to keep large d well scaled
    cc = c.min() / np.exp(np.sum(np.log(c)))
    rr = r.min() / np.exp(np.sum(np.log(r)))
    return float(((d - 1) / d) ** ((d - 1) / 2) * det * max(cc, rr))


@dataclass
class TransformedTensor:
    """Coefficients of z -> T^{-1} A(Tz) T^{-t} as a (possibly quasi-periodic) series.

    ``freqs`` are the real frequencies T^t xi; ``blocks`` are the congruent
    blocks. ``lam_lower`` is lambda_A * sigma_min(T^{-1})^2.
    """
    freqs: np.ndarray
    blocks: np.ndarray
    T: np.ndarray
    lam_lower: float

    def evaluate(self, z):
        z = np.asarray(z, dtype=float)
        phase = np.exp(2j * np.pi * (z @ self.freqs.T))
        return np.tensordot(phase, self.blocks, axes=([-1], [0])).real

    def integer_freqs(self, tol=1e-9):
        r = np.rint(self.freqs)
        if np.max(np.abs(r - self.freqs), initial=0.0) > tol:
            raise ValidationError("transformed frequencies are not integral")
        return r.astype(np.int64)

    def as_periodic(self):
        from .coeffs import PeriodicTensor
        return PeriodicTensor(self.integer_freqs(), self.blocks, closure=False, tol=1e-10,
                              lam=self.lam_lower)


def transform_tensor(t, T, lam: float | None = None) -> TransformedTensor:
    """Blockwise congruence B_ij = T^{-1} A_ij T^{-t} under the substitution y = T z.

    A frequency xi of A(y) becomes the frequency T^t xi of B(z), because
    exp(2 pi i xi . T z) = exp(2 pi i (T^t xi) . z).
    """
    T = np.asarray(T, dtype=float)
    if abs(np.linalg.det(T)) < 1e-14 * max(1.0, np.abs(T).max() ** T.shape[0]):
        raise ValueError("transformation matrix is singular")
    Ti = np.linalg.inv(T)
    blocks = np.einsum("ag,fghij,bh->fabij", Ti, t.values, Ti)
    smin = np.linalg.svd(Ti, compute_uv=False)[-1]
    lam = t.lam if lam is None else lam
    return TransformedTensor(t.freqs @ T, blocks, T, float(lam * smin ** 2))


@dataclass
class ShearFrame:
    """Change of variables y = T0 Tn z attached to a direction n and layer vector nu0.

    ``nu`` is the layer vector actually used (``nu0`` or ``-nu0``, chosen so that
    n . nu > 0), ``m = T0^t n`` whose last entry is n . nu.
    """
    n: np.ndarray
    nu: np.ndarray
    T0: np.ndarray
    T0_inv: np.ndarray
    m: np.ndarray
    Tn: np.ndarray
    Tn_inv: np.ndarray
    sigma_min_lb: float
    ellipticity_factor: float
    mirrored: bool = False

    @property
    def T(self):
        return self.T0 @ self.Tn

    @property
    def T_inv(self):
        return self.Tn_inv @ self.T0_inv

    @property
    def depth_scale(self) -> float:
        """y . n = depth_scale * z_d."""
        return float(self.m[-1])

    def y_freqs(self, strip_freqs):
        """y-frequencies T0^{-t} (zeta', 0) of strip modes zeta'."""
        z = np.asarray(strip_freqs, dtype=np.int64)
        full = np.hstack([z, np.zeros((len(z), 1), dtype=np.int64)])
        return full @ self.T0_inv

    def strip_freqs(self, y_freqs):
        """Tangential strip frequencies (T^t xi)' for layered y-frequencies xi."""
        xi = np.asarray(y_freqs, dtype=np.int64)
        w = xi @ self.T0  # rows: (T0^t xi)^t, integer; last entry xi . nu
        if np.any(w[:, -1] != 0):
            raise ValidationError("frequency is not layered with respect to nu0")
        return w[:, :-1]


def build_shear_frame(n, nu0, delta: float = DELTA_DEFAULT) -> ShearFrame:
    n = np.asarray(n, dtype=float)
    nu0 = np.asarray(nu0, dtype=np.int64)
    g = 0
    for x in nu0.tolist():
        g = math.gcd(g, x)
    if g == 0:
        raise ValueError("nu0 must be nonzero")
    nu = nu0 // g
    mirrored = False
    if n @ nu < 0:
        nu, mirrored = -nu, True
    if abs(n @ nu) < delta:
        raise DegenerateDirectionError(
            f"|n . nu0| = {abs(n @ nu):.3g} below delta = {delta}: degenerate direction")
    T0 = complete_unimodular(nu)
    T0_inv = unimodular_inverse(T0)
    m = T0.T.astype(float) @ n
    Tn, Tn_inv = shear_matrix(m, delta=delta)
    T_inv = Tn_inv @ T0_inv
    return ShearFrame(n, nu, T0, T0_inv, m, Tn, Tn_inv,
                      singular_value_lower_bound(Tn_inv),
                      singular_value_lower_bound(T_inv) ** 2, mirrored)


def rationalize(M, max_den: int = 10 ** 6):
    """Exact rational approximation of a matrix; returns (Fractions, max deviation)."""
    M = np.asarray(M)
    R = [[Fraction(x).limit_denominator(max_den) if not isinstance(x, Fraction) else x
          for x in row] for row in M.tolist()]
    dev = max((abs(float(r) - float(x)) for rr, xr in zip(R, M.tolist()) for r, x in zip(rr, xr)),
              default=0.0)
    return R, dev
