"""Boundary-layer tails by the representation formula and by direct strip solves.

Sign convention. The integrated kernel is taken as I(n) = A(n)^{-1} with
a_kj(n) = -n^t A0_kj n, which is the value of int d_{z_d} G over the boundary
for the kernel normalized by div(B grad G) = delta (the negative of the
usual positive Green function). With that kernel, the bracketed formula

    v_xi(n) = sum_a I^a(n) [ M{A^{ba} v_xi} n_b + M{d_b (chi*^a)^t A^{bg} v_xi} n_g
                             + M{d_b (v*^a)^t A^{bg} v_xi} n_g ]

returns -I_N for constant coefficients and xi = 0, where the tail must be I_N.
The overall factor -1 applied in :func:`tail_via_formula` is the unique sign
fixing that case (equivalently, the bracket is paired with the positive kernel),
and route consistency against strip solves confirms it on variable laminates.

The means are hyperplane means: M{F e^{2 pi i xi . y}} = c_{-xi}(F) for periodic
F and irrational n, and the last term runs :func:`bltail.meanvalue.product_mean`
over the corrector frequencies T0^{-t} (Z^{d-1} x {0}).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from threading import Lock

import numpy as np
from scipy import integrate

from .cell import HomogenizedTensor, homogenize, solve_correctors
from .coeffs import PeriodicField, PeriodicTensor, adjoint_tensor
from .errors import (ConsistencyError, DegenerateDirectionError, DependencyError, SolverError,
                     ValidationError)
from .lattice import DELTA_DEFAULT, Direction, classify_direction
from .meanvalue import QuasiPeriodicSeries, product_mean
from .rotations import rotation
from .strip import (CorrectorStripData, boundary_gradient, decay_ok, extract_tail,
                    reduce_to_strip, solve_strip)

TWO_PI = 2.0 * np.pi
COND_MAX = 1e12


# ---------------------------------------------------------------------------
# integrated Green kernel


@dataclass
class IntegratedGreen:
    n: np.ndarray
    matrix: np.ndarray  # I(n), N x N
    A_n: np.ndarray  # a_kj(n) = -n^t A0_kj n
    cond: float

    def alpha(self, a: int):
        """I^a(n) = n_a I(n), ``a`` zero-based."""
        return self.n[a] * self.matrix

    @property
    def vectors(self):
        return self.n[:, None, None] * self.matrix[None]


def _blocks(A0):
    return A0.blocks if isinstance(A0, HomogenizedTensor) else np.asarray(A0, dtype=float)


def integrated_green(A0, n) -> IntegratedGreen:
    """Assemble A(n) and invert it."""
    B = _blocks(A0)
    if B.ndim == 2:
        B = B[:, :, None, None]
    n = n.n if isinstance(n, Direction) else np.asarray(n, dtype=float)
    An = -np.einsum("a,abkj,b->kj", n, B, n)
    cond = float(np.linalg.cond(An))
    if not cond < COND_MAX:
        raise ConsistencyError(f"A(n) has condition number {cond:.2e}; homogenized tensor not elliptic?")
    return IntegratedGreen(n, np.linalg.inv(An), An, cond)


def _upper_cholesky(B):
    """Upper-triangular R with B = R R^t (so the last row of R is (0, ..., r_dd))."""
    P = np.eye(len(B))[::-1]
    Lc = np.linalg.cholesky(P @ B @ P)
    return P @ Lc @ P


def image_method_integral(A0, n, epsabs: float = 1e-13) -> float:
    """Quadrature value of int d_{z_d} G(e_d, z) dz over the boundary, scalar A0.

    G is the half-space kernel of -div(B grad) with B = M^t A0 M built by the
    method of images after the map z = R w (B = R R^t upper triangular), which
    turns the operator into the Laplacian and keeps {z_d = 0}. Returned with
    the sign of the kernel normalized by div(B grad G) = delta, so
    that it is comparable with :func:`integrated_green`.
    """
    A0 = np.asarray(_blocks(A0), dtype=float)
    if A0.ndim == 4:
        if A0.shape[2:] != (1, 1):
            raise ValueError("image-method oracle is scalar only")
        A0 = A0[:, :, 0, 0]
    n = n.n if isinstance(n, Direction) else np.asarray(n, dtype=float)
    d = n.size
    M = rotation(n)
    B = M.T @ (0.5 * (A0 + A0.T)) @ M
    R = _upper_cholesky(B)
    Ri = np.linalg.inv(R)
    detR = float(np.prod(np.diag(R)))
    rdd = R[-1, -1]
    w = Ri[:, -1]  # R^{-1} e_d
    area = 2.0 * np.pi ** (d / 2) / math.gamma(d / 2)

    def dG(s):
        wt = Ri[:, :-1] @ np.asarray(s)  # R^{-1} (s, 0)
        r = np.linalg.norm(w - wt)
        # d/dw~_d of Phi(w - w~) - Phi(w - w~*) on w~_d = 0, the Poisson kernel
        return 2.0 * w[-1] / (area * r ** d) / (detR * rdd)

    if d == 2:
        val, _ = integrate.quad(lambda s: dG([s]), -np.inf, np.inf, epsabs=epsabs, epsrel=1e-12, limit=400)
    elif d == 3:
        # polar coordinates about the foot point of w in s-space
        c = np.linalg.lstsq(Ri[:, :-1], w - w[-1] * np.eye(d)[-1], rcond=None)[0]

        def radial(th):
            e = np.array([np.cos(th), np.sin(th)])
            f = lambda r: dG(c + r * e) * r
            return integrate.quad(f, 0, np.inf, epsabs=epsabs, epsrel=1e-12, limit=400)[0]

        val, _ = integrate.quad(radial, 0, 2 * np.pi, epsabs=epsabs, epsrel=1e-12, limit=200)
    else:
        raise ValueError("image-method oracle implemented for d in {2, 3}")
    return -float(val)


# ---------------------------------------------------------------------------
# Laplace oracle


def _unit(n):
    return n.n if isinstance(n, Direction) else np.asarray(n, dtype=float)


def laplace_oracle(v0: PeriodicField, n, y):
    """Explicit half-space solution of the Laplacian with data v0 at points y.

    u(y) = sum c_xi exp(-2 pi (|xi|^2 - (n.xi)^2)^{1/2} (y.n)) exp(2 pi i xi.(y - n (y.n))).
    """
    if isinstance(n, Direction) and n.rational:
        raise ValueError("Laplace oracle needs an irrational direction")
    nv = _unit(n)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    xi = v0.freqs.astype(float)
    nx = xi @ nv
    q = np.sum(xi * xi, axis=1) - nx ** 2
    nz = np.any(v0.freqs != 0, axis=1)
    if np.any(q[nz] <= 1e-14 * np.sum(xi[nz] ** 2, axis=1)):
        raise ValueError("xi parallel to n: direction is mis-classified as irrational")
    rate = TWO_PI * np.sqrt(np.maximum(q, 0.0))
    depth = y @ nv
    if np.any(depth < -1e-12):
        raise ValueError("point outside the closed half-space")
    tang = y - depth[:, None] * nv[None]
    phase = np.exp(-np.outer(depth, rate) + 2j * np.pi * tang @ xi.T)
    out = np.tensordot(phase, v0.values, axes=([1], [0]))
    return out[0] if out.shape[0] == 1 else out


def laplace_tail(v0: PeriodicField):
    return v0.coefficient(np.zeros(v0.d, dtype=int))


# ---------------------------------------------------------------------------
# representation formula


class _Shifted:
    """Coefficient view of F(y) e^{2 pi i xi . y}: c_w = c_{w - xi}(F)."""

    def __init__(self, series, xi, part=None):
        self.series, self.xi, self.part = series, np.asarray(xi, dtype=np.int64), part
        self.values = series.values if part is None else series.values[(slice(None),) + part]

    def coefficient(self, w):
        c = self.series.coefficient(np.asarray(w, dtype=np.int64) - self.xi)
        return c if self.part is None else c[self.part]


def _first_term(t: PeriodicTensor, xi, n):
    c = t.coefficient(-np.asarray(xi))  # (a, b, N, N): mean of A e^{2 pi i xi.y}
    return np.einsum("b,ba...->a...", n, c)  # index alpha


def _gradient_term(t, grad_freqs, grad_coeffs, T, xi, direction: Direction):
    """sum_{b,g} n_g M{ (d_b u^a)^t A^{bg} e^{2 pi i xi.y} } for u^a given by its gradient series.

    ``grad_coeffs[a]`` has shape (m, d, N, N); frequencies are ``T @ grad_freqs``.
    """
    d, N = t.d, t.N
    n = direction.n
    out = np.zeros((d, N, N), dtype=complex)
    for a in range(d):
        gc = grad_coeffs[a]
        for b in range(d):
            f = QuasiPeriodicSeries(T, grad_freqs, np.swapaxes(gc[:, b], -1, -2))
            for g in range(d):
                if n[g] == 0:
                    continue
                out[a] += n[g] * product_mean(f, _Shifted(t, xi, (b, g)), direction)
    return out


@dataclass
class FormulaTerms:
    first: np.ndarray  # (d, N, N)
    second: np.ndarray
    third: np.ndarray
    green: IntegratedGreen

    def value(self):
        S = np.einsum("a,aij->ij", self.green.n, self.first + self.second + self.third)
        return -self.green.matrix @ S


def tail_via_formula(t: PeriodicTensor, A0, chi_star, corr_data, xi, n, terms: bool = False):
    """v_xi(n) for boundary data e^{2 pi i xi.y} I_N by the representation formula.

    Parameters
    ----------
    t : PeriodicTensor
    A0 : HomogenizedTensor or (d, d, N, N) array
    chi_star : list of Corrector
        Adjoint cell correctors chi^{*,gamma}, one per direction.
    corr_data : list of CorrectorStripData
        Strip solutions of v^{*,gamma}_n from :func:`bltail.strip.solve_corrector`.
    xi : int vector
    n : Direction
        Must be irrational.
    """
    if not isinstance(n, Direction):
        n = classify_direction(np.asarray(n, dtype=float))
    if n.rational:
        raise ValueError("representation formula needs an irrational direction")
    d = t.d
    if chi_star is None or len(chi_star) != d:
        raise DependencyError("adjoint cell correctors missing")
    if corr_data is None or len(corr_data) != d:
        raise DependencyError("boundary-layer corrector gradients missing")
    chi = sorted(chi_star, key=lambda c: c.gamma)
    cd = sorted(corr_data, key=lambda c: c.gamma)
    xi = np.asarray(xi, dtype=np.int64)
    G = integrated_green(A0, n)
    first = _first_term(t, xi, n.n)
    I = [[int(i == j) for j in range(d)] for i in range(d)]
    second = _gradient_term(t, chi[0].field.freqs, [c.gradient_coeffs() for c in chi],
                            _frac(I), xi, n)
    frame = cd[0].solution.problem.frame
    y_freqs = frame.y_freqs(cd[0].solution.modes)
    for c in cd:
        if c.grad_y.shape != cd[0].grad_y.shape:
            raise ValidationError("corrector strip solutions use different mode sets")
    third = _gradient_term(t, y_freqs, [c.grad_y for c in cd], _frac(I), xi, n)
    ft = FormulaTerms(first, second, third, G)
    return ft if terms else ft.value()


def _frac(I):
    from fractions import Fraction
    return [[Fraction(x) for x in row] for row in I]


# ---------------------------------------------------------------------------
# tables and the cached solver


@dataclass
class TailEntry:
    xi: tuple
    n: np.ndarray
    matrix: np.ndarray
    route: str  # "formula" | "strip" | "laplace"
    err_bound: float
    rational: bool = False
    diagnostics: dict = field(default_factory=dict)

    def to_json(self):
        return {"n": [float(x) for x in self.n], "xi": list(self.xi),
                "matrix": {"re": self.matrix.real.tolist(), "im": self.matrix.imag.tolist()},
                "route": self.route, "err_bound": float(self.err_bound),
                "rational": bool(self.rational)}


def solve_diagnostics(sols) -> dict:
    """Acceptance-relevant checks over a group of strip solutions."""
    sols = list(sols)
    if not sols:
        return {}
    return {"decay_ok": all(decay_ok(s) for s in sols),
            "slope_max": max(s.slope for s in sols),
            "tau": min(s.tau for s in sols),
            "trace_error": max(s.trace_error for s in sols),
            "residual": max(s.residual for s in sols),
            "L": max(s.L for s in sols),
            "L_capped": any(s.L_capped for s in sols),
            "solves": len(sols)}


@dataclass
class TailTable:
    entries: list = field(default_factory=list)

    def add(self, e: TailEntry):
        self.entries.append(e)

    def lookup(self, xi, n, route=None, tol=1e-12):
        for e in self.entries:
            if tuple(e.xi) == tuple(xi) and np.allclose(e.n, n, atol=tol, rtol=0) and \
                    (route is None or e.route == route):
                return e
        raise DependencyError(f"no tail for xi={tuple(xi)} at n={np.round(n, 6).tolist()}")

    def to_json(self):
        return [e.to_json() for e in self.entries]

    def export(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))


def _auto_layer(xi, n, R: int = 3):
    from .spectral import box
    d = len(xi)
    cand = box(R, d)
    cand = cand[np.any(cand != 0, axis=1) & (cand @ xi == 0)]
    g = np.array([np.gcd.reduce(np.abs(c)) for c in cand])
    cand = cand[g == 1]
    score = np.abs(cand @ n) / np.linalg.norm(cand, axis=1)
    best = cand[int(np.argmax(score))]
    return best if best @ n >= 0 else -best


def _quantize(n, q=1e-12):
    return tuple(int(round(x / q)) for x in np.asarray(n, dtype=float))


class TailSolver:
    """Computes and memoizes v_xi(n) by the strip, formula and Laplace routes.

    Corrector strip solves are shared across xi for each direction. With
    ``refine`` the strip work is repeated at depth step 2h and both routes
    return the Richardson value t_h + (t_h - t_2h)/3, whose difference from t_h
    is the grid-refinement error estimate.
    """

    def __init__(self, t: PeriodicTensor, nu0, K_cell: int | None = None, K_t: int | None = None,
                 h: float = 1.0 / 64, delta: float = DELTA_DEFAULT, tol: float = 1e-10,
                 L_max: float = 60.0, refine: bool = True, classify_Q: int | None = None):
        self.t = t
        self.auto_nu = isinstance(nu0, str)
        if self.auto_nu:
            if nu0 != "auto":
                raise ValueError("nu0 must be an integer vector or 'auto'")
            if np.any(np.abs(t.values[np.any(t.freqs != 0, axis=1)]) > 0):
                raise ValidationError("nu0='auto' needs a constant tensor (layered in every direction)")
            self.nu0 = None
        else:
            self.nu0 = np.asarray(nu0, dtype=np.int64)
        self.K_cell = max(t.K_A, 8) if K_cell is None else K_cell
        self.K_t = self.K_cell if K_t is None else K_t
        self.h, self.delta, self.tol, self.L_max, self.refine = h, delta, tol, L_max, refine
        self.classify_Q = classify_Q
        self.ts = adjoint_tensor(t)
        self._A0 = None
        self._chi_star = None
        self._corr = {}
        self._cache = {}
        self._lock = Lock()

    @property
    def A0(self) -> HomogenizedTensor:
        if self._A0 is None:
            self._A0 = homogenize(self.t, self.K_cell)
        return self._A0

    @property
    def chi_star(self):
        if self._chi_star is None:
            self._chi_star = solve_correctors(self.ts, self.K_cell)
        return self._chi_star

    def direction(self, n) -> Direction:
        if isinstance(n, Direction):
            return n
        return classify_direction(np.asarray(n, dtype=float), Q=self.classify_Q, nu0=self.nu0)

    def layer_vector(self, xi, n: Direction):
        """nu0, or for constant tensors the primitive nu with xi . nu = 0 maximizing |n . nu| / |nu|."""
        if not self.auto_nu:
            return self.nu0
        return _auto_layer(np.asarray(xi, dtype=np.int64), n.n)

    def _strip_kw(self, h):
        return dict(delta=self.delta, K_t=self.K_t, h=h, tol=self.tol, L_max=self.L_max)

    def _corrector_solutions(self, n: Direction, h, nu):
        out = []
        for c in self.chi_star:
            prob = reduce_to_strip(self.ts, c.field.scaled(-1.0), n, nu, **self._strip_kw(h))
            sol = solve_strip(prob)
            gz, gy = boundary_gradient(sol)
            out.append(CorrectorStripData(c.gamma, sol, prob.frame.y_freqs(sol.modes), gz, gy))
        return out

    def corrector_data(self, n, nu=None):
        """(data at h, data at 2h or None) for all gamma; memoized per direction."""
        n = self.direction(n)
        nu = self.layer_vector(np.zeros(self.t.d, dtype=int), n) if nu is None else nu
        key = _quantize(n.n) + tuple(int(v) for v in nu)
        if key not in self._corr:
            fine = self._corrector_solutions(n, self.h, nu)
            coarse = self._corrector_solutions(n, 2 * self.h, nu) if self.refine else None
            with self._lock:
                self._corr[key] = (fine, coarse)
        return self._corr[key]

    def _memo(self, route, xi, n, fn):
        xi = tuple(int(x) for x in xi)
        key = (route, xi, _quantize(n.n))
        if key in self._cache:
            return self._cache[key]
        mkey = (route, tuple(-x for x in xi), key[2])
        if self.t.hermitian and mkey in self._cache:
            # real coefficients: the tail of conj(data) is conj(tail)
            m = self._cache[mkey]
            e = TailEntry(xi, m.n, m.matrix.conj(), m.route, m.err_bound, m.rational, m.diagnostics)
        else:
            e = fn()
        with self._lock:
            self._cache[key] = e
        return e

    def formula(self, xi, n) -> TailEntry:
        n = self.direction(n)

        def run():
            fine, coarse = self.corrector_data(n)
            v = tail_via_formula(self.t, self.A0, self.chi_star, fine, xi, n)
            trunc = max(extract_tail(c.solution, grad_threshold=np.inf)[1] for c in fine)
            err = trunc
            if coarse is not None:
                v2 = tail_via_formula(self.t, self.A0, self.chi_star, coarse, xi, n)
                corr = (v - v2) / 3.0
                v = v + corr
                err += float(np.abs(corr).max())
            sols = [c.solution for c in fine + (coarse or [])]
            return TailEntry(tuple(int(x) for x in xi), n.n, v, "formula", err, n.rational,
                             solve_diagnostics(sols))

        return self._memo("formula", xi, n, run)

    def strip(self, xi, n) -> TailEntry:
        n = self.direction(n)

        def run():
            v0 = PeriodicField.exponential(xi, N=self.t.N)
            nu = self.layer_vector(xi, n)
            sol = solve_strip(reduce_to_strip(self.t, v0, n, nu, **self._strip_kw(self.h)))
            tail, err = extract_tail(sol)
            sols = [sol]
            if self.refine:
                sol2 = solve_strip(reduce_to_strip(self.t, v0, n, nu, **self._strip_kw(2 * self.h)))
                corr = (tail - extract_tail(sol2)[0]) / 3.0
                tail = tail + corr
                err += float(np.abs(corr).max())
                sols.append(sol2)
            return TailEntry(tuple(int(x) for x in xi), n.n, tail.reshape(self.t.N, self.t.N),
                             "strip", err, n.rational, solve_diagnostics(sols))

        return self._memo("strip", xi, n, run)

    def strip_solution(self, xi, n):
        """Uncached strip solve for data e^{2 pi i xi . y} I_N (profiles, diagnostics)."""
        n = self.direction(n)
        v0 = PeriodicField.exponential(xi, N=self.t.N)
        return solve_strip(reduce_to_strip(self.t, v0, n, self.layer_vector(xi, n),
                                           **self._strip_kw(self.h)))

    def laplace(self, xi, n) -> TailEntry:
        n = self.direction(n)
        v = np.eye(self.t.N, dtype=complex) if not np.any(xi) else np.zeros((self.t.N,) * 2, dtype=complex)
        return TailEntry(tuple(int(x) for x in xi), n.n, v, "laplace", 0.0, n.rational)

    def tail(self, xi, n, route: str = "formula") -> TailEntry:
        """Tail by ``route``; "auto" tries the strip and falls back to the formula
        when the data is not layered or the strip is degenerate or unconverged."""
        if route == "auto":
            n = self.direction(n)
            try:
                return self.strip(xi, n)
            except (ValidationError, DegenerateDirectionError, SolverError):
                return self.formula(xi, n)
        if route == "formula":
            return self.formula(xi, n)
        if route == "strip":
            return self.strip(xi, n)
        if route == "laplace":
            return self.laplace(xi, n)
        raise ValueError(f"unknown route {route!r}")
