"""Boundary-layer problems for layered media on a truncated periodic strip.

Pipeline: substitute y = T0 u with T0 in SL(d, Z) and T0 e_d = nu0, then
u = Tn z with the shear built from m = T0^t n. The half-space {y . n > 0}
becomes {z_d > 0} with y . n = (n . nu0) z_d, and a coefficient frequency xi
(xi . nu0 = 0) becomes the depth-independent tangential frequency (T0^t xi)'.

The strip problem

    -div_z( B(z') grad_z w ) = 0,   w(z', 0) = data(z'),

is discretized spectrally in z' (Galerkin on |zeta'|_inf <= K_t) and with
piecewise-linear elements in depth t = z_d (blended mass, exact first-order
coupling terms), which is second-order accurate in h. At the artificial
boundary t = L the natural (zero conormal flux) condition is used.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coeffs import PeriodicField, PeriodicTensor, adjoint_tensor, check_layered
from .cell import Corrector, tensor_fingerprint
from .errors import SolverError, ValidationError
from .lattice import (DELTA_DEFAULT, Direction, ShearFrame, build_shear_frame,
                      classify_direction, transform_tensor)
from .spectral import FreqIndex, coupling_pairs, reachable

TWO_PI = 2.0 * np.pi
RESIDUAL_TOL = 1e-10
MASS_BLEND = 1.0 / 12.0  # 0: lumped, 1/6: consistent


@dataclass
class StripProblem:
    """Depth-independent strip coefficients plus Dirichlet data in z'."""
    coeff_freqs: np.ndarray  # (nf, d-1) int
    coeff_blocks: np.ndarray  # (nf, d, d, N, N)
    data_freqs: np.ndarray  # (nd, d-1) int
    data_values: np.ndarray  # (nd, N, ncols)
    lam_A: float
    norm_A: float
    lam_B: float
    frame: ShearFrame | None = None
    direction: Direction | None = None
    K_t: int = 16
    h: float = 1.0 / 32
    L: float | None = None
    tol: float = 1e-10
    L_max: float = 60.0
    delta: float = DELTA_DEFAULT

    @property
    def d(self):
        return self.coeff_blocks.shape[1]

    @property
    def N(self):
        return self.coeff_blocks.shape[3]

    @property
    def ncols(self):
        return self.data_values.shape[2]

    @property
    def rational(self) -> bool:
        return bool(self.direction is not None and self.direction.rational)


def reduce_to_strip(t: PeriodicTensor, v0: PeriodicField, n, nu0, *, delta: float = DELTA_DEFAULT,
                    K_t: int = 16, h: float = 1.0 / 32, L: float | None = None,
                    tol: float = 1e-10, L_max: float = 60.0, Q: int | None = None,
                    classify: bool = True) -> StripProblem:
    """Change variables y = T0 Tn z and return the strip problem.

    ``n`` may be a unit vector or a classified :class:`Direction`. Rational
    directions are allowed and flagged through ``problem.rational``.
    """
    if isinstance(n, Direction):
        direction, nvec = n, n.n
    else:
        nvec = np.asarray(n, dtype=float)
        direction = classify_direction(nvec, Q=Q, nu0=nu0) if classify else None
    if not check_layered(t, nu0):
        raise ValidationError("tensor is not layered with respect to nu0")
    if not check_layered(v0, nu0):
        raise ValidationError("boundary data is not layered with respect to nu0")
    frame = build_shear_frame(nvec, nu0, delta=delta)
    tt = transform_tensor(t, frame.T)
    cf = frame.strip_freqs(t.freqs)
    if np.max(np.abs(tt.freqs[:, :-1] - cf), initial=0.0) > 1e-9 or \
            np.max(np.abs(tt.freqs[:, -1]), initial=0.0) > 1e-9:
        raise ValidationError("strip coefficients are not depth independent")
    df = frame.strip_freqs(v0.freqs)
    return StripProblem(cf, tt.blocks, df, v0.as_columns(), t.lam, t.norm_inf, tt.lam_lower,
                        frame, direction, K_t, h, L, tol, L_max, delta)


def select_decay_rate(problem, delta: float) -> float:
    """Guaranteed decay rate tau = lambda_A delta^4 / (4 ||A||_inf)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if isinstance(problem, PeriodicTensor):
        lam, norm = problem.lam, problem.norm_inf
    else:
        lam, norm = problem.lam_A, problem.norm_A
    tau = lam * delta ** 4 / (4.0 * norm)
    if not tau > 0:
        raise ValueError("non-positive decay rate; tensor is not elliptic")
    return float(tau)


# ---------------------------------------------------------------------------
# assembly


@dataclass
class _Operators:
    modes: np.ndarray
    zero: int
    P: sp.csr_matrix
    Q1: sp.csr_matrix
    Q2: sp.csr_matrix
    S: sp.csr_matrix


def _modes(problem: StripProblem):
    dm = problem.d - 1
    seeds = np.vstack([np.zeros((1, dm), dtype=np.int64), problem.data_freqs])
    supp_mask = np.max(np.abs(problem.coeff_blocks.reshape(len(problem.coeff_blocks), -1)),
                       axis=1, initial=0.0) > 0
    gens = problem.coeff_freqs[supp_mask]
    if np.max(np.abs(problem.data_freqs), initial=0) > problem.K_t:
        raise ValidationError("boundary data exceeds the tangential cutoff K_t")
    return reachable(seeds, gens, problem.K_t)


def _operators(problem: StripProblem) -> _Operators:
    modes = _modes(problem)
    m, N, d = len(modes), problem.N, problem.d
    a, b, k = coupling_pairs(modes, problem.coeff_freqs)
    rows = (a[:, None, None] * N + np.arange(N)[None, :, None]).repeat(N, axis=2).ravel()
    cols = (b[:, None, None] * N + np.arange(N)[None, None, :]).repeat(N, axis=1).ravel()
    shape = (m * N, m * N)

    def conv(al, be):
        vals = problem.coeff_blocks[k, al, be].ravel()
        return sp.csr_matrix((vals, (rows, cols)), shape=shape)

    D = [sp.diags(np.repeat(TWO_PI * 1j * modes[:, q].astype(float), N)) for q in range(d - 1)]
    dd = d - 1
    P = conv(dd, dd)
    Q1 = sp.csr_matrix(shape, dtype=complex)
    Q2 = sp.csr_matrix(shape, dtype=complex)
    S = sp.csr_matrix(shape, dtype=complex)
    for q in range(dd):
        Q1 = Q1 + conv(dd, q) @ D[q]
        Q2 = Q2 + D[q].conj() @ conv(q, dd)
        for r in range(dd):
            S = S + D[q].conj() @ conv(q, r) @ D[r]
    zero = int(FreqIndex(modes).lookup(np.zeros((1, dd), dtype=np.int64))[0])
    return _Operators(modes, zero, P.tocsr(), Q1.tocsr(), Q2.tocsr(), S.tocsr())


def spectral_decay_rate(ops: _Operators) -> float:
    """Slowest decay rate of the semi-discrete depth ODE -P w'' + (Q2 - Q1) w' + S w = 0.

    Solutions e^{mu t} v give the quadratic eigenproblem, linearized to a
    generalized eigenproblem of twice the size.
    """
    n = ops.P.shape[0]
    P, S, C = ops.P.toarray(), ops.S.toarray(), (ops.Q2 - ops.Q1).toarray()
    I, Z = np.eye(n), np.zeros((n, n))
    A = np.block([[Z, I], [S, C]])
    B = np.block([[I, Z], [Z, P]])
    mu = sla.eigvals(A, B)
    mu = mu[np.isfinite(mu)]
    dec = -mu.real[mu.real < -1e-9]
    return float(dec.min()) if dec.size else math.inf


def _depth_matrices(J: int, h: float):
    main = np.full(J + 1, 2.0 / h)
    main[0] = main[-1] = 1.0 / h
    Kt = sp.diags([np.full(J, -1.0 / h), main, np.full(J, -1.0 / h)], [-1, 0, 1])
    gd = np.zeros(J + 1)
    gd[0], gd[-1] = -0.5, 0.5
    G = sp.diags([np.full(J, 0.5), gd, np.full(J, -0.5)], [-1, 0, 1])  # int phi_i' phi_j
    # mass: average of the lumped and consistent P1 matrices (weight MASS_BLEND
    # on the neighbours); removes the leading dispersion error of e^{-kt} modes
    a = MASS_BLEND
    md = np.full(J + 1, (1.0 - 2.0 * a) * h)
    md[0] = md[-1] = (0.5 - a) * h
    Mt = sp.diags([np.full(J, a * h), md, np.full(J, a * h)], [-1, 0, 1])
    return Kt.tocsr(), G.tocsr(), Mt.tocsr()


@dataclass
class StripSolution:
    problem: StripProblem
    modes: np.ndarray  # (m, d-1)
    zero: int
    t: np.ndarray  # (J+1,)
    W: np.ndarray  # (J+1, m, N, ncols) Fourier depth profiles c_zeta(t)
    flux0: np.ndarray  # (m, N, ncols) conormal flux e_d . B grad w at t = 0
    dW0: np.ndarray  # (m, N, ncols) depth derivative at t = 0
    grad_norm: np.ndarray  # (J+1,) l1 bound of |grad_z w(., t)|_inf
    rate: float  # spectral decay rate used for L and error bounds
    tau: float  # guaranteed rate
    slope: float  # fitted slope of log grad_norm
    residual: float
    L: float
    h: float
    L_capped: bool
    trace_error: float

    @property
    def data_coeffs(self):
        out = np.zeros((len(self.modes),) + self.problem.data_values.shape[1:], dtype=complex)
        idx = FreqIndex(self.modes).lookup(self.problem.data_freqs)
        np.add.at(out, idx, self.problem.data_values)
        return out

    def profile(self, zeta):
        k = int(FreqIndex(self.modes).lookup(np.atleast_2d(zeta))[0])
        if k < 0:
            return np.zeros((len(self.t),) + self.W.shape[2:], dtype=complex)
        return self.W[:, k]

    def evaluate(self, zp, t_index=None):
        """w at tangential points zp (P, d-1); all depths unless ``t_index`` given."""
        zp = np.atleast_2d(np.asarray(zp, dtype=float))
        phase = np.exp(2j * np.pi * zp @ self.modes.T)  # (P, m)
        W = self.W if t_index is None else self.W[t_index][None]
        return np.einsum("pm,tmic->tpic", phase, W)

    def to_profile_json(self):
        rows = []
        for k, z in enumerate(self.modes.tolist()):
            for i in range(self.W.shape[2]):
                for c in range(self.W.shape[3]):
                    prof = self.W[:, k, i, c]
                    rows.append({"xi": z, "component": [i, c], "t": self.t.tolist(),
                                 "re": prof.real.tolist(), "im": prof.imag.tolist()})
        return rows

    def export(self, csv_path=None, json_path=None, raster: int = 16):
        if json_path is not None:
            Path(json_path).write_text(json.dumps(self.to_profile_json()))
        if csv_path is not None:
            dm = self.modes.shape[1]
            g = np.meshgrid(*([np.arange(raster) / raster] * dm), indexing="ij")
            zp = np.stack([x.ravel() for x in g], axis=1)
            vals = self.evaluate(zp)  # (T, P, N, c)
            head = [f"z{q + 1}" for q in range(dm)] + ["t"]
            comps = [(i, c) for i in range(vals.shape[2]) for c in range(vals.shape[3])]
            head += [f"{p}_{i}_{c}" for i, c in comps for p in ("re", "im")]
            lines = [",".join(head)]
            for ti, tv in enumerate(self.t):
                for p, z in enumerate(zp):
                    cells = [f"{x:.6g}" for x in z] + [f"{tv:.8g}"]
                    for i, c in comps:
                        v = vals[ti, p, i, c]
                        cells += [f"{v.real:.12g}", f"{v.imag:.12g}"]
                    lines.append(",".join(cells))
            Path(csv_path).write_text("\n".join(lines) + "\n")


def _grad_norms(W, modes, h):
    """l1 bound of the sup norm of grad_z w per depth."""
    dW = np.gradient(W, h, axis=0, edge_order=2)
    tang = TWO_PI * np.abs(W) * np.sum(np.abs(modes), axis=1)[None, :, None, None]
    tot = np.sum(tang + np.abs(dW), axis=1)  # (T, N, c)
    return tot.reshape(len(W), -1).max(axis=1)


def _fit_slope(t, g, L):
    """Least-squares slope of log g on the second half of the resolved range."""
    if g.max() <= 0:
        return -math.inf
    ok = (g > 1e-12 * g.max()) & (t <= L - 1.0)
    if ok.sum() < 4:
        return -math.inf
    tv = t[ok]
    sel = tv >= tv[0] + 0.5 * (tv[-1] - tv[0])
    if sel.sum() < 3:
        sel = np.ones_like(tv, dtype=bool)
    return float(np.polyfit(tv[sel], np.log(g[ok][sel]), 1)[0])


def solve_strip(problem: StripProblem) -> StripSolution:
    """Solve the truncated strip problem and collect profiles, flux and diagnostics."""
    ops = _operators(problem)
    m, N, nc = len(ops.modes), problem.N, problem.ncols
    rate = spectral_decay_rate(ops)
    tau = select_decay_rate(problem, problem.delta)
    capped = False
    if problem.L is not None:
        L = float(problem.L)
    else:
        r_use = max(rate, tau)
        L = max(5.0, math.ceil(math.log(1.0 / problem.tol) / r_use) + 2.0) if math.isfinite(r_use) else 5.0
        if L > problem.L_max:
            L, capped = float(problem.L_max), True
    J = max(2, int(round(L / problem.h)))
    h = L / J
    Kt, G, Mt = _depth_matrices(J, h)
    A = (sp.kron(Kt, ops.P) + sp.kron(G, ops.Q1) + sp.kron(G.T, ops.Q2) + sp.kron(Mt, ops.S)).tocsr()
    nb = m * N
    W0 = np.zeros((m, N, nc), dtype=complex)
    np.add.at(W0, FreqIndex(ops.modes).lookup(problem.data_freqs), problem.data_values)
    W0f = W0.reshape(nb, nc)
    A_II = A[nb:, nb:].tocsc()
    A_I0 = A[nb:, :nb]
    rhs = -(A_I0 @ W0f)
    try:
        lu = spla.splu(A_II, permc_spec="MMD_AT_PLUS_A")
        X = lu.solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"strip factorization failed: {exc}") from exc
    rn = np.linalg.norm(rhs)
    res = float(np.linalg.norm(A_II @ X - rhs) / rn) if rn > 0 else 0.0
    if res > RESIDUAL_TOL:
        raise SolverError(f"strip residual {res:.2e} exceeds {RESIDUAL_TOL:.0e} (m={m}, J={J})")
    Wf = np.vstack([W0f, X])
    flux0 = -(A[:nb, :] @ Wf).reshape(m, N, nc)
    dW0 = np.linalg.solve(ops.P.toarray(), flux0.reshape(nb, nc) - ops.Q1 @ W0f).reshape(m, N, nc)
    W = Wf.reshape(J + 1, m, N, nc)
    t = np.linspace(0.0, L, J + 1)
    g = _grad_norms(W, ops.modes, h)
    trace_err = float(np.max(np.abs(W[0] - W0), initial=0.0))
    return StripSolution(problem, ops.modes, ops.zero, t, W, flux0, dW0, g, rate, tau,
                         _fit_slope(t, g, L), res, L, h, capped, trace_err)


def extract_tail(sol: StripSolution, grad_threshold: float | None = None):
    """Slab average of w over depths [L-1, L] and its error bound.

    The bound is C_emp e^{-r (L-1)} / r where r is the decay rate used to pick
    L and C_emp = max_t |grad w(t)| e^{r t} over the resolved range.
    """
    g = sol.grad_norm
    scale = max(1.0, float(np.abs(sol.problem.data_values).max()), float(g[0]))
    thr = 1e-6 * scale if grad_threshold is None else grad_threshold
    if g[-1] > thr:
        raise SolverError(f"top-layer gradient {g[-1]:.2e} above {thr:.1e}; increase L")
    sel = sol.t >= sol.L - 1.0 - 1e-12
    prof = sol.W[sel, sol.zero]  # (nt, N, c)
    tail = np.trapezoid(prof, sol.t[sel], axis=0) / (sol.t[sel][-1] - sol.t[sel][0])
    r = sol.rate if math.isfinite(sol.rate) else 1.0
    r = max(r, sol.tau)
    res = sol.t <= sol.L - 1.0
    c_emp = float(np.max(g[res] * np.exp(r * sol.t[res]), initial=0.0))
    err = c_emp * math.exp(-r * (sol.L - 1.0)) / r
    return tail, err


def decay_ok(sol: StripSolution) -> bool:
    """Measured slope of log |grad w| is at most -tau."""
    return sol.slope <= -sol.tau


# ---------------------------------------------------------------------------
# boundary-layer correctors


@dataclass
class CorrectorStripData:
    """Strip solution for v^{*,gamma} with data -chi^{*,gamma}, and its boundary gradient.

    ``grad_y[k, beta]`` is the coefficient of d_{y_beta} v^{*,gamma} at the
    y-frequency ``y_freqs[k] = T0^{-t} (zeta_k, 0)`` on the hyperplane y . n = 0.
    """
    gamma: int
    solution: StripSolution
    y_freqs: np.ndarray  # (m, d)
    grad_z: np.ndarray  # (m, d, N, N)
    grad_y: np.ndarray  # (m, d, N, N)

    @property
    def profiles(self):
        return self.solution.W

    @property
    def dprofiles0(self):
        return self.solution.dW0


def boundary_gradient(sol: StripSolution):
    """grad_z and grad_y coefficients of w at t = 0 (chain rule grad_y = T^{-t} grad_z)."""
    W0 = sol.W[0]
    tang = TWO_PI * 1j * sol.modes[:, :, None, None].astype(float) * W0[:, None]
    grad_z = np.concatenate([tang, sol.dW0[:, None]], axis=1)
    Ti = sol.problem.frame.T_inv
    grad_y = np.einsum("ab,kaic->kbic", Ti, grad_z)
    return grad_z, grad_y


def solve_corrector(t: PeriodicTensor, gamma: int, n, nu0, chi_star: Corrector,
                    **strip_kw) -> CorrectorStripData:
    """Boundary-layer corrector v^{*,gamma}: adjoint operator with data -chi^{*,gamma}."""
    ts = adjoint_tensor(t)
    if chi_star.fingerprint != tensor_fingerprint(ts):
        raise ValueError("chi_star must be solved on the adjoint tensor")
    if chi_star.gamma != gamma:
        raise ValueError("corrector index mismatch")
    data = chi_star.field.scaled(-1.0)
    prob = reduce_to_strip(ts, data, n, nu0, **strip_kw)
    sol = solve_strip(prob)
    gz, gy = boundary_gradient(sol)
    return CorrectorStripData(gamma, sol, prob.frame.y_freqs(sol.modes), gz, gy)
