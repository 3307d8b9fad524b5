"""Periodic cell problems and the homogenized tensor.

For a tensor t and 1 <= gamma <= d the corrector chi^gamma (N x N valued,
zero mean) solves

    -div( t grad chi^gamma ) = d_alpha t^{alpha gamma}    on the torus,

column by column. Adjoint correctors chi^{*,gamma} are obtained by passing
``adjoint_tensor(A)``. The solve is Fourier-Galerkin on the frequencies
|xi|_inf <= K reachable from the right-hand side.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coeffs import PeriodicField, PeriodicTensor, RAYLEIGH_TOL
from .errors import SolverError, ValidationError
from .spectral import FreqIndex, box, coupling_pairs, reachable

TWO_PI = 2.0 * np.pi
RESIDUAL_TOL = 1e-10


def tensor_fingerprint(t: PeriodicTensor) -> str:
    h = hashlib.sha1()
    h.update(np.ascontiguousarray(t.freqs).tobytes())
    h.update(np.ascontiguousarray(t.values).tobytes())
    return h.hexdigest()[:16]


@dataclass
class Corrector:
    """One corrector chi^gamma as an N x N field with solve diagnostics."""
    gamma: int  # 1-based
    field: PeriodicField
    residual: float
    K: int
    fingerprint: str
    method: str

    @property
    def mean(self):
        return self.field.coefficient(np.zeros(self.field.d, dtype=int))

    def gradient_coeffs(self):
        """Coefficients of d_beta chi, shape (nf, d, N, N)."""
        f = self.field
        return TWO_PI * 1j * f.freqs[:, :, None, None] * f.values[:, None, :, :]


def _galerkin_matrix(t: PeriodicTensor, modes):
    """Sparse matrix of a(e_eta e_j, e_zeta e_i) = 4 pi^2 zeta A(zeta-eta) eta."""
    N, m = t.N, len(modes)
    a, b, k = coupling_pairs(modes, t.freqs)
    za, zb = modes[a].astype(float), modes[b].astype(float)
    blk = TWO_PI ** 2 * np.einsum("pa,pabij,pb->pij", za, t.values[k], zb)
    rows = (a[:, None, None] * N + np.arange(N)[None, :, None]).repeat(N, axis=2)
    cols = (b[:, None, None] * N + np.arange(N)[None, None, :]).repeat(N, axis=1)
    return sp.csr_matrix((blk.ravel(), (rows.ravel(), cols.ravel())), shape=(m * N, m * N))


def _rhs(t: PeriodicTensor, modes, gamma0):
    """Coefficients of d_alpha t^{alpha gamma}_{ik}: 2 pi i zeta_alpha c_zeta(t^{alpha gamma}_{ik})."""
    idx = FreqIndex(t.freqs).lookup(modes)
    vals = np.zeros((len(modes), t.d, t.d, t.N, t.N), dtype=complex)
    vals[idx >= 0] = t.values[idx[idx >= 0]]
    r = TWO_PI * 1j * np.einsum("ma,maik->mik", modes.astype(float), vals[:, :, gamma0])
    return r.reshape(len(modes) * t.N, t.N)


def _cg_normal(L, R, tol):
    """Jacobi-scaled conjugate gradients on the normal equations."""
    diag = np.abs(L.diagonal())
    if np.any(diag == 0):
        raise SolverError("zero diagonal in Galerkin operator")
    s = 1.0 / np.sqrt(diag)
    Ls = sp.diags(s) @ L @ sp.diags(s)
    LsH = Ls.conj().T.tocsr()
    op = spla.LinearOperator(Ls.shape, matvec=lambda x: LsH @ (Ls @ x), dtype=complex)
    X = np.zeros_like(R)
    for c in range(R.shape[1]):
        rhs = LsH @ (s * R[:, c])
        if not np.any(rhs):
            continue
        x, info = spla.cg(op, rhs, rtol=tol, atol=0.0, maxiter=20 * Ls.shape[0])
        if info != 0:
            raise SolverError(f"CG on normal equations did not converge (info={info})")
        X[:, c] = s * x
    return X


def solve_cell(t: PeriodicTensor, gamma: int, K: int, method: str = "auto",
               tol: float = RESIDUAL_TOL) -> Corrector:
    """Fourier-Galerkin corrector chi^gamma for the operator -div(t grad .).

    Parameters
    ----------
    t : PeriodicTensor
    gamma : int
        Direction index, 1-based.
    K : int
        Galerkin cutoff, must satisfy K >= K_A.
    method : {"auto", "dense", "cg"}
        "auto" uses a dense solve for d = 2 and CG on the normal equations otherwise.
    """
    if not 1 <= gamma <= t.d:
        raise ValueError("gamma must lie in 1..d")
    if K < t.K_A:
        raise ValueError("Galerkin cutoff K must be >= K_A")
    d, N = t.d, t.N
    fp = tensor_fingerprint(t)
    supp = t.support()
    nonzero = supp[np.any(supp != 0, axis=1)]
    modes = reachable(nonzero, supp, K) if len(nonzero) else np.zeros((0, d), dtype=np.int64)
    modes = modes[np.any(modes != 0, axis=1)]
    if len(modes) == 0:
        field = PeriodicField(np.zeros((1, d), dtype=int), np.zeros((1, N, N)))
        return Corrector(gamma, field, 0.0, K, fp, "trivial")
    L = _galerkin_matrix(t, modes)
    R = _rhs(t, modes, gamma - 1)
    rnorm = np.linalg.norm(R)
    if rnorm == 0.0:
        field = PeriodicField(np.zeros((1, d), dtype=int), np.zeros((1, N, N)))
        return Corrector(gamma, field, 0.0, K, fp, "trivial")
    if method == "auto":
        method = "dense" if d == 2 else "cg"
    if method == "dense":
        Ld = L.toarray()
        try:
            X = np.linalg.solve(Ld, R)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular Galerkin system (cond ~ {np.linalg.cond(Ld):.2e})") from exc
    elif method == "cg":
        X = _cg_normal(L, R, tol=min(1e-3 * tol, 1e-13))
    else:
        raise ValueError(f"unknown method {method!r}")
    res = float(np.linalg.norm(L @ X - R) / rnorm)
    if res > tol:
        raise SolverError(f"cell residual {res:.2e} exceeds {tol:.0e}")
    vals = X.reshape(len(modes), N, N)
    scale = max(1.0, float(np.abs(vals).max()))
    vals = np.where(np.abs(vals) < 1e-15 * scale, 0.0, vals)
    field = PeriodicField(modes, vals, closure=False, tol=1e-8)
    return Corrector(gamma, field, res, K, fp, method)


def solve_correctors(t: PeriodicTensor, K: int, method: str = "auto"):
    return [solve_cell(t, g, K, method=method) for g in range(1, t.d + 1)]


@dataclass
class HomogenizedTensor:
    blocks: np.ndarray  # (d, d, N, N) real
    lam0: float
    K: int

    @property
    def d(self):
        return self.blocks.shape[0]

    @property
    def N(self):
        return self.blocks.shape[2]

    @property
    def elliptic(self) -> bool:
        return self.lam0 > RAYLEIGH_TOL


def homogenized_tensor(t: PeriodicTensor, correctors) -> HomogenizedTensor:
    """A0^{ab}_{ij} = mean of A^{ab}_{ij} + A^{ag}_{ik} d_g (chi^b)_{kj}.

    ``correctors`` must be the non-adjoint set, one per direction, solved on ``t``.
    """
    d, N = t.d, t.N
    fp = tensor_fingerprint(t)
    if len(correctors) != d or sorted(c.gamma for c in correctors) != list(range(1, d + 1)):
        raise ValueError("need exactly one corrector per direction")
    if any(c.fingerprint != fp for c in correctors):
        raise ValueError("correctors were not solved on this tensor")
    A0 = t.mean_block().astype(complex)
    for c in sorted(correctors, key=lambda c: c.gamma):
        b = c.gamma - 1
        grad = c.gradient_coeffs()  # (nf, g, k, j)
        coef = np.array([t.coefficient(-w) for w in c.field.freqs])  # (nf, a, g, i, k)
        if len(coef):
            A0[:, b] += np.einsum("fagik,fgkj->aij", coef, grad)
    if np.max(np.abs(A0.imag)) > 1e-10 * max(1.0, np.abs(A0).max()):
        raise ValidationError("homogenized tensor has a significant imaginary part")
    A0 = A0.real
    S = A0.transpose(0, 2, 1, 3).reshape(d * N, d * N)
    lam0 = float(np.linalg.eigvalsh(0.5 * (S + S.T))[0])
    return HomogenizedTensor(A0, lam0, correctors[0].K)


def homogenize(t: PeriodicTensor, K: int, method: str = "auto") -> HomogenizedTensor:
    return homogenized_tensor(t, solve_correctors(t, K, method=method))
