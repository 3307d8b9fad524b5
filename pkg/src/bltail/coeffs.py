"""Periodic coefficient tensors and periodic fields stored as finite Fourier series.

A series is a list of integer frequencies ``freqs`` of shape ``(nf, d)`` and a
matching array of complex coefficients ``values`` of shape ``(nf, *vshape)``,
representing

    f(y) = sum_k values[k] * exp(2 pi i freqs[k] . y).

Tensor coefficients use ``vshape = (d, d, N, N)`` indexed ``[alpha, beta, i, j]``,
so that ``values[k, a, b, i, j]`` is the coefficient of ``A^{ab}_{ij}``.
Fields (boundary data, correctors) use ``vshape = (N,)`` or ``(N, N)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

HERMITIAN_TOL = 1e-12
RAYLEIGH_TOL = 1e-12


def _freq_array(freqs, d=None):
    arr = np.asarray(freqs)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, d or 0)
    if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ValidationError("frequencies must be integer vectors")
    arr = arr.astype(np.int64)
    if d is not None and arr.shape[1] != d:
        raise ValidationError(f"frequency dimension {arr.shape[1]} != {d}")
    return arr


def _hermitian_closure(freqs, values, insert, tol):
    """Check (and optionally complete) the pairing c_{-xi} = conj(c_xi)."""
    index = {}
    for k, f in enumerate(map(tuple, freqs)):
        if f in index:
            raise ValidationError(f"duplicate frequency {f}")
        index[f] = k
    scale = max(1.0, float(np.max(np.abs(values)))) if values.size else 1.0
    extra_f, extra_v = [], []
    for k, f in enumerate(map(tuple, freqs)):
        neg = tuple(-x for x in f)
        if neg in index:
            err = np.max(np.abs(values[index[neg]] - np.conj(values[k])), initial=0.0)
            if err > tol * scale:
                raise ValidationError(
                    f"conjugate pair {f}/{neg} violates Hermitian symmetry (err {err:.3e})")
        elif insert:
            extra_f.append(neg)
            extra_v.append(np.conj(values[k]))
        else:
            raise ValidationError(f"missing conjugate pair for frequency {f}")
    if extra_f:
        freqs = np.vstack([freqs, np.array(extra_f, dtype=np.int64)])
        values = np.concatenate([values, np.array(extra_v)], axis=0)
    return freqs, values


class FourierSeries:
    """Finite real-valued Fourier series on the torus R^d / Z^d.

    Parameters
    ----------
    freqs : array_like, shape (nf, d)
        Integer frequencies.
    values : array_like, shape (nf, *vshape)
        Complex coefficients.
    closure : bool
        If True, missing conjugate partners are inserted; otherwise a missing
        partner raises :class:`ValidationError`.
    """

    def __init__(self, freqs, values, d=None, closure=False, tol=HERMITIAN_TOL):
        values = np.asarray(values, dtype=complex)
        freqs = _freq_array(freqs, d)
        if values.shape[0] != freqs.shape[0]:
            raise ValidationError("freqs and values disagree in length")
        freqs, values = _hermitian_closure(freqs, values, closure, tol)
        order = np.lexsort(freqs.T[::-1]) if freqs.shape[0] else np.arange(0)
        self.freqs = freqs[order]
        self.values = values[order]
        self.freqs.setflags(write=False)
        self.values.setflags(write=False)
        self._index = {tuple(f): k for k, f in enumerate(self.freqs.tolist())}
        self.hermitian = True

    @property
    def d(self) -> int:
        return self.freqs.shape[1]

    @property
    def vshape(self):
        return self.values.shape[1:]

    @property
    def cutoff(self) -> int:
        """Largest sup-norm of a stored frequency."""
        return int(np.max(np.abs(self.freqs))) if self.freqs.size else 0

    def coefficient(self, xi):
        """Coefficient at frequency ``xi`` (zeros if not stored)."""
        k = self._index.get(tuple(int(x) for x in xi))
        if k is None:
            return np.zeros(self.vshape, dtype=complex)
        return self.values[k]

    def support(self, tol=0.0):
        """Frequencies whose coefficient block is nonzero."""
        mask = np.max(np.abs(self.values.reshape(len(self.freqs), -1)), axis=1, initial=0.0) > tol
        return self.freqs[mask]

    def evaluate(self, y):
        """Evaluate at points ``y`` of shape (..., d).

        Returns real values for Hermitian series and complex values otherwise.
        """
        y = np.asarray(y, dtype=float)
        phase = np.exp(2j * np.pi * (y @ self.freqs.T))
        out = np.tensordot(phase, self.values, axes=([-1], [0]))
        return out.real if self.hermitian else out


class PeriodicField(FourierSeries):
    """Periodic boundary data or corrector with vector or matrix values."""

    def __init__(self, freqs, values, d=None, closure=False, tol=HERMITIAN_TOL):
        super().__init__(freqs, values, d=d, closure=closure, tol=tol)
        if self.values.ndim not in (2, 3):
            raise ValidationError("field values must be N-vectors or N x N matrices")

    @property
    def N(self) -> int:
        return self.vshape[0]

    @classmethod
    def constant(cls, value, d):
        value = np.atleast_1d(np.asarray(value, dtype=complex))
        return cls(np.zeros((1, d), dtype=int), value[None])

    @classmethod
    def exponential(cls, xi, N=1, amplitude=None):
        """Complex data ``amplitude * exp(2 pi i xi . y)`` (no conjugate partner).

        The series is not real-valued when ``xi != 0``; it is accepted because
        the boundary problems are linear and solved mode by mode.
        """
        xi = np.asarray(xi, dtype=int)
        amp = np.eye(N, dtype=complex) if amplitude is None else np.asarray(amplitude, dtype=complex)
        field = cls.__new__(cls)
        FourierSeries._init_unchecked(field, xi[None], amp[None])
        return field

    def scaled(self, factor):
        out = PeriodicField.__new__(PeriodicField)
        FourierSeries._init_unchecked(out, self.freqs, factor * self.values,
                                      self.hermitian and np.isrealobj(factor))
        return out

    def as_columns(self):
        """Values reshaped to (nf, N, ncols)."""
        v = self.values
        return v[:, :, None] if v.ndim == 2 else v


def _init_unchecked(self, freqs, values, hermitian=False):
    self.freqs = np.array(freqs, dtype=np.int64).reshape(len(values), -1)
    self.values = np.array(values, dtype=complex)
    self.freqs.setflags(write=False)
    self.values.setflags(write=False)
    self._index = {tuple(f): k for k, f in enumerate(self.freqs.tolist())}
    self.hermitian = hermitian


FourierSeries._init_unchecked = staticmethod(_init_unchecked)


class PeriodicTensor(FourierSeries):
    """Coefficient tensor A^{ab}_{ij}(y) with blocks of shape (d, d, N, N).

    ``lam`` and ``Lam`` are optional ellipticity metadata; when missing they
    are estimated on demand with :func:`check_ellipticity`.
    """

    def __init__(self, freqs, values, d=None, closure=False, tol=HERMITIAN_TOL,
                 lam=None, Lam=None, K_A=None):
        super().__init__(freqs, values, d=d, closure=closure, tol=tol)
        if self.values.ndim != 5:
            raise ValidationError("tensor blocks must have shape (d, d, N, N)")
        dd = self.values.shape[1:3]
        if dd != (self.d, self.d) or self.values.shape[3] != self.values.shape[4]:
            raise ValidationError(f"block shape {self.values.shape[1:]} inconsistent with d={self.d}")
        self.K_A = self.cutoff if K_A is None else int(K_A)
        if self.cutoff > self.K_A:
            raise ValidationError("stored frequency exceeds declared cutoff K_A")
        self._lam, self._Lam, self._norm = lam, Lam, None

    @property
    def N(self) -> int:
        return self.values.shape[3]

    @classmethod
    def constant(cls, block):
        block = np.asarray(block, dtype=float)
        if block.ndim == 2:
            block = block[:, :, None, None]
        d = block.shape[0]
        return cls(np.zeros((1, d), dtype=int), block[None].astype(complex))

    @classmethod
    def identity(cls, d, N=1):
        block = np.einsum("ab,ij->abij", np.eye(d), np.eye(N))
        return cls.constant(block)

    @classmethod
    def scalar(cls, modes, pattern):
        """Scalar tensor A^{ab}(y) = sum a_xi e^{2 pi i xi.y} * pattern[ab].

        ``modes`` maps frequency tuples to complex amplitudes; conjugates are
        completed automatically.
        """
        pattern = np.asarray(pattern, dtype=float)
        freqs = np.array(list(modes.keys()), dtype=int)
        vals = np.array([complex(a) * pattern[:, :, None, None] for a in modes.values()])
        return cls(freqs, vals, closure=True)

    # ellipticity metadata -------------------------------------------------
    def _ensure_bounds(self):
        if self._lam is None or self._Lam is None or self._norm is None:
            rep = check_ellipticity(self)
            self._lam = rep.lam_est if self._lam is None else self._lam
            self._Lam = rep.Lam_est if self._Lam is None else self._Lam
            self._norm = rep.norm_est

    @property
    def lam(self) -> float:
        self._ensure_bounds()
        return self._lam

    @property
    def Lam(self) -> float:
        self._ensure_bounds()
        return self._Lam

    @property
    def norm_inf(self) -> float:
        """Sampled sup over y of the operator norm of A(y) on R^{d x N}."""
        self._ensure_bounds()
        return self._norm

    def mean_block(self):
        return self.coefficient(np.zeros(self.d, dtype=int)).real


@dataclass(frozen=True)
class EllipticityReport:
    lam_est: float
    Lam_est: float
    norm_est: float
    passed: bool
    points: int


def _sample_lattice(d, samples):
    m = max(1, int(round(samples ** (1.0 / d))))
    while m ** d < samples:
        m += 1
    axes = [np.arange(m) / m] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return grid.reshape(-1, d)


def _quadratic_forms(t, y):
    """Matrices S[(a,i),(b,j)] = A^{ab}_{ij}(y), shape (P, dN, dN)."""
    A = t.evaluate(y)  # (P, d, d, N, N)
    P, d, N = A.shape[0], t.d, t.N
    return A.transpose(0, 1, 3, 2, 4).reshape(P, d * N, d * N)


def check_ellipticity(t: PeriodicTensor, samples: int = 4096, seed: int = 0,
                      n_test: int = 16) -> EllipticityReport:
    """Sampled ellipticity constants of a tensor.

    The tensor is evaluated on a deterministic uniform lattice of at least
    ``samples`` points in [0,1)^d. At each point the extreme Rayleigh quotients
    A^{ab}_{ij} x^i_a x^j_b / |x|^2 over real test matrices x are the extreme
    eigenvalues of the symmetric part of the (dN x dN) form, which are
    computed exactly; ``n_test`` random test matrices per point serve as a
    cross-check of the eigenvalue route.

    Returns
    -------
    EllipticityReport
        ``passed`` is True iff ``lam_est > 1e-12``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    y = _sample_lattice(t.d, samples)
    S = _quadratic_forms(t, y)
    sym = 0.5 * (S + S.transpose(0, 2, 1))
    eig = np.linalg.eigvalsh(sym)
    lam, Lam = float(eig[:, 0].min()), float(eig[:, -1].max())
    norm = float(np.linalg.norm(S, ord=2, axis=(1, 2)).max())
    if n_test:
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n_test, S.shape[1]))
        rq = np.einsum("ta,pab,tb->pt", x, S, x) / np.sum(x * x, axis=1)
        # random quotients must lie inside the exact eigenvalue range
        if rq.min() < lam - 1e-9 * max(1.0, abs(lam)) or rq.max() > Lam + 1e-9 * max(1.0, abs(Lam)):
            raise ValidationError("Rayleigh cross-check failed")
    return EllipticityReport(lam, Lam, norm, lam > RAYLEIGH_TOL, len(y))


def check_layered(t: FourierSeries, nu0) -> bool:
    """True iff every nonzero coefficient sits at a frequency with xi . nu0 = 0."""
    nu0 = np.asarray(nu0)
    if nu0.shape != (t.d,) or not np.all(np.equal(np.mod(nu0, 1), 0)):
        raise ValueError("nu0 must be an integer vector of length d")
    nu0 = nu0.astype(np.int64)
    if not np.any(nu0):
        raise ValueError("nu0 must be nonzero")
    supp = t.support()
    return bool(np.all(supp @ nu0 == 0))


def adjoint_tensor(t: PeriodicTensor) -> PeriodicTensor:
    """(A*)^{ab}_{ij} = A^{ba}_{ji}, frequency by frequency."""
    out = PeriodicTensor.__new__(PeriodicTensor)
    FourierSeries._init_unchecked(out, t.freqs, t.values.transpose(0, 2, 1, 4, 3), t.hermitian)
    out.K_A = t.K_A
    out._lam, out._Lam, out._norm = t._lam, t._Lam, t._norm
    return out


def divfree_check(t: PeriodicTensor, tol: float = 1e-14) -> bool:
    """True iff every row field (A^{g1}_{ki}, ..., A^{gd}_{ki}) is divergence free."""
    div = np.einsum("fa,fgaki->fgki", t.freqs.astype(float), t.values)
    scale = max(1.0, float(np.max(np.abs(t.values))))
    return bool(np.max(np.abs(div), initial=0.0) <= tol * scale)


# ---------------------------------------------------------------------------
# JSON definition files: {"d": 2, "N": 1, "entries": [{"xi": [..], "block": [[..]]}]}
# optional "block_im" carries imaginary parts; conjugates are auto-inserted.


def _block_from_entry(entry):
    re = np.asarray(entry["block"], dtype=float)
    im = np.asarray(entry.get("block_im", np.zeros_like(re)), dtype=float)
    return re + 1j * im


def load_tensor(path) -> PeriodicTensor:
    defn = json.loads(Path(path).read_text())
    return tensor_from_dict(defn)


def tensor_from_dict(defn) -> PeriodicTensor:
    try:
        d, N = int(defn["d"]), int(defn.get("N", 1))
        entries = defn["entries"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"tensor definition missing field: {exc}") from exc
    freqs, vals = [], []
    for e in entries:
        b = _block_from_entry(e)
        if b.shape == (d, d) and N == 1:
            b = b[:, :, None, None]
        if b.shape != (d, d, N, N):
            raise ValidationError(f"block for xi={e['xi']} has shape {b.shape}")
        freqs.append(e["xi"])
        vals.append(b)
    return PeriodicTensor(np.array(freqs, dtype=int).reshape(-1, d), np.array(vals), d=d,
                          closure=True, K_A=defn.get("K_A"))


def load_field(path) -> PeriodicField:
    return field_from_dict(json.loads(Path(path).read_text()))


def field_from_dict(defn) -> PeriodicField:
    try:
        d, N = int(defn["d"]), int(defn.get("N", 1))
        entries = defn["entries"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"field definition missing field: {exc}") from exc
    freqs, vals = [], []
    for e in entries:
        b = np.atleast_1d(_block_from_entry(e))
        if b.shape not in ((N,), (N, N)):
            raise ValidationError(f"value for xi={e['xi']} has shape {b.shape}")
        freqs.append(e["xi"])
        vals.append(b)
    return PeriodicField(np.array(freqs, dtype=int).reshape(-1, d), np.array(vals), d=d, closure=True)


def series_to_dict(s: FourierSeries, N=None):
    """Serialize a tensor or field to the definition-file format."""
    entries = []
    for f, v in zip(s.freqs.tolist(), s.values):
        e = {"xi": f, "block": v.real.tolist()}
        if np.any(v.imag):
            e["block_im"] = v.imag.tolist()
        entries.append(e)
    N = N if N is not None else (s.N if hasattr(s, "N") else 1)
    return {"d": s.d, "N": N, "entries": entries}


def save_series(s: FourierSeries, path):
    Path(path).write_text(json.dumps(series_to_dict(s), indent=1))
