"""Homogenized boundary data g* on ellipsoids and its empirical Lipschitz constant.

g*(x) = sum_xi v_xi(n(x)) c_xi(x), with n(x) the inward unit normal and
v_xi the tail for boundary data e^{2 pi i xi . y} I_N.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DependencyError, ValidationError
from .lattice import Direction, classify_direction

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
SURFACE_TOL = 1e-10


@dataclass(frozen=True)
class Ellipsoid:
    """{x : sum (x_i / a_i)^2 = 1} with inward Gauss map."""
    axes: tuple

    def __post_init__(self):
        a = np.asarray(self.axes, dtype=float)
        if a.ndim != 1 or len(a) < 2 or np.any(a <= 0):
            raise ValidationError("ellipsoid semi-axes must be positive")
        object.__setattr__(self, "axes", tuple(float(x) for x in a))

    @property
    def d(self):
        return len(self.axes)

    @property
    def a(self):
        return np.asarray(self.axes)

    @property
    def curvature_lower_bound(self) -> float:
        return float(self.a.min() / self.a.max() ** 2)

    def level(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.sum((x / self.a) ** 2, axis=1) - 1.0

    def gauss_map(self, x):
        """Inward unit normals at boundary points x, shape (P, d) or (d,)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if np.any(np.abs(self.level(x)) > SURFACE_TOL):
            raise ValidationError("point off the ellipsoid surface; project it first")
        g = -x / self.a ** 2
        n = g / np.linalg.norm(g, axis=1, keepdims=True)
        return n[0] if single else n

    def inverse_gauss(self, n):
        """Boundary point with inward normal n."""
        n = np.asarray(n, dtype=float)
        single = n.ndim == 1
        n = np.atleast_2d(n)
        if np.any(np.abs(np.linalg.norm(n, axis=1) - 1.0) > 1e-12):
            raise ValidationError("normal must be a unit vector")
        u = -n * self.a ** 2
        x = u / np.sqrt(np.sum(u * u / self.a ** 2, axis=1, keepdims=True))
        return x[0] if single else x

    def project(self, x):
        """Radial projection onto the surface."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x / np.sqrt(self.level(x) + 1.0)[:, None]

    def parameter_points(self, samples: int):
        """Quasi-uniform points: golden-offset angles (d=2) or a Fibonacci lattice (d=3)."""
        if self.d == 2:
            th = 2 * np.pi * (np.arange(samples) + GOLDEN) / samples
            u = np.stack([np.cos(th), np.sin(th)], axis=1)
        elif self.d == 3:
            k = np.arange(samples) + 0.5
            z = 1.0 - 2.0 * k / samples
            phi = 2 * np.pi * k * GOLDEN
            r = np.sqrt(1.0 - z * z)
            u = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        else:
            raise ValueError("samplers exist for d in {2, 3}")
        return u * self.a


@dataclass
class HemisphereSamples:
    tau: float
    nu0: np.ndarray
    x: np.ndarray
    normals: np.ndarray
    directions: list
    total: int
    excluded_tau: int
    excluded_rational: int

    @property
    def kept_fraction(self) -> float:
        return len(self.x) / self.total if self.total else 0.0

    def __len__(self):
        return len(self.x)


def hemisphere_set(dom: Ellipsoid, tau: float, samples: int, nu0, Q: int | None = None,
                   classify: bool = True, _cache: dict | None = None) -> HemisphereSamples:
    """Boundary samples with |n(x) . nu0| > tau and no rational witness."""
    if tau >= 1.0:
        import warnings
        warnings.warn("tau >= 1: the hemisphere set is empty", RuntimeWarning)
    nu0 = np.asarray(nu0, dtype=float)
    x = dom.parameter_points(samples)
    n = dom.gauss_map(x)
    proj = n @ nu0
    keep_tau = np.abs(proj) > tau
    dirs, keep = [], np.zeros(samples, dtype=bool)
    n_rat = 0
    for i in np.flatnonzero(keep_tau):
        key = tuple(np.round(n[i], 15))
        if _cache is not None and key in _cache:
            D = _cache[key]
        elif classify:
            D = classify_direction(n[i], Q=Q)
            if _cache is not None:
                _cache[key] = D
        else:
            D = None
        if D is not None and D.rational:
            n_rat += 1
            continue
        keep[i] = True
        dirs.append(D if D is not None else n[i])
    return HemisphereSamples(float(tau), nu0, x[keep], n[keep], dirs, samples,
                             int((~keep_tau).sum()), n_rat)


def _shell_tail_sum(K: int, d: int, kmax: int = 100000) -> float:
    """Upper bound of sum_{|xi|_inf > K} (1 + |xi|)^{-(d+1)} using |xi| >= |xi|_inf."""
    k = np.arange(K + 1, kmax + 1, dtype=float)
    count = (2 * k + 1) ** d - (2 * k - 1) ** d
    s = float(np.sum(count * (1.0 + k) ** (-(d + 1))))
    # count ~ 2d (2k)^{d-1}, so the tail beyond kmax is at most
    s += 2 * d * 2 ** (d - 1) * (1.0 + kmax) ** (-1) * 2.0
    return s


@dataclass
class OscillatingData:
    """g(x, y) = sum_xi c_xi(x) e^{2 pi i xi . y} with c_xi mapping (P, d) -> (P, N)."""
    modes: dict  # tuple(xi) -> callable
    d: int
    N: int = 1
    C_g: float | None = None
    name: str = ""
    complete: bool = True  # modes are the whole series, so the remainder vanishes

    @classmethod
    def real(cls, modes: dict, d: int, N: int = 1, **kw):
        """Complete ``modes`` with c_{-xi}(x) = conj(c_xi(x)) so that g is real."""
        full = dict(modes)
        for xi, f in modes.items():
            m = tuple(-int(v) for v in xi)
            if m == tuple(xi):
                continue
            if m in modes:
                continue
            full[m] = (lambda f: lambda x: np.conj(f(x)))(f)
        return cls(full, d, N, **kw)

    @property
    def K_g(self) -> int:
        return max((max(abs(v) for v in xi) for xi in self.modes), default=0)

    def coeff(self, xi, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        f = self.modes.get(tuple(int(v) for v in xi))
        if f is None:
            return np.zeros((len(x), self.N), dtype=complex)
        return np.asarray(f(x), dtype=complex).reshape(len(x), self.N)

    def evaluate(self, x, y):
        """g at paired points x (P, d), y (P, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        out = np.zeros((len(x), self.N), dtype=complex)
        for xi in self.modes:
            out += self.coeff(xi, x) * np.exp(2j * np.pi * y @ np.asarray(xi, dtype=float))[:, None]
        return out

    def average(self, x):
        return self.coeff(np.zeros(self.d, dtype=int), x)

    def decay_constant(self, x) -> float:
        """a-posteriori C_g = max |c_xi(x)| (1 + |xi|)^{d+1} over the given points."""
        if self.C_g is not None:
            return self.C_g
        best = 0.0
        for xi in self.modes:
            w = (1.0 + np.linalg.norm(xi)) ** (self.d + 1)
            best = max(best, float(np.abs(self.coeff(xi, x)).max()) * w)
        return best

    def truncated(self, K: int):
        keep = {xi: f for xi, f in self.modes.items() if max(abs(v) for v in xi) <= K}
        return OscillatingData(keep, self.d, self.N, self.C_g, self.name,
                               complete=self.complete and len(keep) == len(self.modes))


@dataclass
class GStarValue:
    x: np.ndarray
    n: np.ndarray
    value: np.ndarray  # (N,)
    tail_error: float
    remainder: float
    rational: bool = False


def _tail_of(tails, xi, n):
    if hasattr(tails, "tail"):
        return tails.tail(xi, n)
    if hasattr(tails, "lookup"):
        return tails.lookup(xi, n.n if isinstance(n, Direction) else n)
    if callable(tails):
        return tails(xi, n)
    raise TypeError("tails provider must expose tail(), lookup() or be callable")


def assemble_gstar(dom: Ellipsoid, data: OscillatingData, tails, x, n=None,
                   C_tail: float | None = None) -> GStarValue:
    """g*(x) from the finite series with the tail error and series remainder budget."""
    x = np.asarray(x, dtype=float)
    if n is None:
        n = dom.gauss_map(x)
    nv = n.n if isinstance(n, Direction) else np.asarray(n, dtype=float)
    total = np.zeros(data.N, dtype=complex)
    err = 0.0
    c_tail = 0.0
    for xi in sorted(data.modes):
        c = data.coeff(xi, x)[0]
        if not np.any(c):
            continue
        try:
            e = _tail_of(tails, xi, n)
        except DependencyError:
            raise
        except KeyError as exc:
            raise DependencyError(f"missing tail for xi={xi}") from exc
        total += e.matrix @ c
        err += float(e.err_bound) * float(np.abs(c).sum())
        c_tail = max(c_tail, float(np.linalg.norm(e.matrix, 2)))
    C = c_tail if C_tail is None else C_tail
    rem = 0.0
    if not data.complete:
        rem = C * data.decay_constant(x[None]) * _shell_tail_sum(data.K_g, data.d)
    rational = bool(isinstance(n, Direction) and n.rational)
    return GStarValue(x, nv, total, err, rem, rational)


@dataclass
class GStarField:
    samples: HemisphereSamples
    values: list  # GStarValue

    @property
    def tau(self):
        return self.samples.tau

    @property
    def x(self):
        return np.array([v.x for v in self.values]).reshape(len(self.values), -1)

    @property
    def g(self):
        return np.array([v.value for v in self.values]).reshape(len(self.values), -1)

    def to_csv(self, path):
        d = self.samples.x.shape[1] if len(self.values) else 0
        N = self.g.shape[1] if len(self.values) else 0
        head = [f"x{i + 1}" for i in range(d)] + [f"n{i + 1}" for i in range(d)] + ["n_dot_nu0"]
        head += [f"{p}_g{i}" for i in range(N) for p in ("re", "im")] + ["tail_error", "remainder"]
        lines = [",".join(head)]
        for v in self.values:
            row = [f"{c:.12g}" for c in v.x] + [f"{c:.12g}" for c in v.n]
            row.append(f"{float(v.n @ self.samples.nu0):.12g}")
            for c in v.value:
                row += [f"{c.real:.12g}", f"{c.imag:.12g}"]
            row += [f"{v.tail_error:.3e}", f"{v.remainder:.3e}"]
            lines.append(",".join(row))
        Path(path).write_text("\n".join(lines) + "\n")


def build_gstar_field(dom: Ellipsoid, data: OscillatingData, tails, samples: HemisphereSamples,
                      C_tail: float | None = None, workers: int = 1) -> GStarField:
    def one(i):
        D = samples.directions[i]
        return assemble_gstar(dom, data, tails, samples.x[i], n=D, C_tail=C_tail)

    idx = range(len(samples))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as ex:
            vals = list(ex.map(one, idx))
    else:
        vals = [one(i) for i in idx]
    return GStarField(samples, vals)


@dataclass
class LipschitzReport:
    tau: float
    L_emp: float
    pairs: int
    h_min: float
    near_max: float
    far_max: float
    argmax: tuple

    def to_json(self):
        return {"tau": self.tau, "L_emp": self.L_emp, "pairs": self.pairs, "h_min": self.h_min,
                "near_max": self.near_max, "far_max": self.far_max, "argmax": list(self.argmax)}


def lipschitz_probe(gfield: GStarField, tau: float | None = None, pairs: int = 5000,
                    h_min: float = 1e-3, seed: int = 0, near_fraction: float = 0.5,
                    k_near: int = 4) -> LipschitzReport:
    """max |g*(x) - g*(y)| / |x - y| over sampled pairs with |x - y| >= h_min.

    Half of the pairs (``near_fraction``) join a sample to one of its ``k_near``
    nearest neighbours, the rest are uniform random pairs.
    """
    tau = gfield.tau if tau is None else tau
    X, G = gfield.x, gfield.g
    ok = np.abs(np.array([v.n for v in gfield.values]).reshape(len(X), -1) @ gfield.samples.nu0) > tau
    X, G = X[ok], G[ok]
    P = len(X)
    if P < 2:
        raise ValueError("need at least two samples for a Lipschitz probe")
    rng = np.random.default_rng(seed)
    D = np.linalg.norm(X[:, None] - X[None], axis=2)
    k = min(k_near, P - 1)
    nbr = np.argsort(D + np.diag(np.full(P, np.inf)), axis=1)[:, :k]
    n_near = int(round(near_fraction * pairs))
    i1 = rng.integers(0, P, n_near)
    j1 = nbr[i1, rng.integers(0, k, n_near)]
    i2 = rng.integers(0, P, pairs - n_near)
    j2 = rng.integers(0, P, pairs - n_near)
    I = np.concatenate([i1, i2])
    J = np.concatenate([j1, j2])
    dist = D[I, J]
    diff = np.linalg.norm(G[I] - G[J], axis=1)
    use = dist >= h_min
    q = np.where(use, diff / np.where(use, dist, 1.0), 0.0)
    kmax = int(np.argmax(q)) if q.size else 0
    near_max = float(q[:n_near].max(initial=0.0))
    far_max = float(q[n_near:].max(initial=0.0))
    return LipschitzReport(float(tau), float(q.max(initial=0.0)), int(use.sum()), h_min,
                           near_max, far_max, (int(I[kmax]), int(J[kmax])) if q.size else (0, 0))
