"""Frequency-box bookkeeping shared by the torus and strip solvers."""
from __future__ import annotations

import numpy as np


def box(K: int, d: int) -> np.ndarray:
    """All integer vectors with |xi|_inf <= K, in lexicographic order."""
    r = np.arange(-K, K + 1)
    g = np.meshgrid(*([r] * d), indexing="ij")
    return np.stack([x.ravel() for x in g], axis=1).astype(np.int64)


class FreqIndex:
    """Vectorized lookup of integer frequency rows."""

    def __init__(self, freqs):
        self.freqs = np.asarray(freqs, dtype=np.int64).reshape(len(freqs), -1)
        self._map = {tuple(f): k for k, f in enumerate(self.freqs.tolist())}

    def __len__(self):
        return len(self.freqs)

    def lookup(self, rows) -> np.ndarray:
        """Indices of ``rows`` (shape (p, d)); -1 where absent."""
        rows = np.asarray(rows, dtype=np.int64)
        return np.array([self._map.get(tuple(r), -1) for r in rows.tolist()], dtype=np.int64)


def reachable(seeds, generators, K: int) -> np.ndarray:
    """Closure of ``seeds`` under adding +-``generators``, clipped to the K-box.

    Galerkin systems built from a finite series only couple frequencies that
    differ by a coefficient frequency, so unknowns outside this closure are
    exactly zero and can be dropped.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    gens = np.asarray(generators, dtype=np.int64)
    gens = np.unique(np.vstack([gens, -gens]), axis=0) if len(gens) else gens
    seen = {tuple(s) for s in seeds.tolist() if max(map(abs, s), default=0) <= K}
    frontier = list(seen)
    while frontier:
        new = []
        f = np.array(frontier, dtype=np.int64)
        for g in gens:
            cand = f + g
            ok = np.max(np.abs(cand), axis=1) <= K
            for c in map(tuple, cand[ok].tolist()):
                if c not in seen:
                    seen.add(c)
                    new.append(c)
        frontier = new
    out = np.array(sorted(seen), dtype=np.int64)
    return out.reshape(len(seen), seeds.shape[1] if seeds.ndim == 2 else 0)


def coupling_pairs(modes, series_freqs):
    """Triples (a, b, k) with modes[a] - modes[b] = series_freqs[k]."""
    idx = FreqIndex(modes)
    A, B, Kk = [], [], []
    for k, w in enumerate(np.asarray(series_freqs, dtype=np.int64)):
        b = np.arange(len(modes))
        a = idx.lookup(modes + w)
        ok = a >= 0
        A.append(a[ok]), B.append(b[ok]), Kk.append(np.full(ok.sum(), k))
    if not A:
        e = np.zeros(0, dtype=np.int64)
        return e, e, e
    return np.concatenate(A), np.concatenate(B), np.concatenate(Kk)
