"""Scenario runner: ``bltail run``, ``bltail validate`` and ``bltail plotdata``.

A scenario is one flat JSON file. Paths inside it are relative to the file.
Exit codes: 0 ok, 1 numerical failure, 2 configuration or I/O error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cell import tensor_fingerprint
from .coeffs import check_layered, divfree_check, tensor_from_dict
from .errors import (ConsistencyError, DegenerateDirectionError, DependencyError, SolverError,
                     ValidationError)
from .gstar import (Ellipsoid, OscillatingData, build_gstar_field, hemisphere_set,
                    lipschitz_probe)
from .lattice import classify_direction
from .strip import extract_tail
from .tails import TailSolver, TailTable

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2
KINDS = ("decay_profile", "tail_vs_n", "gstar_surface", "lipschitz_vs_tau")
ROUTES = ("strip", "formula", "auto")

DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "cell": {"K": 16},
    "strip": {"K_t": None, "h": 1.0 / 64, "tol": 1e-10, "L_max": 60.0, "delta": 0.05, "refine": True},
    "routes": ["strip", "formula"],
    "gstar_route": None,
    "tail_sweep": {"xi": None, "samples": 20, "tau": 0.3},
    "gstar": {"tau": 0.3, "samples": 50},
    "probe": None,
    "classify_Q": None,
    "output": "out",
}


class ConfigError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage, self.exc = stage, exc


# ---------------------------------------------------------------------------
# configuration


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _read_json(path: Path):
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc


def _poly_mode(terms, N):
    """c(x) = sum c_k prod x_i^{p_i} per component; terms: [{"c": re or [re, im], "pow": [...], "comp": i}]."""
    parsed = []
    for t in terms:
        c = t.get("c", 1.0)
        c = complex(c[0], c[1]) if isinstance(c, (list, tuple)) else complex(c)
        parsed.append((c, np.asarray(t.get("pow", []), dtype=int), int(t.get("comp", 0))))

    def f(x):
        out = np.zeros((len(x), N), dtype=complex)
        for c, p, i in parsed:
            pw = np.ones(len(x)) if p.size == 0 else np.prod(x[:, :p.size] ** p, axis=1)
            out[:, i] += c * pw
        return out

    return f


def data_from_dict(defn, d) -> OscillatingData:
    N = int(defn.get("N", 1))
    modes = {}
    for m in defn["modes"]:
        xi = tuple(int(v) for v in m["xi"])
        if len(xi) != d:
            raise ConfigError(f"mode {xi} has wrong dimension (d = {d})")
        modes[xi] = _poly_mode(m["terms"], N)
    kw = dict(name=defn.get("name", ""), complete=bool(defn.get("complete", True)))
    if defn.get("real", True):
        return OscillatingData.real(modes, d, N, **kw)
    return OscillatingData(modes, d, N, **kw)


@dataclass
class Scenario:
    path: Path
    cfg: dict
    tensor: object
    data: OscillatingData
    domain: Ellipsoid
    nu0: object

    @property
    def out_dir(self) -> Path:
        return (self.path.parent / self.cfg["output"]).resolve()


def load_scenario(path) -> Scenario:
    path = Path(path)
    raw = _read_json(path)
    cfg = _merge(DEFAULTS, raw)
    base = path.parent
    if "tensor" not in cfg:
        raise ConfigError("scenario needs a 'tensor' entry")
    tspec = cfg["tensor"]
    tspec = _read_json(base / tspec) if isinstance(tspec, str) else tspec
    try:
        t = tensor_from_dict(tspec)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad tensor: {exc}") from exc
    dspec = cfg.get("boundary_data")
    if dspec is None:
        raise ConfigError("scenario needs 'boundary_data'")
    dspec = _read_json(base / dspec) if isinstance(dspec, str) else dspec
    try:
        data = data_from_dict(dspec, t.d)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad boundary data: {exc}") from exc
    dom = cfg.get("domain", {"axes": [1.0] * t.d})
    try:
        domain = Ellipsoid(tuple(dom["axes"]))
    except (KeyError, ValidationError) as exc:
        raise ConfigError(f"bad domain: {exc}") from exc
    if domain.d != t.d:
        raise ConfigError("domain dimension differs from tensor dimension")
    nu0 = cfg.get("nu0", "auto")
    if not isinstance(nu0, str):
        nu0 = np.asarray(nu0, dtype=np.int64)
        if nu0.shape != (t.d,) or not np.any(nu0):
            raise ConfigError("nu0 must be a nonzero integer vector of length d")
    return Scenario(path, cfg, t, data, domain, nu0)


def validate(sc: Scenario) -> dict:
    """Checks that need no solves; raises ConfigError on the first failure."""
    cfg, t = sc.cfg, sc.tensor
    rep = {"d": t.d, "N": t.N, "K_A": t.K_A, "lam": t.lam, "norm_inf": t.norm_inf}
    if not t.lam > 0:
        raise ConfigError(f"tensor is not elliptic (lambda estimate {t.lam:.3e})")
    if isinstance(sc.nu0, str):
        if sc.nu0 != "auto":
            raise ConfigError("nu0 must be an integer vector or 'auto'")
        if np.any(np.abs(t.values[np.any(t.freqs != 0, axis=1)]) > 0):
            raise ConfigError("nu0 = 'auto' is only valid for constant tensors")
    elif not check_layered(t, sc.nu0):
        raise ConfigError("tensor is not layered with respect to nu0")
    if sc.data.N != t.N:
        raise ConfigError("boundary data has a different number of components than the tensor")
    if cfg["cell"]["K"] < t.K_A:
        raise ConfigError("cell cutoff K must be >= K_A")
    st = cfg["strip"]
    if not (0 < st["h"] <= 0.5) or not (0 < st["tol"] < 1) or not (st["delta"] > 0) or st["L_max"] < 5:
        raise ConfigError("strip settings out of range (0 < h <= 1/2, 0 < tol < 1, delta > 0, L_max >= 5)")
    for r in cfg["routes"]:
        if r not in ROUTES:
            raise ConfigError(f"unknown route {r!r}")
    for key in ("tail_sweep", "gstar"):
        tau = cfg[key]["tau"]
        if not 0 <= tau < 1:
            raise ConfigError(f"{key}.tau must lie in [0, 1)")
    if cfg["probe"]:
        if any(not 0 < tau < 1 for tau in cfg["probe"]["taus"]):
            raise ConfigError("probe taus must lie in (0, 1)")
    rep["divfree_rows"] = bool(divfree_check(t))
    return rep


# ---------------------------------------------------------------------------
# pipeline


def _workers(cfg) -> int:
    env = os.environ.get("BLTAIL_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"BLTAIL_WORKERS must be an integer, got {env!r}") from exc
    return max(1, int(cfg.get("workers", 1)))


def _pmap(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def sweep_directions(d, nu0, tau, samples, rng):
    """Directions with n . nu > tau (nu the unit layer vector), d = 2 by angle, d = 3 at random."""
    nu = np.asarray(nu0, dtype=float)
    nu = nu / np.linalg.norm(nu)
    out = []
    if d == 2:
        th0 = math.atan2(nu[1], nu[0])
        half = math.acos(tau)
        # golden-offset grid keeps angles away from rational slopes at modest bounds
        off = (math.sqrt(5) - 1) / 2
        for k in range(samples):
            a = th0 - half + 2 * half * (k + off) / samples
            out.append(np.array([math.cos(a), math.sin(a)]))
    else:
        while len(out) < samples:
            v = rng.standard_normal(d)
            v /= np.linalg.norm(v)
            if v @ nu < 0:
                v = -v
            if v @ nu > tau:
                out.append(v)
    return out


def _angle(n, nu0):
    if len(n) == 2:
        return float(math.atan2(n[1], n[0]))
    nu = np.asarray(nu0, dtype=float)
    return float(math.acos(np.clip(n @ nu / np.linalg.norm(nu), -1, 1)))


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (ConfigError, StageError):
        raise
    except Exception as exc:  # tag and re-raise
        raise StageError(name, exc) from exc


def run(sc: Scenario) -> dict:
    cfg, t = sc.cfg, sc.tensor
    workers = _workers(cfg)
    rng = np.random.default_rng(int(cfg["seed"]))
    timings = {}
    summary = {"scenario": cfg.get("name", sc.path.stem), "seed": int(cfg["seed"])}
    report = {}
    clock = time.perf_counter()

    def tick(name):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = now - clock
        clock = now

    summary["validate"] = _stage("validate", validate, sc)
    tick("validate")

    st = cfg["strip"]
    K = int(cfg["cell"]["K"])
    solver = TailSolver(t, sc.nu0, K_cell=K, K_t=st["K_t"], h=st["h"], delta=st["delta"], tol=st["tol"],
                        L_max=st["L_max"], refine=bool(st["refine"]), classify_Q=cfg["classify_Q"])
    A0 = _stage("cell", lambda: solver.A0)
    _stage("cell", lambda: solver.chi_star)
    summary["cell"] = {"K": K, "A0": A0.blocks.tolist(), "lam0": A0.lam0,
                       "fingerprint": tensor_fingerprint(t),
                       "chi_star_max": max(float(np.abs(c.field.values).max()) for c in solver.chi_star)}
    tick("cell")

    # tail sweep: both routes, route consistency, decay and trace checks
    sw = cfg["tail_sweep"]
    layer = sc.nu0 if not isinstance(sc.nu0, str) else np.eye(t.d, dtype=int)[-1]
    xi = sw["xi"] if sw["xi"] is not None else [1] + [0] * (t.d - 1)
    if np.any(np.asarray(xi) @ layer) and not isinstance(sc.nu0, str):
        raise ConfigError("tail_sweep.xi must satisfy xi . nu0 = 0")
    dirs = sweep_directions(t.d, layer, sw["tau"], int(sw["samples"]), rng)
    dirs = _pmap(lambda n: classify_direction(n, Q=cfg["classify_Q"]), dirs, workers)
    routes = list(cfg["routes"])
    table = TailTable()

    def sweep_one(D):
        return {r: solver.tail(xi, D, route=r) for r in routes}

    sweep = _stage("tails", _pmap, sweep_one, dirs, workers)
    rows, rel, decay, trace = [], [], [], []
    for D, res in zip(dirs, sweep):
        row = {"n": D.n.tolist(), "angle": _angle(D.n, layer), "rational": D.rational}
        for r, e in res.items():
            table.add(e)
            row[r] = {"re": e.matrix.real.tolist(), "im": e.matrix.imag.tolist(), "err": e.err_bound}
            if e.diagnostics:
                decay.append(bool(e.diagnostics["decay_ok"]))
                trace.append(float(e.diagnostics["trace_error"]))
        if "strip" in res and "formula" in res:
            a, b = res["formula"].matrix, res["strip"].matrix
            rel.append(float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)))
        rows.append(row)
    tails_sum = {"xi": list(map(int, xi)), "directions": len(dirs), "routes": routes,
                 "decay_ok_all": all(decay) if decay else None,
                 "trace_error_max": max(trace) if trace else None,
                 "max_norm": max(float(np.linalg.norm(e.matrix, 2)) for e in table.entries)}
    if rel:
        tails_sum["route_rel_diff_max"] = max(rel)
    if _is_laplacian(t):
        tails_sum["oracle_abs_diff_max"] = max(
            float(np.abs(e.matrix - solver.laplace(e.xi, e.n).matrix).max()) for e in table.entries)
    summary["tails"] = tails_sum
    report["tail_sweep"] = rows
    tick("tails")

    # representative decay profile
    D0 = dirs[0]
    sol = _stage("strip", solver.strip_solution, xi, D0)
    report["decay_profile"] = {"n": D0.n.tolist(), "t": sol.t.tolist(),
                               "log_grad": np.log(np.maximum(sol.grad_norm, 1e-300)).tolist(),
                               "slope": sol.slope, "tau": sol.tau, "rate": sol.rate, "L": sol.L}
    summary["strip"] = {"slope": sol.slope, "tau": sol.tau, "rate": sol.rate, "L": sol.L,
                        "trace_error": sol.trace_error, "residual_ok": sol.residual <= 1e-10,
                        "tail_err_bound": extract_tail(sol, grad_threshold=np.inf)[1]}
    tick("strip")

    # g* assembly
    groute = cfg["gstar_route"] or ("auto" if isinstance(sc.nu0, str) else routes[0])
    provider = _Provider(solver, groute)
    gs = cfg["gstar"]
    cache = {}
    hs = _stage("gstar", hemisphere_set, sc.domain, gs["tau"], int(gs["samples"]), layer,
                Q=cfg["classify_Q"], _cache=cache)
    field = _stage("gstar", build_gstar_field, sc.domain, sc.data, provider, hs, workers=workers)
    out = sc.out_dir
    g = field.g
    gsum = {"route": groute, "samples": len(hs), "kept_fraction": hs.kept_fraction,
            "excluded_tau": hs.excluded_tau, "excluded_rational": hs.excluded_rational,
            "max_abs": float(np.abs(g).max()) if len(g) else 0.0,
            "tail_error_max": max((v.tail_error for v in field.values), default=0.0),
            "remainder_max": max((v.remainder for v in field.values), default=0.0)}
    if _is_laplacian(t):
        avg = np.array([sc.data.average(v.x[None])[0] for v in field.values])
        gsum["oracle_rel_err"] = float(np.abs(g - avg).max() / max(np.abs(avg).max(), 1e-300))
    summary["gstar"] = gsum
    report["gstar"] = [{"x": v.x.tolist(), "n": v.n.tolist(), "re": v.value.real.tolist(),
                        "im": v.value.imag.tolist()} for v in field.values]
    tick("gstar")

    # Lipschitz probe
    if cfg["probe"]:
        pr = cfg["probe"]
        taus = sorted(float(x) for x in pr["taus"])
        pairs = int(pr.get("pairs", 5000))
        hs0 = _stage("probe", hemisphere_set, sc.domain, taus[0], int(pr.get("samples", 200)), layer,
                     Q=cfg["classify_Q"], _cache=cache)
        pst = _merge(st, pr.get("strip", {}))
        psolver = TailSolver(t, sc.nu0, K_cell=K, K_t=pst["K_t"], h=pst["h"], delta=pst["delta"],
                             tol=pst["tol"], L_max=pst["L_max"], refine=bool(pst["refine"]),
                             classify_Q=cfg["classify_Q"])
        psolver._A0, psolver._chi_star = solver.A0, solver.chi_star
        pprov = provider if not pr.get("strip") else _Provider(psolver, groute)
        pf = _stage("probe", build_gstar_field, sc.domain, sc.data, pprov, hs0, workers=workers)
        probe = []
        for tau in taus:
            r1 = lipschitz_probe(pf, tau, pairs, h_min=pr.get("h_min", 1e-3), seed=int(cfg["seed"]))
            r2 = lipschitz_probe(pf, tau, 2 * pairs, h_min=pr.get("h_min", 1e-3), seed=int(cfg["seed"]))
            change = abs(r2.L_emp - r1.L_emp) / r1.L_emp if r1.L_emp > 0 else 0.0
            probe.append({"tau": tau, "L_emp": r1.L_emp, "L_emp_doubled": r2.L_emp,
                          "relative_change": change, "pairs": r1.pairs, "h_min": r1.h_min,
                          "finite": bool(np.isfinite(r1.L_emp)),
                          "samples": int(np.sum(np.abs(np.array([v.n for v in pf.values]) @ layer) > tau))})
        summary["probe"] = probe
        report["probe"] = probe
        tick("probe")

    out.mkdir(parents=True, exist_ok=True)
    table.export(out / "tails.json")
    field.to_csv(out / "gstar.csv")
    sol.export(json_path=out / "profiles.json")
    report["timings"] = timings
    report["summary"] = summary
    (out / "report.json").write_text(json.dumps(_clean(report), indent=1, sort_keys=True))
    (out / "summary.json").write_text(json.dumps(_clean(summary), indent=1, sort_keys=True) + "\n")
    return summary


class _Provider:
    def __init__(self, solver, route):
        self.solver, self.route = solver, route

    def tail(self, xi, n):
        return self.solver.tail(xi, n, route=self.route)


def _is_laplacian(t) -> bool:
    if t.N != 1:
        return False
    nz = np.any(t.freqs != 0, axis=1)
    return not np.any(np.abs(t.values[nz]) > 0) and np.allclose(t.mean_block()[:, :, 0, 0], np.eye(t.d))


def _clean(obj):
    """JSON-safe copy with floats rounded to 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return str(x)
        return float(f"{x:.12g}")
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


# ---------------------------------------------------------------------------
# plot data


def emit_plotdata(report_path, kind: str, out=None) -> Path:
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}; choose from {', '.join(KINDS)}")
    report_path = Path(report_path)
    rep = _read_json(report_path)
    out = Path(out) if out else report_path.parent / f"{kind}.dat"
    lines = []
    if kind == "decay_profile":
        dp = rep["decay_profile"]
        lines.append(f"# t log_grad_norm   fitted slope = {dp['slope']}  tau = {dp['tau']}")
        lines += [f"{a:.10g} {b:.10g}" for a, b in zip(dp["t"], dp["log_grad"])]
    elif kind == "tail_vs_n":
        rows = rep["tail_sweep"]
        route = next((r for r in ("strip", "formula", "auto") if rows and r in rows[0]), None)
        lines.append(f"# angle Re_v Im_v   route = {route}")
        for r in rows:
            lines.append(f"{r['angle']:.10g} {r[route]['re'][0][0]:.12g} {r[route]['im'][0][0]:.12g}")
    elif kind == "gstar_surface":
        rows = rep["gstar"]
        d = len(rows[0]["x"]) if rows else 0
        lines.append("# " + " ".join(f"x{i + 1}" for i in range(d)) + " Re_g0")
        lines += [" ".join(f"{c:.10g}" for c in r["x"]) + f" {r['re'][0]:.12g}" for r in rows]
    else:
        lines.append("# tau L_emp")
        lines += [f"{p['tau']:.6g} {p['L_emp']:.12g}" for p in rep.get("probe", [])]
    out.write_text("\n".join(lines) + "\n")
    return out


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="bltail", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario and write the report bundle")
    r.add_argument("config")
    v = sub.add_parser("validate", help="check a scenario without solving")
    v.add_argument("config")
    q = sub.add_parser("plotdata", help="emit plain-text plot data from a report")
    q.add_argument("report")
    q.add_argument("--kind", required=True)
    q.add_argument("--out", default=None)
    return p


NUMERIC_ERRORS = (SolverError, ConsistencyError, DegenerateDirectionError, DependencyError,
                  np.linalg.LinAlgError, FloatingPointError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "plotdata":
            try:
                path = emit_plotdata(args.report, args.kind, args.out)
            except ValueError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
            print(path)
            return EXIT_OK
        sc = load_scenario(args.config)
        if args.cmd == "validate":
            rep = validate(sc)
            print(json.dumps(_clean(rep), sort_keys=True))
            return EXIT_OK
        summary = run(sc)
        print(json.dumps(_clean(summary), sort_keys=True))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.exc, ValidationError):
            return EXIT_CONFIG
        return EXIT_NUMERIC
    except NUMERIC_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
