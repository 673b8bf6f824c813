"""Command-line entry point: ``parawolff {potential,solve,verify,km} --config run.json``.

The config is one JSON object. Every section is optional except the one the
subcommand needs; relative file paths are resolved against the config file's
directory. See the README for the full schema.

Exit codes: 0 success, 1 a verify suite failed, 2 bad config, input file or
parameters, 3 numerical abort (unstable or non-finite solve, failed tau scan
or root bracket).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kmiter import RootFindingError, run as km_run, theorem_check, trace_csv
from .measure import (
    AtomList,
    GridDensity,
    MeasureFormatError,
    SignedMeasure,
    SpatialAtoms,
    SpatialGridDensity,
    SpatialLebesgue,
    TimeProduct,
    load_measure,
)
from .pde import Domain, ExactSolution, StabilityError, _atomic_write, read_solution, snapshot_csv, manifest, solve
from .potential import DpResult, PotentialParams, ScanError, parabolic_potential, wolff_potential
from .suites import SUITES, run_suite, sample_around

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    """The config file is unreadable or violates the schema."""


# ---------------------------------------------------------------------------
# config parsing

@dataclass
class RunConfig:
    command: str
    raw: dict
    base: Path
    out: Path
    seed: int = 0
    jobs: int = 1


def _section(raw: dict, name: str, required: bool = True) -> dict:
    sec = raw.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"config needs a {name!r} section")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be an object")
    return sec


def _floats(value, what: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be numeric") from None
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{what} must be finite")
    return arr


def _params(sec: dict, p=None, N=None) -> PotentialParams:
    known = {"p", "N", "lam", "kappa", "m", "tau_scan", "dyadic_max_terms", "term_tolerance"}
    extra = set(sec) - known
    if extra:
        raise ConfigError(f"unknown params keys: {', '.join(sorted(extra))}")
    kw = dict(sec)
    if p is not None:
        kw.setdefault("p", p)
    if N is not None:
        kw.setdefault("N", N)
    if "p" not in kw or "N" not in kw:
        raise ConfigError("params need p and N")
    if "tau_scan" in kw:
        kw["tau_scan"] = tuple(kw["tau_scan"])
    try:
        return PotentialParams(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"params: {exc}") from None


def _spatial(spec: dict):
    kind = spec.get("kind")
    if kind == "atoms":
        pos = np.atleast_2d(_floats(spec["positions"], "spatial atom positions"))
        return SpatialAtoms(pos, _floats(spec["weights"], "spatial atom weights"))
    if kind == "lebesgue":
        return SpatialLebesgue(int(spec["N"]), float(spec.get("density", 1.0)))
    if kind == "grid":
        return SpatialGridDensity(_floats(spec["origin"], "origin"), _floats(spec["spacing"], "spacing"),
                                  _floats(spec["values"], "values"))
    raise ConfigError(f"unknown spatial measure kind {kind!r}")


def _measure(spec: dict | None, base: Path, N: int | None = None):
    """(SignedMeasure, spatial measure or None) from a measure spec."""
    if spec is None:
        return SignedMeasure.zero(N or 1), None
    if not isinstance(spec, dict):
        raise ConfigError("measure must be an object")
    kind = spec.get("kind", "file" if "path" in spec else None)
    try:
        if kind == "zero":
            return SignedMeasure.zero(int(spec.get("N", N or 1))), None
        if kind == "file":
            path = base / spec["path"]
            if not path.is_file():
                raise ConfigError(f"measure file not found: {path}")
            return load_measure(path, spec.get("format"), spec.get("N", N)), None
        if kind == "atoms":
            pos = np.atleast_2d(_floats(spec["positions"], "atom positions"))
            w = _floats(spec["weights"], "atom weights")
            signs = spec.get("signs", ["+"] * w.size)
            times = _floats(spec["times"], "atom times")
            plus = np.array([s == "+" for s in signs])
            n = pos.shape[1]
            part = lambda m: (AtomList(pos[m], times[m], w[m], dimension=n) if np.any(m)
                              else SignedMeasure.zero(n).plus)
            return SignedMeasure(part(plus), part(~plus)), None
        if kind == "grid":
            g = GridDensity(_floats(spec["origin"], "origin"), _floats(spec["spacing"], "spacing"),
                            _floats(spec["values"], "values"))
            return SignedMeasure.nonnegative(g), None
        if kind == "time_independent":
            nu = _spatial(spec["spatial"])
            return SignedMeasure.nonnegative(TimeProduct(nu)), nu
    except KeyError as exc:
        raise ConfigError(f"measure spec is missing {exc.args[0]!r}") from None
    raise ConfigError(f"unknown measure kind {kind!r}")


def _domain(sec: dict) -> Domain:
    try:
        return Domain(**sec)
    except TypeError as exc:
        raise ConfigError(f"domain: {exc}") from None


def _exact(spec: dict) -> ExactSolution:
    try:
        return ExactSolution(**spec)
    except TypeError as exc:
        raise ConfigError(f"exact: {exc}") from None


def load_config(path: str | None, command: str, out: str | None, seed: int | None, jobs: int | None) -> RunConfig:
    if path is None:
        if command != "verify":
            raise ConfigError(f"{command} needs --config")
        raw, base = {}, Path.cwd()
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"{p}: not valid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be an object")
        base = p.resolve().parent
    if raw.get("command", command) != command:
        raise ConfigError(f"config is for {raw['command']!r}, not {command!r}")
    out_dir = Path(out) if out is not None else base / raw.get("out", "out")
    seed = int(seed if seed is not None else raw.get("seed", 0))
    jobs = int(jobs if jobs is not None else raw.get("jobs", 1))
    if jobs < 1:
        raise ConfigError("jobs must be positive")
    return RunConfig(command, raw, base, out_dir, seed, jobs)


# ---------------------------------------------------------------------------
# output helpers

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _f(v) -> str:
    return repr(float(v))


def _map(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# potential

def _potential_task(task):
    params, mu, nu, x0, t0, rho = task
    res = parabolic_potential(params, mu, x0, t0, rho)
    W = wolff_potential(nu, x0, rho, 1.0, params.p, params.dyadic_max_terms, params.term_tolerance) if nu else None
    return res, W


def cmd_potential(cfg: RunConfig) -> dict:
    sec = _section(cfg.raw, "potential")
    mu, nu = _measure(cfg.raw.get("measure"), cfg.base, cfg.raw.get("params", {}).get("N"))
    params = _params(_section(cfg.raw, "params"), N=mu.dimension)
    if params.N != mu.dimension:
        raise ConfigError(f"params.N = {params.N} but the measure lives in R^{mu.dimension}")
    part_name = sec.get("part", "total")
    if part_name == "total":
        part = mu.total_variation()
    elif part_name in ("+", "-"):
        part = mu.part(part_name)
        if part_name == "-":
            nu = None
    else:
        raise ConfigError("potential.part must be '+', '-' or 'total'")
    points = np.atleast_2d(_floats(sec.get("points", [[0.0] * (params.N + 1)]), "potential.points"))
    if points.shape[1] != params.N + 1:
        raise ConfigError(f"potential.points need N + 1 = {params.N + 1} coordinates (x..., t)")
    radii = np.atleast_1d(_floats(sec.get("radii", sec.get("rho", 1.0)), "potential.radii"))
    if np.any(radii <= 0):
        raise ConfigError("radii must be positive")
    tasks = [(params, part, nu, pt[:-1], float(pt[-1]), float(r)) for pt in points for r in radii]
    results = _map(_potential_task, tasks, cfg.jobs)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{k + 1}" for k in range(params.N)] + ["t0", "rho", "j", "rho_j", "Dp_j", "tau_j", "partial_sum"])
    summary = []
    for (_, _, _, x0, t0, rho), (res, W) in zip(tasks, results):
        partial = 0.0
        for j, (rho_j, term) in enumerate(res.per_scale):
            val = term.value if isinstance(term, DpResult) else float(term)
            tau = term.tau_star if isinstance(term, DpResult) else math.nan
            partial += val
            w.writerow([_f(c) for c in x0] + [_f(t0), _f(rho), j, _f(rho_j), _f(val), _f(tau), _f(partial)])
        entry = {"x0": x0, "t0": t0, "rho": rho, "value": res.value, "truncated_at": res.truncated_at,
                 "tail_estimate": res.tail_estimate}
        if W is not None:
            entry["wolff"] = W
            entry["rel_diff_wolff"] = abs(res.value - W) / W if W > 0 else abs(res.value)
        summary.append(entry)
    return {
        "potential.csv": buf.getvalue(),
        "potential_summary.json": _json({"params": _param_dict(params), "part": part_name, "points": summary}),
    }


def _param_dict(params: PotentialParams) -> dict:
    return {k: getattr(params, k) for k in ("p", "N", "lam", "kappa", "m", "tau_scan", "dyadic_max_terms",
                                            "term_tolerance")}


# ---------------------------------------------------------------------------
# solve

def _initial(spec, domain: Domain, exact: ExactSolution | None):
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return lambda x: np.zeros_like(x)
    if kind == "constant":
        c = float(spec["value"])
        return lambda x: np.full_like(x, c)
    if kind == "exact":
        if exact is None:
            raise ConfigError("initial kind 'exact' needs solve.exact")
        return lambda x: exact.radial(np.abs(x), domain.t_start)
    if kind == "values":
        return _floats(spec["values"], "initial values")
    raise ConfigError(f"unknown initial kind {kind!r}")


def cmd_solve(cfg: RunConfig) -> dict:
    sec = _section(cfg.raw, "solve")
    try:
        p = float(sec["p"])
        domain = _domain(_section(sec, "domain"))
        h0 = float(sec.get("h", 0.05))
        k0 = float(sec.get("k", 1e-3))
    except KeyError as exc:
        raise ConfigError(f"solve section is missing {exc.args[0]!r}") from None
    exact = _exact(sec["exact"]) if "exact" in sec else None
    if exact is not None and exact.p != p:
        raise ConfigError("solve.exact has a different p")
    initial = _initial(sec.get("initial", {}), domain, exact)
    mu, _ = _measure(sec.get("measure"), cfg.base, domain.N if domain.geometry == "radial" else 1)
    if sec.get("measure") is None:
        mu = None
    bv = sec.get("boundary_value", 0.0)
    if bv == "exact":
        if exact is None:
            raise ConfigError("boundary_value 'exact' needs solve.exact")
        coord = (lambda x: np.abs(x)) if domain.geometry == "line" else (lambda x: x)
        boundary = lambda x, t: exact.radial(coord(x), t)
    else:
        c = float(bv)
        boundary = lambda x, t: np.full(np.shape(x), c)
    levels = int(sec.get("refinements", 1))
    h_factor = float(sec.get("h_factor", 2.0))
    k_factor = float(sec.get("k_factor", 4.0))
    snaps = sec.get("snapshots", "all")
    if snaps not in ("all", "final"):
        raise ConfigError("solve.snapshots must be 'all' or 'final'")
    if levels < 1:
        raise ConfigError("solve.refinements must be >= 1")
    if isinstance(initial, np.ndarray) and levels > 1:
        raise ConfigError("explicit initial values cannot be refined")
    opts = {k: sec[k] for k in ("eps", "tol", "max_sweeps", "store_every") if k in sec}

    files = {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["level", "h", "k", "nodes", "steps", "error_max", "mass_initial", "mass_final", "mass_drift"])
    for lev in range(levels):
        h = h0 / h_factor ** lev
        k = k0 / k_factor ** lev
        try:
            sol = solve(p, domain, initial, mu=mu, h=h, k=k, boundary_value=boundary, **opts)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, StabilityError):
                raise
            raise ConfigError(f"solve: {exc}") from None
        err = math.nan
        if exact is not None:
            radius = np.abs(sol.x) if domain.geometry == "line" else sol.x
            err = float(np.max(np.abs(sol.u[-1] - exact.radial(radius, sol.t[-1]))))
        m0, m1 = sol.mass(0), sol.mass(sol.t.size - 1)
        drift = abs(m1 - m0) / abs(m0) if m0 != 0 else abs(m1 - m0)
        w.writerow([lev, _f(h), _f(k), sol.x.size, len(sol.sweeps), _f(err), _f(m0), _f(m1), _f(drift)])
        stem = "solution" if levels == 1 else f"solution_l{lev}"
        lv = None if snaps == "all" else [sol.t.size - 1]
        files[f"{stem}.csv"] = snapshot_csv(sol, lv)
        files[f"{stem}.json"] = _json(manifest(sol, level=lev, error_max=err, mass_drift=drift))
    files["study.csv"] = buf.getvalue()
    return files


# ---------------------------------------------------------------------------
# km

def _km_task(task):
    sol, exact, grid, mu, params, y, s, rho, theta, j_max, stop_rtol, sign = task
    if sol is None:
        sol = sample_around(exact, y, s, rho, theta, **grid)
    mu_part = mu.part(sign)
    res = km_run(sol, mu_part, y, s, rho, theta, params, j_max=j_max, stop_rtol=stop_rtol)
    lhs = None
    if exact is not None:
        val = exact.radial(abs(y), s) if sol.geometry == "line" else exact.radial(y, s)
        lhs = max(val, 0.0) if sign == "+" else max(-val, 0.0)
    rep = theorem_check(sol, mu, y, s, rho, theta, params, sign=sign, lhs=lhs)
    return res, rep


def cmd_km(cfg: RunConfig) -> dict:
    sec = _section(cfg.raw, "km")
    sol = exact = None
    if "solution" in sec:
        spec = sec["solution"]
        path = cfg.base / spec.get("path", "")
        if not path.is_file():
            raise ConfigError(f"solution file not found: {path}")
        try:
            sol = read_solution(path, float(spec["p"]), spec.get("geometry", "line"), int(spec.get("N", 1)),
                                spec.get("boundary", "neumann"))
        except KeyError as exc:
            raise ConfigError(f"km.solution is missing {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        p, N = sol.p, sol.N
    elif "exact" in sec:
        exact = _exact(sec["exact"])
        if exact.N != 1:
            raise ConfigError("km exact mode samples on a line; use N = 1")
        p, N = exact.p, 1
    else:
        raise ConfigError("km needs a 'solution' file or an 'exact' spec")
    grid = {"nx": int(sec.get("nx", 64)), "nt": int(sec.get("nt", 64))}
    mu, _ = _measure(sec.get("measure"), cfg.base, N)
    params = _params(cfg.raw.get("params", {}) or {}, p=p, N=mu.dimension)
    if params.p != p:
        raise ConfigError(f"params.p = {params.p} but the solution has p = {p}")
    if "points" in sec:
        pts = np.atleast_2d(_floats(sec["points"], "km.points"))
    else:
        try:
            pts = np.array([[float(sec["y"]), float(sec["s"])]])
        except KeyError as exc:
            raise ConfigError(f"km needs points or y and s (missing {exc.args[0]!r})") from None
    if pts.shape[1] != 2:
        raise ConfigError("km points are (y, s) pairs")
    try:
        rho = float(sec["rho"])
        theta = float(sec["theta"])
    except KeyError as exc:
        raise ConfigError(f"km section is missing {exc.args[0]!r}") from None
    j_max = int(sec.get("j_max", 60))
    if j_max < 0:
        raise ConfigError("j_max must be nonnegative")
    sign = sec.get("sign", "+")
    if sign not in ("+", "-"):
        raise ConfigError("km.sign must be '+' or '-'")
    if sign == "-" and exact is not None:
        raise ConfigError("exact solutions are nonnegative; sign '-' needs a solution file")
    if sign == "-":
        mu = mu.negated()
        if sol is not None:
            sol = type(sol)(sol.x, sol.t, -sol.u, sol.h, sol.k, sol.p, sol.domain)
    tasks = [(sol, exact, grid, mu, params, float(y), float(s), rho, theta, j_max,
              float(sec.get("stop_rtol", 1e-8)), "+") for y, s in pts]
    try:
        results = _map(_km_task, tasks, cfg.jobs)
    except ValueError as exc:
        raise ConfigError(f"km: {exc}") from None
    files = {}
    summary = []
    for i, ((y, s), (res, rep)) in enumerate(zip(pts, results)):
        files[f"km_trace_{i:03d}.csv"] = trace_csv(res)
        summary.append({
            "y": y, "s": s, "rho": rho, "theta": theta, "steps": len(res.states),
            "l_inf": res.l_inf, "l_partial": res.l_partial, "tail": res.tail, "tail_flag": res.tail_flag,
            "converged": res.converged, "delta_rho_theta": res.delta_rho_theta,
            "corollary_components": {"two_delta": res.corollary_components[0],
                                     "average_term": res.corollary_components[1],
                                     "dp_sum": res.corollary_components[2]},
            "invariants": res.invariants,
            "theorem": {"lhs": rep.lhs, "eps_term": rep.eps_term, "average_term": rep.average_term,
                        "potential_term": rep.potential_term, "ratio": rep.ratio, "sign": sign},
        })
    files["km_summary.json"] = _json({"params": _param_dict(params), "sign": sign, "points": summary})
    return files


# ---------------------------------------------------------------------------
# verify

def cmd_verify(cfg: RunConfig) -> tuple[dict, list]:
    sec = _section(cfg.raw, "verify", required=False)
    names = sec.get("suites", list(SUITES))
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ConfigError(f"unknown suites: {', '.join(unknown)}; available: {', '.join(SUITES)}")
    options = sec.get("options", {})
    results = []
    for name in names:
        res = run_suite(name, cfg.seed, **options.get(name, {}))
        print(res.line(), f"[{res.seconds:.1f}s]", flush=True)
        results.append(res)
    report = {"seed": cfg.seed, "passed": all(r.passed for r in results),
              "suites": [{k: v for k, v in r.as_dict().items() if k != "seconds"} for r in results]}
    return {"verify_report.json": _json(report)}, [r.name for r in results if not r.passed]


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="parawolff", description="Parabolic Wolff potentials and pointwise estimates.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("potential", "evaluate D_p tables and parabolic Wolff potentials"),
                       ("solve", "run the p-Laplacian solver"),
                       ("verify", "run the verification suites"),
                       ("km", "run the level iteration at query points")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", metavar="PATH", help="JSON config file")
        sp.add_argument("--out", metavar="DIR", help="output directory (default: <config dir>/out)")
        sp.add_argument("--seed", type=int, help="seed for randomised suites")
        sp.add_argument("--jobs", type=int, help="worker processes for independent query points")
    return ap


def _write(out: Path, files: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        _atomic_write(out / name, text)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    failed = []
    try:
        cfg = load_config(args.config, args.command, args.out, args.seed, args.jobs)
        if args.command == "potential":
            files = cmd_potential(cfg)
        elif args.command == "solve":
            files = cmd_solve(cfg)
        elif args.command == "km":
            files = cmd_km(cfg)
        else:
            files, failed = cmd_verify(cfg)
        _write(cfg.out, files)
    except (ConfigError, MeasureFormatError, FileNotFoundError) as exc:
        print(f"parawolff {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StabilityError, ScanError, RootFindingError, FloatingPointError) as exc:
        print(f"parawolff {args.command}: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (KeyError, TypeError, ValueError) as exc:
        print(f"parawolff {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if failed:
        print(f"parawolff verify: failed suites: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
