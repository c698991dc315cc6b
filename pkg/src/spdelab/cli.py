"""Command-line front end: one subcommand per experiment family, plus ``report``.

Usage::

    spdelab converge-weak-exact --set mc.seed=1 --out results/weak.csv
    spdelab converge-strong --config run.json --set mc.samples=500 --assert
    spdelab report results/*.csv --plot plots/

Exit codes: 0 success, 2 configuration error, 3 numeric precondition
violation, 4 failed ``--assert`` check.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import experiments as ex
from . import fem, malliavin
from .errors import ConfigError, PreconditionError
from .noise import NoiseModel
from .parallel import ENV_WORKERS
from .rates import fit_rate

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ASSERT = 0, 2, 3, 4

BLOCKS = ("problem", "grid", "mc", "output", "params")

NORM_COLUMNS = ["p", "q", "h", "k", "alpha", "estimate", "stderr", "samples"]

_BASE = {
    "problem": {"T": 1.0, "x0": None, "drift": "zero", "alpha": 0.0, "J": 64},
    "grid": {"h": [], "k": []},
    "mc": {"samples": 0, "seed": None, "workers": None},
    "output": {"path": None},
    "params": {},
}

_P = lambda *e: [2.0**-x for x in e]  # noqa: E731

DEFAULTS = {
    "probe-operators": {
        "grid": {"h": [1 / 16, 1 / 32, 1 / 64, 1 / 128], "k": _P(6, 7, 8, 9, 10)},
        "params": {"cases": [[2.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [2.0, -2.0]],
                   "smoothing": [0.5, 1.0], "compat_rho": 0.5, "slope_tol": 0.05},
    },
    "probe-negnorm": {
        "grid": {"h": [1 / 16, 1 / 32, 1 / 64, 1 / 128], "k": _P(6, 7, 8, 9, 10)},
        "params": {"gamma": 0.4, "beta": 0.5, "slope_tol": 0.05},
    },
    "converge-strong": {
        "problem": {"drift": "sin", "alpha": 2.0, "J": 32},
        "grid": {"h": None, "k": _P(3, 4, 5, 6, 7, 8)},
        "mc": {"samples": 2000},
        "params": {"exact": False, "N_ref": 4096, "levels": 3, "window": [0.35, 0.65],
                   "fit": "k"},
    },
    "converge-weak": {
        "problem": {"drift": "sin", "alpha": 2.0, "J": 32},
        "grid": {"h": None, "k": _P(3, 4, 5, 6, 7)},
        "mc": {"samples": 2000},
        "params": {"functional": "squared-norm", "psi": [1.0], "m": 1, "N_ref": 4096,
                   "levels": 2, "window": [0.7, 1.1], "fit": "k"},
    },
    "converge-weak-exact": {
        "problem": {"alpha": 0.0},
        "grid": {"h": None, "k": _P(6, 7, 8, 9, 10, 11, 12)},
        "params": {"window": [0.40, 0.55], "fit": "k"},
    },
    "malliavin-norms": {
        "problem": {"drift": "sin", "alpha": 0.0, "J": 64},
        "grid": {"h": [1 / 16, 1 / 32, 1 / 64], "k": _P(5, 6, 7)},
        "mc": {"samples": 100},
        "params": {"p": 4.0, "q": 3.0, "max_variation": 0.25},
    },
    "ibp-test": {
        "mc": {"samples": 20000},
        "params": {"N": 6, "L": 2, "d": 3, "case_seed": 11},
    },
    "dual-probe": {
        "mc": {"samples": 20000},
        "params": {"p": 4.0, "q": 4.0, "sigma": 0.6, "N": 64, "L": 2, "d": 3, "case_seed": 11},
    },
    "markov-holder": {
        "problem": {"alpha": 2.0, "drift": "zero"},
        "params": {"gamma": 0.9, "functional": None, "N": 1024, "x0": [0.0],
                   "tolerance": 0.1},
    },
    "gronwall-demo": {
        "grid": {"k": [1 / 128]},
        "params": {"C1": 1.0, "C2": 0.5, "mu": 0.5, "nu": 0.5, "doublings": 4,
                   "stable_tol": 0.05},
    },
}

KINDS = tuple(DEFAULTS)


# ---- configuration --------------------------------------------------------


def _merge(base, over, where=""):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if where == "" and key not in BLOCKS:
            raise ConfigError(f"unknown config block {key!r}")
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg, assignment):
    """``block.key=value``; ``value`` is parsed as JSON when possible."""
    if "=" not in assignment or "." not in assignment.split("=", 1)[0]:
        raise ConfigError(f"override {assignment!r} must look like block.key=value")
    path, text = assignment.split("=", 1)
    block, key = path.split(".", 1)
    if block not in BLOCKS:
        raise ConfigError(f"unknown config block {block!r} in override")
    cfg.setdefault(block, {})[key] = _parse_value(text)
    return cfg


def resolve_config(kind, user=None, overrides=()):
    """Defaults for ``kind`` merged with ``user`` and ``--set`` overrides."""
    if kind not in DEFAULTS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    cfg = _merge(_merge(_BASE, DEFAULTS[kind]), user or {})
    for o in overrides:
        apply_override(cfg, o)
    _validate(kind, cfg)
    return cfg


def _validate(kind, cfg):
    seed = cfg["mc"].get("seed")
    if seed is None:
        raise ConfigError("mc.seed is mandatory (set it with --set mc.seed=<int>)")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"mc.seed must be a non-negative integer, got {seed!r}")
    g = cfg["grid"]
    if kind not in ("ibp-test", "dual-probe", "markov-holder"):
        if not g.get("k"):
            raise ConfigError("grid.k must be a nonempty list")
        if g.get("h") is not None and not isinstance(g["h"], list):
            raise ConfigError("grid.h must be a list or null")
        if kind in ("probe-operators", "probe-negnorm", "malliavin-norms") and not g.get("h"):
            raise ConfigError("grid.h must be a nonempty list")
    for name in ("h", "k"):
        vals = g.get(name) or []
        if any(not isinstance(v, (int, float)) or v <= 0 for v in vals):
            raise ConfigError(f"grid.{name} entries must be positive numbers")
    s = cfg["mc"].get("samples", 0)
    if not isinstance(s, int) or s < 0:
        raise ConfigError("mc.samples must be a non-negative integer")
    w = cfg["mc"].get("workers")
    if w is not None and (not isinstance(w, int) or w < 1):
        raise ConfigError("mc.workers must be a positive integer or null")


def config_digest(cfg):
    """SHA-256 of the result-determining config (worker count excluded)."""
    c = copy.deepcopy(cfg)
    c["mc"].pop("workers", None)
    c.pop("output", None)
    blob = json.dumps(c, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---- fits ------------------------------------------------------------------


_GROUP = ("experiment", "backend", "alpha", "gamma", "functional")


def _key(v):
    return "nan" if isinstance(v, float) and math.isnan(v) else v


def compute_fits(rows):
    """Rate fits for every sweep direction with at least three points.

    Rows are grouped by experiment, backend, alpha, gamma and functional; the
    fit runs along ``h`` for each fixed ``k`` and vice versa.
    """
    groups = {}
    for r in rows:
        if r["flag"].startswith("fit-"):
            continue
        groups.setdefault(tuple(_key(r[c]) for c in _GROUP), []).append(r)
    fits = []
    for key, grp in groups.items():
        for kind, other in (("h", "k"), ("k", "h")):
            lines = {}
            for r in grp:
                lines.setdefault(_key(r[other]), []).append(r)
            for fixed, pts in lines.items():
                xs = [p[kind] for p in pts]
                if len({x for x in xs}) < 3 or any(not x > 0 for x in xs):
                    continue
                pts = sorted(pts, key=lambda p: p[kind])
                if any(not p["value"] > 0 for p in pts):
                    continue
                f = fit_rate([p[kind] for p in pts], [p["value"] for p in pts], kind=kind)
                row = dict(zip(_GROUP, [pts[0][c] for c in _GROUP]))
                row.update(h=math.nan, k=math.nan, N=f.points, samples=0, value=f.slope,
                           stderr=f.residual, flag=f"fit-{kind}", beta=pts[0]["beta"])
                row[other] = pts[0][other]
                row["spearman"] = ex.spearman(xs, [p["value"] for p in pts]) if len(xs) > 2 else math.nan
                fits.append(row)
    return fits


# ---- experiment runners ------------------------------------------------------


class Result:
    def __init__(self, rows, columns=None, checks=None, notes=None):
        self.rows = rows
        self.columns = columns or ex.COLUMNS
        self.checks = checks or []
        self.notes = notes or []


def _check(name, ok, detail):
    return dict(name=name, ok=bool(ok), detail=detail)


def _probe_rows(kind, report, label):
    rows = []
    for (h, k), v in sorted(fem._cell_max(report.rows).items()):
        rows.append(ex.make_row(kind, "fem", functional=label, h=h, k=k,
                                N=int(math.floor(1.0 / k + 1e-12)), value=v))
    return rows


def run_probe_operators(cfg):
    g, p = cfg["grid"], cfg["params"]
    rows, checks = [], []
    for h in g["h"]:
        M = int(round(1 / h)) - 1
        v = fem.compat_norm(M, p["compat_rho"])
        rows.append(ex.make_row("probe-compat", "fem", functional=f"rho={p['compat_rho']:g}",
                                h=h, value=v))
        checks.append(_check(f"compat h={h:g}", v <= 1 + 1e-8, f"norm={v:.12f}"))
    for theta, rho in p["cases"]:
        rep = fem.assumption_probe(theta, rho, g["h"], g["k"], cfg["problem"]["T"])
        label = f"error-op theta={theta:g} rho={rho:g}"
        rows += _probe_rows("probe-operators", rep, label)
        checks.append(_check(label, rep.max_path_slope <= p["slope_tol"],
                             f"path slope {rep.max_path_slope:.4f}; marginal h {rep.slope_h:.4f} "
                             f"k {rep.slope_k:.4f}; max ratio {rep.max_ratio:.4f}"))
    for rho in p["smoothing"]:
        rep = fem.analytic_probe(rho, g["h"], g["k"], cfg["problem"]["T"])
        label = f"smoothing rho={rho:g}"
        rows += _probe_rows("probe-operators", rep, label)
        worst = max(abs(rep.slope_h), abs(rep.slope_k), rep.max_path_slope)
        checks.append(_check(label, worst <= p["slope_tol"], f"max |slope| {worst:.4f}"))
    return Result(rows, checks=checks)


def run_probe_negnorm(cfg):
    g, p = cfg["grid"], cfg["params"]
    rep = fem.negnorm_probe(p["gamma"], p["beta"], g["h"], g["k"], T=cfg["problem"]["T"])
    label = f"negnorm gamma={p['gamma']:g} beta={p['beta']:g}"
    rows = _probe_rows("probe-negnorm", rep, label)
    for r in rows:
        r["gamma"], r["beta"] = p["gamma"], p["beta"]
    ok = math.isfinite(rep.max_ratio) and rep.max_path_growth <= p["slope_tol"]
    chk = _check(label, ok, f"growth under refinement {rep.max_path_growth:.4f}; "
                 f"marginal h {rep.slope_h:.4f} k {rep.slope_k:.4f}; max ratio {rep.max_ratio:.4f}")
    return Result(rows, checks=[chk])


def _window_check(name, fits, kind, window, rows=None):
    fs = [f for f in fits if f["flag"] == f"fit-{kind}"]
    if not fs:
        return _check(name, False, f"no {kind}-fit available")
    f = fs[0]
    lo, hi = window
    inconclusive = rows is not None and any(r["flag"] == "inconclusive" for r in rows)
    ok = lo <= f["value"] <= hi
    return _check(name, ok, f"{kind}-slope {f['value']:.4f} in [{lo}, {hi}]"
                  + (" (some rows inconclusive)" if inconclusive else ""))


def _hs(g):
    return None if not g.get("h") else g["h"]


def run_converge_weak_exact(cfg):
    pr, g, p = cfg["problem"], cfg["grid"], cfg["params"]
    rows = ex.weak_error_exact_quadratic(pr["alpha"], _hs(g), g["k"], pr["T"], pr["x0"], pr["J"])
    fits = compute_fits(rows)
    return Result(rows, checks=[_window_check("weak-exact", fits, p["fit"], p["window"])])


def _noise(pr):
    return NoiseModel(pr["alpha"], int(pr["J"]))


def _Ns(g, T):
    return [int(math.floor(T / k + 1e-12)) for k in g["k"]]


def run_converge_strong(cfg):
    pr, g, p, mc = cfg["problem"], cfg["grid"], cfg["params"], cfg["mc"]
    if p["exact"]:
        if pr["drift"] != "zero":
            raise PreconditionError("exact strong errors need the linear equation (drift zero)")
        rows = ex.strong_error_exact(pr["alpha"], _hs(g), g["k"], pr["T"])
    else:
        if mc["samples"] < 2:
            raise ConfigError("mc.samples must be >= 2 for Monte Carlo runs")
        rows = ex.strong_error(pr["drift"], _noise(pr), _hs(g), _Ns(g, pr["T"]), mc["samples"],
                               mc["seed"], pr["T"], N_ref=p["N_ref"], levels=p["levels"],
                               workers=mc["workers"], x0=pr["x0"])
    fits = compute_fits(rows)
    return Result(rows, checks=[_window_check("strong", fits, p["fit"], p["window"])])


def run_converge_weak(cfg):
    pr, g, p, mc = cfg["problem"], cfg["grid"], cfg["params"], cfg["mc"]
    if mc["samples"] < 2:
        raise ConfigError("mc.samples must be >= 2 for Monte Carlo runs")
    phi = ex.FunctionalSpec(p["functional"], tuple(p["psi"]), p["m"])
    rows = ex.weak_error_mc(phi, pr["drift"], _noise(pr), _hs(g), _Ns(g, pr["T"]), mc["samples"],
                            mc["seed"], pr["T"], N_ref=p["N_ref"], levels=p["levels"],
                            workers=mc["workers"], x0=pr["x0"])
    fits = compute_fits(rows)
    return Result(rows, checks=[_window_check("weak-mc", fits, p["fit"], p["window"], rows)])


def run_malliavin_norms(cfg):
    pr, g, p, mc = cfg["problem"], cfg["grid"], cfg["params"], cfg["mc"]
    rows = malliavin.refined_norm_sweep(p["p"], p["q"], pr["alpha"], g["h"], g["k"], mc["samples"],
                                        mc["seed"], pr["drift"], pr["T"], int(pr["J"]), pr["x0"],
                                        mc["workers"])
    est = np.array([r["estimate"] for r in rows])
    var = float((est.max() - est.min()) / est.min())
    return Result(rows, NORM_COLUMNS,
                  [_check("norm variation", var < p["max_variation"], f"variation {var:.3f}")])


def run_ibp_test(cfg):
    p, mc = cfg["params"], cfg["mc"]
    space = malliavin.GaussianSpace(p["N"], p["L"], cfg["problem"]["T"] / p["N"])
    space, cases = malliavin.ibp_catalog(space, p["d"], p["case_seed"])
    rows, checks = [], []
    for name, Y, Phi in cases:
        r = malliavin.ibp_check(Y, Phi, space, mc["samples"], mc["seed"], name)
        ok = abs(r.discrepancy) <= 3 * r.stderr
        exact = abs(r.lhs_exact - r.rhs_exact) <= 1e-12 * max(1.0, abs(r.lhs_exact))
        rows.append(ex.make_row("ibp", "gaussian", functional=name, k=space.k, N=space.N,
                                samples=r.samples, value=r.discrepancy, stderr=r.stderr,
                                flag="ok" if ok and exact else "fail"))
        rows.append(ex.make_row("ibp-exact", "isserlis", functional=name, k=space.k, N=space.N,
                                value=r.lhs_exact, stderr=abs(r.lhs_exact - r.rhs_exact)))
        checks.append(_check(name, ok and exact, f"disc {r.discrepancy:+.5f} se {r.stderr:.5f}; "
                             f"exact {r.lhs_exact:+.6f} vs {r.rhs_exact:+.6f}"))
    return Result(rows, checks=checks)


def dual_cases(p, space):
    """Catalog for the dual probe: adapted/deterministic integrands and ``Y = delta Phi``."""
    _, cases = malliavin.ibp_catalog(space, p["d"], p["case_seed"])
    return cases


def run_dual_probe(cfg):
    p, mc = cfg["params"], cfg["mc"]
    T = cfg["problem"]["T"]
    space = malliavin.GaussianSpace(p["N"], p["L"], T / p["N"])
    rows, checks = [], []
    mc_rows = malliavin.dual_burkholder_probe(p["p"], p["q"], dual_cases(p, space), space,
                                              mc["samples"], mc["seed"])
    rng = np.random.default_rng(p["case_seed"])
    psi, eta = rng.normal(size=p["d"]), rng.normal(size=p["L"])
    Ys = [(rng.normal(size=p["d"]), rng.normal(size=(space.N, space.L)), r) for r in (1, 3)]
    sing = malliavin.singular_dual_probe(p["p"], p["q"], p["sigma"], space, psi, eta, Ys)
    det = malliavin.deterministic_dual_probe(p["p"], p["q"], space, rng.normal(size=(space.N, p["d"], p["L"])))
    for r in mc_rows:
        ok = r["ratio"] <= 1 + 3 * r["stderr"]
        rows.append(ex.make_row("dual-probe", "mc", functional=r["name"], k=space.k, N=space.N,
                                samples=mc["samples"], value=r["ratio"], stderr=r["stderr"],
                                flag="ok" if ok else "fail"))
        checks.append(_check(r["name"], ok, f"ratio {r['ratio']:.4f} se {r['stderr']:.4f}"))
    for r in sing:
        ok = r["ratio"] <= 1 and math.isfinite(r["phi_norm"])
        name = f"singular sigma={p['sigma']:g} power={r['power']}"
        rows.append(ex.make_row("dual-probe", "exact", functional=name, k=space.k, N=space.N,
                                value=r["ratio"], flag="ok" if ok else "fail"))
        checks.append(_check(name, ok, f"ratio {r['ratio']:.4f}; dual norm {r['phi_norm']:.4f}; "
                             f"L2 bound {r['l2_bound']}"))
    ok = det["ratio"] <= 1
    rows.append(ex.make_row("dual-probe", "exact", functional="Y=delta(Phi) deterministic",
                            k=space.k, N=space.N, value=det["ratio"], flag="ok" if ok else "fail"))
    checks.append(_check("Y=delta(Phi)", ok, f"ratio {det['ratio']:.4f}"))
    return Result(rows, checks=checks)


def run_markov_holder(cfg):
    pr, p, mc = cfg["problem"], cfg["params"], cfg["mc"]
    if p["functional"] is None:
        worst, rows, fits = ex.markov_holder_probe(p["gamma"], pr["alpha"], T=pr["T"], x0=p["x0"])
    else:
        phi = ex.FunctionalSpec(p["functional"], tuple(p.get("psi", [1.0])), p.get("m", 1))
        if mc["samples"] < 2:
            raise ConfigError("mc.samples must be >= 2 for Monte Carlo runs")
        worst, rows, fits = ex.markov_holder_probe(
            p["gamma"], pr["alpha"], phi, drift=pr["drift"], samples=mc["samples"],
            seed=mc["seed"], T=pr["T"], N=p["N"], x0=p["x0"], modes=int(pr["J"]),
            workers=mc["workers"])
    need = p["gamma"] - p["tolerance"]
    ok = worst is not None and worst.slope >= need
    det = "no conclusive family" if worst is None else f"exponent {worst.slope:.4f} >= {need:.2f}"
    return Result(rows, checks=[_check("markov-holder", ok, det)])


def run_gronwall_demo(cfg):
    g, p = cfg["grid"], cfg["params"]
    rows, checks = [], []
    for k0 in g["k"]:
        Cs = []
        for e in range(p["doublings"] + 1):
            k = k0 / 2**e
            N = int(round(1 / k))
            phi = ex.gronwall_sequence(p["C1"], p["C2"], p["mu"], p["nu"], k, N)
            v = ex.gronwall_check(phi, p["C1"], p["C2"], p["mu"], p["nu"], k)
            rows.append(ex.make_row("gronwall", "", k=k, N=N, value=v.constant,
                                    flag="ok" if v.hypothesis_holds else "fail"))
            Cs.append(v.constant)
            checks.append(_check(f"hypothesis k={k:g}", v.hypothesis_holds, f"C={v.constant:.4f}"))
        d = np.diff(Cs)
        stable = bool(np.all(np.abs(d[1:]) <= np.abs(d[:-1]))) and abs(d[-1]) <= p["stable_tol"] * Cs[-1]
        checks.append(_check(f"constant stable under N-doubling (k0={k0:g})", stable,
                             "C = " + ", ".join(f"{c:.4f}" for c in Cs)))
    return Result(rows, checks=checks)


RUNNERS = {
    "probe-operators": run_probe_operators,
    "probe-negnorm": run_probe_negnorm,
    "converge-strong": run_converge_strong,
    "converge-weak": run_converge_weak,
    "converge-weak-exact": run_converge_weak_exact,
    "malliavin-norms": run_malliavin_norms,
    "ibp-test": run_ibp_test,
    "dual-probe": run_dual_probe,
    "markov-holder": run_markov_holder,
    "gronwall-demo": run_gronwall_demo,
}


# ---- output ----------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    if isinstance(v, (np.floating, np.integer)):
        return _fmt(v.item())
    return str(v)


def csv_text(kind, cfg, result):
    """CSV document: ``#`` header comments, then the column header and rows."""
    rows = list(result.rows)
    if result.columns is ex.COLUMNS:
        rows += compute_fits(result.rows)
    buf = io.StringIO()
    digest = config_digest(cfg)
    buf.write(f"# spdelab {kind}\n")
    buf.write(f"# config-digest: {digest}\n")
    conf = copy.deepcopy(cfg)
    conf["mc"].pop("workers", None)
    conf.pop("output", None)
    buf.write(f"# config: {json.dumps(conf, sort_keys=True, separators=(',', ':'))}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(result.columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in result.columns])
    return buf.getvalue()


def csv_body(text):
    """The CSV without its ``#`` comment lines."""
    return "".join(line for line in text.splitlines(True) if not line.startswith("#"))


def _versions():
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "spdelab": __version__}


def run(kind, cfg, out=None):
    """Run one experiment; write CSV and manifest. Returns ``(result, paths)``."""
    t0 = time.perf_counter()
    result = RUNNERS[kind](cfg)
    wall = time.perf_counter() - t0
    text = csv_text(kind, cfg, result)
    out = out or cfg["output"].get("path") or f"results/{kind}.csv"
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    manifest = {"experiment": kind, "config": cfg, "config_digest": config_digest(cfg),
                "seed": cfg["mc"]["seed"], "versions": _versions(), "wall_time": wall,
                "workers_env": os.environ.get(ENV_WORKERS), "csv": str(out),
                "checks": result.checks}
    mpath = out.with_suffix(".json")
    mpath.write_text(json.dumps(manifest, indent=2, default=_json_default))
    return result, (out, mpath)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


# ---- report ------------------------------------------------------------------


def read_csv(path):
    """Rows of a result CSV (comment lines skipped); columns as strings."""
    text = Path(path).read_text()
    lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    if not lines:
        raise ConfigError(f"{path}: no CSV header found")
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    return reader.fieldnames, list(reader)


def _typed(row):
    out = dict(row)
    for c in ("alpha", "beta", "gamma", "h", "k", "value", "stderr", "p", "q", "estimate"):
        if c in out:
            out[c] = float(out[c])
    for c in ("N", "samples"):
        if c in out:
            out[c] = int(out[c])
    return out


def pool(rows):
    """Inverse-variance pooling of repeated cells (same key, different seeds)."""
    cells = {}
    for r in rows:
        key = tuple(_key(r[c]) for c in ("experiment", "backend", "alpha", "beta", "gamma",
                                         "functional", "h", "k", "N"))
        cells.setdefault(key, []).append(r)
    out = []
    for grp in cells.values():
        if len(grp) == 1:
            out.append(dict(grp[0]))
            continue
        v = np.array([g["value"] for g in grp])
        se = np.array([g["stderr"] for g in grp])
        r = dict(grp[0])
        if np.all(se > 0):
            w = 1.0 / se**2
            r["value"] = float(np.sum(w * v) / np.sum(w))
            r["stderr"] = float(1.0 / math.sqrt(np.sum(w)))
        else:
            r["value"] = float(v.mean())
            r["stderr"] = 0.0
        r["samples"] = int(sum(g["samples"] for g in grp))
        r["flag"] = "ok" if all(g["flag"] == "ok" for g in grp) else ex._flag(r["value"], r["stderr"])
        out.append(r)
    return out


def report(paths, plot_dir=None):
    """Merge result CSVs, pool repeated cells and recompute the fits.

    Returns ``(summary_text, pooled_rows, fits)``.
    """
    if not paths:
        raise ConfigError("report needs at least one CSV file")
    header, rows = None, []
    for p in paths:
        cols, rs = read_csv(p)
        if header is None:
            header = cols
        elif cols != header:
            missing = [c for c in header if c not in cols]
            extra = [c for c in cols if c not in header]
            name = (missing or extra or ["<order>"])[0]
            raise ConfigError(f"{p}: schema mismatch at column {name!r}")
        rows += [_typed(r) for r in rs]
    if not rows:
        raise ConfigError("report inputs contain no rows")
    lines = []
    if header == NORM_COLUMNS:
        est = [r["estimate"] for r in rows]
        for r in rows:
            lines.append(f"p={r['p']:g} q={r['q']:g} h={r['h']:.5g} k={r['k']:.5g} "
                         f"estimate={r['estimate']:.6g} se={r['stderr']:.2g}")
        lines.append(f"variation {(max(est) - min(est)) / min(est):.4f}")
        return "\n".join(lines) + "\n", rows, []
    if header != ex.COLUMNS:
        missing = [c for c in ex.COLUMNS if c not in header]
        raise ConfigError(f"schema mismatch at column {(missing or header)[0]!r}")
    data = pool([r for r in rows if not r["flag"].startswith("fit-")])
    fits = compute_fits(data)
    for r in data:
        lines.append(f"{r['experiment']:<16} {r['backend']:<9} {r['functional']:<24} "
                     f"h={r['h']:<10.5g} k={r['k']:<10.5g} value={r['value']:.6g} "
                     f"se={r['stderr']:.2g} {r['flag']}")
    for f in fits:
        kind = f["flag"][4:]
        lines.append(f"fit {f['experiment']} {f['functional']} {kind}-slope={f['value']:.4f} "
                     f"residual={f['stderr']:.3g} points={f['N']} spearman={f['spearman']:.3f}")
    if plot_dir:
        _plots(data, fits, Path(plot_dir))
    return "\n".join(lines) + "\n", data, fits


def _plots(data, fits, outdir):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(fits):
        kind = f["flag"][4:]
        other = "k" if kind == "h" else "h"
        pts = [r for r in data if all(_key(r[c]) == _key(f[c]) for c in _GROUP)
               and _key(r[other]) == _key(f[other])]
        pts.sort(key=lambda r: r[kind])
        x = np.array([r[kind] for r in pts])
        y = np.array([r["value"] for r in pts])
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        ax.loglog(x, y, "o-", label=f"slope {f['value']:.3f}")
        ax.set_xlabel(kind)
        ax.set_ylabel("error")
        ax.set_title(f"{f['experiment']} {f['functional']}".strip(), fontsize=9)
        ax.legend()
        fig.tight_layout()
        fig.savefig(outdir / f"{f['experiment']}_{kind}_{i}.svg")
        plt.close(fig)


# ---- entry point ---------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="spdelab", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind, help=f"run the {kind} experiment")
        sp.add_argument("--config", help="JSON config with blocks problem/grid/mc/output/params")
        sp.add_argument("--set", action="append", default=[], metavar="BLOCK.KEY=VALUE",
                        help="override a config entry (repeatable)")
        sp.add_argument("--out", help="CSV output path (manifest written alongside)")
        sp.add_argument("--assert", dest="check", action="store_true",
                        help="exit with status 4 if an acceptance check fails")
        sp.add_argument("--quiet", action="store_true", help="do not print the check summary")
    rp = sub.add_parser("report", help="merge result CSVs and recompute fits")
    rp.add_argument("csv", nargs="*")
    rp.add_argument("--plot", metavar="DIR", help="write SVG log-log plots to DIR")
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.command == "report":
            text, _, _ = report(args.csv, args.plot)
            sys.stdout.write(text)
            return EXIT_OK
        user = None
        if args.config:
            try:
                user = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read config {args.config}: {e}") from e
        cfg = resolve_config(args.command, user, args.set)
        result, (csv_path, _) = run(args.command, cfg, args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (PreconditionError, FloatingPointError) as e:
        print(f"precondition violated: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    if not args.quiet:
        print(f"wrote {csv_path}")
        for c in result.checks:
            print(f"{'PASS' if c['ok'] else 'FAIL'} {c['name']}: {c['detail']}")
    if args.check and not all(c["ok"] for c in result.checks):
        return EXIT_ASSERT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
