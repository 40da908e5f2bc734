"""Command line interface.

Subcommands: ``models``, ``greens``, ``neck``, ``weights``, ``collapse`` and
``run``.  JSON goes to stdout (or a file with ``--out``); CSV profiles are
written to files under ``--out-dir``.  Exit codes: 0 success, 1 a check
failed, 2 invalid configuration, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import SCHEMA, __version__

log = logging.getLogger("neckforge")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


class NumericFailure(RuntimeError):
    """A numeric assertion (positivity, masking) failed."""


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"


def _write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _emit_json(obj, args, default_name=None):
    text = _dumps(obj)
    if getattr(args, "out", None):
        _write_atomic(_resolve(args, args.out), text)
    elif default_name and args.out_dir:
        _write_atomic(Path(args.out_dir) / default_name, text)
    sys.stdout.write(text)


def _resolve(args, name) -> Path:
    p = Path(name)
    if p.is_absolute() or not args.out_dir:
        return p
    return Path(args.out_dir) / p


# ---------------------------------------------------------------------------
# configuration parsing with field paths
# ---------------------------------------------------------------------------


def _load_json(path, where="config"):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{where}: file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{where}: malformed JSON ({e.msg} at line {e.lineno})") from None


def _get(d, key, path, kind=None, default=..., check=None):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    if key not in d:
        if default is ...:
            raise ConfigError(f"{path}.{key}: required field missing")
        return default
    v = d[key]
    if kind is not None:
        try:
            if kind is int and (isinstance(v, bool) or int(v) != v):
                raise TypeError
            v = kind(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {d[key]!r}") from None
    if check is not None:
        msg = check(v)
        if msg:
            raise ConfigError(f"{path}.{key}: {msg}")
    return v


def _check_schema(d, path):
    s = _get(d, "schema", path, str, default=SCHEMA)
    if s != SCHEMA:
        raise ConfigError(f"{path}.schema: expected {SCHEMA!r}, got {s!r}")


def parse_torus(d, path="torus"):
    from .greens import FlatTorusCY, GreensError

    cd = _get(d, "complex_dim", path, int, default=1, check=lambda v: None if v >= 1 else "must be >= 1")
    lat = _get(d, "lattice", path, default=None)
    try:
        return FlatTorusCY(complex_dim=cd, lattice=lat)
    except (GreensError, ValueError, TypeError) as e:
        raise ConfigError(f"{path}.lattice: {e}") from None


def parse_greens(d, path="greens"):
    """Series from {"torus", "pairing", "modes"} or from a serialized series object."""
    from .greens import GreensCurrentSeries, GreensError, build_greens_current, point_divisor_pairing, synthetic_pairing

    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    if d.get("kind") == "GreensCurrentSeries":
        try:
            return GreensCurrentSeries.from_json(d)
        except (GreensError, KeyError, ValueError) as e:
            raise ConfigError(f"{path}: {e}") from None
    torus = parse_torus(_get(d, "torus", path, default={}), f"{path}.torus")
    pd = _get(d, "pairing", path)
    pp = f"{path}.pairing"
    kind = _get(pd, "kind", pp, str, check=lambda v: None if v in ("points", "synthetic") else "must be 'points' or 'synthetic'")
    km = _get(pd, "k_minus", pp, int, default=1, check=lambda v: None if v > 0 else "must be a positive integer")
    kp = _get(pd, "k_plus", pp, int, default=-1, check=lambda v: None if v < 0 else "must be a negative integer")
    avail = _get(pd, "modes", pp, int, default=4000, check=lambda v: None if v >= 2 else "must be >= 2")
    try:
        if kind == "points":
            pts = _get(pd, "points", pp)
            mults = _get(pd, "mults", pp, default=None)
            pairing = point_divisor_pairing(torus, pts, mults, km, kp, modes=avail)
        else:
            pairing = synthetic_pairing(
                torus, km, kp, modes=avail,
                decay=_get(pd, "decay", pp, float, default=4.0),
                scale=_get(pd, "scale", pp, float, default=1.0),
                seed=_get(pd, "seed", pp, int, default=0),
            )
        modes = _get(d, "modes", path, int, default=min(avail, 400))
        return build_greens_current(torus, pairing, modes)
    except GreensError as e:
        raise ConfigError(f"{pp}: {e}") from None


def parse_neck(d, path="neck", base_dir=None):
    from .greens import GreensCurrentSeries
    from .neck import NeckConfig, NeckError

    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    _check_schema(d, path)
    if "series" in d and isinstance(d["series"], str):
        sp = Path(d["series"])
        if base_dir is not None and not sp.is_absolute():
            sp = Path(base_dir) / sp
        series = parse_greens(_load_json(sp, f"{path}.series"), f"{path}.series")
    elif "series" in d:
        series = parse_greens(d["series"], f"{path}.series")
    else:
        series = parse_greens(_get(d, "greens", path), f"{path}.greens")
    T = _get(d, "T", path, float, check=lambda v: None if v > 1 else "must exceed 1")
    bc = _get(d, "base_counts", path, default=16)
    if isinstance(bc, list):
        if not all(isinstance(v, int) and v >= 2 for v in bc):
            raise ConfigError(f"{path}.base_counts: entries must be integers >= 2")
        bc = tuple(bc) if len(bc) > 1 else bc[0]
    elif not (isinstance(bc, int) and bc >= 2):
        raise ConfigError(f"{path}.base_counts: must be an integer >= 2 or a list")
    nz = _get(d, "nz", path, int, default=65, check=lambda v: None if v >= 3 else "must be >= 3")
    zr = _get(d, "z_range", path, default=None)
    mf = _get(d, "mask_factor", path, float, default=4.0, check=lambda v: None if v >= 0 else "must be non-negative")
    exact = _get(d, "exact", path, default=None)
    try:
        return NeckConfig(T, series.torus, series.pairing, series.modes, bc, nz,
                          None if zr is None else tuple(zr), mf, "quintic", exact)
    except NeckError as e:
        raise ConfigError(f"{path}.T: {e}" if "too small" in str(e) or "T must" in str(e) else f"{path}: {e}") from None


def parse_weights(d, n, k_minus, k_plus, lambda1, path="weights"):
    from .weighted import WeightError, WeightParams

    if d is None or d == "default":
        return WeightParams.default(n, k_minus, k_plus, lambda1)
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object or 'default'")
    base = WeightParams.default(n, k_minus, k_plus, lambda1)
    vals = {}
    for key in ("delta", "nu", "alpha", "mu"):
        vals[key] = _get(d, key, path, float, default=getattr(base, key) if key != "mu" else None)
    if vals["mu"] is None:
        vals["mu"] = WeightParams.mu_for(n, vals["nu"], vals["alpha"])
    try:
        return WeightParams(vals["delta"], vals["nu"], vals["mu"], vals["alpha"]).validate(n, k_minus, k_plus, lambda1)
    except WeightError as e:
        msg = str(e)
        field = next((k for k in ("delta", "nu", "alpha", "mu") if msg.startswith(k) or f"{k} " in msg), "")
        raise ConfigError(f"{path}{'.' + field if field else ''}: {msg}") from None


def _float_list(text, name):
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--{name}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError(f"--{name}: empty list")
    return vals


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


def models_check(which, lam=0.5, n=2, grid=16, seed=0) -> dict:
    """Analytic check of one model geometry on a deterministic sample."""
    from .discrete_exterior import evaluate_on, monge_ampere_ratio
    from .model_spaces import (
        CalabiParams,
        TaubNutParams,
        calabi_ansatz,
        circle_generator,
        hopf_jacobian,
        model_connection,
        model_curvature,
        sphere_flux,
        taub_nut_forms,
    )

    rng = np.random.default_rng(seed)
    tol = 1e-6
    if which == "taubnut":
        u1 = rng.normal(size=grid**2) + 1j * rng.normal(size=grid**2)
        u2 = rng.normal(size=grid**2) + 1j * rng.normal(size=grid**2)
        om, Om = taub_nut_forms(TaubNutParams(lam), u1, u2)
        err = float(np.max(np.abs(monge_ampere_ratio(om, Om, 2).value() - 1)))
    elif which == "calabi":
        xi = np.linspace(0.02, 0.98, grid)
        w = rng.normal(size=(grid, n - 1)) + 1j * rng.normal(size=(grid, n - 1))
        cs = calabi_ansatz(CalabiParams(n), xi, w=w)
        target = 1.0 / (n * 2 ** (n - 1))
        err = float(np.max(np.abs(cs.ma_constant / target - 1)))
    elif which == "hopf":
        u1 = rng.normal(size=grid**2) + 1j * rng.normal(size=grid**2)
        u2 = rng.normal(size=grid**2) + 1j * rng.normal(size=grid**2)
        gen = circle_generator(u1, u2)
        e1 = float(np.max(np.abs(evaluate_on(model_connection(u1, u2), [gen]) + 1)))
        e2 = float(np.max(np.abs(hopf_jacobian(u1, u2) @ gen[..., None])))
        flux = sphere_flux(lambda p: model_curvature(p[:, 0] + 1j * p[:, 1], p[:, 2]), [0.0, 0.0, 0.0], 1.0)
        err = max(e1, e2, abs(flux / (2 * math.pi) + 1))
    else:
        raise ConfigError(f"--which: unknown model {which!r}")
    return {"check": which, "max_error": err, "tolerance": tol, "pass": bool(err <= tol)}


def cmd_models(args):
    if args.n < 2:
        raise ConfigError("--n: must be >= 2")
    if args.grid < 1:
        raise ConfigError("--grid: must be positive")
    if args.lam < 0:
        raise ConfigError("--lambda: must be non-negative")
    rep = models_check(args.which, args.lam, args.n, args.grid, args.seed)
    _emit_json(rep, args)
    return EXIT_OK if rep["pass"] else EXIT_CHECK


# ---------------------------------------------------------------------------
# greens
# ---------------------------------------------------------------------------


def _series_from_args(args):
    if getattr(args, "series", None):
        return parse_greens(_load_json(args.series, "--series"), "series")
    if getattr(args, "config", None):
        return parse_greens(_load_json(args.config), "config")
    raise ConfigError("--series/--config: one of them is required")


def cmd_greens(args):
    from .greens import BumpTestForm, GreensError, build_greens_current, distributional_residual

    if args.action == "build":
        s = parse_greens(_load_json(args.config), "config")
        if args.out:
            # the series is large; report where it went instead of echoing it
            target = _resolve(args, args.out)
            _write_atomic(target, _dumps(s.to_json()))
            sys.stdout.write(_dumps({"series": str(target), "modes": int(s.modes), "dims": s.torus.dims}))
        else:
            _emit_json(s.to_json(), args)
        return EXIT_OK
    s = _series_from_args(args)
    if args.action == "eval":
        at = _float_list(args.at, "at")
        d = s.torus.dims
        if len(at) != d + 1:
            raise ConfigError(f"--at: expected {d + 1} numbers (base point then height), got {len(at)}")
        if args.modes is not None:
            if args.modes > 2 * len(s.pairing):
                raise ConfigError(f"--modes: at most {2 * len(s.pairing)} available")
            s = build_greens_current(s.torus, s.pairing, args.modes)
        x = np.array([at[:d]])
        z = np.array([at[d]])
        psi = s.psi(x, z)
        out = {
            "point": at[:d],
            "z": at[d],
            "modes": int(s.modes),
            "trace": float(s.trace(x, z)[0]),
            "psi": {",".join(map(str, k)): float(v[0]) for k, v in sorted(psi.coeffs.items())},
            "tail_bound": float(s.tail_bound(at[d])) if at[d] != 0 else None,
        }
        _emit_json(out, args)
        return EXIT_OK
    # residual
    tf = _load_json(args.test_form, "--test-form")
    center = _get(tf, "center", "test_form")
    bump = BumpTestForm(tuple(float(c) for c in center), _get(tf, "z0", "test_form", float, default=0.0),
                        _get(tf, "width", "test_form", float, default=0.1,
                             check=lambda v: None if v > 0 else "must be positive"))
    try:
        rep = distributional_residual(s, bump)
    except GreensError as e:
        raise ConfigError(f"test_form: {e}") from None
    out = {"pairing": rep["pairing"], "target": rep["target"],
           "mismatch": None if rep["mismatch"] is None else float(rep["mismatch"])}
    _emit_json(out, args)
    return EXIT_OK


# ---------------------------------------------------------------------------
# neck
# ---------------------------------------------------------------------------


def build_neck_checked(cfg):
    from .neck import NeckError, build_neck

    try:
        return build_neck(cfg)
    except NeckError as e:
        raise NumericFailure(str(e)) from None


def _neck_rows(path, params_json=None):
    from .neck import NeckModel, load_neck
    from .weighted import log_weight

    errf, cfg, meta = load_neck(path)
    model = NeckModel(cfg)
    grid = errf.grid
    err = np.asarray(errf.value()).ravel()
    pts = grid.points()
    d = model.d
    x, z = pts[:, :d], pts[:, d]
    r = model.distance_to_singular_set(x, z)
    keep = r >= meta["mask_radius"]
    params = parse_weights(params_json, cfg.n, cfg.k_minus, cfg.k_plus, cfg.torus.first_eigenvalue())
    lr = np.full(err.shape, np.nan)
    lr[keep] = log_weight(model, x[keep], z[keep], 0, params)
    # z is the fastest axis, so consecutive blocks of nz nodes share a base node
    base_id = np.arange(pts.shape[0]) // grid.shape[-1]
    return cfg, model, params, x, z, r, err, lr, keep, base_id


def cmd_neck(args):
    from .neck import NeckError, matching_constants

    if args.action == "build":
        cfg_json = _load_json(args.config)
        cfg = parse_neck(cfg_json, "config", Path(args.config).parent)
        neck = build_neck_checked(cfg)
        out = _resolve(args, args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        neck.save(out)
        _emit_json({"neck": str(out), "max_err": neck.max_err(), "masked_nodes": int(neck.mask.sum()),
                    "mask_radius": neck.mask_radius, "grid": list(neck.grid.shape)}, argparse.Namespace(out=None))
        return EXIT_OK
    if args.action == "residual":
        params = _load_json(args.params, "--params") if args.params else None
        try:
            _, _, _, x, z, r, err, lr, keep, base_id = _neck_rows(args.input, params)
        except NeckError as e:
            raise ConfigError(f"--in: {e}") from None
        rows = []
        for i in np.flatnonzero(keep):
            rows.append((z[i], int(base_id[i]), r[i], err[i], math.exp(lr[i]) * abs(err[i])))
        text = _csv_text(["z", "baseNodeId", "r", "err", "weightedErr"], rows)
        target = _resolve(args, args.out or "neck_residual.csv")
        _write_atomic(target, text)
        sys.stdout.write(_dumps({"csv": str(target), "rows": len(rows)}))
        return EXIT_OK
    # match
    if args.n < 2:
        raise ConfigError("--n: must be >= 2")
    if args.T <= 1:
        raise ConfigError("--T: must exceed 1")
    try:
        c = matching_constants(args.n, args.T, args.d1, args.d2, args.divisor_average)
    except NeckError as e:
        raise ConfigError(f"--d1/--d2: {e}") from None
    _emit_json(c.to_json(), args)
    return EXIT_OK


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------


def weights_report(cfg, params, sweep, constant=None, counts=8, nz=65):
    """Rows (T, supErr, weightedSup, bound, pass) over a T sweep.

    The bound is C * T^e with e the predicted exponent.  Without an explicit
    ``constant`` C is calibrated on the first T with a 25% allowance, so the
    rows test that the weighted sup keeps decaying at the predicted rate.
    """
    from .neck import NeckConfig, NeckError, NeckModel
    from .weighted import WeightError, err_weighted_sample

    e = params.error_exponent(cfg.n)
    rows = []
    for T in sweep:
        try:
            c = NeckConfig(float(T), cfg.torus, cfg.pairing, cfg.modes, cfg.base_counts, cfg.nz,
                           None, cfg.mask_factor, cfg.smoothing, cfg.exact)
        except NeckError as err:
            raise ConfigError(f"params.sweep: {err}") from None
        try:
            s = err_weighted_sample(NeckModel(c), params, counts, nz)
        except WeightError as err:
            raise ConfigError(f"params.counts: {err}") from None
        if constant is None:
            constant = 1.25 * s["weighted_sup"] / T**e
        bound = constant * T**e
        rows.append((float(T), s["interior_sup_err"], s["weighted_sup"], bound, bool(s["weighted_sup"] <= bound)))
    return rows


def cmd_weights(args):
    from .neck import NeckError, load_neck

    try:
        _, cfg, _ = load_neck(args.neck)
    except (NeckError, FileNotFoundError) as e:
        raise ConfigError(f"--neck: {e}") from None
    pj = _load_json(args.params, "--params") if args.params else {}
    wp = {k: v for k, v in pj.items() if k in ("delta", "nu", "mu", "alpha")} or None
    params = parse_weights(wp, cfg.n, cfg.k_minus, cfg.k_plus, cfg.torus.first_eigenvalue(), "params")
    sweep = _get(pj, "sweep", "params", default=[cfg.T])
    if not isinstance(sweep, list) or not sweep:
        raise ConfigError("params.sweep: expected a non-empty list of T values")
    constant = _get(pj, "constant", "params", float, default=None)
    rows = weights_report(cfg, params, sweep, constant, _get(pj, "counts", "params", int, default=8))
    target = _resolve(args, args.out or "weights_report.csv")
    _write_atomic(target, _csv_text(["T", "supErr", "weightedSup", "bound", "pass"], rows))
    sys.stdout.write(_dumps({"csv": str(target), "rows": len(rows), "pass": all(r[4] for r in rows)}))
    return EXIT_OK if all(r[4] for r in rows) else EXIT_CHECK


# ---------------------------------------------------------------------------
# collapse
# ---------------------------------------------------------------------------


def cmd_collapse(args):
    from .collapse import CollapseError, diameter_fit, measure_profile

    if args.n < 2:
        raise ConfigError("--n: must be >= 2")
    if args.action == "measure":
        if args.samples < 3:
            raise ConfigError("--samples: must be >= 3")
        try:
            prof = measure_profile(args.n, args.d2, -args.d1, args.d1, args.d2, args.samples)
        except CollapseError as e:
            raise ConfigError(f"--d1/--d2: {e}") from None
        target = _resolve(args, args.out or "measure.csv")
        _write_atomic(target, _csv_text(["v", "density"], zip(prof.v, prof.density)))
        sys.stdout.write(_dumps({"csv": str(target), "rows": int(prof.v.size), "junction": prof.junction}))
        return EXIT_OK
    sweep = _float_list(args.sweep, "sweep")
    try:
        fit = diameter_fit(args.n, sweep, args.d2, -args.d1)
    except CollapseError as e:
        raise ConfigError(f"--sweep: {e}") from None
    ok = abs(fit["exponent"] / fit["target"] - 1) <= args.tolerance
    _emit_json({"exponent": fit["exponent"], "target": fit["target"], "pass": bool(ok)}, args)
    return EXIT_OK if ok else EXIT_CHECK


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def parse_experiment(d, base_dir=None) -> dict:
    """Validate an experiment config; returns the normalized parts."""
    from .checks import CHECKS

    if not isinstance(d, dict):
        raise ConfigError("config: expected an object")
    _check_schema(d, "config")
    unknown = set(d) - {"schema", "name", "checks", "neck", "weights", "sweeps", "outputs", "seed"}
    if unknown:
        raise ConfigError(f"config.{sorted(unknown)[0]}: unknown field")
    checks = _get(d, "checks", "config", default="all")
    if checks == "all":
        checks = sorted(CHECKS)
    if not isinstance(checks, list) or not all(isinstance(c, int) and c in CHECKS for c in checks):
        bad = next((i for i, c in enumerate(checks if isinstance(checks, list) else [checks])
                    if not (isinstance(c, int) and c in CHECKS)), 0)
        raise ConfigError(f"config.checks[{bad}]: expected a criterion number in 1..{max(CHECKS)}")
    neck = None
    weights = None
    if "neck" in d:
        neck = parse_neck(d["neck"], "config.neck", base_dir)
        weights = parse_weights(d.get("weights"), neck.n, neck.k_minus, neck.k_plus,
                                neck.torus.first_eigenvalue(), "config.weights")
    elif "weights" in d:
        raise ConfigError("config.weights: weight parameters need a neck section")
    sweeps = _get(d, "sweeps", "config", default={})
    for key, v in sweeps.items() if isinstance(sweeps, dict) else []:
        if not (isinstance(v, list) and len(v) >= 1 and all(isinstance(t, (int, float)) and t > 1 for t in v)):
            raise ConfigError(f"config.sweeps.{key}: expected a list of T values > 1")
    if not isinstance(sweeps, dict):
        raise ConfigError("config.sweeps: expected an object")
    outputs = _get(d, "outputs", "config", default={})
    if not isinstance(outputs, dict):
        raise ConfigError("config.outputs: expected an object")
    seed = _get(d, "seed", "config", int, default=0)
    return {"checks": checks, "neck": neck, "weights": weights, "sweeps": sweeps, "outputs": outputs,
            "seed": seed, "name": d.get("name", "experiment")}


def run(config_path, out_dir=None, seed=None) -> int:
    """Run an experiment config; returns the exit code."""
    from .checks import CHECKS, summary

    exp = parse_experiment(_load_json(config_path), Path(config_path).parent)
    out_dir = Path(out_dir) if out_dir else Path(".")
    results = []
    extra = {}
    if exp["neck"] is not None:
        neck = build_neck_checked(exp["neck"])
        if "neck" in exp["outputs"]:
            neck.save(out_dir / exp["outputs"]["neck"])
        extra["neck"] = {"max_err": neck.max_err(), "masked_nodes": int(neck.mask.sum())}
        if "weights" in exp["sweeps"]:
            rows = weights_report(exp["neck"], exp["weights"], exp["sweeps"]["weights"])
            extra["weights"] = [dict(zip(["T", "supErr", "weightedSup", "bound", "pass"], r)) for r in rows]
    for i in exp["checks"]:
        log.info("running check %d", i)
        res = CHECKS[i]()
        log.info(res.line())
        results.append(res)
    summ = summary(results)
    summ["name"] = exp["name"]
    summ.update(extra)
    ok = all(r.passed for r in results) and all(w["pass"] for w in extra.get("weights", []))
    summ["pass"] = bool(ok)
    _write_atomic(out_dir / exp["outputs"].get("summary", "summary.json"), _dumps(summ))
    sys.stdout.write(_dumps({"passed": summ["passed"], "total": summ["total"], "pass": summ["pass"]}))
    return EXIT_OK if ok else EXIT_CHECK


def cmd_run(args):
    return run(args.config, args.out_dir, args.seed)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(add_help=False)
    top.add_argument("--threads", type=int, default=None, help="numba worker threads")
    top.add_argument("--seed", type=int, default=0, help="seed for sampled checks")
    top.add_argument("--out-dir", default=None, help="directory for written artifacts")
    # the same flags after a subcommand; SUPPRESS keeps them from resetting the top-level values
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out-dir", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="neckforge", parents=[top],
                                description="circle-invariant neck metrics: models, currents, necks, weights, collapse")
    p.add_argument("--version", action="version", version=f"neckforge {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("models", parents=[common], help="analytic model checks")
    ms = m.add_subparsers(dest="action", required=True)
    mc = ms.add_parser("check", parents=[common])
    mc.add_argument("--which", choices=["taubnut", "calabi", "hopf"], required=True)
    mc.add_argument("--lambda", dest="lam", type=float, default=0.5)
    mc.add_argument("--n", type=int, default=2)
    mc.add_argument("--grid", type=int, default=16)
    mc.add_argument("--out", default=None)
    m.set_defaults(func=cmd_models)

    g = sub.add_parser("greens", parents=[common], help="Green's current series")
    gs = g.add_subparsers(dest="action", required=True)
    gb = gs.add_parser("build", parents=[common])
    gb.add_argument("--config", required=True)
    gb.add_argument("--out", default=None)
    ge = gs.add_parser("eval", parents=[common])
    ge.add_argument("--at", required=True, help="base point then height, comma separated")
    ge.add_argument("--modes", type=int, default=None)
    ge.add_argument("--series", default=None)
    ge.add_argument("--config", default=None)
    ge.add_argument("--out", default=None)
    gr = gs.add_parser("residual", parents=[common])
    gr.add_argument("--test-form", required=True)
    gr.add_argument("--series", default=None)
    gr.add_argument("--config", default=None)
    gr.add_argument("--out", default=None)
    g.set_defaults(func=cmd_greens)

    nk = sub.add_parser("neck", parents=[common], help="neck construction")
    ns = nk.add_subparsers(dest="action", required=True)
    nb = ns.add_parser("build", parents=[common])
    nb.add_argument("--config", required=True)
    nb.add_argument("--out", required=True)
    nr = ns.add_parser("residual", parents=[common])
    nr.add_argument("--in", dest="input", required=True)
    nr.add_argument("--params", default=None)
    nr.add_argument("--out", default=None)
    nm = ns.add_parser("match", parents=[common])
    nm.add_argument("--T", type=float, required=True)
    nm.add_argument("--d1", type=int, required=True)
    nm.add_argument("--d2", type=int, required=True)
    nm.add_argument("--n", type=int, default=2)
    nm.add_argument("--divisor-average", type=float, default=0.0)
    nm.add_argument("--out", default=None)
    nk.set_defaults(func=cmd_neck)

    w = sub.add_parser("weights", parents=[common], help="weighted error report")
    ws = w.add_subparsers(dest="action", required=True)
    wr = ws.add_parser("report", parents=[common])
    wr.add_argument("--neck", required=True)
    wr.add_argument("--params", default=None)
    wr.add_argument("--out", default=None)
    w.set_defaults(func=cmd_weights)

    c = sub.add_parser("collapse", parents=[common], help="collapse geometry")
    cs = c.add_subparsers(dest="action", required=True)
    cm = cs.add_parser("measure", parents=[common])
    cm.add_argument("--n", type=int, required=True)
    cm.add_argument("--d1", type=int, required=True)
    cm.add_argument("--d2", type=int, required=True)
    cm.add_argument("--samples", type=int, default=1000)
    cm.add_argument("--out", default=None)
    cd = cs.add_parser("diam", parents=[common])
    cd.add_argument("--sweep", required=True)
    cd.add_argument("--n", type=int, default=2)
    cd.add_argument("--d1", type=int, default=1)
    cd.add_argument("--d2", type=int, default=1)
    cd.add_argument("--tolerance", type=float, default=0.02)
    cd.add_argument("--out", default=None)
    c.set_defaults(func=cmd_collapse)

    r = sub.add_parser("run", parents=[common], help="run an experiment config")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)
    return p


def _setup(args):
    level = os.environ.get("NECKFORGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads: must be >= 1")
        try:
            import numba

            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        except ImportError:  # pragma: no cover
            pass
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup(args)
        return args.func(args)
    except ConfigError as e:
        print(f"neckforge: invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as e:
        print(f"neckforge: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
