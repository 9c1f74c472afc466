"""Command-line entry point: config parsing, dispatch, and report emission.

Configuration is a flat key=value text file with dotted section prefixes
(model.c, casimir.p, grid.n, ...); command-line flags override file values and
unknown keys are rejected. Every run writes summary.json embedding the fully
resolved configuration and seed; numeric tables go to CSV with 17 significant
digits. Outputs contain no timestamps, so identical config and seed reproduce
identical bytes. Exit codes: 0 success, 1 numerical failure, 2 config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict

import numpy as np

from . import dynamics, rigidity, steady
from .errors import ConfigError, GravlasovError
from .kernel import ModelParams, check_casimir, make_polytrope
from .radial import RadialGrid, SpeedGrid, bump_density
from .steady import SolveTargets

COMMANDS = ("check-casimir", "solve", "verify", "kj", "scan", "equimeasure",
            "froots", "bootstrap", "evolve", "stability", "blowup")

# every permitted config key with its parser
_KEY_TYPES = {
    "model.c": "extended_float",
    "casimir.kind": "str",
    "casimir.p": "float",
    "grid.r_max": "float",
    "grid.n": "int",
    "grid.u_max": "float",
    "grid.m": "int",
    "targets.m1": "float",
    "targets.mj": "float",
    "targets.tol": "float",
    "solve.psi0": "float",
    "solve.mu": "float",
    "dynamics.n_particles": "int",
    "dynamics.dt": "float",
    "dynamics.t_end": "float",
    "dynamics.seed": "int",
    "dynamics.delta": "float_list",
    "dynamics.mode": "str",
    "dynamics.snapshot": "int",
    "scan.param": "str",
    "scan.from": "float",
    "scan.to": "float",
    "scan.steps": "int",
    "kj.budget": "int",
    "kj.family": "str",
    "froots.a": "float",
    "froots.mu0": "float",
    "equimeasure.lam": "float",
    "bootstrap.p": "float",
    "bootstrap.q0": "float",
    "blowup.r_scale": "float",
    "blowup.u_scale": "float",
    "blowup.amplitude": "float",
    "output.directory": "str",
    "output.formats": "str",
}

_DEFAULTS = {
    "model.c": math.inf,
    "casimir.kind": "polytrope",
    "casimir.p": 2.0,
    "grid.r_max": 20.0,
    "grid.n": 1025,
    "grid.m": 257,
    "targets.tol": 1e-8,
    "dynamics.n_particles": 50_000,
    "dynamics.seed": 1,
    "dynamics.mode": "amplitude",
    "dynamics.delta": (0.01, 0.02, 0.04),
    "dynamics.snapshot": 0,
    "kj.budget": 60,
    "kj.family": "default",
    "bootstrap.q0": 1.2,
    "equimeasure.lam": 2.0,
    "blowup.r_scale": 1.0,
    "blowup.u_scale": 1.5,
    "blowup.amplitude": 1.0,
    "output.directory": "out",
    "output.formats": "json,csv",
}


def _parse_value(key: str, raw: str):
    kind = _KEY_TYPES[key]
    try:
        if kind == "extended_float":
            return math.inf if raw.strip().lower() in ("inf", "infinite") else float(raw)
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "float_list":
            return tuple(float(tok) for tok in raw.replace(",", " ").split())
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key} = {raw!r}: {exc}")


class RunConfig:
    """Resolved configuration: defaults < file < flags, with validation."""

    def __init__(self, command: str, values: dict):
        self.command = command
        self.values = values

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def require(self, *keys):
        missing = [k for k in keys if k not in self.values]
        if missing:
            raise ConfigError(
                f"command {self.command!r} needs config keys: {', '.join(missing)}")

    def params(self) -> ModelParams:
        c = self.values["model.c"]
        if not c > 0:
            raise ConfigError("model.c must be positive or 'inf'")
        return ModelParams(c=c)

    def casimir(self):
        kind = self.values["casimir.kind"]
        if kind != "polytrope":
            raise ConfigError(f"unsupported casimir.kind {kind!r} "
                              "(only 'polytrope' is built in)")
        p = self.values["casimir.p"]
        if not p > 1.5:
            raise ConfigError(f"casimir.p must exceed 3/2, got {p}")
        return make_polytrope(p)

    def grid(self) -> RadialGrid:
        r_max, n = self.values["grid.r_max"], self.values["grid.n"]
        if not (r_max > 0 and n >= 2):
            raise ConfigError("grid.r_max must be positive and grid.n >= 2")
        return RadialGrid(r_max=r_max, n=n)

    def validate_dynamics(self):
        if self.values["dynamics.n_particles"] < 1000:
            raise ConfigError("dynamics.n_particles must be at least 1000")
        for key in ("dynamics.dt", "dynamics.t_end"):
            if key in self.values and not self.values[key] > 0:
                raise ConfigError(f"{key} must be positive")
        for d in (self.values["dynamics.delta"]
                  if isinstance(self.values["dynamics.delta"], tuple)
                  else (self.values["dynamics.delta"],)):
            if d < 0:
                raise ConfigError("dynamics.delta entries must be nonnegative")

    def serializable(self) -> dict:
        out = {}
        for key, val in sorted(self.values.items()):
            if isinstance(val, float) and math.isinf(val):
                out[key] = "inf"
            elif isinstance(val, tuple):
                out[key] = list(val)
            else:
                out[key] = val
        out["command"] = self.command
        return out


def parse_config(command: str, path=None, overrides=None) -> RunConfig:
    """Merge defaults, an optional key=value file, and flag overrides."""
    values = dict(_DEFAULTS)
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            for line_no, line in enumerate(fh, 1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{line_no}: expected key = value")
                key, _, raw = stripped.partition("=")
                key = key.strip()
                if key not in _KEY_TYPES:
                    raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
                values[key] = _parse_value(key, raw.strip())
    for key, raw in (overrides or {}).items():
        if key not in _KEY_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, raw) if isinstance(raw, str) else raw
    return RunConfig(command, values)


# --- output helpers -------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def worker_limit() -> int:
    """Parallelism cap from VG_THREADS (execution is sequential, so the
    effective worker count is min(cap, 1))."""
    raw = os.environ.get("VG_THREADS")
    if raw is None:
        return 1
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"VG_THREADS must be an integer, got {raw!r}")
    if cap < 1:
        raise ConfigError("VG_THREADS must be at least 1")
    return min(cap, 1)


def _write_summary(outdir, config: RunConfig, payload: dict) -> None:
    os.makedirs(outdir, exist_ok=True)
    doc = {"config": config.serializable(), "results": _jsonable(payload),
           "workers": worker_limit()}
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.17g}" if isinstance(v, float) else v
                             for v in row])


def _diag_rows(records):
    return [(r.t, r.hc, r.m1, r.ekin, r.epot, r.virial, r.rho_center,
             r.ej_dist_to_ref if r.ej_dist_to_ref is not None else math.nan)
            for r in records]

_DIAG_HEADER = ["t", "hc", "m1", "ekin", "epot", "virial", "rho_center", "dist_rho"]


# --- command implementations -------------------------------------------------------

def _solve_state(config: RunConfig):
    spec = config.casimir()
    params = config.params()
    grid = config.grid()
    m_speed = config["grid.m"]
    if "solve.psi0" in config.values and "solve.mu" in config.values:
        if not config["solve.mu"] < 0:
            raise ConfigError("solve.mu must be negative")
        return steady.integrate_state(spec, params, config["solve.psi0"],
                                      config["solve.mu"], grid, m_speed=m_speed)
    config.require("targets.m1", "targets.mj")
    if not (config["targets.m1"] > 0 and config["targets.mj"] > 0
            and config["targets.tol"] > 0):
        raise ConfigError("targets.m1, targets.mj and targets.tol must be positive")
    targets = SolveTargets(m1_target=config["targets.m1"],
                           mj_target=config["targets.mj"],
                           tol=config["targets.tol"])
    return steady.solve_targets(spec, params, targets, grid, m_speed=m_speed)


def _cmd_check_casimir(config: RunConfig, outdir: str) -> dict:
    report = check_casimir(config.casimir())
    return asdict(report) | {"passed": report.passed}


def _cmd_solve(config: RunConfig, outdir: str) -> dict:
    state = _solve_state(config)
    steady.state_to_dir(state, outdir)
    report = steady.multiplier_identities(state)
    return {"lambda": state.lam, "mu": state.mu, "psi0": state.psi0,
            "a": state.a, "r_support": state.r_support, "m1": state.m1,
            "mj": state.mj, "ekin": state.ekin, "epot": state.epot,
            "hc": state.hc, "residuals": report.residuals}


def _cmd_verify(config: RunConfig, outdir: str) -> dict:
    config.require("output.directory")
    indir = config["output.directory"]
    state = steady.state_from_dir(indir, m_speed=config["grid.m"])
    report = steady.multiplier_identities(state)
    support = steady.support_check(state)
    return {"residuals": report.residuals,
            "max_residual": report.max_residual,
            "mu_negative": report.mu_negative,
            "lambda_negative": report.lambda_negative,
            "convexity_gap_positive": report.convexity_gap_positive,
            "support_ok": support.ok,
            "r_support": support.r_support,
            "u_bound": support.u_bound}


def _cmd_kj(config: RunConfig, outdir: str) -> dict:
    est = rigidity.estimate_kj(config.casimir(), config.params(),
                               trial_family=config["kj.family"],
                               budget=config["kj.budget"])
    payload = asdict(est)
    if "targets.m1" in config.values and "targets.mj" in config.values:
        verdict = rigidity.threshold_check(config["targets.m1"],
                                           config["targets.mj"],
                                           config.casimir(), config.params(), est)
        payload["threshold"] = asdict(verdict)
    return payload


def _cmd_scan(config: RunConfig, outdir: str) -> dict:
    config.require("scan.param", "scan.from", "scan.to", "scan.steps")
    param = config["scan.param"]
    if param not in ("mu", "psi0"):
        raise ConfigError("scan.param must be 'mu' or 'psi0'")
    fixed_psi0 = config.get("solve.psi0", -1.0)
    fixed_mu = config.get("solve.mu", -1.0)
    spec, params, grid = config.casimir(), config.params(), config.grid()
    values = np.linspace(config["scan.from"], config["scan.to"],
                         config["scan.steps"])
    rows = []
    for val in values:
        psi0 = val if param == "psi0" else fixed_psi0
        mu = val if param == "mu" else fixed_mu
        try:
            shot = steady.integrate_state(spec, params, psi0, mu, grid, fast=True)
            rows.append((float(val), shot.lam, shot.m1, shot.mj, shot.r_support, ""))
        except GravlasovError as exc:
            rows.append((float(val), math.nan, math.nan, math.nan, math.nan,
                         type(exc).__name__))
    _write_csv(os.path.join(outdir, "scan.csv"),
               [param, "lambda", "m1", "mj", "r_support", "error"], rows)
    return {"rows": len(rows), "param": param,
            "failures": sum(1 for r in rows if r[-1])}


def _cmd_equimeasure(config: RunConfig, outdir: str) -> dict:
    state = _solve_state(config)
    lam = config["equimeasure.lam"]
    f = state.f
    peak = float(np.max(f.values))
    levels = np.geomspace(1e-4 * peak, 0.999 * peak, 41)
    grids = (RadialGrid(r_max=f.grid_r.r_max * max(lam, 1.0) * 1.05, n=f.grid_r.n),
             SpeedGrid(u_max=f.grid_u.u_max * max(1.0 / lam, 1.0) * 1.05,
                       m=f.grid_u.m))
    dilated = rigidity._resample(f, lam, 1.0 / lam, 1.0, grids=grids)
    doubled = rigidity._resample(f, 1.0, 1.0, 2.0)
    rep_d = rigidity.equimeasure_compare(f, dilated, levels)
    rep_2 = rigidity.equimeasure_compare(f, doubled, levels)
    _write_csv(os.path.join(outdir, "equimeasure.csv"),
               ["level", "dist_state", "dist_dilated", "dist_doubled"],
               [(float(l), float(a), float(b), float(c)) for l, a, b, c in
                zip(levels, rep_d.dist_f, rep_d.dist_g, rep_2.dist_g)])
    scale = float(rep_d.dist_f[0])
    return {"dilate_discrepancy": rep_d.max_discrepancy,
            "dilate_rel_discrepancy": rep_d.max_discrepancy / scale,
            "double_discrepancy": rep_2.max_discrepancy,
            "sup_norm_gap_dilate": rep_d.sup_norm_gap,
            "volume_scale": scale}


def _cmd_froots(config: RunConfig, outdir: str) -> dict:
    config.require("froots.a", "froots.mu0")
    params = config.params()
    if params.is_classical:
        raise ConfigError("froots needs a finite model.c")
    roots = rigidity.f_roots(params, config["froots.a"], config.casimir(),
                             config["froots.mu0"])
    return {"roots": roots, "count": len(roots)}


def _cmd_bootstrap(config: RunConfig, outdir: str) -> dict:
    p = config.get("bootstrap.p", config["casimir.p"])
    res = rigidity.bootstrap_exponents(p, config["bootstrap.q0"])
    _write_csv(os.path.join(outdir, "bootstrap.csv"), ["k", "q_k"],
               list(enumerate(res.sequence)))
    return {"p": res.p, "q0": res.q0, "sequence": list(res.sequence),
            "success_index": res.success_index, "boundary_hit": res.boundary_hit}


def _cmd_evolve(config: RunConfig, outdir: str) -> dict:
    config.validate_dynamics()
    state = _solve_state(config)
    n = config["dynamics.n_particles"]
    seed = config["dynamics.seed"]
    td = dynamics.dynamical_time(state.rho.values[0])
    dt = config.get("dynamics.dt", 0.01 * td)
    t_end = config.get("dynamics.t_end", 10.0 * td)
    ens = dynamics.sample_state(state, n, seed)
    records, final = dynamics.evolve(ens, t_end, dt, spec=state.spec,
                                     reference=state)
    _write_csv(os.path.join(outdir, "diagnostics.csv"), _DIAG_HEADER,
               _diag_rows(records))
    if config["dynamics.snapshot"]:
        dynamics.ensemble_to_csv(os.path.join(outdir, "ensemble.csv"), final)
    hc0 = records[0].hc
    return {"seed": seed, "n_particles": n, "dt": dt, "t_end": t_end,
            "dynamical_time": td,
            "hc_initial": hc0,
            "hc_drift": max(abs(r.hc - hc0) / abs(hc0) for r in records),
            "m1_drift": max(abs(r.m1 - records[0].m1) for r in records),
            "records": len(records)}


def _cmd_stability(config: RunConfig, outdir: str) -> dict:
    config.validate_dynamics()
    state = _solve_state(config)
    td = dynamics.dynamical_time(state.rho.values[0])
    deltas = config["dynamics.delta"]
    if isinstance(deltas, float):
        deltas = (deltas,)
    report, runs = dynamics.stability_experiment(
        state, deltas, config["dynamics.mode"],
        n=config["dynamics.n_particles"],
        t_end=config.get("dynamics.t_end", 10.0 * td),
        dt=config.get("dynamics.dt"),
        seed=config["dynamics.seed"])
    for delta, records in runs.items():
        _write_csv(os.path.join(outdir, f"diagnostics_delta_{delta:g}.csv"),
                   _DIAG_HEADER, _diag_rows(records))
    return {"mode": report.mode, "deltas": list(report.deltas),
            "max_dist_rho": list(report.max_dist_rho),
            "final_dist_rho": list(report.final_dist_rho),
            "max_hc_dev": list(report.max_hc_dev),
            "noise_floor": report.noise_floor,
            "stable": report.stable,
            "distance_proxy": report.distance_proxy,
            "seed": config["dynamics.seed"]}


def _cmd_blowup(config: RunConfig, outdir: str) -> dict:
    config.validate_dynamics()
    spec, params = config.casimir(), config.params()
    grid_r = RadialGrid(r_max=config["grid.r_max"],
                        n=min(config["grid.n"], 513))
    u_max = config.get("grid.u_max", 8.0 * config["blowup.u_scale"])
    grid_u = SpeedGrid(u_max=u_max, m=config["grid.m"])
    initial = bump_density(grid_r, grid_u, config["blowup.r_scale"],
                           config["blowup.u_scale"], config["blowup.amplitude"])
    report = dynamics.blowup_experiment(
        spec, params, initial,
        n=config["dynamics.n_particles"],
        t_end=config.get("dynamics.t_end", 5.0),
        dt=config.get("dynamics.dt"),
        seed=config["dynamics.seed"])
    _write_csv(os.path.join(outdir, "diagnostics.csv"), _DIAG_HEADER,
               _diag_rows(report.records))
    return {"verdict": report.verdict,
            "concentration_time": report.concentration_time,
            "growth_factor": report.growth_factor,
            "rho_center_initial": report.rho_center_initial,
            "rho_center_peak": report.rho_center_peak,
            "halted_at": report.halted_at,
            "hc_initial": report.hc_initial,
            "seed": config["dynamics.seed"]}


_HANDLERS = {
    "check-casimir": _cmd_check_casimir,
    "solve": _cmd_solve,
    "verify": _cmd_verify,
    "kj": _cmd_kj,
    "scan": _cmd_scan,
    "equimeasure": _cmd_equimeasure,
    "froots": _cmd_froots,
    "bootstrap": _cmd_bootstrap,
    "evolve": _cmd_evolve,
    "stability": _cmd_stability,
    "blowup": _cmd_blowup,
}


def dispatch(config: RunConfig) -> int:
    """Run one command; returns the exit status (artifacts land on disk)."""
    outdir = config["output.directory"]
    worker_limit()   # validate the parallelism cap before doing any work
    try:
        payload = _HANDLERS[config.command](config, outdir)
    except ConfigError:
        raise
    except GravlasovError as exc:
        _write_summary(outdir, config,
                       {"error": type(exc).__name__, "message": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _write_summary(outdir, config, payload)
    return 0


_FLAG_TO_KEY = {
    "c": "model.c", "casimir": "casimir.kind", "p": "casimir.p",
    "r_max": "grid.r_max", "n": "grid.n", "u_max": "grid.u_max", "m": "grid.m",
    "m1": "targets.m1", "mj": "targets.mj", "tol": "targets.tol",
    "psi0": "solve.psi0", "mu": "solve.mu",
    "n_particles": "dynamics.n_particles", "dt": "dynamics.dt",
    "t_end": "dynamics.t_end", "seed": "dynamics.seed",
    "delta": "dynamics.delta", "mode": "dynamics.mode",
    "snapshot": "dynamics.snapshot",
    "param": "scan.param", "from": "scan.from", "to": "scan.to",
    "steps": "scan.steps", "budget": "kj.budget", "family": "kj.family",
    "a": "froots.a", "mu0": "froots.mu0", "lam": "equimeasure.lam",
    "q0": "bootstrap.q0", "amplitude": "blowup.amplitude",
    "r_scale": "blowup.r_scale", "u_scale": "blowup.u_scale",
    "out": "output.directory",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gravlasov",
        description="Steady states and stability experiments for the "
                    "self-gravitating kinetic equation")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        cp = sub.add_parser(command)
        cp.add_argument("--config", default=None, help="key=value config file")
        for flag in _FLAG_TO_KEY:
            cp.add_argument(f"--{flag.replace('_', '-')}", dest=flag,
                            default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {key: getattr(args, flag) for flag, key in _FLAG_TO_KEY.items()
                 if getattr(args, flag, None) is not None}
    try:
        config = parse_config(args.command, path=args.config,
                              overrides=overrides)
        return dispatch(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
