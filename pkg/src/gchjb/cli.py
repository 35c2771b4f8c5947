"""
Command line front end.

Configuration comes from an optional ``key=value`` file (one or more pairs
per line, ``#`` starts a comment) and from ``--key value`` flags, flags
taking precedence. Every key, its type and default is listed in
:data:`OPTIONS`; ``gchjb self-check`` verifies those defaults against the
library.

Each subcommand writes its data files plus ``run.json`` into the output
directory (``--out``, else ``$HJB_OUTPUT_DIR``, else ``./gchjb_output``).
Exit status: 0 success, 1 failed check or solver error, 2 configuration
error, 3 no convergence. Failures also write ``error.json``.
"""

from __future__ import annotations

import argparse
import inspect
import json
import math
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import free_boundary as fb
from . import validation as val
from .errors import ConfigError, EmptyInterface, HJBError, NoConvergence
from .grid import Annulus, Ball, Box, Grid, Interval, classify_nodes, write_field_csv
from .radial import critical_radius, oracle_annulus, oracle_ball, oracle_eikonal_ball, oracle_interval
from .solver import (
    DEFAULT_DIRECTIONS,
    DppConfig,
    ProblemSpec,
    SolverConfig,
    dpp_value_iteration,
    regularized_solve,
    sweep_solve,
)

SUBCOMMANDS = ("solve", "regularized", "dpp", "oracle", "compare", "freeboundary", "validate", "self-check")
STUDIES = ("convergence", "epsilon", "comparison", "growth", "lipschitz")


# --------------------------------------------------------------------------
# option table
# --------------------------------------------------------------------------


def _float(s):
    return float(s)


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError("not an integer")
    return int(v)


def _bool(s):
    t = str(s).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _floats(s):
    if isinstance(s, (list, tuple)):
        return [float(x) for x in s]
    return [float(x) for x in str(s).replace(" ", "").split(",") if x]


def _str(s):
    return str(s)


@dataclass(frozen=True)
class Option:
    name: str
    parse: object
    default: object
    help: str


def _positive(v):
    return v > 0


OPTIONS = [
    Option("domain", _str, "ball", "interval | ball | annulus | box"),
    Option("radius", _float, 1.0, "outer radius R (interval half-length)"),
    Option("r_in", _float, 0.5, "inner radius of the annulus"),
    Option("widths", _floats, [2.0, 2.0], "box side lengths, comma separated"),
    Option("n", _int, 2, "space dimension (forced to 1 for the interval)"),
    Option("r", _float, 1.0, "right-hand side r >= 0"),
    Option("g", _float, 0.0, "constant boundary value"),
    Option("h", _float, 1.0 / 64, "grid spacing"),
    Option("eps", _float, 1e-2, "regularization parameter"),
    Option("delta", _float, 0.05, "region threshold"),
    Option("label_method", _str, "threshold", "threshold | branch"),
    Option("margin", _float, 0.1, "distance from the boundary for the gradient diagnostic"),
    Option("dt", _float, None, "game time step (default h^2/(2n))"),
    Option("M", _int, DEFAULT_DIRECTIONS, "number of game directions in 2-D"),
    Option("allow_dt_override", _bool, False, "accept a dt off the natural value"),
    Option("tolerance", _float, 1e-10, "stopping tolerance"),
    Option("max_sweeps", _int, 10_000, "sweep budget"),
    Option("init", _str, "above", "above | boundary"),
    Option("update", _str, "gauss_seidel", "gauss_seidel | jacobi"),
    Option("accelerate", _bool, True, "Newton acceleration before sweeping"),
    Option("max_newton", _int, 80, "Newton step budget"),
    Option("fixture", _str, None, "named fixture: " + ", ".join(val.FIXTURE_NAMES)),
    Option("h_list", _floats, [1 / 64, 1 / 128, 1 / 256], "spacings for studies"),
    Option("eps_list", _floats, [1e-1, 1e-2, 1e-3], "eps values for the epsilon study"),
    Option("R_list", _floats, [2.0, 4.0, 8.0], "outer radii for the growth study"),
    Option("h_policy", _str, "cells:8", "growth study spacing: fixed:<h> or cells:<k> (h = r_in/k)"),
    Option("trials", _int, 25, "comparison trials"),
    Option("seed", _int, 0, "random seed"),
    Option("samples", _int, 201, "radial samples written by the oracle subcommand"),
    Option("out", _str, None, "output directory"),
]
OPTION_MAP = {o.name: o for o in OPTIONS}


def _validate(cfg: dict) -> None:
    def bad(field, msg):
        raise ConfigError(f"invalid value for {field}: {msg}", field=field)

    if cfg["domain"] not in ("interval", "ball", "annulus", "box"):
        bad("domain", cfg["domain"])
    for key in ("radius", "h", "eps", "tolerance"):
        if not (cfg[key] > 0 and math.isfinite(cfg[key])):
            bad(key, "must be positive")
    if not (cfg["r"] >= 0 and math.isfinite(cfg["r"])):
        bad("r", "must be >= 0")
    if not math.isfinite(cfg["g"]):
        bad("g", "must be finite")
    if cfg["n"] not in (1, 2, 3):
        bad("n", "must be 1, 2 or 3")
    if cfg["domain"] == "annulus" and not 0 < cfg["r_in"] < cfg["radius"]:
        bad("r_in", "need 0 < r_in < radius")
    if cfg["domain"] == "box" and (not cfg["widths"] or min(cfg["widths"]) <= 0):
        bad("widths", "must be positive")
    if not 0 < cfg["delta"] < 0.5:
        bad("delta", "must lie in (0, 0.5)")
    if cfg["label_method"] not in ("threshold", "branch"):
        bad("label_method", cfg["label_method"])
    if cfg["margin"] < 0:
        bad("margin", "must be >= 0")
    if cfg["dt"] is not None and not cfg["dt"] > 0:
        bad("dt", "must be positive")
    if cfg["M"] < 4:
        bad("M", "must be >= 4")
    if cfg["max_sweeps"] < 1:
        bad("max_sweeps", "must be >= 1")
    if cfg["max_newton"] < 0:
        bad("max_newton", "must be >= 0")
    if cfg["init"] not in ("above", "boundary"):
        bad("init", cfg["init"])
    if cfg["update"] not in ("gauss_seidel", "jacobi"):
        bad("update", cfg["update"])
    if cfg["fixture"] is not None and cfg["fixture"] not in val.FIXTURE_NAMES:
        bad("fixture", cfg["fixture"])
    for key in ("h_list", "eps_list", "R_list"):
        if any(not (v > 0) for v in cfg[key]):
            bad(key, "entries must be positive")
    if cfg["trials"] < 1:
        bad("trials", "must be >= 1")
    if cfg["samples"] < 2:
        bad("samples", "must be >= 2")


def parse_config_text(text: str) -> dict:
    """``key=value`` pairs; several pairs may share a line."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for tok in line.split():
            key, sep, value = tok.partition("=")
            if not sep or not key:
                raise ConfigError(f"line {lineno}: expected key=value, got {tok!r}", line=lineno)
            if key not in OPTION_MAP:
                raise ConfigError(f"line {lineno}: unknown key {key!r}", line=lineno, field=key)
            out[key] = (value, lineno)
    return out


def parse_config(path=None, flags: dict | None = None) -> dict:
    """Merge defaults, file values and flag values (in increasing precedence)."""
    cfg = {o.name: o.default for o in OPTIONS}
    raw = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        raw.update(parse_config_text(text))
    for key, value in (flags or {}).items():
        if key not in OPTION_MAP:
            raise ConfigError(f"unknown key {key!r}", field=key)
        raw[key] = (value, None)
    for key, (value, lineno) in raw.items():
        try:
            cfg[key] = OPTION_MAP[key].parse(value)
        except (TypeError, ValueError) as exc:
            where = f"line {lineno}: " if lineno else ""
            raise ConfigError(f"{where}invalid value for {key}: {value!r} ({exc})",
                              line=lineno, field=key) from None
    if cfg["domain"] == "interval":
        cfg["n"] = 1
    _validate(cfg)
    return cfg


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _descriptor(cfg):
    d = cfg["domain"]
    if d == "interval":
        return Interval(cfg["radius"])
    if d == "ball":
        return Ball(cfg["radius"])
    if d == "annulus":
        return Annulus(cfg["r_in"], cfg["radius"])
    return Box(tuple(cfg["widths"]))


def _problem(cfg):
    if cfg["fixture"]:
        fx = val.fixture(cfg["fixture"])
        return fx.descriptor, ProblemSpec(fx.descriptor, fx.r, cfg["g"], fx.dim)
    desc = _descriptor(cfg)
    return desc, ProblemSpec(desc, cfg["r"], cfg["g"], cfg["n"])


def _solver_config(cfg) -> SolverConfig:
    return SolverConfig(tolerance=cfg["tolerance"], max_sweeps=cfg["max_sweeps"], init=cfg["init"],
                        update=cfg["update"], accelerate=cfg["accelerate"], max_newton=cfg["max_newton"])


def _grid(desc, spec, h):
    grid = Grid.around(desc, h, spec.dim)
    return grid, classify_nodes(grid, desc)


def _jsonable(v):
    if isinstance(v, float):
        return v if math.isfinite(v) else str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_history(path: Path, history) -> None:
    with open(path, "w") as fh:
        fh.write("sweep,residual\n")
        for k, v in enumerate(history, start=1):
            fh.write(f"{k},{float(v)!r}\n")


class Run:
    """Collects metadata for ``run.json``."""

    def __init__(self, subcommand, cfg, out: Path):
        self.subcommand = subcommand
        self.cfg = cfg
        self.out = out
        self.t0 = time.perf_counter()
        self.meta = {}

    def record_solve(self, res) -> None:
        self.meta["residuals"] = {
            "final_residual": _jsonable(float(res.final_residual)),
            "final_change": _jsonable(float(res.final_change)),
            "iterations": len(res.residual_history),
            "sweeps": res.sweeps_used,
            "newton_steps": res.newton_steps,
            "scheme": res.scheme,
        }
        _write_history(self.out / "residual_history.csv", res.residual_history)

    def finish(self, status: str, extra: dict | None = None) -> None:
        doc = {
            "subcommand": self.subcommand,
            "config": {k: _jsonable(v) for k, v in sorted(self.cfg.items()) if k != "out"},
            "version": __version__,
            "status": status,
            "wall_time": time.perf_counter() - self.t0,
        }
        doc.update(self.meta)
        if extra:
            doc.update(extra)
        _write_json(self.out / "run.json", doc)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_solve(cfg, run: Run, args) -> int:
    """Solve the exact scheme by sweeps (with Newton acceleration)."""
    desc, spec = _problem(cfg)
    grid, mask = _grid(desc, spec, cfg["h"])
    res = sweep_solve(spec, grid, mask, _solver_config(cfg))
    write_field_csv(run.out / "solution.csv", grid, mask, res.solution, column="u")
    run.record_solve(res)
    run.finish("ok")
    return 0


def cmd_regularized(cfg, run: Run, args) -> int:
    """Solve the eps-regularized problem."""
    desc, spec = _problem(cfg)
    grid, mask = _grid(desc, spec, cfg["h"])
    res = regularized_solve(spec, grid, mask, cfg["eps"], _solver_config(cfg))
    write_field_csv(run.out / "solution.csv", grid, mask, res.solution, column="u")
    run.record_solve(res)
    run.finish("ok")
    return 0


def cmd_dpp(cfg, run: Run, args) -> int:
    """Iterate the discrete game principle."""
    desc, spec = _problem(cfg)
    grid, mask = _grid(desc, spec, cfg["h"])
    dpp = DppConfig(dt=cfg["dt"], M=cfg["M"], allow_dt_override=cfg["allow_dt_override"])
    res = dpp_value_iteration(spec, grid, mask, dpp, _solver_config(cfg))
    write_field_csv(run.out / "solution.csv", grid, mask, res.solution, column="u")
    run.record_solve(res)
    run.finish("ok")
    return 0


def _oracle_for(cfg):
    if cfg["fixture"]:
        return val.fixture(cfg["fixture"]).oracle
    d, R, n, r = cfg["domain"], cfg["radius"], cfg["n"], cfg["r"]
    if d == "interval":
        return oracle_interval(R, r)
    if d == "ball":
        if n < 2:
            raise ConfigError("the ball oracle needs n >= 2", field="n")
        return oracle_eikonal_ball(n, R, r) if R <= critical_radius(n, r) else oracle_ball(n, R, r)
    if d == "annulus":
        return oracle_annulus(n, cfg["r_in"], R, r)
    raise ConfigError("no radial oracle for a box domain", field="domain")


def cmd_oracle(cfg, run: Run, args) -> int:
    """Write the radial closed-form solution and a sampled profile."""
    sol = _oracle_for(cfg)
    (run.out / "oracle.json").write_text(sol.to_json() + "\n")
    t = np.linspace(sol.lo, sol.hi, cfg["samples"])
    with open(run.out / "oracle_profile.csv", "w") as fh:
        fh.write("t,value,slope\n")
        for ti in t:
            v, s = sol.eval(float(ti))
            fh.write(f"{float(ti)!r},{v!r},{s!r}\n")
    run.finish("ok", {"checks": {k: _jsonable(v) for k, v in sol.check().items()}})
    return 0


def cmd_compare(cfg, run: Run, args) -> int:
    """Compare the solver with the radial oracle; exit 1 unless the error is below 3h."""
    desc, spec = _problem(cfg)
    sol = _oracle_for(cfg)
    grid, mask = _grid(desc, spec, cfg["h"])
    res = sweep_solve(spec, grid, mask, _solver_config(cfg))
    inside = mask.interior
    rad = np.clip(grid.radii()[inside], sol.lo, sol.hi)
    err = float(np.max(np.abs(res.solution[inside] - sol(rad))))
    h = cfg["h"]
    passed = err < 3.0 * h
    with open(run.out / "compare.csv", "w") as fh:
        fh.write("h,error,error_over_h,threshold,passed\n")
        fh.write(f"{h!r},{err!r},{err / h!r},{3.0 * h!r},{str(passed).lower()}\n")
    run.record_solve(res)
    run.finish("pass" if passed else "fail", {"error": err, "threshold": 3.0 * h})
    return 0 if passed else 1


def cmd_freeboundary(cfg, run: Run, args) -> int:
    """Solve, label regions and extract the interface."""
    desc, spec = _problem(cfg)
    grid, mask = _grid(desc, spec, cfg["h"])
    res = sweep_solve(spec, grid, mask, _solver_config(cfg))
    u = res.solution
    lab = fb.classify_regions(u, grid, mask, cfg["delta"], method=cfg["label_method"], r=spec.r)
    lab.write_csv(run.out / "regions.csv")
    summary = {"fractions": lab.fractions()}
    try:
        est = fb.extract_interface(lab)
        est.write_csv(run.out / "interface.csv")
        est.write_json(run.out / "interface.json")
        summary["interface"] = est.summary()
    except EmptyInterface:
        summary["interface"] = None
    diag = fb.gradient_modulus_diagnostic(u, grid, mask, cfg["margin"])
    summary["gradient"] = diag.as_dict()
    summary["small_gradient_measure"] = fb.small_gradient_measure(u, grid, mask, cfg["delta"])
    _write_json(run.out / "diagnostics.json", summary)
    run.record_solve(res)
    run.finish("ok")
    return 0


def cmd_validate(cfg, run: Run, args) -> int:
    """Run a validation study; exit 1 when a check fails."""
    study = args.study
    if study not in STUDIES:
        raise ConfigError(f"unknown study {study!r}; choose from {', '.join(STUDIES)}", field="study")
    sc = _solver_config(cfg)
    name = cfg["fixture"] or "interval"
    try:
        if study == "convergence":
            rep = val.convergence_study(name, cfg["h_list"], sc)
        elif study == "epsilon":
            rep = val.epsilon_study(name, cfg["eps_list"], cfg["h"], sc)
        elif study == "lipschitz":
            rep = val.lipschitz_study(name, cfg["h_list"], sc)
        elif study == "growth":
            rep = val.growth_study(cfg["r_in"], cfg["R_list"], cfg["r"], cfg["h_policy"], cfg["n"], sc)
        else:
            desc, spec = _problem(cfg)
            grid, mask = _grid(desc, spec, cfg["h"])
            rep = val.comparison_battery(spec, grid, mask, cfg["trials"], cfg["seed"], sc)
    except NoConvergence as exc:
        partial = getattr(exc, "partial_report", None)
        if partial is not None:
            partial.write(run.out / "report.json", run.out / "report.csv")
        raise
    rep.write(run.out / "report.json", run.out / "report.csv")
    run.finish("pass" if rep.passed else "fail", {"study": study, "passed": rep.passed})
    return 0 if rep.passed else 1


def library_defaults() -> dict:
    """Defaults as declared by the library, keyed like :data:`OPTIONS`."""
    out = {}
    for f in fields(SolverConfig):
        out[f.name] = f.default
    sig = inspect.signature(fb.classify_regions).parameters
    out["delta"] = sig["delta"].default
    out["label_method"] = sig["method"].default
    out["margin"] = inspect.signature(fb.gradient_modulus_diagnostic).parameters["margin"].default
    out["M"] = DEFAULT_DIRECTIONS
    out["dt"] = DppConfig().dt
    out["allow_dt_override"] = DppConfig().allow_dt_override
    sig = inspect.signature(val.comparison_battery).parameters
    out["trials"] = sig["trials"].default
    out["seed"] = sig["seed"].default
    out["h_policy"] = inspect.signature(val.growth_study).parameters["h_policy"].default
    out["r"] = ProblemSpec(Ball(1.0)).r
    out["g"] = ProblemSpec(Ball(1.0)).g
    out["n"] = ProblemSpec(Ball(1.0)).dim
    return out


def self_check() -> list[str]:
    """Mismatches between :data:`OPTIONS` defaults and the library defaults."""
    lib = library_defaults()
    bad = []
    for key, value in sorted(lib.items()):
        mine = OPTION_MAP[key].default
        if mine != value:
            bad.append(f"{key}: cli default {mine!r} != library default {value!r}")
    return bad


def cmd_self_check(cfg, run: Run, args) -> int:
    """Compare the CLI defaults with the library defaults."""
    bad = self_check()
    for line in bad:
        print(line, file=sys.stderr)
    run.finish("pass" if not bad else "fail", {"checked": sorted(library_defaults()), "mismatches": bad})
    return 0 if not bad else 1


COMMANDS = {
    "solve": cmd_solve,
    "regularized": cmd_regularized,
    "dpp": cmd_dpp,
    "oracle": cmd_oracle,
    "compare": cmd_compare,
    "freeboundary": cmd_freeboundary,
    "validate": cmd_validate,
    "self-check": cmd_self_check,
}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gchjb", description=__doc__.strip().splitlines()[0])
    p.add_argument("--version", action="version", version=f"gchjb {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=COMMANDS[name].__doc__.strip().splitlines()[0])
        if name == "validate":
            sp.add_argument("study", help="one of: " + ", ".join(STUDIES))
        sp.add_argument("--config", help="key=value configuration file")
        for o in OPTIONS:
            shown = o.default
            if isinstance(shown, list):
                shown = ",".join(f"{v:g}" for v in shown)
            sp.add_argument(f"--{o.name}", dest=f"opt_{o.name}", default=None, metavar="VALUE",
                            help=f"{o.help} (default: {shown})")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("opt_") and v is not None}
    out = None
    try:
        cfg = parse_config(args.config, flags)
        out = Path(cfg["out"] or os.environ.get("HJB_OUTPUT_DIR") or "gchjb_output")
        out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, cfg, out)
        return COMMANDS[args.command](cfg, run, args)
    except HJBError as exc:
        doc = {
            "error": type(exc).__name__,
            "message": str(exc),
            "exit_code": exc.exit_code,
        }
        for attr in ("field", "line"):
            if getattr(exc, attr, None) is not None:
                doc[attr] = getattr(exc, attr)
        if isinstance(exc, NoConvergence):
            doc["residual_history_length"] = len(exc.residual_history)
        print(json.dumps(doc, sort_keys=True), file=sys.stderr)
        if out is None and (flags.get("out") or os.environ.get("HJB_OUTPUT_DIR")):
            # the config did not parse; still leave error.json where asked
            out = Path(flags.get("out") or os.environ["HJB_OUTPUT_DIR"])
            out.mkdir(parents=True, exist_ok=True)
        if out is not None:
            _write_json(out / "error.json", doc)
            if isinstance(exc, NoConvergence):
                _write_history(out / "residual_history.csv", exc.residual_history)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
