"""
Experiment harness: convergence, epsilon, comparison, growth and Lipschitz
studies. Each study returns a :class:`StudyReport` holding the raw numbers,
the thresholds it was judged against, and the resulting checks, so that a
report can be re-judged from its stored values alone.

All pass/fail thresholds live in :data:`THRESHOLDS`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import BadParameter, NoConvergence
from .grid import Annulus, Ball, Grid, Interval, central_gradient_field, classify_nodes, multilinear_interpolate
from .radial import oracle_annulus, oracle_ball, oracle_eikonal_ball, oracle_interval
from .solver import ProblemSpec, SolverConfig, regularized_solve, sweep_solve

#: the single threshold table; reports copy the entries they use
THRESHOLDS = {
    "convergence.rate_min": 0.8,
    "convergence.rate_max": 1.2,
    "epsilon.gap_factor": 5.0,
    "comparison.tolerance_factor": 10.0,
    "growth.last_over_first": 2.0,
    "growth.contrast_rel_change": 0.05,
    "lipschitz.max_over_min": 1.5,
}


@dataclass(frozen=True)
class Fixture:
    name: str
    descriptor: object
    r: float
    dim: int
    oracle: object  # RadialSolution

    def spec(self, g=0.0) -> ProblemSpec:
        return ProblemSpec(self.descriptor, self.r, g, self.dim)


def fixture(name: str) -> Fixture:
    """Named test problems with a radial closed form."""
    if name == "interval":
        return Fixture(name, Interval(1.0), 1.0, 1, oracle_interval(1.0))
    if name == "eikonal_ball":
        return Fixture(name, Ball(1.0), 1.0, 2, oracle_eikonal_ball(2, 1.0))
    if name == "ball":
        return Fixture(name, Ball(2.0), 1.0, 2, oracle_ball(2, 2.0))
    if name == "annulus_2piece":
        return Fixture(name, Annulus(0.1, 0.9), 1.0, 2, oracle_annulus(2, 0.1, 0.9))
    if name == "annulus_3piece":
        # Poisson, eikonal, Poisson; the outer radius must stay close to the
        # critical radius for the inner Poisson piece to reach the eikonal one
        return Fixture(name, Annulus(0.6, 1.05), 1.0, 2, oracle_annulus(2, 0.6, 1.05))
    if name == "annulus_wide":
        # wide annulus straddling the critical radius: no eikonal middle
        # piece exists and the two Poisson pieces meet at a ridge
        return Fixture(name, Annulus(0.5, 3.0), 1.0, 2, oracle_annulus(2, 0.5, 3.0))
    if name == "annulus_ridge":
        # two Poisson pieces meeting at a ridge: the inner radius sits at
        # the critical radius (n-1)/r
        return Fixture(name, Annulus(0.5, 1.0), 2.0, 2, oracle_annulus(2, 0.5, 1.0, 2.0))
    raise BadParameter(f"unknown fixture {name!r}")


FIXTURE_NAMES = ("interval", "eikonal_ball", "ball", "annulus_2piece", "annulus_3piece", "annulus_wide",
                 "annulus_ridge")


def _r15(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if not math.isfinite(x) else float(f"{x:.15g}")
    return x


def _cell(v) -> str:
    v = _r15(v)
    if isinstance(v, list):
        return " ".join(_cell(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


@dataclass
class StudyReport:
    kind: str
    params: dict
    runs: list = field(default_factory=list)
    rate: float | None = None
    thresholds: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def check(self, name: str, value, passed: bool, threshold=None) -> None:
        self.checks[name] = {"value": value, "threshold": threshold, "passed": bool(passed)}

    def to_dict(self) -> dict:
        def clean(obj):
            if isinstance(obj, dict):
                return {k: clean(v) for k, v in obj.items()}
            if isinstance(obj, (list, tuple)):
                return [clean(v) for v in obj]
            return _r15(obj)

        out = {
            "kind": self.kind,
            "params": clean(self.params),
            "runs": clean(self.runs),
            "thresholds": clean(self.thresholds),
            "checks": clean(self.checks),
            "passed": self.passed,
        }
        if self.rate is not None:
            out["rate"] = _r15(self.rate)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, json_path=None, csv_path=None) -> None:
        if json_path:
            with open(json_path, "w") as fh:
                fh.write(self.to_json())
        if csv_path:
            cols = sorted({k for row in self.runs for k in row})
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(cols)
                for row in self.runs:
                    w.writerow([_cell(row.get(c, "")) for c in cols])


def fitted_rate(hs, errs) -> float:
    """Least-squares slope of ``log err`` against ``log h``."""
    x = np.log(np.asarray(hs, dtype=float))
    y = np.log(np.asarray(errs, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def solve_fixture(fx: Fixture, h: float, config: SolverConfig | None = None, g=0.0):
    grid = Grid.around(fx.descriptor, h, fx.dim)
    mask = classify_nodes(grid, fx.descriptor)
    return sweep_solve(fx.spec(g), grid, mask, config)


def oracle_error(fx: Fixture, result) -> float:
    """Sup norm over Interior nodes of the difference to the radial oracle."""
    inside = result.mask.interior
    rad = np.clip(result.grid.radii()[inside], fx.oracle.lo, fx.oracle.hi)
    return float(np.max(np.abs(result.solution[inside] - fx.oracle(rad))))


def convergence_study(name: str, h_list, config: SolverConfig | None = None) -> StudyReport:
    """Sup-norm errors against the oracle for each ``h`` and the fitted rate.

    Checks: errors strictly decreasing; for the single-piece fixtures
    (``interval``, ``eikonal_ball``) the rate lies in the first-order window.

    Raises:
        NoConvergence: with ``partial_report`` holding the runs done so far.
    """
    h_list = [float(h) for h in h_list]
    if len(h_list) < 3 or any(b >= a for a, b in zip(h_list, h_list[1:])):
        raise BadParameter("h_list must be decreasing with at least 3 entries")
    fx = fixture(name)
    rep = StudyReport("convergence", {"fixture": name, "h_list": h_list})
    for h in h_list:
        try:
            res = solve_fixture(fx, h, config)
        except NoConvergence as exc:
            exc.partial_report = rep
            raise
        err = oracle_error(fx, res)
        rep.runs.append({"h": h, "error": err, "error_over_h": err / h,
                         "newton_steps": res.newton_steps, "sweeps": res.sweeps_used,
                         "residual": res.final_residual})
    errs = [row["error"] for row in rep.runs]
    rep.rate = fitted_rate(h_list, errs)
    rep.check("errors_decreasing", errs, all(b < a for a, b in zip(errs, errs[1:])))
    if name in ("interval", "eikonal_ball"):
        lo, hi = THRESHOLDS["convergence.rate_min"], THRESHOLDS["convergence.rate_max"]
        rep.thresholds.update({"rate_min": lo, "rate_max": hi})
        rep.check("rate_in_range", rep.rate, lo <= rep.rate <= hi, [lo, hi])
    return rep


def epsilon_study(name: str, eps_list, h: float, config: SolverConfig | None = None) -> StudyReport:
    """Gap ``max |u_eps - u|`` between regularized and exact discrete solutions.

    Checks (with two or more ``eps``): gaps strictly decreasing, and the last
    gap below ``epsilon.gap_factor`` times the oracle error of ``u`` at ``h``.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise BadParameter("eps_list must be decreasing")
    fx = fixture(name)
    base = solve_fixture(fx, h, config)
    disc = oracle_error(fx, base)
    factor = THRESHOLDS["epsilon.gap_factor"]
    rep = StudyReport("epsilon", {"fixture": name, "eps_list": eps_list, "h": h},
                      thresholds={"gap_factor": factor})
    inside = base.mask.interior
    for eps in eps_list:
        try:
            reg = regularized_solve(fx.spec(), base.grid, base.mask, eps, config)
        except NoConvergence as exc:
            exc.partial_report = rep
            raise
        gap = float(np.max(np.abs(reg.solution[inside] - base.solution[inside])))
        rep.runs.append({"eps": eps, "gap": gap, "newton_steps": reg.newton_steps,
                         "sweeps": reg.sweeps_used, "residual": reg.final_residual})
    rep.params["discretization_error"] = disc
    if len(eps_list) >= 2:
        gaps = [row["gap"] for row in rep.runs]
        rep.check("gaps_decreasing", gaps, all(b < a for a, b in zip(gaps, gaps[1:])))
        rep.check("final_gap_small", gaps[-1], gaps[-1] < factor * disc, factor * disc)
    return rep


def random_boundary_field(shape, rng: np.random.Generator, high: float = 0.2) -> np.ndarray:
    """Uniform ``[0, high]`` node values smoothed by one stencil-average pass."""
    raw = rng.uniform(0.0, high, size=shape)
    dim = len(shape)
    kernel = np.zeros((3,) * dim)
    centre = (1,) * dim
    kernel[centre] = 1.0
    for ax in range(dim):
        for s in (0, 2):
            idx = list(centre)
            idx[ax] = s
            kernel[tuple(idx)] = 1.0
    kernel /= kernel.sum()
    return ndimage.convolve(raw, kernel, mode="nearest")


def comparison_battery(spec: ProblemSpec, grid: Grid, mask, trials: int = 25, seed: int = 0,
                       config: SolverConfig | None = None, shift: float = 0.25) -> StudyReport:
    """Ordered boundary data give ordered solutions.

    Each trial draws ``g1`` and a nonnegative increment ``w`` from
    :func:`random_boundary_field` and solves with ``g1`` and ``g2 = g1 + w``;
    the violation is ``max(u1 - u2)``. Two extra runs check that a constant
    shift of the data shifts the solution by the same constant and that
    equal data give bitwise equal solutions.
    """
    if trials < 10:
        raise BadParameter("trials must be >= 10")
    config = config or SolverConfig()
    tol = config.tolerance
    factor = THRESHOLDS["comparison.tolerance_factor"]
    rng = np.random.default_rng(seed)
    rep = StudyReport("comparison", {"trials": trials, "seed": seed, "h": grid.h, "r": spec.r,
                                     "tolerance": tol},
                      thresholds={"tolerance_factor": factor})
    inside = mask.interior

    def solve(g):
        return sweep_solve(ProblemSpec(spec.descriptor, spec.r, g, spec.dim), grid, mask, config).solution

    violations = 0
    worst = -math.inf
    g1 = None
    u1 = None
    for k in range(trials):
        g1 = random_boundary_field(grid.shape, rng)
        w = random_boundary_field(grid.shape, rng)
        u1 = solve(g1)
        u2 = solve(g1 + w)
        v = float(np.max(u1[inside] - u2[inside]))
        worst = max(worst, v)
        bad = v > factor * tol
        violations += int(bad)
        rep.runs.append({"trial": k, "max_violation": v, "violated": bad})
    rep.check("no_violations", violations, violations == 0, factor * tol)
    us = solve(g1 + shift)
    defect = float(np.max(np.abs(us[inside] - u1[inside] - shift)))
    rep.check("shift_equivariance", defect, defect <= factor * tol, factor * tol)
    same = solve(g1.copy())
    rep.check("equal_data_bitwise", bool(np.array_equal(same, u1, equal_nan=True)),
              np.array_equal(same, u1, equal_nan=True))
    rep.params["worst_violation"] = worst
    return rep


def _growth_h(policy, r_in: float) -> float:
    if isinstance(policy, (int, float)):
        return float(policy)
    kind, _, val = str(policy).partition(":")
    if kind == "fixed":
        return float(val)
    if kind == "cells":
        return r_in / float(val)
    raise BadParameter(f"unknown h_policy {policy!r}")


def growth_study(r_in: float, R_list, rhs: float = 1.0, h_policy="cells:8", n: int = 2,
                 config: SolverConfig | None = None) -> StudyReport:
    """Value at the probe ``|x0| = 2 r_in`` on ``Annulus(r_in, R)`` as ``R`` grows.

    For ``n >= 2`` the probe must increase strictly and end above
    ``growth.last_over_first`` times its first value. ``n = 1`` is the
    contrast case: the probe must settle (relative change over the last
    two radii below ``growth.contrast_rel_change``).
    """
    R_list = [float(R) for R in R_list]
    if any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise BadParameter("R_list must be increasing")
    if n not in (1, 2, 3):
        raise BadParameter("n must be 1, 2 or 3")
    h = _growth_h(h_policy, r_in)
    rep = StudyReport("growth", {"r_in": r_in, "R_list": R_list, "rhs": rhs, "h": h, "n": n,
                                 "h_policy": str(h_policy)})
    probe = np.zeros(n)
    probe[0] = 2.0 * r_in
    for R in R_list:
        if not R > 2.0 * r_in:
            raise BadParameter("every R must exceed the probe radius 2 r_in")
        desc = Annulus(r_in, R)
        grid = Grid.around(desc, h, n)
        mask = classify_nodes(grid, desc)
        res = sweep_solve(ProblemSpec(desc, rhs, 0.0, n), grid, mask, config)
        val = multilinear_interpolate(res.solution, grid, probe)
        rep.runs.append({"R": R, "probe": val, "nodes": grid.size})
    vals = [row["probe"] for row in rep.runs]
    if len(vals) >= 2:
        if n >= 2:
            ratio = THRESHOLDS["growth.last_over_first"]
            rep.thresholds["last_over_first"] = ratio
            rep.check("strictly_increasing", vals, all(b > a for a, b in zip(vals, vals[1:])))
            rep.check("last_over_first", vals[-1] / vals[0], vals[-1] > ratio * vals[0], ratio)
        else:
            lim = THRESHOLDS["growth.contrast_rel_change"]
            rel = abs(vals[-1] - vals[-2]) / max(abs(vals[-1]), 1e-300)
            rep.thresholds["contrast_rel_change"] = lim
            rep.check("bounded", rel, rel < lim, lim)
    return rep


def lipschitz_ratio(result, margin: float = 0.25) -> float:
    """``max |D_h u| / (max |u| + 1)`` over Interior nodes at distance ``>= margin``.

    ``|D_h u|`` is the central difference gradient norm.
    """
    u = result.solution
    mask = result.mask
    region = mask.interior & (mask.interior_distance() >= margin)
    if not region.any():
        raise BadParameter("no Interior node at the requested distance from the boundary")
    grad = central_gradient_field(u, result.grid, mask)
    gnorm = np.sqrt(np.sum(grad * grad, axis=-1))
    return float(np.max(gnorm[region]) / (np.max(np.abs(u[mask.active])) + 1.0))


def lipschitz_study(name: str, h_list, config: SolverConfig | None = None) -> StudyReport:
    """Lipschitz ratio per ``h``; checks ``max/min`` below ``lipschitz.max_over_min``."""
    fx = fixture(name)
    lim = THRESHOLDS["lipschitz.max_over_min"]
    rep = StudyReport("lipschitz", {"fixture": name, "h_list": [float(h) for h in h_list]},
                      thresholds={"max_over_min": lim})
    for h in h_list:
        res = solve_fixture(fx, float(h), config)
        rep.runs.append({"h": float(h), "ratio": lipschitz_ratio(res)})
    ratios = [row["ratio"] for row in rep.runs]
    spread = max(ratios) / min(ratios)
    rep.check("bounded_ratio", spread, spread < lim, lim)
    return rep
