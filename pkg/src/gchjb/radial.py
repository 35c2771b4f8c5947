"""
Semi-analytic radial solutions and an independent radial profile solver.

A radial solution ``u(x) = f(|x|)`` is piecewise made of

* eikonal pieces ``f(t) = c + s*t`` with ``s = +-1``, and
* Poisson pieces ``f(t) = A + B*Phi(t) - rhs*t^2/(2n)``,

where ``Phi`` is the radial fundamental solution normalised by
``Phi'(t) = t^(1-n)``: ``Phi(t) = t`` (n = 1), ``log t`` (n = 2),
``t^(2-n)/(2-n)`` (n >= 3).

A decreasing eikonal piece ``c - t`` is a supersolution of
``-lap u >= rhs`` only while ``(n-1)/t >= rhs``; this critical radius
``(n-1)/rhs`` separates the regimes below. Where pieces meet, either the
junction is C^1 (both slopes -1) or it is a ridge (slopes +1 / -1), so
``|f'|`` is continuous everywhere.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from . import _kernels as K
from .errors import BadParameter, DegenerateMatching, NoConvergence, NoInterface, OutOfDomain, WrongRegime


def fundamental(n: int, t):
    t = np.asarray(t, dtype=float)
    if n == 1:
        return t
    if n == 2:
        return np.log(t)
    return t ** (2 - n) / (2 - n)


def fundamental_slope(n: int, t):
    return np.asarray(t, dtype=float) ** (1 - n)


def critical_radius(n: int, rhs: float) -> float:
    """Largest radius where the cone ``c - |x|`` still satisfies ``-lap >= rhs``."""
    if rhs <= 0:
        return math.inf
    return (n - 1) / rhs


@dataclass(frozen=True)
class EikonalPiece:
    lo: float
    hi: float
    c: float
    sign: int = -1
    kind = "eikonal"

    def value(self, t):
        return self.c + self.sign * np.asarray(t, dtype=float)

    def slope(self, t):
        return np.full(np.shape(t), float(self.sign))

    def second(self, t):
        return np.zeros(np.shape(t))

    def coefficients(self):
        return {"c": self.c, "sign": self.sign}


@dataclass(frozen=True)
class PoissonPiece:
    lo: float
    hi: float
    A: float
    B: float
    rhs: float
    n: int
    kind = "poisson"

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return self.A + self.B * fundamental(self.n, t) - self.rhs * t * t / (2 * self.n)

    def slope(self, t):
        t = np.asarray(t, dtype=float)
        return self.B * fundamental_slope(self.n, t) - self.rhs * t / self.n

    def second(self, t):
        t = np.asarray(t, dtype=float)
        if self.n == 1:
            return np.full(t.shape, -self.rhs)
        return self.B * (1 - self.n) * t ** (-self.n) - self.rhs / self.n

    def coefficients(self):
        return {"A": self.A, "B": self.B, "rhs": self.rhs}


@dataclass(frozen=True)
class RadialSolution:
    n: int
    rhs: float
    pieces: tuple = field(default_factory=tuple)

    @property
    def lo(self) -> float:
        return self.pieces[0].lo

    @property
    def hi(self) -> float:
        return self.pieces[-1].hi

    @property
    def interfaces(self) -> list[float]:
        return [p.hi for p in self.pieces[:-1]]

    def _piece(self, t):
        if t < self.lo - 1e-14 or t > self.hi + 1e-14:
            raise OutOfDomain(f"radius {t} outside [{self.lo}, {self.hi}]")
        for p in self.pieces:
            if t <= p.hi:
                return p
        return self.pieces[-1]

    def eval(self, t: float) -> tuple[float, float]:
        """``(value, slope)`` at radius ``t``; at an interface the piece on
        the left is used."""
        p = self._piece(float(t))
        return float(p.value(t)), float(p.slope(t))

    def __call__(self, t):
        """Vectorised value; radii outside the domain raise OutOfDomain."""
        t = np.asarray(t, dtype=float)
        if t.size and (t.min() < self.lo - 1e-12 or t.max() > self.hi + 1e-12):
            raise OutOfDomain("radius outside the radial domain")
        out = np.empty(t.shape)
        done = np.zeros(t.shape, dtype=bool)
        for p in self.pieces:
            sel = (t <= p.hi) & ~done
            out[sel] = p.value(t[sel])
            done |= sel
        out[~done] = self.pieces[-1].value(t[~done])
        return out

    def slope(self, t):
        t = np.asarray(t, dtype=float)
        out = np.empty(t.shape)
        done = np.zeros(t.shape, dtype=bool)
        for p in self.pieces:
            sel = (t <= p.hi) & ~done
            out[sel] = p.slope(t[sel])
            done |= sel
        out[~done] = self.pieces[-1].slope(t[~done])
        return out

    def kinds(self) -> list[str]:
        return [p.kind for p in self.pieces]

    def scaled(self, s: float) -> "RadialSolution":
        """``v(t) = u(s t) / s``: the solution for ``rhs*s`` on radii divided by ``s``."""
        if not s > 0:
            raise BadParameter("scale must be positive")
        n = self.n
        out = []
        for p in self.pieces:
            lo, hi = p.lo / s, p.hi / s
            if p.kind == "eikonal":
                out.append(EikonalPiece(lo, hi, p.c / s, p.sign))
            else:
                if n == 2:
                    A, B = (p.A + p.B * math.log(s)) / s, p.B / s
                else:
                    A, B = p.A / s, p.B * s ** (1 - n)
                out.append(PoissonPiece(lo, hi, A, B, p.rhs * s, n))
        return RadialSolution(n, self.rhs * s, tuple(out))

    def check(self, samples: int = 201) -> dict:
        """Largest defects of the structural invariants.

        Keys: ``value_gap`` (continuity at interfaces), ``slope_gap``
        (continuity of |f'| at interfaces), ``min_slope`` (smallest |f'| on
        any piece), ``pde`` (radial Poisson residual on Poisson pieces),
        ``super`` (largest violation of ``-lap f >= rhs`` on eikonal pieces).
        """
        value_gap = slope_gap = pde = sup = 0.0
        min_slope = math.inf
        for a, b in zip(self.pieces[:-1], self.pieces[1:]):
            t = a.hi
            value_gap = max(value_gap, abs(float(a.value(t) - b.value(t))))
            slope_gap = max(slope_gap, abs(abs(float(a.slope(t))) - abs(float(b.slope(t)))))
        for p in self.pieces:
            lo = max(p.lo, 1e-12) if self.n > 1 else p.lo
            t = np.linspace(lo, p.hi, samples)
            min_slope = min(min_slope, float(np.min(np.abs(p.slope(t)))))
            if p.kind == "poisson":
                tt = t[t > 0] if self.n > 1 else t
                lap = p.second(tt) + ((self.n - 1) * p.slope(tt) / tt if self.n > 1 else 0.0)
                pde = max(pde, float(np.max(np.abs(-lap - p.rhs))))
            elif self.n > 1:
                tt = t[t > 0]
                sup = max(sup, float(np.max(self.rhs - (-(self.n - 1) * p.sign / tt))))
        return {"value_gap": value_gap, "slope_gap": slope_gap, "min_slope": min_slope,
                "pde": pde, "super": max(sup, 0.0)}

    def to_dict(self) -> dict:
        def r15(x):
            return float(f"{x:.15g}")

        return {
            "n": self.n,
            "rhs": r15(self.rhs),
            "pieces": [
                {
                    "kind": p.kind,
                    "interval": [r15(p.lo), r15(p.hi)],
                    "coefficients": {k: (r15(v) if isinstance(v, float) else v)
                                     for k, v in p.coefficients().items()},
                }
                for p in self.pieces
            ],
            "interfaces": [r15(t) for t in self.interfaces],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# root finding
# --------------------------------------------------------------------------


def bracketed_root(fun, lo: float, hi: float, width: float = 1e-10, newton_steps: int = 5) -> float:
    """Bisection down to ``width`` followed by a few guarded Newton steps."""
    flo, fhi = fun(lo), fun(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if flo * fhi > 0:
        raise NoInterface(f"no sign change on [{lo}, {hi}]")
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if fm == 0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    for _ in range(newton_steps):
        step = 1e-7 * max(1.0, abs(x))
        d = (fun(x + step) - fun(x - step)) / (2 * step)
        if d == 0:
            break
        xn = x - fun(x) / d
        if not lo - width <= xn <= hi + width:
            break
        x = xn
    return x


# --------------------------------------------------------------------------
# oracles
# --------------------------------------------------------------------------


def _poisson_through(n, rhs, t0, slope, t_zero, lo, hi):
    """Poisson piece with ``f'(t0) = slope`` and ``f(t_zero) = 0``."""
    B = (slope + rhs * t0 / n) * t0 ** (n - 1)
    A = -B * float(fundamental(n, t_zero)) + rhs * t_zero ** 2 / (2 * n)
    return PoissonPiece(lo, hi, A, B, rhs, n)


def oracle_eikonal_ball(n: int, R: float, rhs: float = 1.0) -> RadialSolution:
    """``u = R - |x|`` on a ball below the critical radius."""
    if n < 2:
        raise BadParameter("the ball oracles need n >= 2 (use oracle_interval for n = 1)")
    if not R > 0:
        raise BadParameter("R must be positive")
    if R > critical_radius(n, rhs):
        raise WrongRegime(f"R={R} exceeds the critical radius {critical_radius(n, rhs)}; use oracle_ball")
    return RadialSolution(n, rhs, (EikonalPiece(0.0, R, R, -1),))


def ball_matching_system(n: int, R: float, rhs: float = 1.0):
    """Matrix and right-hand side of the linear system for ``(A, B, C)``.

    Rows: value zero at ``R``; value match with the cone ``C - t`` at the
    critical radius ``a``; slope ``-1`` there.
    """
    a = critical_radius(n, rhs)
    M = np.array([
        [1.0, float(fundamental(n, R)), 0.0],
        [1.0, float(fundamental(n, a)), -1.0],
        [0.0, float(fundamental_slope(n, a)), 0.0],
    ])
    b = np.array([rhs * R * R / (2 * n), rhs * a * a / (2 * n) - a, -1.0 + rhs * a / n])
    return M, b


def oracle_ball(n: int, R: float, rhs: float = 1.0) -> RadialSolution:
    """Cone core ``C - t`` on ``[0, a]`` glued C^1 to a Poisson shell on ``[a, R]``."""
    if n < 2:
        raise BadParameter("the ball oracles need n >= 2")
    if not rhs > 0:
        raise BadParameter("rhs must be positive for the two-regime ball")
    a = critical_radius(n, rhs)
    if R <= a:
        raise WrongRegime(f"R={R} is within the critical radius {a}; use oracle_eikonal_ball")
    M, b = ball_matching_system(n, R, rhs)
    if abs(np.linalg.det(M)) < 1e-14:
        raise DegenerateMatching("singular matching system")
    A, B, C = np.linalg.solve(M, b)
    return RadialSolution(n, rhs, (EikonalPiece(0.0, a, float(C), -1),
                                   PoissonPiece(a, R, float(A), float(B), rhs, n)))


def oracle_interval(R: float, rhs: float = 1.0) -> RadialSolution:
    """``u = (R + rhs R^2/2) - (|x| + rhs x^2/2)`` on ``(-R, R)``, as a function of ``|x|``."""
    if not R > 0:
        raise BadParameter("R must be positive")
    return RadialSolution(1, rhs, (PoissonPiece(0.0, R, R + rhs * R * R / 2, -1.0, rhs, 1),))


def oracle_annulus(n: int, r_in: float, R: float, rhs: float = 1.0,
                   condition: str = "unit_slope") -> RadialSolution:
    """Radial solution on ``r_in < |x| < R`` vanishing on both spheres.

    With ``a`` the critical radius:

    * ``R <= a``: Poisson (increasing) on ``[r_in, rho]``, cone ``R - t`` on
      ``[rho, R]``;
    * ``r_in < a < R``: Poisson / cone / Poisson, the outer junction at ``a``
      being C^1 as for the ball, when the inner profile can climb to the
      cone; otherwise the cone disappears and two Poisson pieces meet at a
      ridge;
    * ``r_in >= a``: two Poisson pieces meeting at a ridge.

    Each free interface satisfies ``|f'| = 1`` from both sides.

    ``condition="harmonic_flux"`` replaces the inner slope condition in the
    first case by ``B Phi'(rho) = 1`` (the harmonic part alone having unit
    slope). It exists only to compare against the grid solution and violates
    the continuity of ``|f'|``.
    """
    if n < 1:
        raise BadParameter("n must be >= 1")
    if not (0 < r_in < R):
        raise BadParameter("need 0 < r_in < R")
    if rhs < 0:
        raise BadParameter("rhs must be >= 0")
    if condition not in ("unit_slope", "harmonic_flux"):
        raise BadParameter(f"unknown interface condition {condition!r}")
    a = critical_radius(n, rhs)

    def inner(rho):
        if condition == "harmonic_flux":
            B = rho ** (n - 1)
            A = -B * float(fundamental(n, r_in)) + rhs * r_in ** 2 / (2 * n)
            return PoissonPiece(r_in, rho, A, B, rhs, n)
        return _poisson_through(n, rhs, rho, 1.0, r_in, r_in, rho)

    if R <= a:
        rho = bracketed_root(lambda s: float(inner(s).value(s)) - (R - s), r_in, R)
        return RadialSolution(n, rhs, (inner(rho), EikonalPiece(rho, R, R, -1)))

    if condition != "unit_slope":
        raise BadParameter("harmonic_flux only applies when R is below the critical radius")

    if r_in < a:
        outer = oracle_ball(n, R, rhs)
        cone, shell = outer.pieces
        C = cone.c
        gap = float(inner(a).value(a)) - (C - a)
        if gap >= 0:
            rho = bracketed_root(lambda s: float(inner(s).value(s)) - (C - s), r_in, a)
            return RadialSolution(n, rhs, (inner(rho), EikonalPiece(rho, a, C, -1), shell))
        lo = a
    else:
        lo = r_in

    def outer_piece(rho):
        return _poisson_through(n, rhs, rho, -1.0, R, rho, R)

    rho = bracketed_root(lambda s: float(inner(s).value(s) - outer_piece(s).value(s)), lo, R)
    return RadialSolution(n, rhs, (inner(rho), outer_piece(rho)))


# --------------------------------------------------------------------------
# independent profile solver
# --------------------------------------------------------------------------


@dataclass
class RadialProfile:
    t: np.ndarray
    f: np.ndarray
    residual: float
    newton_steps: int
    sweeps: int

    def __call__(self, s):
        return np.interp(s, self.t, self.f)


def _radial_defect(f, t, n, h, rhs, center):
    N = len(f)
    start = 0 if center else 1
    q = N - 1 - start
    T = np.empty(q)
    cols = np.empty((q, 2), np.int64)
    wts = np.empty((q, 2))
    K.radial_linearize(f, t, n, float(h), float(rhs), center, T, cols, wts)
    return T, cols, wts, start


#: profiles up to this many points are relaxed from above with plain sweeps
_RADIAL_BASE = 200
_RADIAL_BASE_SWEEPS = 400_000


def _radial_newton(f, t, n, h, rhs, center) -> int:
    """Semismooth Newton on ``f = T(f)`` with an L1 Armijo test. A failed line
    search (the active pattern cycling near a ridge) triggers four sweeps;
    after eight such recoveries the iterate is handed back as it is."""
    N = len(f)
    steps = recoveries = 0
    for _ in range(200):
        T, cols, wts, start = _radial_defect(f, t, n, h, rhs, center)
        idx = np.arange(start, N - 1)
        gap = f[idx] - T
        if np.max(np.abs(gap)) <= 4 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(f)))):
            break
        merit = float(np.sum(np.abs(gap)))
        q = len(idx)
        rows = np.repeat(np.arange(q), 2)
        c = cols.ravel() - start
        w = wts.ravel()
        keep = (cols.ravel() >= start) & (cols.ravel() < N - 1) & (w != 0)
        W = sp.csr_matrix((w[keep], (rows[keep], c[keep])), shape=(q, q))
        A = (sp.identity(q, format="csc") - W).tocsc()
        v = spl.spsolve(A, T - W @ f[idx])
        base = f[idx].copy()
        lam, ok = 1.0, False
        while lam >= 1e-3:
            f[idx] = base + lam * (v - base)
            T2, *_ = _radial_defect(f, t, n, h, rhs, center)
            if np.sum(np.abs(f[idx] - T2)) < (1.0 - 1e-4 * lam) * merit:
                ok = True
                break
            lam /= 2
        if ok:
            steps += 1
            continue
        f[idx] = base
        if recoveries == 8:
            break
        recoveries += 1
        for k in range(4):
            K.radial_sweep(f, t, float(n), float(h), float(rhs), center, k % 2 == 0)
    return steps


def _radial_fixed_point(n, r_in, R, rhs, N, tol, max_sweeps):
    center = r_in == 0
    t = np.linspace(r_in, R, N)
    h = (R - r_in) / (N - 1)
    if N <= _RADIAL_BASE:
        f = np.zeros(N)
        f[:-1] = 1.0 + (R - r_in) * (1.0 + (R - r_in) * max(rhs, 1.0))
        budget = max(max_sweeps, _RADIAL_BASE_SWEEPS)
        steps = 0
    else:
        # Newton from a coarse solution: started far away, the switching
        # between the two branches at a ridge keeps it from settling
        tc, fc, steps, _ = _radial_fixed_point(n, r_in, R, rhs, (N - 1) // 2 + 1, tol, max_sweeps)
        f = np.interp(t, tc, fc)
        budget = max_sweeps
    f[-1] = 0.0
    if not center:
        f[0] = 0.0
    steps += _radial_newton(f, t, n, h, rhs, center)
    sweeps = 0
    while sweeps < budget:
        change = K.radial_sweep(f, t, float(n), float(h), float(rhs), center, sweeps % 2 == 0)
        sweeps += 1
        if change < tol * 1e-3:
            break
    return t, f, steps, sweeps


def radial_ode_solve(n: int, r_in: float, R: float, rhs: float, N: int,
                     tol: float = 1e-10, max_sweeps: int = 2000) -> RadialProfile:
    """Solve ``min(-(f'' + (n-1) f'/t) - rhs, |f'| - 1) = 0`` on ``N`` points.

    ``r_in = 0`` means a ball: the left end is the centre (``f'(0) = 0``);
    otherwise ``f(r_in) = 0``. Always ``f(R) = 0``. The node update is the
    max-of-candidates update of the grid solver with the metric term. Profiles
    of more than 200 points start from the solution on half as many points,
    improved by Newton steps and finished with alternating sweeps.
    ``residual`` is the fixed point defect ``max |f - T(f)|``.

    Raises:
        NoConvergence: the defect is still ``>= tol`` after ``max_sweeps``.
    """
    if N < 100:
        raise BadParameter("N must be >= 100")
    if not (0 <= r_in < R):
        raise BadParameter("need 0 <= r_in < R")
    t, f, steps, sweeps = _radial_fixed_point(n, r_in, R, rhs, N, tol, max_sweeps)
    T, _, _, start = _radial_defect(f, t, n, (R - r_in) / (N - 1), rhs, r_in == 0)
    res = float(np.max(np.abs(f[start:N - 1] - T)))
    if not res < tol:
        raise NoConvergence(f"radial solve stalled at defect {res:.3g}")
    return RadialProfile(t, f, res, steps, sweeps)
