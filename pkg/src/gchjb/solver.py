"""
Grid solvers for ``min(-lap u - r, |Du| - 1) = 0`` with Dirichlet data.

Three schemes share one driver:

``sweep_solve``
    Monotone scheme. The node update is ``max(poisson, eikonal)``: both
    discrete branch maps are nondecreasing in the node value, so the root of
    the min-equation with frozen neighbours is the larger candidate.
``regularized_solve``
    The viscous approximation ``-eps lap u = max(eps r, 1 - |Du|)``, solved
    node by node by bisection.
``dpp_value_iteration``
    Fixed point of the two-player dynamic programming principle: the best of
    the Brownian sphere average and the adversarial directional minimum,
    plus elapsed time.

Gauss-Seidel alone needs O(h^-2) sweeps wherever the Brownian branch is
active, which is out of reach at h = 1/256. By default the driver first runs
a semismooth Newton iteration on ``u = T(u)`` (``T`` the node map; its
Jacobian rows are the active branch weights and form an M-matrix), then
hands over to plain sweeps for the stopping rule. Set
``SolverConfig(accelerate=False)`` for sweeps only. Both paths converge to
the same discrete fixed point.
"""

from __future__ import annotations

import functools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl
from scipy.ndimage import map_coordinates

from . import _kernels as K
from .errors import BadParameter, NoConvergence
from .errors import HJBError
from .grid import DomainMask, Grid, _neighbor_values, classify_nodes

log = logging.getLogger(__name__)

BoundaryData = Union[float, Callable, np.ndarray]


@dataclass(frozen=True)
class ProblemSpec:
    descriptor: object
    r: float = 1.0
    g: BoundaryData = 0.0
    dim: int = 2

    def __post_init__(self):
        if not (self.r >= 0 and math.isfinite(self.r)):
            raise BadParameter("r must be a finite number >= 0")
        if self.dim not in (1, 2, 3):
            raise BadParameter("dim must be 1, 2 or 3")


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-10
    max_sweeps: int = 10_000
    init: str = "above"  # "above" | "boundary"
    update: str = "gauss_seidel"  # "gauss_seidel" | "jacobi"
    accelerate: bool = True
    max_newton: int = 80

    def __post_init__(self):
        if not self.tolerance > 0:
            raise BadParameter("tolerance must be positive")
        if self.max_sweeps < 1:
            raise BadParameter("max_sweeps must be >= 1")
        if self.init not in ("above", "boundary"):
            raise BadParameter(f"unknown init mode {self.init!r}")
        if self.update not in ("gauss_seidel", "jacobi"):
            raise BadParameter(f"unknown update mode {self.update!r}")


#: direction count of the game iteration in 2-D when none is given
DEFAULT_DIRECTIONS = 16


@dataclass(frozen=True)
class DppConfig:
    """Time step and direction count for the game iteration.

    ``dt=None`` picks ``h^2/(2n)`` so that the Brownian sphere of radius
    ``sqrt(2n dt)`` passes exactly through the axis neighbours. ``M=None``
    picks 16 directions in 2-D and the two axis directions in 1-D.
    """

    dt: float | None = None
    M: int | None = None
    allow_dt_override: bool = False


@dataclass
class SolveResult:
    solution: np.ndarray
    grid: Grid
    mask: DomainMask
    scheme: str
    residual_history: list = field(default_factory=list)
    sweeps_used: int = 0
    newton_steps: int = 0
    wall_time: float = 0.0
    status: str = "converged"
    final_residual: float = math.nan
    final_change: float = math.nan


# --------------------------------------------------------------------------
# node-level operations (reference implementations of the kernels)
# --------------------------------------------------------------------------


def poisson_candidate(u: np.ndarray, node, r: float, h: float, n: int | None = None) -> float:
    """Unique ``t`` with discrete ``-lap = r`` at ``node`` (neighbours frozen)."""
    pairs = _neighbor_values(u, node)
    n = n or len(pairs)
    return (sum(a + b for a, b in pairs) + h * h * r) / (2 * n)


def eikonal_root(minima, h: float) -> float:
    """Root ``t >= min(m)`` of ``sum_i max(t - m_i, 0)^2 = h^2``."""
    m = sorted(float(x) for x in minima)
    d = np.zeros(3)
    for i, v in enumerate(m):
        d[i] = v - m[0]
    t, _ = K.eikonal_offset(d, len(m), h)
    return m[0] + t


def eikonal_candidate(u: np.ndarray, node, h: float) -> float:
    return eikonal_root([min(a, b) for a, b in _neighbor_values(u, node)], h)


def local_update(u: np.ndarray, node, spec: ProblemSpec, h: float) -> float:
    return max(poisson_candidate(u, node, spec.r, h), eikonal_candidate(u, node, h))


# --------------------------------------------------------------------------
# discretisation plumbing
# --------------------------------------------------------------------------


class _Layout:
    """Flattened Interior node list, neighbour table and sweep orderings."""

    def __init__(self, grid: Grid, mask: DomainMask):
        if not mask.interior.any():
            raise BadParameter("mask has no Interior node")
        self.grid, self.mask = grid, mask
        shape = grid.shape
        self.strides = np.array(
            [int(np.prod(shape[a + 1:])) for a in range(grid.dim)], dtype=np.int64
        )
        self.cells = np.flatnonzero(mask.interior.ravel()).astype(np.int64)
        nb = np.empty((len(self.cells), 2 * grid.dim), dtype=np.int64)
        for a, s in enumerate(self.strides):
            nb[:, 2 * a] = self.cells - s
            nb[:, 2 * a + 1] = self.cells + s
        self.nbrs = nb
        active = mask.active.ravel()
        if not active[nb].all():
            raise BadParameter("an Interior node has an Exterior axis neighbour")
        self.pos = np.full(grid.size, -1, dtype=np.int64)
        self.pos[self.cells] = np.arange(len(self.cells))
        multi = np.array(np.unravel_index(self.cells, shape))
        orders = []
        for signs in np.ndindex(*([2] * grid.dim)):
            keys = [multi[a] * (1 if signs[a] == 0 else -1) for a in range(grid.dim)]
            orders.append(np.lexsort(keys[::-1]).astype(np.int64))
        self.orders = orders

    @property
    def n(self):
        return len(self.cells)

    @functools.cached_property
    def dissection(self) -> np.ndarray:
        """Geometric nested dissection ordering of the Interior unknowns."""
        ij = np.array(np.unravel_index(self.cells, self.grid.shape)).T
        parts: list[np.ndarray] = []
        stack = [(np.arange(len(ij)), False)]
        # iterative post-order: halves first, separator after both
        while stack:
            idx, emit = stack.pop()
            if emit or len(idx) <= 64:
                parts.append(idx)
                continue
            pts = ij[idx]
            ax = int(np.argmax(pts.max(0) - pts.min(0)))
            mid = (pts[:, ax].min() + pts[:, ax].max()) // 2
            stack.append((idx[pts[:, ax] == mid], True))
            stack.append((idx[pts[:, ax] > mid], False))
            stack.append((idx[pts[:, ax] < mid], False))
        return np.concatenate(parts)


def boundary_values(spec: ProblemSpec, grid: Grid, mask: DomainMask, where=None) -> np.ndarray:
    """Evaluate the boundary data on the nodes selected by ``where``."""
    where = mask.boundary if where is None else where
    g = spec.g
    if callable(g):
        vals = np.asarray(g(grid.coords()[where]), dtype=float)
    elif np.ndim(g) == 0:
        vals = np.full(int(where.sum()), float(g))
    else:
        vals = np.asarray(g, dtype=float)[where]
    if not np.all(np.isfinite(vals)):
        raise BadParameter("boundary data must be finite on Boundary nodes")
    return vals


def supersolution_level(spec: ProblemSpec, gmax: float) -> float:
    diam = spec.descriptor.diameter
    return gmax + diam * (1.0 + diam * max(spec.r, 1.0))


def _initial_field(spec, grid, mask, config, fill_all=False):
    u = np.full(grid.shape, np.nan)
    where = ~mask.interior if fill_all else mask.boundary
    u[where] = boundary_values(spec, grid, mask, where)
    gb = u[mask.boundary]
    if config.init == "above":
        u[mask.interior] = supersolution_level(spec, float(gb.max()))
    else:
        u[mask.interior] = float(gb.min())
    return u


def _assemble(layout: _Layout, cols: np.ndarray, wts: np.ndarray):
    """Sparse ``I - W`` restricted to Interior unknowns."""
    n = layout.n
    rows = np.repeat(np.arange(n), cols.shape[1])
    c = cols.ravel()
    w = wts.ravel()
    keep = c >= 0
    rows, c, w = rows[keep], c[keep], w[keep]
    pc = layout.pos[c]
    keep = (pc >= 0) & (w != 0.0)
    W = sp.csr_matrix((w[keep], (rows[keep], pc[keep])), shape=(n, n))
    return (sp.identity(n, format="csr") - W).tocsc(), W


class _Scheme:
    """Bundle of kernels for one scheme; subclasses bind parameters."""

    tag = "scheme"
    width = 2

    def __init__(self, layout: _Layout):
        self.layout = layout
        self.width = 2 * layout.grid.dim

    def sweep(self, u, k):
        raise NotImplementedError

    def jacobi(self, u):
        raise NotImplementedError

    def linearize(self, u):
        raise NotImplementedError

    def residual(self, u):
        raise NotImplementedError


class _Exact(_Scheme):
    def __init__(self, layout, r):
        super().__init__(layout)
        self.r = float(r)
        self.tag = "sweep"

    def sweep(self, u, k):
        L = self.layout
        return K.hjb_sweep(u, L.cells, L.nbrs, L.orders[k % len(L.orders)], L.grid.dim, L.grid.h, self.r)

    def jacobi(self, u):
        L = self.layout
        return K.hjb_jacobi(u, L.cells, L.nbrs, L.grid.dim, L.grid.h, self.r)

    def linearize(self, u):
        L = self.layout
        T = np.empty(L.n)
        cols = np.empty((L.n, self.width), np.int64)
        wts = np.empty((L.n, self.width))
        active = np.empty(L.n, np.bool_)
        K.hjb_linearize(u, L.cells, L.nbrs, L.grid.dim, L.grid.h, self.r, T, cols, wts, active)
        return T, cols, wts

    def residual(self, u):
        L = self.layout
        return K.hjb_residual(u, L.cells, L.nbrs, L.grid.dim, L.grid.h, self.r)


class _Regularized(_Scheme):
    btol = 1e-13

    def __init__(self, layout, r, eps):
        super().__init__(layout)
        self.r, self.eps = float(r), float(eps)
        self.tag = f"regularized(eps={eps:g})"

    def sweep(self, u, k):
        L = self.layout
        return K.reg_sweep(u, L.cells, L.nbrs, L.orders[k % len(L.orders)], L.grid.dim,
                           L.grid.h, self.r, self.eps, self.btol)

    def jacobi(self, u):
        L = self.layout
        return K.reg_jacobi(u, L.cells, L.nbrs, L.grid.dim, L.grid.h, self.r, self.eps, self.btol)

    def linearize(self, u):
        L = self.layout
        T = np.empty(L.n)
        cols = np.empty((L.n, self.width), np.int64)
        wts = np.empty((L.n, self.width))
        K.reg_linearize(u, L.cells, L.nbrs, L.grid.dim, L.grid.h, self.r, self.eps,
                        self.btol, T, cols, wts)
        return T, cols, wts

    def residual(self, u):
        L = self.layout
        return K.reg_residual(u, L.cells, L.nbrs, L.grid.dim, L.grid.h, self.r, self.eps)


class _Game(_Scheme):
    def __init__(self, layout, r, dt, lam, thetas):
        super().__init__(layout)
        self.r, self.dt, self.lam = float(r), float(dt), float(lam)
        self.thetas = thetas
        self.width = max(2 * layout.grid.dim, 3)
        self.tag = f"dpp(dt={dt:.6g},M={len(thetas) if layout.grid.dim > 1 else 2})"

    def _args(self):
        L = self.layout
        return (L.grid.dim, L.strides, L.grid.h, self.r, self.dt, self.lam, self.thetas)

    def sweep(self, u, k):
        L = self.layout
        return K.dpp_sweep(u, L.cells, L.nbrs, L.orders[k % len(L.orders)], *self._args())

    def jacobi(self, u):
        L = self.layout
        return K.dpp_jacobi(u, L.cells, L.nbrs, *self._args())

    def linearize(self, u):
        L = self.layout
        T = np.empty(L.n)
        cols = np.empty((L.n, self.width), np.int64)
        wts = np.empty((L.n, self.width))
        K.dpp_linearize(u, L.cells, L.nbrs, *self._args(), T, cols, wts)
        return T, cols, wts

    def residual(self, u):
        # fixed point defect, in time units per step
        T, _, _ = self.linearize(u)
        return float(np.max(np.abs(u[self.layout.cells] - T))) / self.dt


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


def _linear_solve(layout: _Layout, A, b: np.ndarray) -> np.ndarray:
    """Sparse LU solve of ``A x = b``.

    ``A = I - W`` with ``W`` substochastic, so diagonal pivots are safe and a
    nested dissection ordering keeps the fill low. Falls back to SuperLU
    with partial pivoting if a pivot vanishes.
    """
    p = layout.dissection
    try:
        lu = spl.splu(A[p][:, p].tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.0,
                      options={"SymmetricMode": True})
        y = lu.solve(b[p])
        if np.all(np.isfinite(y)):
            x = np.empty_like(y)
            x[p] = y
            return x
    except RuntimeError:
        pass
    return spl.splu(A, permc_spec="MMD_AT_PLUS_A").solve(b)


def _newton(scheme: _Scheme, u: np.ndarray, config: SolverConfig, history: list) -> int:
    """Semismooth Newton on ``u = T(u)``; returns the number of steps taken.

    Steps are damped by backtracking on the l1 norm of the fixed point
    defect (the max norm is too flat a merit: it lets two active sets flip
    into each other indefinitely).
    """
    L = scheme.layout
    cells = L.cells
    T, cols, wts = scheme.linearize(u)
    F = u[cells] - T
    merit = float(np.abs(F).sum())
    steps = recoveries = 0
    for _ in range(config.max_newton):
        scale = max(1.0, float(np.max(np.abs(u[cells]))))
        if float(np.max(np.abs(F))) <= 4.0 * np.finfo(float).eps * scale:
            break
        A, W = _assemble(L, cols, wts)
        try:
            v = _linear_solve(L, A, T - W @ u[cells])
        except RuntimeError:
            log.debug("singular Newton matrix; falling back to sweeps")
            break
        if not np.all(np.isfinite(v)):
            break
        base = u[cells].copy()
        lam = 1.0
        while True:
            u[cells] = base + lam * (v - base)
            T_new, cols_new, wts_new = scheme.linearize(u)
            F_new = u[cells] - T_new
            m_new = float(np.abs(F_new).sum())
            if m_new < (1.0 - 1e-4 * lam) * merit:
                break
            lam *= 0.5
            if lam < 1e-3:
                break
        if lam < 1e-3:
            # not a descent direction (a kink of the defect): let a few
            # sweeps move the iterate, then try Newton again
            u[cells] = base
            recoveries += 1
            if recoveries > 8:
                break
            for k in range(2 * len(L.orders)):
                scheme.sweep(u, k)
            T, cols, wts = scheme.linearize(u)
            F = u[cells] - T
            merit = float(np.abs(F).sum())
            continue
        steps += 1
        T, cols, wts, F, merit = T_new, cols_new, wts_new, F_new, m_new
        history.append(scheme.residual(u))
    return steps


#: below this many unknowns Newton starts directly from the initial field
NESTED_MIN_UNKNOWNS = 4000


def _nested_start(make_scheme, spec, grid, mask, config, u) -> bool:
    """Overwrite the Interior of ``u`` with the solution on the ``2h`` grid.

    The coarse grid keeps every other node of ``grid``; its solution
    (Newton only, no polishing) is interpolated multilinearly. Newton then
    only has to move the free boundary by a node or two. Returns False when
    no coarse start is available (small problem, array data, coarse grid
    too small or not classifiable).
    """
    if not config.accelerate or int(mask.interior.sum()) < NESTED_MIN_UNKNOWNS:
        return False
    if not (callable(spec.g) or np.ndim(spec.g) == 0):
        return False
    shape = tuple((s - 1) // 2 + 1 for s in grid.shape)
    try:
        coarse = Grid(grid.origin, shape, 2.0 * grid.h)
        cmask = classify_nodes(coarse, spec.descriptor)
    except HJBError:
        return False
    cu = _initial_field(spec, coarse, cmask, config, fill_all=True).ravel()
    scheme = make_scheme(_Layout(coarse, cmask))
    _nested_start(make_scheme, spec, coarse, cmask, config, cu)
    _newton(scheme, cu, config, [])
    idx = np.nonzero(mask.interior)
    pts = np.stack([np.asarray(i, dtype=float) / 2.0 for i in idx])
    vals = map_coordinates(cu.reshape(shape), pts, order=1, mode="nearest")
    u.reshape(grid.shape)[idx] = vals
    return True


def _run(scheme: _Scheme, u: np.ndarray, config: SolverConfig, change_tol: float,
         residual_tol: float) -> SolveResult:
    t0 = time.perf_counter()
    L = scheme.layout
    history: list[float] = []
    newton_steps = 0
    if config.accelerate:
        newton_steps = _newton(scheme, u, config, history)
    sweeps = 0
    change = math.inf
    res = math.inf
    while sweeps < config.max_sweeps:
        if config.update == "jacobi":
            new, change = scheme.jacobi(u)
            u[...] = new
        else:
            change = scheme.sweep(u, sweeps)
        sweeps += 1
        res = scheme.residual(u)
        history.append(res)
        if change < change_tol and res < residual_tol:
            break
    status = "converged" if (change < change_tol and res < residual_tol) else "max_sweeps"
    result = SolveResult(
        solution=u.reshape(L.grid.shape),
        grid=L.grid,
        mask=L.mask,
        scheme=scheme.tag,
        residual_history=history,
        sweeps_used=sweeps,
        newton_steps=newton_steps,
        wall_time=time.perf_counter() - t0,
        status=status,
        final_residual=res,
        final_change=change,
    )
    if status != "converged":
        raise NoConvergence(
            f"{scheme.tag}: no convergence after {sweeps} sweeps "
            f"(change {change:.3g}, residual {res:.3g})",
            residual_history=history,
            partial=result,
        )
    return result


def sweep_solve(spec: ProblemSpec, grid: Grid, mask: DomainMask,
                config: SolverConfig | None = None) -> SolveResult:
    """Solve the discrete Dirichlet problem for the monotone scheme.

    Stops when one sweep changes no node by more than ``tolerance`` and the
    pointwise residual (see :func:`residual`) is below ``tolerance``.

    Raises:
        NoConvergence: ``max_sweeps`` exhausted; carries the residual history.
    """
    config = config or SolverConfig()
    _check_dim(spec, grid)
    layout = _Layout(grid, mask)
    u = _initial_field(spec, grid, mask, config).ravel()
    _nested_start(lambda lay: _Exact(lay, spec.r), spec, grid, mask, config, u)
    return _run(_Exact(layout, spec.r), u, config, config.tolerance, config.tolerance)


def residual(u: np.ndarray, spec: ProblemSpec, grid: Grid, mask: DomainMask) -> float:
    """``max_Interior |min(-lap_h u - r, |D_h u|_upwind - 1)|``."""
    layout = _Layout(grid, mask)
    return float(K.hjb_residual(np.ascontiguousarray(u, dtype=float).ravel(), layout.cells,
                                layout.nbrs, grid.dim, grid.h, float(spec.r)))


def poisson_active(u: np.ndarray, spec: ProblemSpec, grid: Grid, mask: DomainMask) -> np.ndarray:
    """Boolean grid field, True where the Poisson candidate wins the node update.

    On a converged solution this is the discrete Brownian set; exterior and
    boundary nodes are False.
    """
    layout = _Layout(grid, mask)
    uu = np.ascontiguousarray(u, dtype=float).ravel()
    n = layout.n
    T = np.empty(n)
    cols = np.empty((n, 2 * grid.dim), np.int64)
    wts = np.empty((n, 2 * grid.dim))
    flag = np.empty(n, np.bool_)
    K.hjb_linearize(uu, layout.cells, layout.nbrs, grid.dim, grid.h, float(spec.r), T, cols, wts, flag)
    out = np.zeros(grid.size, dtype=bool)
    out[layout.cells] = flag
    return out.reshape(grid.shape)


def regularized_residual(u, spec: ProblemSpec, grid: Grid, mask: DomainMask, eps: float) -> float:
    layout = _Layout(grid, mask)
    return float(K.reg_residual(np.ascontiguousarray(u, dtype=float).ravel(), layout.cells,
                                layout.nbrs, grid.dim, grid.h, float(spec.r), float(eps)))


def regularized_solve(spec: ProblemSpec, grid: Grid, mask: DomainMask, eps: float,
                      config: SolverConfig | None = None) -> SolveResult:
    """Solve ``-eps lap_h u = max(eps r, 1 - |D_h u|_upwind)``.

    Each node solves its scalar equation by bisection on
    ``[min nbr - h, poisson-type upper bound]`` to 1e-13.
    """
    if not (eps > 0 and math.isfinite(eps)):
        raise BadParameter("eps must be positive")
    config = config or SolverConfig()
    _check_dim(spec, grid)
    layout = _Layout(grid, mask)
    u = _initial_field(spec, grid, mask, config).ravel()
    _nested_start(lambda lay: _Regularized(lay, spec.r, eps), spec, grid, mask, config, u)
    return _run(_Regularized(layout, spec.r, eps), u, config, config.tolerance, config.tolerance)


def dpp_directions(M: int) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(M) / M
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def dpp_value_iteration(spec: ProblemSpec, grid: Grid, mask: DomainMask,
                        dpp: DppConfig | None = None,
                        config: SolverConfig | None = None) -> SolveResult:
    """Iterate the discrete game principle until a sweep changes no node by
    more than ``tolerance * dt``.

    Every non-Interior node carries the boundary data evaluated at its
    coordinates, so directional interpolation near the boundary may use
    diagonal corners outside the Boundary layer.
    """
    dpp = dpp or DppConfig()
    config = config or SolverConfig()
    _check_dim(spec, grid)
    dim, h = grid.dim, grid.h
    if dim == 3:
        raise BadParameter("the game iteration is implemented for 1-D and 2-D grids")
    natural = h * h / (2 * dim)
    dt = natural if dpp.dt is None else float(dpp.dt)
    if not dt > 0:
        raise BadParameter("dt must be positive")
    lam = math.sqrt(2 * dim * dt) / h
    if abs(lam - 1.0) > 1e-12:
        if not dpp.allow_dt_override:
            raise BadParameter(
                f"dt={dt:g} puts the Brownian sphere off the grid nodes; expected h^2/(2n)={natural:g}"
            )
        if lam > 1.0:
            raise BadParameter("dt too large: Brownian sphere leaves the neighbour cell")
    if dim == 1:
        M = 2
        thetas = np.array([[1.0, 0.0], [-1.0, 0.0]])
    else:
        M = DEFAULT_DIRECTIONS if dpp.M is None else int(dpp.M)
        if M < 4:
            raise BadParameter("need at least 4 directions in 2-D")
        thetas = dpp_directions(M)
    layout = _Layout(grid, mask)
    u = _initial_field(spec, grid, mask, config, fill_all=True).ravel()
    scheme = _Game(layout, spec.r, dt, lam, thetas)
    return _run(scheme, u, config, config.tolerance * dt, math.inf)


def _check_dim(spec: ProblemSpec, grid: Grid):
    if spec.dim != grid.dim:
        raise BadParameter(f"problem is {spec.dim}-D but the grid is {grid.dim}-D")
