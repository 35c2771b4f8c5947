"""
Compiled node kernels.

Every scheme is written as a node map ``t = T_i(u)`` giving the value at an
Interior node that solves the local discrete equation with its neighbours
frozen. Three things are built on top of each map:

* Gauss-Seidel sweeps in a prescribed node order (in place),
* Jacobi sweeps (from an immutable snapshot),
* a linearisation ``T_i(v) ~ T_i(u) + sum_k w_ik (v_jk - u_jk)`` used by the
  Newton accelerator in :mod:`gchjb.solver`.

Layout: ``u`` is the flattened field, ``cells`` the flat indices of Interior
nodes, ``nbrs[p]`` the ``2*dim`` axis neighbours of ``cells[p]`` ordered
``(ax0-, ax0+, ax1-, ax1+, ...)``. Local arithmetic is done relative to the
smallest neighbour so that differences of nearby values stay exact.
"""

import math

import numpy as np
from numba import njit

_JIT = {"cache": True, "nogil": True}


# --------------------------------------------------------------------------
# exact equation: max(poisson candidate, eikonal candidate)
# --------------------------------------------------------------------------


@njit(**_JIT)
def eikonal_offset(d, k, h):
    """Root ``t >= 0`` of ``sum_i max(t - d_i, 0)^2 = h^2`` for sorted
    ``d[0] = 0 <= d[1] <= d[2]`` (first ``k`` entries used).

    Returns ``(t, n_active)``.
    """
    t = h
    if k == 1 or t <= d[1]:
        return t, 1
    t = 0.5 * (d[1] + math.sqrt(2.0 * h * h - d[1] * d[1]))
    if k == 2 or t <= d[2]:
        return t, 2
    s = d[1] + d[2]
    q = d[1] * d[1] + d[2] * d[2]
    t = (s + math.sqrt(s * s - 3.0 * (q - h * h))) / 3.0
    return t, 3


@njit(**_JIT)
def _axis_minima(u, nb, dim, m, arg):
    for a in range(dim):
        lo = u[nb[2 * a]]
        hi = u[nb[2 * a + 1]]
        if lo <= hi:
            m[a] = lo
            arg[a] = 0 if lo < hi else 2  # 2 marks a tie
        else:
            m[a] = hi
            arg[a] = 1


@njit(**_JIT)
def _sorted_axes(m, dim, order):
    for a in range(dim):
        order[a] = a
    for a in range(1, dim):
        b = a
        while b > 0 and m[order[b - 1]] > m[order[b]]:
            tmp = order[b - 1]
            order[b - 1] = order[b]
            order[b] = tmp
            b -= 1


@njit(**_JIT)
def hjb_candidates(u, nb, dim, h, r):
    """Return ``(poisson, eikonal)`` candidates at one node."""
    m = np.empty(3)
    arg = np.empty(3, np.int64)
    order = np.empty(3, np.int64)
    _axis_minima(u, nb, dim, m, arg)
    _sorted_axes(m, dim, order)
    ref = m[order[0]]
    d = np.zeros(3)
    for a in range(dim):
        d[a] = m[order[a]] - ref
    t, _ = eikonal_offset(d, dim, h)
    s = 0.0
    for k in range(2 * dim):
        s += u[nb[k]] - ref
    p = (s + h * h * r) / (2.0 * dim)
    return ref + p, ref + t


@njit(**_JIT)
def hjb_node(u, nb, dim, h, r):
    p, e = hjb_candidates(u, nb, dim, h, r)
    return p if p >= e else e


@njit(**_JIT)
def hjb_linearize(u, cells, nbrs, dim, h, r, T, cols, wts, poisson):
    """Fill the node map values and Jacobian rows (columns are flat indices)."""
    m = np.empty(3)
    arg = np.empty(3, np.int64)
    order = np.empty(3, np.int64)
    d = np.zeros(3)
    for p in range(cells.shape[0]):
        nb = nbrs[p]
        _axis_minima(u, nb, dim, m, arg)
        _sorted_axes(m, dim, order)
        ref = m[order[0]]
        for a in range(dim):
            d[a] = m[order[a]] - ref
        t, k = eikonal_offset(d, dim, h)
        s = 0.0
        for j in range(2 * dim):
            s += u[nb[j]] - ref
        pc = (s + h * h * r) / (2.0 * dim)
        for j in range(2 * dim):
            cols[p, j] = nb[j]
        if pc >= t:
            T[p] = ref + pc
            poisson[p] = True
            for j in range(2 * dim):
                wts[p, j] = 1.0 / (2.0 * dim)
        else:
            T[p] = ref + t
            poisson[p] = False
            for j in range(2 * dim):
                wts[p, j] = 0.0
            tot = 0.0
            for q in range(k):
                tot += t - d[q]
            for q in range(k):
                a = order[q]
                w = (t - d[q]) / tot
                if arg[a] == 2:
                    wts[p, 2 * a] += 0.5 * w
                    wts[p, 2 * a + 1] += 0.5 * w
                else:
                    wts[p, 2 * a + arg[a]] += w


@njit(**_JIT)
def hjb_sweep(u, cells, nbrs, order, dim, h, r):
    """One in-place Gauss-Seidel pass; returns the largest change."""
    change = 0.0
    for q in range(order.shape[0]):
        p = order[q]
        c = cells[p]
        new = hjb_node(u, nbrs[p], dim, h, r)
        diff = abs(new - u[c])
        if diff > change:
            change = diff
        u[c] = new
    return change


@njit(**_JIT)
def hjb_jacobi(u, cells, nbrs, dim, h, r):
    out = u.copy()
    change = 0.0
    for p in range(cells.shape[0]):
        c = cells[p]
        new = hjb_node(u, nbrs[p], dim, h, r)
        diff = abs(new - u[c])
        if diff > change:
            change = diff
        out[c] = new
    return out, change


@njit(**_JIT)
def hjb_residual(u, cells, nbrs, dim, h, r):
    """max over Interior of |min(-lap_h u - r, |D_h u|_upwind - 1)|."""
    worst = 0.0
    for p in range(cells.shape[0]):
        c = cells[p]
        nb = nbrs[p]
        uc = u[c]
        lap = 0.0
        g2 = 0.0
        for a in range(dim):
            lo = u[nb[2 * a]] - uc
            hi = u[nb[2 * a + 1]] - uc
            lap += lo + hi
            dd = max(-lo, -hi, 0.0)
            g2 += dd * dd
        branch_a = -lap / (h * h) - r
        branch_b = math.sqrt(g2) / h - 1.0
        v = abs(min(branch_a, branch_b))
        if v > worst:
            worst = v
    return worst


# --------------------------------------------------------------------------
# regularised equation: eps*(-lap_h t) = max(eps*r, 1 - |D_h|(t))
# --------------------------------------------------------------------------


@njit(**_JIT)
def _reg_phi(t, s, m, dim, h, r, eps):
    """Local residual (relative coordinates) and its t-derivative."""
    lhs = eps * (2.0 * dim * t - s) / (h * h)
    g2 = 0.0
    gs = 0.0
    for a in range(dim):
        dd = t - m[a]
        if dd > 0.0:
            g2 += dd * dd
            gs += dd
    nrm = math.sqrt(g2)
    rhs_grad = 1.0 - nrm / h
    rhs_src = eps * r
    dphi = eps * 2.0 * dim / (h * h)
    if rhs_grad > rhs_src:
        if nrm > 0.0:
            dphi += gs / (nrm * h)
        return lhs - rhs_grad, dphi
    return lhs - rhs_src, dphi


@njit(**_JIT)
def reg_node(u, nb, dim, h, r, eps, btol):
    """Bisection on the monotone local equation, then safeguarded Newton."""
    m = np.empty(3)
    ref = u[nb[0]]
    for k in range(1, 2 * dim):
        if u[nb[k]] < ref:
            ref = u[nb[k]]
    s = 0.0
    for k in range(2 * dim):
        s += u[nb[k]] - ref
    for a in range(dim):
        m[a] = min(u[nb[2 * a]], u[nb[2 * a + 1]]) - ref
    lo = -h
    hi = (s + h * h * max(r, 1.0 / eps)) / (2.0 * dim) + h
    while hi - lo > btol:
        mid = 0.5 * (lo + hi)
        f, _ = _reg_phi(mid, s, m, dim, h, r, eps)
        if f > 0.0:
            hi = mid
        elif f < 0.0:
            lo = mid
        else:
            lo = mid
            hi = mid
    t = 0.5 * (lo + hi)
    for _ in range(4):
        f, df = _reg_phi(t, s, m, dim, h, r, eps)
        if f == 0.0:
            break
        tn = t - f / df
        if tn < lo - btol or tn > hi + btol:
            break
        fn, _ = _reg_phi(tn, s, m, dim, h, r, eps)
        if abs(fn) >= abs(f):
            break
        t = tn
    return ref + t


@njit(**_JIT)
def reg_linearize(u, cells, nbrs, dim, h, r, eps, btol, T, cols, wts):
    m = np.empty(3)
    arg = np.empty(3, np.int64)
    for p in range(cells.shape[0]):
        nb = nbrs[p]
        t = reg_node(u, nb, dim, h, r, eps, btol)
        T[p] = t
        _axis_minima(u, nb, dim, m, arg)
        for j in range(2 * dim):
            cols[p, j] = nb[j]
            wts[p, j] = eps / (h * h)
        dphi_dt = eps * 2.0 * dim / (h * h)
        g2 = 0.0
        for a in range(dim):
            dd = t - m[a]
            if dd > 0.0:
                g2 += dd * dd
        nrm = math.sqrt(g2)
        if 1.0 - nrm / h > eps * r and nrm > 0.0:
            for a in range(dim):
                dd = t - m[a]
                if dd > 0.0:
                    w = dd / (nrm * h)
                    dphi_dt += w
                    if arg[a] == 2:
                        wts[p, 2 * a] += 0.5 * w
                        wts[p, 2 * a + 1] += 0.5 * w
                    else:
                        wts[p, 2 * a + arg[a]] += w
        for j in range(2 * dim):
            wts[p, j] /= dphi_dt


@njit(**_JIT)
def reg_sweep(u, cells, nbrs, order, dim, h, r, eps, btol):
    change = 0.0
    for q in range(order.shape[0]):
        p = order[q]
        c = cells[p]
        new = reg_node(u, nbrs[p], dim, h, r, eps, btol)
        diff = abs(new - u[c])
        if diff > change:
            change = diff
        u[c] = new
    return change


@njit(**_JIT)
def reg_jacobi(u, cells, nbrs, dim, h, r, eps, btol):
    out = u.copy()
    change = 0.0
    for p in range(cells.shape[0]):
        c = cells[p]
        new = reg_node(u, nbrs[p], dim, h, r, eps, btol)
        diff = abs(new - u[c])
        if diff > change:
            change = diff
        out[c] = new
    return out, change


@njit(**_JIT)
def reg_residual(u, cells, nbrs, dim, h, r, eps):
    """max over Interior of |eps*(-lap_h u) - max(eps*r, 1 - |D_h u|)|."""
    worst = 0.0
    for p in range(cells.shape[0]):
        c = cells[p]
        nb = nbrs[p]
        uc = u[c]
        lap = 0.0
        g2 = 0.0
        for a in range(dim):
            lo = u[nb[2 * a]] - uc
            hi = u[nb[2 * a + 1]] - uc
            lap += lo + hi
            dd = max(-lo, -hi, 0.0)
            g2 += dd * dd
        v = abs(-eps * lap / (h * h) - max(eps * r, 1.0 - math.sqrt(g2) / h))
        if v > worst:
            worst = v
    return worst


# --------------------------------------------------------------------------
# game value iteration (1-D and 2-D)
# --------------------------------------------------------------------------
# Brownian branch: mean over the 2*dim axis points at distance rho = lam*h,
# interpolated on the segment to each neighbour, plus r*dt of time.
# Eikonal branch: min over directions of u(x + theta*dt), interpolated on the
# cell in the quadrant of theta, plus dt. Both branches involve u(x) itself
# through the interpolation weights, so the node value is the fixed point of
# an affine map with slope < 1, solved in closed form.


@njit(**_JIT)
def dpp_node(u, c, nb, dim, strides, h, r, dt, lam, thetas, lin):
    """Value at one node; if ``lin`` is given it receives
    ``(is_brownian, k_best)`` for the linearisation."""
    s = 0.0
    for k in range(2 * dim):
        s += u[nb[k]]
    brown = s / (2.0 * dim) + r * dt / lam
    best = np.inf
    kbest = -1
    if dim == 1:
        a = dt / h
        for k in range(2):
            v = (a * u[nb[k]] + dt) / a
            if v < best:
                best = v
                kbest = k
    else:
        for k in range(thetas.shape[0]):
            cx = thetas[k, 0]
            cy = thetas[k, 1]
            a = abs(cx) * dt / h
            b = abs(cy) * dt / h
            jx = nb[1] if cx >= 0 else nb[0]
            jy = nb[3] if cy >= 0 else nb[2]
            sx = strides[0] if cx >= 0 else -strides[0]
            sy = strides[1] if cy >= 0 else -strides[1]
            jd = c + sx + sy
            den = 1.0 - (1.0 - a) * (1.0 - b)
            v = (a * (1.0 - b) * u[jx] + (1.0 - a) * b * u[jy] + a * b * u[jd] + dt) / den
            if v < best:
                best = v
                kbest = k
    lin[0] = 1 if brown >= best else 0
    lin[1] = kbest
    return brown if brown >= best else best


@njit(**_JIT)
def dpp_sweep(u, cells, nbrs, order, dim, strides, h, r, dt, lam, thetas):
    lin = np.empty(2, np.int64)
    change = 0.0
    for q in range(order.shape[0]):
        p = order[q]
        c = cells[p]
        new = dpp_node(u, c, nbrs[p], dim, strides, h, r, dt, lam, thetas, lin)
        diff = abs(new - u[c])
        if diff > change:
            change = diff
        u[c] = new
    return change


@njit(**_JIT)
def dpp_jacobi(u, cells, nbrs, dim, strides, h, r, dt, lam, thetas):
    lin = np.empty(2, np.int64)
    out = u.copy()
    change = 0.0
    for p in range(cells.shape[0]):
        c = cells[p]
        new = dpp_node(u, c, nbrs[p], dim, strides, h, r, dt, lam, thetas, lin)
        diff = abs(new - u[c])
        if diff > change:
            change = diff
        out[c] = new
    return out, change


@njit(**_JIT)
def dpp_linearize(u, cells, nbrs, dim, strides, h, r, dt, lam, thetas, T, cols, wts):
    lin = np.empty(2, np.int64)
    K = cols.shape[1]
    for p in range(cells.shape[0]):
        c = cells[p]
        nb = nbrs[p]
        T[p] = dpp_node(u, c, nb, dim, strides, h, r, dt, lam, thetas, lin)
        for j in range(K):
            cols[p, j] = -1
            wts[p, j] = 0.0
        if lin[0] == 1:
            for j in range(2 * dim):
                cols[p, j] = nb[j]
                wts[p, j] = 1.0 / (2.0 * dim)
        elif dim == 1:
            cols[p, 0] = nb[lin[1]]
            wts[p, 0] = 1.0
            if u[nb[0]] == u[nb[1]]:
                # a tie descends both ways; splitting it keeps the first
                # Newton step symmetric (as in the exact scheme)
                cols[p, 1] = nb[1 - lin[1]]
                wts[p, 0] = 0.5
                wts[p, 1] = 0.5
        else:
            k = lin[1]
            cx = thetas[k, 0]
            cy = thetas[k, 1]
            a = abs(cx) * dt / h
            b = abs(cy) * dt / h
            sx = strides[0] if cx >= 0 else -strides[0]
            sy = strides[1] if cy >= 0 else -strides[1]
            den = 1.0 - (1.0 - a) * (1.0 - b)
            cols[p, 0] = nb[1] if cx >= 0 else nb[0]
            cols[p, 1] = nb[3] if cy >= 0 else nb[2]
            cols[p, 2] = c + sx + sy
            wts[p, 0] = a * (1.0 - b) / den
            wts[p, 1] = (1.0 - a) * b / den
            wts[p, 2] = a * b / den


# --------------------------------------------------------------------------
# radial reduction on a 1-D profile grid
# --------------------------------------------------------------------------
# -(f'' + (n-1) f'/t) = rhs with a central metric term where monotone
# (kappa = (n-1) h / (2t) <= 1) and a forward one otherwise; eikonal branch
# min(f-, f+) + h. Node 0 is either a Dirichlet end (annulus) or the centre
# of a ball, where f'(0) = 0 gives f0 = f1 + h^2 rhs / (2n).


@njit(**_JIT)
def radial_node(f, i, t, n, h, rhs, center):
    if center and i == 0:
        p = f[1] + h * h * rhs / (2.0 * n)
        e = f[1] + h
        return (p, 0) if p >= e else (e, 1)
    lo = f[i - 1]
    hi = f[i + 1]
    kappa = (n - 1.0) * h / (2.0 * t[i]) if t[i] > 0 else 0.0
    if kappa <= 1.0:
        p = 0.5 * ((1.0 + kappa) * hi + (1.0 - kappa) * lo + h * h * rhs)
    else:
        g = 2.0 * kappa
        p = (hi * (1.0 + g) + lo + h * h * rhs) / (2.0 + g)
    e = min(lo, hi) + h
    return (p, 0) if p >= e else (e, 1)


@njit(**_JIT)
def radial_linearize(f, t, n, h, rhs, center, T, cols, wts):
    N = f.shape[0]
    start = 0 if center else 1
    for q in range(N - 1 - start):
        i = q + start
        v, kind = radial_node(f, i, t, n, h, rhs, center)
        T[q] = v
        cols[q, 0] = -1
        cols[q, 1] = -1
        wts[q, 0] = 0.0
        wts[q, 1] = 0.0
        if center and i == 0:
            cols[q, 0] = 1
            wts[q, 0] = 1.0
            continue
        cols[q, 0] = i - 1
        cols[q, 1] = i + 1
        if kind == 0:
            kappa = (n - 1.0) * h / (2.0 * t[i]) if t[i] > 0 else 0.0
            if kappa <= 1.0:
                wts[q, 0] = 0.5 * (1.0 - kappa)
                wts[q, 1] = 0.5 * (1.0 + kappa)
            else:
                g = 2.0 * kappa
                wts[q, 0] = 1.0 / (2.0 + g)
                wts[q, 1] = (1.0 + g) / (2.0 + g)
        else:
            if f[i - 1] < f[i + 1]:
                wts[q, 0] = 1.0
            elif f[i + 1] < f[i - 1]:
                wts[q, 1] = 1.0
            else:
                wts[q, 0] = 0.5
                wts[q, 1] = 0.5


@njit(**_JIT)
def radial_sweep(f, t, n, h, rhs, center, forward):
    N = f.shape[0]
    start = 0 if center else 1
    change = 0.0
    for q in range(N - 1 - start):
        i = q + start if forward else N - 2 - q
        v, _ = radial_node(f, i, t, n, h, rhs, center)
        diff = abs(v - f[i])
        if diff > change:
            change = diff
        f[i] = v
    return change
