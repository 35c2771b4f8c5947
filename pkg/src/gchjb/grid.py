"""
Uniform Cartesian grids, domain masks and the finite difference stencils
shared by every solver.

Fields are plain ``numpy`` arrays with the grid's ``shape``. Exterior nodes
hold ``NaN``; Interior and Boundary nodes hold finite values. All stencils
are the standard ``2*dim``-point ones:

    laplacian      sum_i (u(x+h e_i) + u(x-h e_i) - 2u(x)) / h^2
    upwind norm    sqrt(sum_i max(u(x)-u(x+h e_i), u(x)-u(x-h e_i), 0)^2) / h
    central grad   (u(x+h e_i) - u(x-h e_i)) / (2h)

The upwind norm uses the "distance function" orientation: it measures the
steepest descent towards the lower neighbour, which is the right one-sided
quantity for solutions that are positive inside and vanish on the boundary.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BadParameter, EmptyDomain, MissingNeighbor, OutOfDomain

EXTERIOR, BOUNDARY, INTERIOR = 0, 1, 2


# --------------------------------------------------------------------------
# domain descriptors
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    """Open interval ``(-R, R)`` (1-D only)."""

    R: float
    kind = "interval"

    def __post_init__(self):
        if not self.R > 0:
            raise BadParameter("Interval radius must be positive")

    def contains(self, x):
        if x.shape[-1] != 1:
            raise BadParameter("Interval is one-dimensional")
        return np.abs(x[..., 0]) < self.R

    def bbox(self, dim):
        return [(-self.R, self.R)]

    @property
    def diameter(self):
        return 2.0 * self.R

    def radial(self):
        return True


@dataclass(frozen=True)
class Ball:
    """Open ball ``|x| < R`` centred at the origin."""

    R: float
    kind = "ball"

    def __post_init__(self):
        if not self.R > 0:
            raise BadParameter("Ball radius must be positive")

    def contains(self, x):
        return np.sqrt(np.sum(x * x, axis=-1)) < self.R

    def bbox(self, dim):
        return [(-self.R, self.R)] * dim

    @property
    def diameter(self):
        return 2.0 * self.R

    def radial(self):
        return True


@dataclass(frozen=True)
class Annulus:
    """Open shell ``r_in < |x| < R`` centred at the origin."""

    r_in: float
    R: float
    kind = "annulus"

    def __post_init__(self):
        if not (self.r_in > 0 and self.R > 0):
            raise BadParameter("Annulus radii must be positive")
        if not self.r_in < self.R:
            raise BadParameter("Annulus needs r_in < R")

    def contains(self, x):
        rad = np.sqrt(np.sum(x * x, axis=-1))
        return (rad > self.r_in) & (rad < self.R)

    def bbox(self, dim):
        return [(-self.R, self.R)] * dim

    @property
    def diameter(self):
        return 2.0 * self.R

    def radial(self):
        return True


@dataclass(frozen=True)
class Box:
    """Open box ``|x_i| < widths[i]/2`` centred at the origin."""

    widths: tuple
    kind = "box"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(float(w) for w in self.widths))
        if not all(w > 0 for w in self.widths):
            raise BadParameter("Box widths must be positive")

    def contains(self, x):
        half = np.asarray(self.widths) / 2.0
        if x.shape[-1] != len(half):
            raise BadParameter("Box dimension does not match the grid")
        return np.all(np.abs(x) < half, axis=-1)

    def bbox(self, dim):
        return [(-w / 2.0, w / 2.0) for w in self.widths]

    @property
    def diameter(self):
        return float(np.linalg.norm(self.widths))

    def radial(self):
        return False


@dataclass(frozen=True)
class CustomPredicate:
    """Arbitrary open set given by a vectorised membership test.

    ``predicate`` maps an ``(..., dim)`` array of points to booleans; the
    bounding box is needed for building grids and for the diameter.
    """

    predicate: Callable = field(compare=False)
    box: tuple = ()
    kind = "custom"

    def contains(self, x):
        return np.asarray(self.predicate(x), dtype=bool)

    def bbox(self, dim):
        if not self.box:
            raise BadParameter("CustomPredicate needs a bounding box")
        return [tuple(b) for b in self.box]

    @property
    def diameter(self):
        return float(np.linalg.norm([hi - lo for lo, hi in self.box]))

    def radial(self):
        return False


# --------------------------------------------------------------------------
# grid and mask
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform lattice ``x(i) = origin + i*h`` with ``shape`` nodes per axis."""

    origin: tuple
    shape: tuple
    h: float

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if len(self.origin) != len(self.shape) or not 1 <= len(self.shape) <= 3:
            raise BadParameter("grid dimension must be 1, 2 or 3")
        if not self.h > 0:
            raise BadParameter("grid spacing must be positive")
        if min(self.shape) < 3:
            raise BadParameter("every axis needs at least 3 nodes")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float], h: float) -> "Grid":
        """Grid whose first node is ``lower`` and last node is ``upper``."""
        shape = [int(round((hi - lo) / h)) + 1 for lo, hi in zip(lower, upper)]
        return cls(tuple(lower), tuple(shape), h)

    @classmethod
    def around(cls, descriptor, h: float, dim: int, pad: int = 1) -> "Grid":
        """Grid aligned with the origin covering ``descriptor`` plus ``pad`` cells.

        Nodes sit on integer multiples of ``h`` so that the origin (the centre
        of every radial fixture) is itself a node.
        """
        lows, counts = [], []
        for lo, hi in descriptor.bbox(dim):
            i_lo = math.floor(lo / h + 1e-9) - pad
            i_hi = math.ceil(hi / h - 1e-9) + pad
            lows.append(i_lo * h)
            counts.append(i_hi - i_lo + 1)
        return cls(tuple(lows), tuple(counts), h)

    def axes(self) -> list[np.ndarray]:
        return [o + np.arange(n) * self.h for o, n in zip(self.origin, self.shape)]

    def coords(self) -> np.ndarray:
        """Coordinates of every node, shape ``shape + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def point(self, index) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(index, dtype=float) * self.h

    def index_of(self, point, atol=1e-9):
        """Node index of ``point``; raises OutOfDomain if it is not a node."""
        rel = (np.asarray(point, dtype=float) - np.asarray(self.origin)) / self.h
        idx = np.rint(rel).astype(int)
        if np.any(np.abs(rel - idx) > atol) or np.any(idx < 0) or np.any(idx >= self.shape):
            raise OutOfDomain(f"{tuple(point)} is not a grid node")
        return tuple(int(i) for i in idx)

    def radii(self) -> np.ndarray:
        x = self.coords()
        return np.sqrt(np.sum(x * x, axis=-1))


@dataclass(frozen=True)
class DomainMask:
    grid: Grid
    labels: np.ndarray = field(compare=False, repr=False)
    descriptor: object = None

    @property
    def interior(self) -> np.ndarray:
        return self.labels == INTERIOR

    @property
    def boundary(self) -> np.ndarray:
        return self.labels == BOUNDARY

    @property
    def exterior(self) -> np.ndarray:
        return self.labels == EXTERIOR

    @property
    def active(self) -> np.ndarray:
        """Interior or Boundary."""
        return self.labels != EXTERIOR

    def field(self, values) -> np.ndarray:
        """Copy of ``values`` (scalar or array) with NaN on Exterior nodes."""
        out = np.empty(self.grid.shape)
        out[...] = values
        out[self.exterior] = np.nan
        return out

    def interior_distance(self) -> np.ndarray:
        """Distance from each node to the domain boundary (radial domains only
        are exact; other descriptors fall back to distance to Boundary nodes)."""
        d = self.descriptor
        x = self.grid.coords()
        rad = np.sqrt(np.sum(x * x, axis=-1))
        if isinstance(d, (Ball, Interval)):
            return d.R - rad
        if isinstance(d, Annulus):
            return np.minimum(rad - d.r_in, d.R - rad)
        if isinstance(d, Box):
            half = np.asarray(d.widths) / 2.0
            return np.min(half - np.abs(x), axis=-1)
        bpts = x[self.boundary]
        flat = x.reshape(-1, self.grid.dim)
        out = np.empty(len(flat))
        for k in range(0, len(flat), 4096):
            chunk = flat[k:k + 4096]
            dist = np.sqrt(((chunk[:, None, :] - bpts[None, :, :]) ** 2).sum(-1))
            out[k:k + 4096] = dist.min(axis=1)
        return out.reshape(self.grid.shape)


def _axis_neighbors(arr: np.ndarray, axis: int, step: int, fill=np.nan) -> np.ndarray:
    """``arr`` shifted so that entry ``i`` holds ``arr[i + step*e_axis]``."""
    out = np.full(arr.shape, fill, dtype=arr.dtype)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    if step > 0:
        src[axis], dst[axis] = slice(step, None), slice(None, -step)
    else:
        src[axis], dst[axis] = slice(None, step), slice(-step, None)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def classify_nodes(grid: Grid, descriptor) -> DomainMask:
    """Label nodes Interior / Boundary / Exterior for ``descriptor``.

    Interior nodes are the grid nodes strictly inside the open set. Boundary
    nodes are the remaining nodes with at least one Interior axis neighbour.

    Raises:
        EmptyDomain: no node lies inside the domain.
        BadParameter: an inside node sits on the grid edge (the grid does not
            cover the domain with a one cell margin).
    """
    inside = np.asarray(descriptor.contains(grid.coords()), dtype=bool)
    if not inside.any():
        raise EmptyDomain(f"{descriptor!r} contains no grid node")
    edge = np.zeros(grid.shape, dtype=bool)
    for ax in range(grid.dim):
        sl = [slice(None)] * grid.dim
        sl[ax] = 0
        edge[tuple(sl)] = True
        sl[ax] = -1
        edge[tuple(sl)] = True
    if (inside & edge).any():
        raise BadParameter("grid does not cover the domain with a one cell margin")

    labels = np.full(grid.shape, EXTERIOR, dtype=np.int8)
    labels[inside] = INTERIOR
    touched = np.zeros(grid.shape, dtype=bool)
    for ax in range(grid.dim):
        for step in (-1, 1):
            touched |= _axis_neighbors(inside, ax, step, fill=False)
    labels[touched & ~inside] = BOUNDARY
    return DomainMask(grid, labels, descriptor)


# --------------------------------------------------------------------------
# node-level stencils
# --------------------------------------------------------------------------


def _neighbor_values(u: np.ndarray, node) -> list[tuple[float, float]]:
    node = tuple(int(i) for i in node)
    pairs = []
    for ax in range(u.ndim):
        vals = []
        for step in (-1, 1):
            j = list(node)
            j[ax] += step
            if not 0 <= j[ax] < u.shape[ax]:
                raise MissingNeighbor(f"node {node} has no neighbour along axis {ax}")
            v = u[tuple(j)]
            if not np.isfinite(v):
                raise MissingNeighbor(f"node {node} has an Exterior neighbour along axis {ax}")
            vals.append(float(v))
        pairs.append((vals[0], vals[1]))
    return pairs


def discrete_laplacian(u: np.ndarray, h: float, node) -> float:
    c = float(u[tuple(node)])
    return sum(lo + hi - 2.0 * c for lo, hi in _neighbor_values(u, node)) / (h * h)


def upwind_gradient_norm(u: np.ndarray, h: float, node) -> float:
    c = float(u[tuple(node)])
    total = 0.0
    for lo, hi in _neighbor_values(u, node):
        d = max((c - hi) / h, (c - lo) / h, 0.0)
        total += d * d
    return math.sqrt(total)


def central_gradient(u: np.ndarray, h: float, node) -> np.ndarray:
    return np.array([(hi - lo) / (2.0 * h) for lo, hi in _neighbor_values(u, node)])


def central_gradient_norm(u: np.ndarray, h: float, node) -> float:
    return float(np.linalg.norm(central_gradient(u, h, node)))


def multilinear_interpolate(u: np.ndarray, grid: Grid, point) -> float:
    """Multilinear interpolation of ``u`` at ``point``.

    Raises:
        OutOfDomain: the point is outside the grid or one of the enclosing
            cell corners is Exterior (NaN).
    """
    rel = (np.asarray(point, dtype=float) - np.asarray(grid.origin)) / grid.h
    if rel.shape != (grid.dim,):
        raise BadParameter("point dimension does not match the grid")
    hi_cell = np.asarray(grid.shape) - 1
    if np.any(rel < -1e-12) or np.any(rel > hi_cell + 1e-12):
        raise OutOfDomain(f"{tuple(point)} lies outside the grid")
    base = np.minimum(np.floor(np.clip(rel, 0, None)).astype(int), hi_cell - 1)
    frac = np.clip(rel - base, 0.0, 1.0)
    total = 0.0
    for corner in itertools.product((0, 1), repeat=grid.dim):
        w = 1.0
        for f, c in zip(frac, corner):
            w *= f if c else 1.0 - f
        v = u[tuple(base + np.asarray(corner))]
        if not np.isfinite(v):
            if w == 0.0:
                continue
            raise OutOfDomain(f"{tuple(point)} touches an Exterior cell corner")
        total += w * v
    return float(total)


# --------------------------------------------------------------------------
# whole-field versions (NaN outside Interior)
# --------------------------------------------------------------------------


def laplacian_field(u: np.ndarray, grid: Grid, mask: DomainMask) -> np.ndarray:
    out = np.zeros(grid.shape)
    for ax in range(grid.dim):
        out += _axis_neighbors(u, ax, -1) - u
        out += _axis_neighbors(u, ax, 1) - u
    out /= grid.h ** 2
    out[~mask.interior] = np.nan
    return out


def upwind_norm_field(u: np.ndarray, grid: Grid, mask: DomainMask) -> np.ndarray:
    total = np.zeros(grid.shape)
    for ax in range(grid.dim):
        lo = _axis_neighbors(u, ax, -1)
        hi = _axis_neighbors(u, ax, 1)
        d = np.maximum(np.maximum(u - lo, u - hi), 0.0) / grid.h
        total += d * d
    out = np.sqrt(total)
    out[~mask.interior] = np.nan
    return out


def central_gradient_field(u: np.ndarray, grid: Grid, mask: DomainMask) -> np.ndarray:
    """Central difference gradient vectors, shape ``shape + (dim,)``."""
    comps = []
    for ax in range(grid.dim):
        comps.append((_axis_neighbors(u, ax, 1) - _axis_neighbors(u, ax, -1)) / (2.0 * grid.h))
    out = np.stack(comps, axis=-1)
    out[~mask.interior] = np.nan
    return out


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------


def field_rows(grid: Grid, mask: DomainMask, values: np.ndarray):
    """Yield ``(coords, value)`` for every non-Exterior node in C order."""
    x = grid.coords()
    for idx in zip(*np.nonzero(mask.active)):
        yield x[idx], values[idx]


def write_field_csv(path, grid: Grid, mask: DomainMask, values: np.ndarray, column="value"):
    """CSV ``x1,...,xd,<column>``; coordinates with 12 significant digits."""
    header = ",".join([f"x{i + 1}" for i in range(grid.dim)] + [column])
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for pt, v in field_rows(grid, mask, values):
            coords = ",".join(f"{c:.12g}" for c in pt)
            fh.write(f"{coords},{_fmt_value(v)}\n")


def _fmt_value(v) -> str:
    if isinstance(v, str):
        return v
    return repr(float(v))
