"""
Region classification, interface extraction and gradient diagnostics.

Two labelings of the Interior are available:

``threshold``
    Brownian where the upwind gradient norm exceeds ``1 + delta``. Cheap and
    solver independent, but near a C^1 junction ``|Du| - 1`` grows only like
    the distance to the interface, so the detected boundary sits roughly
    ``delta / |d|Du|/dt|`` inside the Brownian side.
``branch``
    Brownian where the Poisson candidate wins the monotone node update
    (needs the right-hand side ``r``). This is the discrete free boundary
    itself and carries no ``delta`` bias.

Interface cells are the midpoints of axis edges joining differently labelled
Interior nodes. For radial domains the cells are grouped into shells by
radius; a shell whose radial spread is at most ``4h`` is reported as a sharp
interface with estimate ``rho_hat`` (mean radius of its cells). Wider shells
are kept as diffuse bands: they appear where the two candidates are nearly
tied over a whole region and no single interface exists.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import BadParameter, EmptyInterface
from .grid import Annulus, Ball, DomainMask, Grid, Interval, central_gradient_field, upwind_norm_field

BROWNIAN, EIKONAL = "B", "E"


@dataclass
class RegionLabeling:
    """``brownian`` is a boolean grid array, False off the Interior."""

    grid: Grid
    mask: DomainMask
    brownian: np.ndarray
    delta: float
    method: str = "threshold"

    @property
    def eikonal(self) -> np.ndarray:
        return self.mask.interior & ~self.brownian

    def fractions(self) -> dict:
        n = int(self.mask.interior.sum())
        b = int(self.brownian.sum())
        return {"brownian": b / n, "eikonal": (n - b) / n}

    def write_csv(self, path) -> None:
        x = self.grid.coords()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{i + 1}" for i in range(self.grid.dim)] + ["label"])
            for idx in zip(*np.nonzero(self.mask.interior)):
                w.writerow([f"{c:.12g}" for c in x[idx]] + [BROWNIAN if self.brownian[idx] else EIKONAL])


@dataclass
class InterfaceShell:
    rho_hat: float
    spread: float
    count: int
    sharp: bool


@dataclass
class InterfaceEstimate:
    cells: np.ndarray
    shells: list = field(default_factory=list)
    h: float = 0.0

    @property
    def sharp(self) -> list:
        return [s for s in self.shells if s.sharp]

    @property
    def rho_hat(self) -> list:
        return [s.rho_hat for s in self.sharp]

    @property
    def spread(self) -> list:
        return [s.spread for s in self.sharp]

    def summary(self) -> dict:
        return {
            "rho_hat": [float(f"{r:.15g}") for r in self.rho_hat],
            "spread": [float(f"{s:.15g}") for s in self.spread],
            "shells": [
                {"rho_hat": float(f"{s.rho_hat:.15g}"), "spread": float(f"{s.spread:.15g}"),
                 "cells": s.count, "sharp": s.sharp}
                for s in self.shells
            ],
            "cells": int(len(self.cells)),
        }

    def write_csv(self, path) -> None:
        d = self.cells.shape[1] if self.cells.ndim == 2 else 1
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{i + 1}" for i in range(d)])
            for c in self.cells:
                w.writerow([f"{v:.12g}" for v in np.atleast_1d(c)])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def classify_regions(u: np.ndarray, grid: Grid, mask: DomainMask, delta: float = 0.05,
                     method: str = "threshold", r: float | None = None) -> RegionLabeling:
    """Label each Interior node Brownian or Eikonal.

    Args:
        delta: threshold in ``(0, 0.5)``; used by ``method="threshold"``.
        method: ``"threshold"`` or ``"branch"`` (see module docstring).
        r: right-hand side, required for ``"branch"``.
    """
    if not 0 < delta < 0.5:
        raise BadParameter("delta must lie in (0, 0.5)")
    if method == "threshold":
        norm = upwind_norm_field(u, grid, mask)
        brown = mask.interior & (np.nan_to_num(norm, nan=0.0) > 1.0 + delta)
    elif method == "branch":
        if r is None:
            raise BadParameter("the branch labeling needs the right-hand side r")
        from .solver import ProblemSpec, poisson_active

        brown = poisson_active(u, ProblemSpec(mask.descriptor, r, 0.0, grid.dim), grid, mask)
    else:
        raise BadParameter(f"unknown labeling method {method!r}")
    return RegionLabeling(grid, mask, brown, float(delta), method)


def _edge_cells(labeling: RegionLabeling) -> np.ndarray:
    g, mask = labeling.grid, labeling.mask
    x = g.coords()
    inside = mask.interior
    lab = labeling.brownian
    out = []
    for ax in range(g.dim):
        a = [slice(None)] * g.dim
        b = [slice(None)] * g.dim
        a[ax] = slice(0, -1)
        b[ax] = slice(1, None)
        a, b = tuple(a), tuple(b)
        sel = inside[a] & inside[b] & (lab[a] != lab[b])
        out.append(0.5 * (x[a][sel] + x[b][sel]))
    return np.concatenate(out, axis=0)


def extract_interface(labeling: RegionLabeling, grid: Grid | None = None,
                      boundary_layer: float = 4.0) -> InterfaceEstimate:
    """Interface cells between the two labels, with radial shells when the
    domain is a Ball, Annulus or Interval.

    Cells closer than ``boundary_layer * h`` to the domain boundary are
    dropped: there the Dirichlet layer, not the free boundary, decides which
    candidate wins.

    Raises:
        EmptyInterface: no interface cell away from the boundary layer.
    """
    g = grid or labeling.grid
    h = g.h
    cells = _edge_cells(labeling)
    desc = labeling.mask.descriptor
    radial = isinstance(desc, (Ball, Annulus, Interval))
    if len(cells) and radial:
        rad = np.sqrt(np.sum(cells * cells, axis=1))
        dist = desc.R - rad
        if isinstance(desc, Annulus):
            dist = np.minimum(dist, rad - desc.r_in)
        cells = cells[dist >= boundary_layer * h]
    if len(cells) == 0:
        raise EmptyInterface("no interface cells: the solution has a single regime")
    est = InterfaceEstimate(cells=cells, h=h)
    if radial:
        rad = np.sort(np.sqrt(np.sum(cells * cells, axis=1)))
        # consecutive radii further apart than 2h start a new shell
        breaks = np.flatnonzero(np.diff(rad) > 2.0 * h) + 1
        for grp in np.split(rad, breaks):
            spread = float(grp[-1] - grp[0])
            est.shells.append(InterfaceShell(float(grp.mean()), spread, len(grp), spread <= 4.0 * h))
    return est


def _diagnostic_region(grid: Grid, mask: DomainMask, margin: float) -> np.ndarray:
    return mask.interior & (mask.interior_distance() >= margin)


def _max_adjacent_jump(values: np.ndarray, region: np.ndarray, vector: bool) -> float:
    dim = region.ndim
    best = 0.0
    for ax in range(dim):
        a = [slice(None)] * dim
        b = [slice(None)] * dim
        a[ax] = slice(0, -1)
        b[ax] = slice(1, None)
        a, b = tuple(a), tuple(b)
        sel = region[a] & region[b]
        if not sel.any():
            continue
        diff = values[a][sel] - values[b][sel]
        jump = np.sqrt(np.sum(diff * diff, axis=-1)) if vector else np.abs(diff)
        best = max(best, float(jump.max()))
    return best


@dataclass
class GradientDiagnostic:
    jump_gradnorm: float
    jump_gradvec: float
    jump_gradnorm_central: float

    def as_dict(self) -> dict:
        return {k: float(f"{v:.15g}") for k, v in self.__dict__.items()}


def gradient_modulus_diagnostic(u: np.ndarray, grid: Grid, mask: DomainMask,
                                margin: float = 0.1) -> GradientDiagnostic:
    """Largest jumps between adjacent nodes at distance ``>= margin`` from the boundary.

    * ``jump_gradnorm``: of the upwind gradient norm, the one-sided quantity
      the scheme enforces (at a ridge it sees the slope of the side it
      descends to, so it stays continuous when only the direction flips);
    * ``jump_gradvec``: of the central difference gradient vector;
    * ``jump_gradnorm_central``: of the central difference gradient norm.
      A ridge through a cell makes the central quotient at its nodes average
      slopes of opposite sign, so this jump stays O(1) at every resolution.
    """
    region = _diagnostic_region(grid, mask, margin)
    norm = upwind_norm_field(u, grid, mask)
    grad = central_gradient_field(u, grid, mask)
    cnorm = np.sqrt(np.sum(grad * grad, axis=-1))
    return GradientDiagnostic(
        jump_gradnorm=_max_adjacent_jump(norm, region, vector=False),
        jump_gradvec=_max_adjacent_jump(grad, region, vector=True),
        jump_gradnorm_central=_max_adjacent_jump(cnorm, region, vector=False),
    )


def small_gradient_measure(u: np.ndarray, grid: Grid, mask: DomainMask, delta: float = 0.05) -> float:
    """Fraction of Interior nodes whose upwind gradient norm is below ``1 - delta``."""
    norm = upwind_norm_field(u, grid, mask)
    inside = mask.interior
    return float(np.mean(norm[inside] < 1.0 - delta))
