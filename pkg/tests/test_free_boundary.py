import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gchjb.errors import BadParameter, EmptyInterface
from gchjb.free_boundary import (
    RegionLabeling,
    classify_regions,
    extract_interface,
    gradient_modulus_diagnostic,
    small_gradient_measure,
)
from gchjb.grid import Ball, Box, Grid, Interval, classify_nodes, upwind_norm_field
from gchjb.validation import fixture

from conftest import cached_fixture_solve


def test_eikonal_ball_is_all_eikonal():
    res = cached_fixture_solve("eikonal_ball", 1 / 32)
    lab = classify_regions(res.solution, res.grid, res.mask, 0.05)
    # the only Brownian labels sit in the Dirichlet layer next to the sphere
    assert np.all(res.grid.radii()[lab.brownian] > 1 - 4 * res.grid.h)
    assert lab.fractions()["eikonal"] > 0.95
    with pytest.raises(EmptyInterface):
        extract_interface(lab)


def test_interval_brownian_band_around_origin():
    res = cached_fixture_solve("interval", 1 / 256)
    lab = classify_regions(res.solution, res.grid, res.mask, 0.05)
    x = res.grid.coords()[..., 0]
    band = x[lab.brownian]
    # |u'| = 1 + |x| exceeds 1 + delta for |x| > delta, so the Eikonal
    # label sits only in a thin band around the origin
    assert np.all(np.abs(x[lab.eikonal]) <= 0.05 + 2 * res.grid.h)
    assert band.size > 0.85 * res.mask.interior.sum()


def test_ball_interface_near_critical_radius():
    h = 1 / 32
    res = cached_fixture_solve("ball", h)
    lab = classify_regions(res.solution, res.grid, res.mask, method="branch", r=1.0)
    est = extract_interface(lab)
    assert len(est.rho_hat) == 1
    assert abs(est.rho_hat[0] - 1.0) < 2 * h


def test_annulus_two_piece_branch_interface():
    h = 1 / 64
    fx = fixture("annulus_2piece")
    res = cached_fixture_solve("annulus_2piece", h)
    lab = classify_regions(res.solution, res.grid, res.mask, method="branch", r=fx.r)
    est = extract_interface(lab)
    assert len(est.rho_hat) == 1
    assert abs(est.rho_hat[0] - fx.oracle.interfaces[0]) < 2 * h


def test_wide_annulus_threshold_shells_bracket_ridge():
    h = 1 / 64
    res = cached_fixture_solve("annulus_wide", h)
    ridge = fixture("annulus_wide").oracle.interfaces[0]
    lab = classify_regions(res.solution, res.grid, res.mask, 0.05)
    rho = extract_interface(lab).rho_hat
    assert len(rho) == 2
    assert rho[0] < ridge < rho[1]
    assert rho[1] - rho[0] < 0.3


def test_threshold_labels_need_r_only_for_branch():
    res = cached_fixture_solve("eikonal_ball", 1 / 16)
    with pytest.raises(BadParameter):
        classify_regions(res.solution, res.grid, res.mask, method="branch")
    with pytest.raises(BadParameter):
        classify_regions(res.solution, res.grid, res.mask, method="other")
    for delta in (0.0, 0.5, -0.1):
        with pytest.raises(BadParameter):
            classify_regions(res.solution, res.grid, res.mask, delta)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 0.45), st.floats(0.01, 0.45))
def test_brownian_region_shrinks_with_delta(d1, d2):
    res = cached_fixture_solve("ball", 1 / 16)
    lo, hi = sorted((d1, d2))
    a = classify_regions(res.solution, res.grid, res.mask, lo).brownian
    b = classify_regions(res.solution, res.grid, res.mask, hi).brownian
    assert not (b & ~a).any()


def test_upwind_norm_bounded_below_on_solution():
    """A supersolution of the eikonal branch has upwind norm >= 1 in the Interior."""
    for name, h in [("ball", 1 / 32), ("annulus_2piece", 1 / 64), ("interval", 1 / 128)]:
        res = cached_fixture_solve(name, h)
        norm = upwind_norm_field(res.solution, res.grid, res.mask)
        assert np.min(norm[res.mask.interior]) >= 1 - 1e-8
        assert small_gradient_measure(res.solution, res.grid, res.mask) == 0.0


def test_affine_field_has_no_jumps():
    desc = Box((1.0, 1.0))
    g = Grid.around(desc, 1 / 16, 2)
    m = classify_nodes(g, desc)
    x = g.coords()
    u = m.field(0.6 * x[..., 0] - 0.8 * x[..., 1] + 3.0)
    d = gradient_modulus_diagnostic(u, g, m, margin=0.1)
    assert d.jump_gradnorm < 1e-12
    assert d.jump_gradvec < 1e-12
    assert d.jump_gradnorm_central < 1e-12


def test_zero_field_is_all_small_gradient():
    desc = Ball(1.0)
    g = Grid.around(desc, 1 / 16, 2)
    m = classify_nodes(g, desc)
    assert small_gradient_measure(m.field(np.zeros(g.shape)), g, m) == 1.0


def test_ridge_jump_shrinks_with_h():
    jumps = []
    for h in (1 / 32, 1 / 64, 1 / 128):
        res = cached_fixture_solve("annulus_ridge", h)
        jumps.append(gradient_modulus_diagnostic(res.solution, res.grid, res.mask, 0.1).jump_gradnorm)
    assert jumps[0] > jumps[1] > jumps[2]


def test_boundary_layer_drops_cells():
    res = cached_fixture_solve("interval", 1 / 64)
    lab = classify_regions(res.solution, res.grid, res.mask, 0.05)
    est = extract_interface(lab)
    assert np.all(np.abs(est.cells[:, 0]) <= 1 - 4 * res.grid.h)


def test_outputs(tmp_path):
    res = cached_fixture_solve("ball", 1 / 16)
    lab = classify_regions(res.solution, res.grid, res.mask, method="branch", r=1.0)
    lab.write_csv(tmp_path / "regions.csv")
    rows = (tmp_path / "regions.csv").read_text().splitlines()
    assert rows[0] == "x1,x2,label"
    assert len(rows) == 1 + int(res.mask.interior.sum())
    assert {r.rsplit(",", 1)[1] for r in rows[1:]} == {"B", "E"}
    est = extract_interface(lab)
    est.write_csv(tmp_path / "interface.csv")
    est.write_json(tmp_path / "interface.json")
    doc = json.loads((tmp_path / "interface.json").read_text())
    assert doc["cells"] == len(est.cells)
    assert doc["rho_hat"] == pytest.approx(est.rho_hat)
    assert len((tmp_path / "interface.csv").read_text().splitlines()) == 1 + len(est.cells)


def test_interval_descriptor_shells():
    g = Grid.around(Interval(1.0), 1 / 64, 1)
    m = classify_nodes(g, Interval(1.0))
    x = g.coords()[..., 0]
    # synthetic labeling: Brownian outside |x| = 0.5
    lab = RegionLabeling(g, m, m.interior & (np.abs(x) > 0.5), 0.05)
    est = extract_interface(lab)
    assert len(est.shells) == 1
    assert est.rho_hat[0] == pytest.approx(0.5, abs=1 / 64)
