import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gchjb.errors import BadParameter, EmptyDomain, MissingNeighbor, OutOfDomain
from gchjb.grid import (
    Annulus,
    Ball,
    Box,
    CustomPredicate,
    Grid,
    Interval,
    central_gradient_norm,
    classify_nodes,
    discrete_laplacian,
    laplacian_field,
    multilinear_interpolate,
    upwind_gradient_norm,
    upwind_norm_field,
    write_field_csv,
)


def test_grid_rejects_bad_shapes():
    with pytest.raises(BadParameter):
        Grid((0.0,), (2,), 0.1)
    with pytest.raises(BadParameter):
        Grid((0.0, 0.0), (5, 5), 0.0)
    with pytest.raises(BadParameter):
        Grid((0.0,) * 4, (3,) * 4, 0.1)


def test_index_coordinate_map_is_exact():
    g = Grid((-1.0, -2.0), (9, 17), 0.25)
    x = g.coords()
    assert x[0, 0].tolist() == [-1.0, -2.0]
    assert x[8, 16].tolist() == [1.0, 2.0]
    assert g.index_of((0.5, 0.0)) == (6, 8)
    with pytest.raises(OutOfDomain):
        g.index_of((0.1, 0.0))


def test_around_puts_the_origin_on_a_node():
    g = Grid.around(Ball(1.0), 1 / 16, 2)
    idx = g.index_of((0.0, 0.0))
    assert np.allclose(g.coords()[idx], 0.0)


def test_classify_interval():
    g = Grid.box([-1.5], [1.5], 0.5)
    m = classify_nodes(g, Interval(1.0))
    x = g.coords()[..., 0]
    assert x[m.interior].tolist() == [-0.5, 0.0, 0.5]
    assert x[m.boundary].tolist() == [-1.0, 1.0]


def test_classify_ball_origin_interior():
    g = Grid.around(Ball(1.0), 0.25, 2)
    m = classify_nodes(g, Ball(1.0))
    assert m.interior[g.index_of((0.0, 0.0))]


def test_classify_annulus_count_matches_bruteforce():
    g = Grid.box([-1.2, -1.2], [1.2, 1.2], 0.1)
    m = classify_nodes(g, Annulus(0.3, 1.0))
    count = 0
    for i in range(25):
        for j in range(25):
            rad = math.hypot(-1.2 + 0.1 * i, -1.2 + 0.1 * j)
            count += 0.3 < rad < 1.0
    assert int(m.interior.sum()) == count
    assert count == 280


@pytest.mark.parametrize("desc,dim", [(Ball(1.0), 2), (Annulus(0.3, 1.0), 2), (Ball(0.7), 3),
                                      (Box((1.0, 2.0)), 2), (Interval(1.0), 1)])
def test_mask_invariants(desc, dim):
    g = Grid.around(desc, 0.1, dim)
    m = classify_nodes(g, desc)
    lab = m.labels
    inside = m.interior
    near = np.zeros(g.shape, dtype=bool)
    for ax in range(dim):
        for step in (-1, 1):
            shifted = np.roll(inside, step, axis=ax)
            near |= shifted
            # every Interior node has non-Exterior axis neighbours
            assert not (np.roll(m.exterior, step, axis=ax) & inside).any()
    assert np.array_equal(m.boundary, near & ~inside)
    assert np.array_equal(inside, desc.contains(g.coords()))
    assert set(np.unique(lab)) <= {0, 1, 2}


def test_classify_errors():
    g = Grid.box([5.0, 5.0], [6.0, 6.0], 0.25)
    with pytest.raises(EmptyDomain):
        classify_nodes(g, Ball(1.0))
    with pytest.raises(BadParameter):
        classify_nodes(Grid.box([-1.0, -1.0], [1.0, 1.0], 0.25), Ball(2.0))
    with pytest.raises(BadParameter):
        Annulus(1.0, 0.5)


def test_custom_predicate():
    desc = CustomPredicate(lambda x: (np.abs(x[..., 0]) < 0.5) & (np.abs(x[..., 1]) < 0.3),
                           box=((-0.5, 0.5), (-0.3, 0.3)))
    g = Grid.around(desc, 0.1, 2)
    m = classify_nodes(g, desc)
    assert m.interior.sum() == 9 * 5


def test_laplacian_examples():
    u = np.array([1.0, 4.0, 2.0])
    assert discrete_laplacian(u, 1.0, (1,)) == -5.0
    g = Grid.around(Ball(1.0), 0.1, 2)
    x = g.coords()
    lin = 0.3 * x[..., 0] - 1.7 * x[..., 1] + 2.0
    assert abs(discrete_laplacian(lin, 0.1, (5, 7))) < 1e-10
    quad = np.sum(x * x, axis=-1) / 4.0
    m = classify_nodes(g, Ball(1.0))
    lap = laplacian_field(quad, g, m)
    assert np.allclose(lap[m.interior], 1.0, atol=1e-10)


def test_laplacian_missing_neighbour():
    u = np.array([np.nan, 1.0, 2.0])
    with pytest.raises(MissingNeighbor):
        discrete_laplacian(u, 0.1, (1,))
    with pytest.raises(MissingNeighbor):
        upwind_gradient_norm(np.zeros(3), 0.1, (0,))


def test_upwind_norm_examples():
    g = Grid.around(Ball(1.0), 0.1, 2)
    x = g.coords()
    a = np.array([0.6, -0.8])
    u = x @ a + 1.0
    assert math.isclose(upwind_gradient_norm(u, 0.1, (6, 9)), 1.0, rel_tol=1e-12)
    assert upwind_gradient_norm(np.ones((5, 5)), 0.1, (2, 2)) == 0.0
    h = 0.01
    t = np.array([0.49, 0.5, 0.51])
    prof = 1.5 - t - t * t / 2
    assert abs(upwind_gradient_norm(prof, h, (1,)) - 1.5) < 0.01


def test_central_norm_examples():
    h = 0.1
    t = np.array([-0.1, 0.0, 0.1])
    kink = 1.5 - np.abs(t) - t * t / 2
    assert central_gradient_norm(kink, h, (1,)) == 0.0
    x = Grid.around(Ball(1.0), h, 2).coords()
    quad = np.sum(x * x, axis=-1) / 4.0
    centre = (11, 11)
    assert np.allclose(x[centre], 0.0)
    assert abs(central_gradient_norm(quad, h, centre)) < 1e-15
    aff = 3.0 * x[..., 0] + 4.0 * x[..., 1]
    assert math.isclose(central_gradient_norm(aff, h, (4, 6)), 5.0, rel_tol=1e-12)


def test_interpolation_examples():
    g = Grid((0.0, 0.0), (3, 3), 1.0)
    u = np.full(g.shape, 2.5)
    assert multilinear_interpolate(u, g, (0.3, 1.7)) == 2.5
    u = np.zeros(g.shape)
    u[1, 0], u[0, 1], u[1, 1] = 1.0, 1.0, 2.0
    assert multilinear_interpolate(u, g, (0.5, 0.5)) == 1.0
    x = g.coords()
    aff = 0.5 + 2.0 * x[..., 0] - 3.0 * x[..., 1]
    assert math.isclose(multilinear_interpolate(aff, g, (1.25, 0.4)), 0.5 + 2.5 - 1.2)
    with pytest.raises(OutOfDomain):
        multilinear_interpolate(u, g, (2.5, 0.0))


def test_field_csv(tmp_path):
    g = Grid.box([-1.5], [1.5], 0.5)
    m = classify_nodes(g, Interval(1.0))
    u = m.field(np.linspace(0, 1, 7))
    write_field_csv(tmp_path / "u.csv", g, m, u)
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "x1,value"
    assert len(lines) == 1 + 5
    assert lines[1].startswith("-1,")


# -- properties ---------------------------------------------------------------

vals = st.floats(-2.0, 2.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(vals, min_size=5, max_size=5), st.integers(0, 3), st.floats(0.0, 1.0))
def test_stencil_monotonicity(v, which, bump):
    """Upwind norm: nonincreasing in neighbours, nondecreasing in the centre.
    Laplacian: nondecreasing in neighbours."""
    u = np.zeros((3, 3))
    u[1, 1] = v[0]
    nbrs = [(0, 1), (2, 1), (1, 0), (1, 2)]
    for k, idx in enumerate(nbrs):
        u[idx] = v[k + 1]
    h = 0.1
    up = u.copy()
    up[nbrs[which]] += bump
    assert upwind_gradient_norm(up, h, (1, 1)) <= upwind_gradient_norm(u, h, (1, 1)) + 1e-12
    assert discrete_laplacian(up, h, (1, 1)) >= discrete_laplacian(u, h, (1, 1)) - 1e-9
    uc = u.copy()
    uc[1, 1] += bump
    assert upwind_gradient_norm(uc, h, (1, 1)) >= upwind_gradient_norm(u, h, (1, 1)) - 1e-12


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 0.5))
def test_exact_on_affine(a, b, c, h):
    g = Grid((0.0, 0.0), (5, 5), h)
    x = g.coords()
    u = a * x[..., 0] + b * x[..., 1] + c
    assert abs(discrete_laplacian(u, h, (2, 2))) < 1e-8 / h
    assert math.isclose(upwind_gradient_norm(u, h, (2, 2)), math.hypot(a, b), rel_tol=1e-9, abs_tol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(vals, min_size=4, max_size=4), st.integers(0, 3), st.floats(0.0, 1.0),
       st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_interpolation_monotone_and_bounded(c, which, bump, px, py):
    g = Grid((0.0, 0.0), (3, 3), 1.0)
    u = np.zeros(g.shape)
    corners = [(0, 0), (1, 0), (0, 1), (1, 1)]
    for k, idx in enumerate(corners):
        u[idx] = c[k]
    base = multilinear_interpolate(u, g, (px, py))
    assert min(c) - 1e-12 <= base <= max(c) + 1e-12
    u[corners[which]] += bump
    assert multilinear_interpolate(u, g, (px, py)) >= base - 1e-12


def test_upwind_field_matches_pointwise():
    g = Grid.around(Ball(1.0), 0.125, 2)
    m = classify_nodes(g, Ball(1.0))
    rng = np.random.default_rng(3)
    u = m.field(rng.uniform(size=g.shape))
    field = upwind_norm_field(u, g, m)
    for idx in zip(*np.nonzero(m.interior)):
        assert math.isclose(field[idx], upwind_gradient_norm(u, g.h, idx), rel_tol=1e-12)
