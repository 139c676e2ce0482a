import math

import numpy as np
import pytest

from idcascade import cones
from idcascade._rng import make_generator
from idcascade.field import (
    GaussianFieldSampler,
    GridSpec,
    JumpSampler,
    PoissonFieldSampler,
    _shadow_index_range,
    field_kind,
    sample_field,
    sample_gaussian_field,
    sample_poisson_field,
    truncated_model,
)
from idcascade.levy import (
    AtomicJumps,
    TabulatedJumps,
    build_model,
    levy_exponent,
    lognormal_model,
    single_atom_model,
)


def test_grid_basic_properties():
    g = GridSpec((0.0, 2.0), 4, 3)
    assert g.length == 2.0
    assert g.eps == 2.0 / 16
    assert g.n_cells == 16
    assert g.n_points == 48
    assert g.spacing == pytest.approx(2.0 / 48)
    assert g.carried_levels == (1, 2, 3, 4)
    assert GridSpec((0.0, 1.0), 5, 2, 0).carried_levels == ()
    pts = g.eval_points()
    assert pts[0] == pytest.approx(g.spacing / 2)
    assert pts[-1] == pytest.approx(2.0 - g.spacing / 2)


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec((1.0, 1.0), 4)
    with pytest.raises(ValueError):
        GridSpec((0.0, 1.0), 0)
    with pytest.raises(ValueError):
        GridSpec((0.0, 1.0), 4, 2, 7)


def test_gaussian_gram_matches_region_oracle():
    g = GridSpec((0.0, 1.0), 3, 2, 2)
    sam = GaussianFieldSampler(g, 0.7)
    cov = sam.chol @ sam.chol.T
    pts = g.eval_points()

    # point-point entries are pair areas
    for i, j in [(0, 0), (0, 5), (3, 11), (7, 15)]:
        want = 0.7 * cones.area_pair((0.0, 1.0), pts[i], pts[j], g.eps)
        assert cov[i, j] == pytest.approx(want, abs=1e-9)

    # point-cell and cell-cell entries against the quadrature oracle
    b1 = g.cell_bounds(1)
    cell0 = cones.IntervalCone(*b1[0])
    base = cones.IntervalCone(0.0, 1.0)
    o = g.n_points
    want = 0.7 * cones.region_area(
        (cones.PointCone(pts[3], g.eps) & cell0) - base)
    assert cov[3, o] == pytest.approx(want, abs=1e-8)
    b2 = g.cell_bounds(2)
    cell10 = cones.IntervalCone(*b2[0])
    want = 0.7 * cones.region_area((cell0 & cell10) - base)
    assert cov[o, o + 2] == pytest.approx(want, abs=1e-8)

    # means enforce mean-one weights object by object
    areas = np.concatenate([
        np.full(g.n_points, cones.area_local_cone((0.0, 1.0), g.eps)),
        [cones.area_cell((0.0, 1.0), tuple(b)) for b in b1],
        [cones.area_cell((0.0, 1.0), tuple(b)) for b in b2],
    ])
    assert np.allclose(sam.mean, -0.5 * 0.7 * areas)


def test_gaussian_field_is_mean_one():
    g = GridSpec((0.0, 1.0), 5, 2, 0)
    sam = GaussianFieldSampler(g, 0.6)
    rng = np.random.default_rng(3)
    vals = sam.draw(rng, 6000)
    q = np.exp(vals)
    m = q.mean(axis=1)
    se = q.std(axis=1) / math.sqrt(q.shape[1])
    assert np.all(np.abs(m - 1.0) < 4.0 * se)


def test_gaussian_sampler_rejects_jump_models():
    with pytest.raises(ValueError):
        sample_gaussian_field(GridSpec(), single_atom_model(-0.5, 1.0),
                              np.random.default_rng(0))


def test_poisson_field_matches_bruteforce_points():
    model = single_atom_model(-math.log(2.0), 1.0)
    g = GridSpec((0.25, 1.75), 4, 3)
    rng = make_generator(99, 5, "field-test")
    f = sample_poisson_field(g, model, rng)
    x, y, jump = f.points_x, f.points_y, f.points_jump
    assert x.size > 0
    drift = -(math.exp(-math.log(2.0)) - 1.0)  # -(e^loc - 1) * mass

    pts = g.eval_points()
    area_pt = cones.area_local_cone(g.interval, g.eps)
    for k in (0, 7, 23, g.n_points - 1):
        t = pts[k]
        inside = (x - 0.5 * y <= t) & (t < x + 0.5 * y)
        want = drift * area_pt + jump[inside].sum()
        assert f.point_log[k] == pytest.approx(want, abs=1e-12)

    for lev in (1, 3):
        bounds = g.cell_bounds(lev)
        area_cell = cones.area_cell(g.interval, tuple(bounds[0]))
        for i in (0, len(bounds) - 1):
            a, b = bounds[i]
            covered = (x - 0.5 * y <= a) & (b <= x + 0.5 * y)
            want = drift * area_cell + jump[covered].sum()
            assert f.cell_log[lev][i] == pytest.approx(want, abs=1e-12)


def test_poisson_field_is_mean_one():
    model = single_atom_model(-math.log(2.0), 1.0)
    g = GridSpec((0.0, 1.0), 5, 2, 0)
    sam = PoissonFieldSampler(g, model)
    rng = np.random.default_rng(17)
    acc = np.zeros(g.n_points)
    acc2 = np.zeros(g.n_points)
    n = 4000
    for _ in range(n):
        pl, _ = sam.evaluate(*sam.draw_points(rng))
        w = np.exp(pl)
        acc += w
        acc2 += w * w
    m = acc / n
    se = np.sqrt(np.maximum(acc2 / n - m * m, 0.0) / n)
    assert np.all(np.abs(m - 1.0) < 4.0 * se)


def test_poisson_rejects_gaussian_part():
    with pytest.raises(ValueError):
        PoissonFieldSampler(GridSpec(), lognormal_model(0.5))


def test_field_kind_dispatch():
    assert field_kind(lognormal_model(0.3)) == "gaussian"
    assert field_kind(single_atom_model(-0.7, 1.0)) == "poisson"
    assert field_kind(single_atom_model(-0.7, 1.0, sigma2=0.2)) == "hybrid"


def test_sample_field_auto_routes_and_is_reproducible():
    model = single_atom_model(-0.7, 1.0, sigma2=0.2)
    g = GridSpec((0.0, 1.0), 4, 2)
    a = sample_field(g, model, make_generator(5, 0, "t"))
    b = sample_field(g, model, make_generator(5, 0, "t"))
    assert a.kind == "gaussian+poisson"
    np.testing.assert_array_equal(a.point_log, b.point_log)
    c = sample_field(g, model, make_generator(5, 1, "t"))
    assert not np.array_equal(a.point_log, c.point_log)


def test_truncated_model_stays_normalized():
    nu = AtomicJumps((-1.2, -0.05, 0.4), (0.5, 3.0, 0.2))
    model = build_model(0.1, nu)
    for substitute in (False, True):
        eff = truncated_model(model, 0.1, substitute)
        assert abs(levy_exponent(eff, 0.0)) < 1e-12
        assert abs(levy_exponent(eff, 1.0)) < 1e-12
        kept = eff.nu
        assert isinstance(kept, AtomicJumps)
        assert all(abs(x) >= 0.1 for x in kept.locations)
    sub = truncated_model(model, 0.1, True)
    drop = truncated_model(model, 0.1, False)
    assert sub.sigma2 == pytest.approx(drop.sigma2 + 3.0 * 0.05 ** 2)
    with pytest.raises(ValueError):
        truncated_model(model, 1.5)
    with pytest.raises(ValueError):
        truncated_model(build_model(0.0, AtomicJumps((-0.01,), (1.0,))), 0.1)


def test_hybrid_field_is_mean_one():
    model = single_atom_model(-math.log(2.0), 0.6, sigma2=0.3)
    g = GridSpec((0.0, 1.0), 5, 1, 0)
    rng = np.random.default_rng(23)
    n = 4000
    acc = np.zeros(g.n_points)
    acc2 = np.zeros(g.n_points)
    for _ in range(n):
        f = sample_field(g, model, rng)
        w = np.exp(f.point_log)
        acc += w
        acc2 += w * w
    m = acc / n
    se = np.sqrt(np.maximum(acc2 / n - m * m, 0.0) / n)
    assert np.all(np.abs(m - 1.0) < 4.0 * se)


def test_jump_sampler_tabulated_cdf():
    nu = TabulatedJumps((-1.0, 0.0, 0.5), (1.0, 2.0, 0.4), 2.0, 3.0)
    js = JumpSampler(nu)
    rng = np.random.default_rng(31)
    draws = js.draw(rng, 60_000)
    total = nu.total_mass()
    for q in (-1.2, -0.5, 0.0, 0.3, 0.7):
        want = nu.integrate_weighted(lambda t, q=q: 1.0 if t <= q else 0.0)
        got = float(np.mean(draws <= q))
        assert got == pytest.approx(want / total, abs=0.01)


def test_shadow_index_range_half_open():
    # grid on [0,1), spacing 1/8, eval points at (k+.5)/8
    x = np.array([0.5])
    y = np.array([0.25])
    k0, k1 = _shadow_index_range(x, y, 0.0, 0.125, 8)
    # shadow [0.375, 0.625) holds t_3 = 0.4375 and t_4 = 0.5625
    assert (k0[0], k1[0]) == (3, 5)
    # a shadow boundary exactly on an eval point: left-closed, right-open
    x = np.array([0.3125])
    y = np.array([0.375])
    k0, k1 = _shadow_index_range(x, y, 0.0, 0.125, 8)
    # shadow [0.125, 0.5): t_1=0.1875, t_2, t_3=0.4375 in; t_4=0.5625 out
    assert (k0[0], k1[0]) == (1, 4)
