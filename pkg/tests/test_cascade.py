import math
import os

import numpy as np
import pytest

from idcascade._rng import make_generator
from idcascade.cascade import (
    BatchSimulator,
    build_realization,
    decompose_star,
    juxtaposed_total_masses,
    model_digest,
    read_binary_masses,
    realization_to_binary,
    realization_to_csv,
    refine,
    sample_area_log,
    scaled_mass_samples,
    simulate_prefix_masses,
    simulate_total_masses,
)
from idcascade.field import GridSpec
from idcascade.levy import lognormal_model, single_atom_model
from idcascade.moments import juxtaposed_pair_moment

LOGN = lognormal_model(0.5)
ATOM = single_atom_model(-math.log(2.0), 1.0)


def test_build_realization_seed_rng_exclusive():
    g = GridSpec((0.0, 1.0), 4, 2)
    with pytest.raises(ValueError):
        build_realization(LOGN, g)
    with pytest.raises(ValueError):
        build_realization(LOGN, g, np.random.default_rng(0), seed=1)


def test_build_realization_masses_consistent():
    g = GridSpec((0.0, 1.0), 5, 2)
    r = build_realization(LOGN, g, seed=42, replica=3)
    assert r.cell_masses.size == 32
    assert r.total_mass == pytest.approx(r.cell_masses.sum())
    assert r.mass_of_prefix(0.5) == pytest.approx(r.cell_masses[:16].sum())
    assert r.mass_of_prefix(1.0) == pytest.approx(r.total_mass)
    with pytest.raises(ValueError):
        r.mass_of_prefix(0.3)
    # same (seed, replica) reproduces; different replica differs
    r2 = build_realization(LOGN, g, seed=42, replica=3)
    np.testing.assert_array_equal(r.cell_masses, r2.cell_masses)
    r3 = build_realization(LOGN, g, seed=42, replica=4)
    assert not np.array_equal(r.cell_masses, r3.cell_masses)


def test_degenerate_model_warns():
    g = GridSpec((0.0, 1.0), 3, 1)
    with pytest.warns(UserWarning, match="degenerate"):
        build_realization(lognormal_model(2.5), g, seed=0)


@pytest.mark.parametrize("model,kind", [(LOGN, "gaussian"), (ATOM, "poisson")])
def test_star_identity_is_exact(model, kind):
    g = GridSpec((0.0, 1.0), 5, 2)
    for replica in range(5):
        r = build_realization(model, g, seed=7, replica=replica)
        assert r.kind == kind
        for level in (1, 2, 3):
            star = decompose_star(r, level)
            recon = star.reconstruct_total()
            assert recon == pytest.approx(r.total_mass, rel=1e-12)
            assert len(star.subs) == 2 ** level
            for sub in star.subs:
                assert sub.grid.levels == g.levels - level
                assert sub.total_mass > 0


def test_star_requires_carried_level_and_field():
    g = GridSpec((0.0, 1.0), 5, 2, 0)
    r = build_realization(LOGN, g, seed=1)
    with pytest.raises(ValueError, match="carry"):
        decompose_star(r, 1)
    g2 = GridSpec((0.0, 1.0), 5, 2)
    r2 = build_realization(LOGN, g2, seed=1)
    r2 = type(r2)(r2.grid, r2.model, r2.kind, r2.cell_masses, r2.weights,
                  r2.total_mass, field=None)
    with pytest.raises(ValueError, match="field"):
        decompose_star(r2, 1)
    with pytest.raises(ValueError, match="range"):
        decompose_star(build_realization(LOGN, g2, seed=1), 9)


def test_star_subcascades_renormalize_weights():
    r = build_realization(ATOM, GridSpec((0.0, 1.0), 4, 2), seed=9)
    star = decompose_star(r, 1)
    # child cell weights divided by the parent weight
    for i, sub in enumerate(star.subs):
        block = r.weights[2].reshape(2, -1)[i]
        np.testing.assert_allclose(sub.weights[1],
                                   block / r.weights[1][i], rtol=1e-13)


@pytest.mark.parametrize("model", [LOGN, ATOM, single_atom_model(-0.4, 0.8, sigma2=0.2)])
def test_batch_chunking_is_invisible(model):
    g = GridSpec((0.0, 1.0), 4, 2, 0)
    sim = BatchSimulator(model, g)
    a = np.vstack([pl for _, pl in sim.chunks(5, 13, chunk=3)])
    b = np.vstack([pl for _, pl in sim.chunks(5, 13, chunk=16)])
    c = np.vstack([pl for _, pl in sim.chunks(5, 13, chunk=3)])
    # same chunking replays bit-identically; a different chunk size only
    # moves the BLAS accumulation order, so it agrees to the last ulp or so
    np.testing.assert_array_equal(a, c)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


def test_simulate_total_masses_matches_single_builds():
    g = GridSpec((0.0, 1.0), 4, 2, 0)
    z = simulate_total_masses(LOGN, g, 11, 4, chunk=2)
    for i in range(4):
        r = build_realization(LOGN, GridSpec((0.0, 1.0), 4, 2), seed=11,
                              replica=i)
        assert z[i] == pytest.approx(r.total_mass, rel=1e-12)


def test_prefix_masses_columns_are_nested():
    g = GridSpec((0.0, 1.0), 5, 2, 0)
    m = simulate_prefix_masses(LOGN, g, 3, 50, [0.25, 0.5, 1.0])
    assert m.shape == (50, 3)
    assert np.all(m[:, 0] <= m[:, 1] + 1e-15)
    assert np.all(m[:, 1] <= m[:, 2] + 1e-15)
    with pytest.raises(ValueError):
        simulate_prefix_masses(LOGN, g, 3, 5, [0.3])


def test_refine_poisson_keeps_old_points():
    g = GridSpec((0.0, 1.0), 4, 2)
    r = build_realization(ATOM, g, seed=21)
    fine = refine(r, 2, make_generator(21, 0, "refine-test"))
    assert fine.grid.levels == 6
    old, new = r.field, fine.field
    n_old = old.points_x.size
    np.testing.assert_array_equal(new.points_x[:n_old], old.points_x)
    np.testing.assert_array_equal(new.points_jump[:n_old], old.points_jump)
    added_y = new.points_y[n_old:]
    assert np.all(added_y >= fine.grid.eps)
    assert np.all(added_y < g.eps)
    assert refine(r, 0, None) is r
    with pytest.raises(ValueError):
        refine(r, -1, None)


@pytest.mark.parametrize("model", [LOGN, ATOM])
def test_refine_matches_direct_law(model):
    # mean and variance of the refined total vs directly simulated totals
    g = GridSpec((0.0, 1.0), 3, 2, 0 if model is ATOM else None)
    n = 600
    rng = make_generator(77, 0, "refine-law")
    refined = np.empty(n)
    for i in range(n):
        r = build_realization(model, g, seed=77, replica=i)
        refined[i] = refine(r, 2, rng).total_mass
    direct = simulate_total_masses(model, GridSpec((0.0, 1.0), 5, 2, 0),
                                   78, n)
    for q in (1.0, 2.0):
        a, b = refined ** q, direct ** q
        se = math.hypot(a.std() / math.sqrt(n), b.std() / math.sqrt(n))
        assert abs(a.mean() - b.mean()) < 3.5 * se


@pytest.mark.parametrize("model", [LOGN, ATOM])
def test_juxtaposed_covariance_matches_quadrature(model):
    g = GridSpec((0.0, 1.0), 6, 2, 0)
    reps = 6000
    masses = juxtaposed_total_masses(model, g, 3, 13, reps)
    assert masses.shape == (reps, 3)
    cov_quad, _ = juxtaposed_pair_moment(model, 1)
    x, y = masses[:, 0], masses[:, 1]
    prod = x * y
    est = prod.mean() - x.mean() * y.mean()
    se = prod.std() / math.sqrt(reps)
    assert abs(est - cov_quad) < 3.5 * se
    # stationarity: the two adjacent pairs agree
    est2 = (masses[:, 1] * masses[:, 2]).mean() - \
        masses[:, 1].mean() * masses[:, 2].mean()
    assert abs(est2 - cov_quad) < 3.5 * se


def test_scaled_mass_samples_validation():
    g = GridSpec((0.0, 1.0), 5, 2, 0)
    with pytest.raises(ValueError):
        scaled_mass_samples(LOGN, g, 0.3, 1, 10)
    with pytest.raises(ValueError):
        scaled_mass_samples(LOGN, g, 2.0 ** -5, 1, 10)
    out = scaled_mass_samples(LOGN, g, 0.25, 1, 16)
    assert out.shape == (16,)
    assert np.all(out > 0)


def test_sample_area_log_zero_area_and_mean_one():
    rng = make_generator(1, 0, "area")
    assert sample_area_log(ATOM, 0.0, rng) == 0.0
    v = sample_area_log(ATOM, math.log(2.0), rng, size=50_000)
    q = np.exp(v)
    assert abs(q.mean() - 1.0) < 4.0 * q.std() / math.sqrt(q.size)
    with pytest.raises(ValueError):
        sample_area_log(ATOM, -1.0, rng)


def test_model_digest_distinguishes_models():
    assert model_digest(LOGN) == model_digest(lognormal_model(0.5))
    assert model_digest(LOGN) != model_digest(lognormal_model(0.6))
    assert model_digest(ATOM) != model_digest(LOGN)
    assert len(model_digest(ATOM)) == 16


def test_binary_roundtrip(tmp_path):
    r = build_realization(LOGN, GridSpec((0.0, 1.0), 5, 2), seed=2)
    path = tmp_path / "r.bin"
    realization_to_binary(r, path)
    levels, oversample, digest, masses = read_binary_masses(path)
    assert (levels, oversample) == (5, 2)
    assert digest == model_digest(LOGN)
    np.testing.assert_array_equal(masses, r.cell_masses)

    with open(path, "rb") as fh:
        blob = bytearray(fh.read())
    blob[:4] = b"XXXX"
    bad = tmp_path / "bad.bin"
    bad.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="dump"):
        read_binary_masses(bad)
    short = tmp_path / "short.bin"
    with open(path, "rb") as fh:
        short.write_bytes(fh.read()[:-8])
    with pytest.raises(ValueError, match="length"):
        read_binary_masses(short)


def test_csv_export(tmp_path):
    r = build_realization(LOGN, GridSpec((0.0, 1.0), 3, 2), seed=2)
    path = tmp_path / "r.csv"
    realization_to_csv(r, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "cell_index,cell_lo,cell_hi,mass"
    assert len(lines) == 1 + 8
    idx, lo, hi, mass = lines[1].split(",")
    assert (int(idx), float(lo), float(hi)) == (0, 0.0, 0.125)
    assert float(mass) == pytest.approx(r.cell_masses[0], rel=1e-15)
