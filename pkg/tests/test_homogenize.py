import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradlab.elliptic import quad_form
from gradlab.homogenize import (EnergyCube, LinearStatistic, QuenchedCoefficient, annulus_statistic,
                                build_fR_from_rho, centered_cube, coefficient_ensemble, edge_divergence,
                                estimate_g, fit_quadratic, flux_concentration, homog_rows, mc_variance,
                                nu_direct, phi_R, quenched_corrector, statistic_variance,
                                subadditivity_and_quadratic_check, two_scale_residual)
from gradlab.lattice import Ball, FieldConfig, build_square
from gradlab.multiscale import ScaleLadder, rho_weights
from gradlab.potential import builtin_cos_perturbed, builtin_quadratic
from gradlab.sampler import exact_gaussian_sample


def _random_coef(seed, N=14, lam=0.5, Lam=1.5):
    rng = np.random.default_rng(seed)
    n = 2 * N + 1
    return QuenchedCoefficient((-N, -N), rng.uniform(lam, Lam, (n - 1, n)), rng.uniform(lam, Lam, (n, n - 1)),
                               lam, Lam)


def test_edge_divergence_summation_by_parts():
    rng = np.random.default_rng(0)
    phi = rng.standard_normal((6, 5))
    fx, fy = rng.standard_normal((5, 5)), rng.standard_normal((6, 4))
    lhs = np.sum(np.diff(phi, axis=0) * fx) + np.sum(np.diff(phi, axis=1) * fy)
    assert np.sum(phi * edge_divergence(fx, fy)) == pytest.approx(lhs)


def test_linear_statistic_representation():
    d = build_square(12)
    stat = annulus_statistic(d, 10.0)
    phi = np.where(d.interior_mask, np.random.default_rng(1).standard_normal(d.shape), 0.0)
    assert phi_R(stat, FieldConfig(d, phi)) == pytest.approx(stat(phi)[stat.name][0])
    assert stat.gaussian_variance() == pytest.approx(quad_form(d, stat.vertex_weights()))
    with pytest.raises(ValueError):
        LinearStatistic(d, stat.fx[:-1], stat.fy, 10.0)


def test_fR_from_rho():
    lad = ScaleLadder(64)
    ball = Ball((0, 0), lad.r(1))
    rho = rho_weights((0, 0), 1, lad)
    stat = build_fR_from_rho(ball, rho)
    w, _ = rho.weights.on(ball)
    assert np.max(np.abs(stat.vertex_weights() - w)[ball.interior_mask]) < 1e-9


def test_mc_variance_iid():
    x = np.random.default_rng(0).normal(0, 2, 20000)
    v = mc_variance(x, correlated=False)
    assert abs(v.estimate - 4) < 4 * v.standard_error
    assert not v.flagged
    assert mc_variance(x[:12], correlated=True).ess <= 12


def test_statistic_variance_gaussian():
    d = build_square(16)
    stat = annulus_statistic(d, 14.0)
    b = exact_gaussian_sample(d, None, 4000, seed=3, observe=stat, store=False)
    v = statistic_variance(stat, b)
    assert abs(v.estimate - stat.gaussian_variance()) < 4 * v.standard_error


def test_estimate_g_quadratic():
    rep = estimate_g(builtin_quadratic(), [32, 64], k=1, samples=3000, seed=2)
    for e in rep.entries:
        assert abs(e.g_hat - e.gaussian) < 4 * e.se
        assert e.lower == e.upper == pytest.approx(e.gaussian)
    with pytest.raises(ValueError):
        estimate_g(builtin_quadratic(), [64, 32])


def test_constant_coefficient_exact():
    a = QuenchedCoefficient.constant((-14, -14), (29, 29), 0.7)
    cube = centered_cube(3)
    r = quenched_corrector(a, cube, (1.0, -2.0))
    assert r.nu == pytest.approx(0.5 * 0.7 * 5)
    assert np.allclose(r.ahom, 0.7 * np.eye(2))
    assert np.allclose(r.flux_avg, [0.7, -1.4])
    ts = two_scale_residual(a, cube)
    assert ts.residual_two_scale < 1e-10


def test_energy_cube_geometry():
    c = EnergyCube((0, 0), 2)
    assert c.side == 9 and c.volume == 81
    kids = c.children(1)
    assert len(kids) == 9 and {k.corner for k in kids} == {(3 * i, 3 * j) for i in range(3) for j in range(3)}
    with pytest.raises(ValueError):
        c.children(3)


@given(st.integers(0, 1000))
@settings(max_examples=8, deadline=None)
def test_quadratic_and_subadditive(seed):
    a = _random_coef(seed)
    rep = subadditivity_and_quadratic_check(a, [1, 2, 3])
    assert rep.quad_residual < 1e-8
    assert rep.constant_term < 1e-8
    assert rep.polarization_gap < 1e-8
    assert rep.subadditivity_min_gap >= -1e-12
    for lo, hi in rep.spectrum.values():
        assert 0.5 - 1e-12 <= lo <= hi <= 1.5 + 1e-12


def test_nu_linearity_shortcut():
    a = _random_coef(7)
    cube = centered_cube(2)
    for p in [(1, 0), (0.3, -2.0)]:
        assert quenched_corrector(a, cube, p).nu == pytest.approx(nu_direct(a, cube, p), rel=1e-9)


def test_arithmetic_mean_upper_bound():
    # the affine function is admissible, so ā₁₁ ≤ weighted mean of x-conductances
    a = _random_coef(3)
    cube = centered_cube(2)
    r = quenched_corrector(a, cube, (1, 0))
    s = cube.side
    i0, j0 = cube.corner[0] + 14, cube.corner[1] + 14
    cx = a.ax[i0:i0 + s, j0:j0 + s + 1].copy()
    cx[:, [0, -1]] *= 0.5
    assert r.ahom[0, 0] <= cx.sum() / cube.volume + 1e-12


def test_fit_quadratic_exact():
    P = [(1, 0), (0, 1), (1, 1), (2, -1), (0, 0), (-1, 2), (3, 1)]
    M0 = np.array([[2.0, 0.3], [0.3, 1.0]])
    vals = [0.5 * np.array(p) @ M0 @ np.array(p) + 0.1 for p in P]
    M, c, b, r = fit_quadratic(P, vals)
    assert np.allclose(M, M0) and c == pytest.approx(0.1) and r < 1e-12


def test_quadratic_potential_ensemble_is_constant():
    ens = coefficient_ensemble(builtin_quadratic(), 3, levels_max=2)
    assert all(np.all(a.ax == 1.0) for a in ens)
    rows = homog_rows(ens, [1, 2])
    assert all(r["flux_var"] == pytest.approx(0, abs=1e-20) for r in rows)
    assert all(r["ahom_xx"] == pytest.approx(1.0) for r in rows)


def test_cos_ensemble_small():
    ens = coefficient_ensemble(builtin_cos_perturbed(0.5), 4, levels_max=2, seed=1, burn_in=20, thinning=2)
    fr = flux_concentration(ens, 2)
    assert fr.n == 4 and fr.variance >= 0
    assert 0.5 <= fr.mean[0] <= 1.5
