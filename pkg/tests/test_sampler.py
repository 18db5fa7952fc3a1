import math

import numpy as np
import pytest
from scipy import integrate, stats

from gradlab.elliptic import green, quad_form
from gradlab.lattice import Ball, FieldConfig, build_square, path_domain
from gradlab.potential import Potential, builtin_cos_perturbed, builtin_quadratic
from gradlab.sampler import (BoundaryCondition, ChainState, SamplerError, default_schedule,
                             event_M_indicator, exact_gaussian_sample, heat_bath_sweep, read_snapshot,
                             sample_batch, write_snapshot)

COS = builtin_cos_perturbed(0.5)
QUAD = builtin_quadratic()


def _single_site_cdf(p, x):
    # one free vertex with four zero neighbours: density ∝ exp(−4 V(t))
    w = lambda t: math.exp(-4 * float(p.eval(np.array([t]))[0]))
    z = integrate.quad(w, -15, 15)[0]
    return np.array([integrate.quad(w, -15, xi)[0] / z for xi in x])


@pytest.mark.parametrize("moves", ["site", "multilevel"])
def test_single_site_conditional_exact(moves):
    d = build_square(1)
    b = sample_batch(d, None, COS, 3000, burn_in=1, thinning=1, seed=3, moves=moves)
    x = b.observables["phi0"]
    grid = np.sort(x)
    ks = np.max(np.abs(_single_site_cdf(COS, grid) - (np.arange(1, x.size + 1) / x.size)))
    assert ks < 1.63 / math.sqrt(x.size)  # 1% critical value


def test_numpy_fallback_potential():
    # a potential outside the compiled family goes through the vectorized sweep
    # V = t²/2 + c(t² − 1 + 1/(1+t²)) is uniformly convex with V'' ≥ 1
    c = 0.05
    q = Potential("rational", lambda t: 0.5 * t ** 2 + c * (t ** 2 - 1 + 1 / (1 + t ** 2)),
                  lambda t: t + c * (2 * t - 2 * t / (1 + t ** 2) ** 2),
                  lambda t: 1 + c * (2 + (6 * t ** 2 - 2) / (1 + t ** 2) ** 3), 1.0, 1.3, 1.0)
    d = build_square(1)
    b = sample_batch(d, None, q, 2000, burn_in=1, thinning=1, seed=5, moves="site")
    x = np.sort(b.observables["phi0"])
    ks = np.max(np.abs(_single_site_cdf(q, x) - np.arange(1, x.size + 1) / x.size))
    assert ks < 1.63 / math.sqrt(x.size)
    with pytest.raises(SamplerError):
        sample_batch(d, None, q, 10, moves="multilevel")


def test_envelope_violation_detected():
    bad = Potential("cos_perturbed", COS.eval, COS.d1, COS.d2, 0.9, 1.5, 0.5, cos_eps=0.5)
    with pytest.raises(SamplerError):
        sample_batch(build_square(4), None, bad, 50, burn_in=10, thinning=1, seed=0)


def test_quadratic_mcmc_matches_green():
    d = build_square(4)
    b = sample_batch(d, None, QUAD, 4000, burn_in=50, thinning=2, seed=1)
    x = b.observables["phi0"]
    g = green(d, (0, 0))[d.index((0, 0))]
    se = np.var(x) * math.sqrt(2 / b.ess["phi0"])
    assert abs(np.var(x) - g) < 4 * se


@pytest.mark.parametrize("domain", [build_square(6), Ball((0, 0), 5.5), path_domain(4)])
def test_exact_sampler_covariance(domain):
    b = exact_gaussian_sample(domain, None, 20000, seed=2)
    v = b.values[:, domain.interior_mask]
    emp = np.cov(v.T)
    # exact covariance from Green columns
    X, Y = domain.coords
    pts = list(zip(X[domain.interior_mask], Y[domain.interior_mask]))
    G = np.array([green(domain, (int(a), int(c)))[domain.interior_mask] for a, c in pts])
    se = np.sqrt((G ** 2 + np.outer(np.diag(G), np.diag(G))) / v.shape[0])
    assert np.max(np.abs(emp - G) / se) < 5.0
    assert np.all(b.values[:, domain.boundary_mask] == 0)


def test_exact_sampler_boundary_mean():
    d = build_square(3)
    bc = BoundaryCondition.explicit(d, lambda X, Y: 0.5 * X + 0.25 * Y)
    b = exact_gaussian_sample(d, bc, 4000, seed=0)
    m = b.values.mean(axis=0)
    X, Y = d.coords
    assert np.max(np.abs(m - (0.5 * X + 0.25 * Y))) < 0.1
    assert np.all(b.values[:, d.boundary_mask] == (0.5 * X + 0.25 * Y)[d.boundary_mask])


def test_boundary_held_fixed_in_mcmc():
    d = build_square(3)
    bc = BoundaryCondition.explicit(d, lambda X, Y: np.sin(X + Y))
    b = sample_batch(d, bc, COS, 20, burn_in=5, thinning=1, seed=0)
    assert np.all(b.values[:, d.boundary_mask] == bc.values[d.boundary_mask])


def test_determinism_and_seeds():
    d = build_square(5)
    a = sample_batch(d, None, COS, 30, burn_in=10, thinning=2, seed=9).values
    b = sample_batch(d, None, COS, 30, burn_in=10, thinning=2, seed=9).values
    c = sample_batch(d, None, COS, 30, burn_in=10, thinning=2, seed=10).values
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_chains_and_threads(monkeypatch):
    d = build_square(4)
    one = sample_batch(d, None, COS, 40, burn_in=10, thinning=1, seed=4, n_chains=2).values
    monkeypatch.setenv("GRADLAB_THREADS", "2")
    two = sample_batch(d, None, COS, 40, burn_in=10, thinning=1, seed=4, n_chains=2).values
    assert np.array_equal(one, two)


def test_heat_bath_sweep_updates_interior_only():
    d = build_square(3)
    st = ChainState(FieldConfig(d, d.zeros()), 0, np.random.default_rng(0))
    heat_bath_sweep(st, COS)
    assert st.sweep_count == 1
    assert np.all(st.field.values[d.boundary_mask] == 0)
    assert np.all(st.field.values[d.interior_mask] != 0)


def test_schedule_warning_and_ess():
    d = build_square(4)
    b = sample_batch(d, None, COS, 20, seed=0)
    assert (b.burn_in, b.thinning) == default_schedule(d, "multilevel")
    assert b.warnings
    assert 0 < b.ess["phi0"] <= 20


def test_observer_called():
    d = build_square(3)
    b = sample_batch(d, None, COS, 100, burn_in=5, thinning=1, seed=0,
                     observe=lambda s: {"sum": s.sum(axis=(1, 2))}, store=False)
    assert b.values is None
    assert b.observables["sum"].shape == (100,)


def test_snapshot_roundtrip(tmp_path):
    v = np.random.default_rng(0).standard_normal((3, 9, 9))
    p = tmp_path / "s.grdf"
    write_snapshot(p, v, 4)
    raw = p.read_bytes()
    assert raw[:4] == b"GRDF" and len(raw) == 16 + 3 * 81 * 8
    N, w = read_snapshot(p)
    assert N == 4 and np.array_equal(v, w)
    (tmp_path / "bad").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "bad")


def test_boundary_condition_checks():
    d = build_square(8)
    bc = BoundaryCondition.explicit(d, np.full(d.shape, 3.0))
    assert bc.max_abs == 3.0
    assert bc.within_decoupling_range(8) == (3.0 <= 2 * math.log(8) ** 2)
    assert not BoundaryCondition.explicit(d, np.full(d.shape, 20.0)).within_decoupling_range(8)
    with pytest.raises(ValueError):
        BoundaryCondition(d, np.ones(d.shape), "zero")


def test_event_indicator():
    d = build_square(3)
    v = d.zeros()
    v[3, 3] = 1.5
    assert event_M_indicator(FieldConfig(d, v), 4.0) == (1.5 < math.log(4) ** 2)
