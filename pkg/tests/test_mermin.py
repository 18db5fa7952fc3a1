import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradlab.lattice import Ball, VertexSetDomain, build_square, path_domain
from gradlab.mermin import (CircleDensity, arc_masses, certified_bound, char_integral, check_ratio_condition,
                            density_perturbation_check, make_tau, wrapped_gaussian, wrapped_gaussian_charfn)
from gradlab.potential import builtin_cos_perturbed, builtin_quadratic
from oracles import wrapped_normal_charfn_series


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_continuous_tau_energy_is_scale_free(k):
    # layers d → d+1 of the diamond carry 8d + 4 edges, each with slope b / 2^{k-1}
    tau = make_tau(k, 0.7, build_square(2 ** k + 2))
    assert tau.energy == pytest.approx(12 * 0.7 ** 2)
    X, Y = tau.domain.coords
    d = np.abs(X) + np.abs(Y)
    assert np.all(tau.values[d <= 2 ** (k - 1)] == 0.7) and np.all(tau.values[d >= 2 ** k] == 0)


def test_literal_tau():
    tau = make_tau(3, 1.0, build_square(10), form="literal")
    assert tau.energy_constant == pytest.approx(16.5)
    with pytest.raises(ValueError):
        make_tau(3, 1.0, build_square(10), form="nope")
    with pytest.raises(ValueError):
        make_tau(4, 1.0, build_square(10))


def test_perturbation_identity_quadratic():
    for dom in (path_domain(3), VertexSetDomain(frozenset({(0, 0), (1, 0), (0, 1), (1, 1)}))):
        tau = make_tau(1, 0.8, dom)
        rep = density_perturbation_check(builtin_quadratic(), dom, tau, n_quadrature=21)
        assert rep.identity_residual < 1e-10
        assert rep.worst_ratio == pytest.approx(1.0, abs=1e-10)


def test_perturbation_bound_cos():
    dom = path_domain(3)
    rep = density_perturbation_check(builtin_cos_perturbed(0.5), dom, make_tau(1, 1.0, dom), n_quadrature=41)
    assert rep.holds and rep.C == pytest.approx(1.5 * rep.energy)
    with pytest.raises(ValueError):
        density_perturbation_check(builtin_quadratic(), build_square(2), np.zeros((5, 5)))


@pytest.mark.parametrize("kappa,mu", [(0.3, 0.0), (1.0, 1.0), (5.0, -2.0), (40.0, 0.5)])
def test_wrapped_gaussian_charfn(kappa, mu):
    f = wrapped_gaussian(kappa, mu)
    assert f.mass == pytest.approx(1.0, abs=1e-10)
    ci = char_integral(f)
    assert abs(ci.value - wrapped_gaussian_charfn(kappa, mu)) < 1e-10
    assert abs(wrapped_normal_charfn_series(kappa, mu) - wrapped_gaussian_charfn(kappa, mu)) < 1e-8


@given(st.floats(0.05, 20.0), st.floats(0.3, 3.0))
@settings(max_examples=25, deadline=None)
def test_ratio_condition_sufficient(kappa, t):
    # the wrapped normal satisfies f(a+b) f(a−b) ≥ e^{−C b²/t²} f(a)² once κ ≤ C/t²
    f = wrapped_gaussian(kappa, n=1024)
    assert check_ratio_condition(f, t, 1.001 * kappa * t * t) <= 1e-9


@pytest.mark.parametrize("kappa", [2.0, 5.0, 30.0])
def test_ratio_condition_sharp_without_wrapping(kappa):
    # with little wrapping the condition is tight at κ = C/t²
    f = wrapped_gaussian(kappa, n=1024)
    assert check_ratio_condition(f, 1.0, 0.9 * kappa) > 1e-9


def test_certified_bound_family():
    for C in (0.5, 1.0, 2.0):
        for t in (0.5, 1.0, 2.0, 4.0):
            f = wrapped_gaussian(C / t ** 2)
            cb = certified_bound(f, t, C)
            assert cb.holds and cb.integral <= cb.bound + 1e-6
            assert cb.integral <= cb.empirical_bound + 1e-6
            assert cb.m >= t * t / C


def test_certified_bound_rejects():
    f = wrapped_gaussian(4.0)
    with pytest.raises(ValueError):
        certified_bound(f, 1.0, 1.0)  # ratio condition fails: κ > C/t²
    with pytest.raises(ValueError):
        certified_bound(wrapped_gaussian(0.25), 2.0, 1.0, m=2)  # m below t²/C


def test_circle_density_validation():
    with pytest.raises(ValueError):
        CircleDensity(np.array([1.0, -1.0]))
    f = CircleDensity.from_function(lambda th: 1 + 0.5 * np.cos(th), 512)
    assert char_integral(f).value.real == pytest.approx(0.25, abs=1e-12)
    assert arc_masses(f, 4).sum() == pytest.approx(1.0)
