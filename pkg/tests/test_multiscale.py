import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradlab.lattice import Ball, DomainError, FieldConfig, build_square
from gradlab.multiscale import (ProcessEvaluator, ScaleLadder, check_harmonic_annihilation, circle_average,
                                circle_weights, coupling_probe, export_process_csv, export_weights_csv,
                                radius_window, rho_weights, window_report, window_weights, x_process)
from gradlab.potential import builtin_quadratic
from gradlab.sampler import BoundaryCondition, exact_gaussian_sample
from oracles import ball_vertices, exit_distribution, sparse_quad_form, square_vertices, window_rho

# ρGρ for A_1 at N = 64 (windows {8, 9} and {18, 19}), from tests/oracles.py
VAR_A1_N64 = 0.11461588160988526
# A_2 at N = 64 uses the single radii {3} and {6}
VAR_A2_N64 = 0.10759249838343794


def test_ladder():
    lad = ScaleLadder(64)
    assert lad.r(1) == pytest.approx(64 / math.e)
    assert lad.k_max == 2
    assert lad.r_minus(1) < lad.r(1) < lad.r_plus(1)
    with pytest.raises(ValueError):
        ScaleLadder(4)
    with pytest.raises(ValueError):
        ScaleLadder(64, gamma=1.0)


def test_windows_n64():
    lad = ScaleLadder(64)
    w = window_report(1, lad)
    assert w["X_r"].radii == (23, 24)
    assert w["X_minus"].radii == (18, 19)
    assert w["X_next"].radii == (8, 9)
    w2 = window_report(2, lad)
    assert w2["X_minus"].radii == (6,) and w2["X_next"].radii == (3,)


def test_window_fallback():
    w = radius_window(3.4, 3.4, 0.9)
    assert w.fallback and w.radii == (3,)


@given(st.floats(2.0, 200.0), st.floats(0.1, 0.9))
@settings(max_examples=50, deadline=None)
def test_window_contains_its_radii(c, g):
    w = radius_window(c, c, g)
    assert all(w.lo <= r <= w.hi for r in w.radii) or w.fallback
    assert w.weight * len(w.radii) == pytest.approx(1.0)


@pytest.mark.parametrize("R", [2.0, 3.5, 7.0])
def test_circle_weights_oracle(R):
    got = circle_weights((0, 0), R).as_dict()
    ref = exit_distribution(ball_vertices(R), (0, 0))
    assert set(got) == {k for k, v in ref.items() if v > 0}
    assert max(abs(got[k] - ref[k]) for k in got) < 1e-12


def test_circle_average_of_harmonic_function():
    d = build_square(12)
    X, Y = d.coords
    h = 2.0 + X - 3 * Y + X * Y
    f = FieldConfig(d, h)
    assert circle_average(f, (1, -2), 6.5) == pytest.approx(h[d.index((1, -2))], abs=1e-9)


def test_window_weights_translate():
    a = window_weights((0, 0), 10.0, 10.0, 0.5).as_dict()
    b = window_weights((3, -1), 10.0, 10.0, 0.5).as_dict()
    assert {(x + 3, y - 1): v for (x, y), v in a.items()} == pytest.approx(b)


def test_rho_oracle_and_variance():
    lad = ScaleLadder(64)
    rho = rho_weights((0, 0), 1, lad)
    ref = window_rho([8, 9], [18, 19])
    got = rho.weights.as_dict()
    assert max(abs(got.get(k, 0) - v) for k, v in ref.items()) < 1e-12
    assert rho.positive_sum == pytest.approx(1.0) and rho.negative_sum == pytest.approx(1.0)
    ev = ProcessEvaluator(build_square(64), lad, [1, 2])
    assert ev.gaussian_variance("A_1") == pytest.approx(VAR_A1_N64, abs=1e-9)
    assert ev.gaussian_variance("A_2") == pytest.approx(VAR_A2_N64, abs=1e-9)


def test_markov_property_of_increment():
    # ρ kills harmonic functions, so Var(A_1) is the same on Q_64 and on the ball B_{r_1}
    lad = ScaleLadder(64)
    b = Ball((0, 0), lad.r(1))
    ev = ProcessEvaluator(b, lad, [1])
    assert ev.gaussian_variance("A_1") == pytest.approx(VAR_A1_N64, abs=1e-9)


@pytest.mark.parametrize("k", [1, 2])
def test_harmonic_annihilation(k):
    rep = check_harmonic_annihilation(rho_weights((0, 0), k, ScaleLadder(64)), trials=20)
    assert rep.ok and rep.max_ratio < 1e-10


def test_x_process_consistency():
    d = build_square(32)
    lad = ScaleLadder(32)
    b = exact_gaussian_sample(d, None, 5, seed=0)
    ev = ProcessEvaluator(d, lad, [0, 1])
    obs = ev(b.values)
    for i, c in enumerate(b.configs):
        s = x_process(c, (0, 0), 1, lad)
        assert s.A == pytest.approx(obs["A_1"][i], abs=1e-10)
        assert s.E == pytest.approx(s.X_r - s.X_minus)
    assert ev.zero_extended  # the X_r window at k = 0 leaves Q_32


def test_nonzero_boundary_rejects_leaving_windows():
    with pytest.raises(DomainError):
        ProcessEvaluator(build_square(32), ScaleLadder(32), [0], zero_boundary=False)


def test_coupling_probe_gaussian():
    d = build_square(16)
    rng = np.random.default_rng(0)
    f = BoundaryCondition.explicit(d, rng.uniform(-1, 1, d.shape))
    rep = coupling_probe(d, f, builtin_quadratic(), 1, 400, seed=1, n_boot=99)
    assert 0 <= rep.ks_stat <= 1 and rep.bootstrap_pvalue > 0.001
    with pytest.raises(ValueError):
        coupling_probe(d, BoundaryCondition.explicit(d, np.full(d.shape, 50.0)), builtin_quadratic(), 1, 10)


def test_exports(tmp_path):
    export_weights_csv(tmp_path / "w.csv", circle_weights((0, 0), 2.0))
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "x,y,value" and len(lines) == 13
    obs = {f"{c}_1": np.arange(3.0) for c in ["X_r", "X_plus", "X_minus", "X_next", "A", "E"]}
    export_process_csv(tmp_path / "p.csv", 7, obs, [1])
    assert (tmp_path / "p.csv").read_text().splitlines()[1].startswith("7,0,1,")
