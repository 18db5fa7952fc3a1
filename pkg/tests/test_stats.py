import numpy as np

from gradlab.stats import ess, integrated_autocorr_time, jackknife, mean_se, wilson_interval


def test_iid_autocorr():
    x = np.random.default_rng(0).standard_normal(20000)
    assert abs(integrated_autocorr_time(x) - 0.5) < 0.05
    assert ess(x) > 15000


def test_ar1_autocorr():
    # AR(1) with coefficient a has tau_int = (1 + a) / (2 (1 - a))
    rng = np.random.default_rng(1)
    a, n = 0.8, 200000
    x = np.empty(n)
    x[0] = 0
    z = rng.standard_normal(n)
    for i in range(1, n):
        x[i] = a * x[i - 1] + z[i]
    assert abs(integrated_autocorr_time(x) - 4.5) < 0.5
    m, se = mean_se(x)
    assert se > mean_se(x, correlated=False)[1] * 2.5


def test_jackknife_variance():
    x = np.random.default_rng(2).standard_normal(10000)
    v, se = jackknife(lambda d: np.var(d, ddof=1), x)
    assert abs(v - 1) < 4 * se


def test_wilson():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0 and 0 < hi < 0.05
