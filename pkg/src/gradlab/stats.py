"""Monte Carlo error bars for correlated and independent series."""
from __future__ import annotations

import math

import numpy as np
from scipy import stats as _st


def integrated_autocorr_time(x: np.ndarray, c: float = 5.0) -> float:
    """τ_int = ½ + Σ_k ρ(k) with Sokal's automatic window (iid ⇒ ½)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return 0.5
    y = x - x.mean()
    var = float(np.dot(y, y)) / n
    if var == 0.0:
        return 0.5
    f = np.fft.rfft(y, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    tau = 0.5
    for k in range(1, n):
        tau += acf[k]
        if k >= c * tau:
            break
    return float(max(tau, 0.5))


def ess(x: np.ndarray) -> float:
    x = np.asarray(x)
    if x.size == 0:
        return 0.0
    return float(min(x.size, x.size / (2.0 * integrated_autocorr_time(x))))


def mean_se(x: np.ndarray, correlated: bool = True) -> tuple[float, float]:
    """Sample mean and its standard error (autocorrelation-corrected if asked)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        return float(x.mean()) if n else float("nan"), float("inf")
    n_eff = ess(x) if correlated else n
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(max(n_eff, 1.0)))


def block_size(x: np.ndarray) -> int:
    """Block length covering the correlation time of a series (≥ 1)."""
    return max(1, int(math.ceil(2.0 * integrated_autocorr_time(x))))


def jackknife(stat, data: np.ndarray, blocks: int = 50, block_len: int | None = None) -> tuple[float, float]:
    """Blocked jackknife estimate and standard error of ``stat(data)``.

    ``data`` is indexed by sample along axis 0; contiguous blocks keep
    autocorrelated MCMC output honest.
    """
    data = np.asarray(data)
    n = data.shape[0]
    if block_len is not None:
        blocks = max(2, n // max(block_len, 1))
    blocks = int(min(blocks, n))
    edges = np.linspace(0, n, blocks + 1).astype(int)
    full = stat(data)
    reps = []
    for a, b in zip(edges[:-1], edges[1:]):
        keep = np.concatenate([data[:a], data[b:]])
        reps.append(stat(keep))
    reps = np.asarray(reps, dtype=float)
    se = math.sqrt((blocks - 1) / blocks * float(np.sum((reps - reps.mean(axis=0)) ** 2, axis=0)))
    return float(full), se


def block_bootstrap_indices(n: int, block_len: int, rng: np.random.Generator) -> np.ndarray:
    """Moving-block bootstrap resample of indices 0..n-1."""
    block_len = max(1, min(block_len, n))
    k = int(math.ceil(n / block_len))
    starts = rng.integers(0, n - block_len + 1, size=k)
    idx = (starts[:, None] + np.arange(block_len)[None, :]).ravel()
    return idx[:n]


def wilson_interval(successes: int, n: int, alpha: float = 0.05) -> tuple[float, float]:
    from statsmodels.stats.proportion import proportion_confint

    lo, hi = proportion_confint(successes, n, alpha=alpha, method="wilson")
    return float(lo), float(hi)


def ks_two_sample(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    r = _st.ks_2samp(a, b)
    return float(r.statistic), float(r.pvalue)
