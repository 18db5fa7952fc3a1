"""Characteristic functions, density estimates and inequality probes for φ(0).

Inputs are sample series (usually ``batch.observables[...]``) so the same
reductions serve MCMC and exact Gaussian batches.  Standard errors account
for autocorrelation through the integrated autocorrelation time unless the
samples are flagged independent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .elliptic import quad_form
from .lattice import Ball, LatticeDomain, Vertex
from .multiscale import ProcessEvaluator, ScaleLadder, rho_weights
from .potential import Potential
from .sampler import exact_gaussian_sample, sample_batch
from .stats import block_bootstrap_indices, block_size, integrated_autocorr_time, mean_se, wilson_interval


def _ess_series(x: np.ndarray, correlated: bool) -> float:
    if not correlated:
        return float(x.size)
    return float(min(x.size, x.size / (2 * integrated_autocorr_time(x))))


# ----------------------------------------------------------------- characteristic functions


@dataclass
class CharFnEstimate:
    t_grid: np.ndarray
    values: np.ndarray
    se_re: np.ndarray
    se_im: np.ndarray
    n_eff: float
    scale: float

    @property
    def se(self) -> np.ndarray:
        return np.hypot(self.se_re, self.se_im)

    def rows(self) -> list[tuple[float, float, float, float]]:
        return [(float(t), float(v.real), float(v.imag), float(s))
                for t, v, s in zip(self.t_grid, self.values, self.se)]


def char_fn(values: np.ndarray, t_grid, scaling: str = "raw", N: int | None = None,
            correlated: bool = True) -> CharFnEstimate:
    """Ψ(t) = mean of exp(i t x·scale), scale = 1 (raw) or 1/√log N (sqrt_log_N)."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    if scaling == "raw":
        scale = 1.0
    elif scaling == "sqrt_log_N":
        if N is None or N < 2:
            raise ValueError("sqrt_log_N scaling needs N ≥ 2")
        scale = 1.0 / math.sqrt(math.log(N))
    else:
        raise ValueError(f"unknown scaling {scaling!r}")
    t = np.asarray(t_grid, dtype=float)
    vals = np.empty(t.size, dtype=complex)
    se_re, se_im = np.zeros(t.size), np.zeros(t.size)
    for i, ti in enumerate(t):
        c, s = np.cos(ti * scale * x), np.sin(ti * scale * x)
        vals[i] = complex(c.mean(), s.mean())
        if ti != 0.0 and x.size > 1:
            se_re[i] = mean_se(c, correlated)[1]
            se_im[i] = mean_se(s, correlated)[1]
    return CharFnEstimate(t, vals, se_re, se_im, _ess_series(x, correlated), scale)


# ----------------------------------------------------------------- densities


@dataclass
class EmpiricalDensity:
    grid: np.ndarray
    density: np.ndarray
    width: float
    n: int
    method: str
    per_sample: np.ndarray | None = field(default=None, repr=False)

    @property
    def integral(self) -> float:
        if self.method == "histogram":
            return float(np.sum(self.density) * self.width)
        return float(np.trapezoid(self.density, self.grid))


def histogram_density(x: np.ndarray, bins: int | None = None) -> EmpiricalDensity:
    """Histogram with Freedman–Diaconis bin width (grid = bin centers)."""
    x = np.asarray(x, dtype=float)
    edges = np.histogram_bin_edges(x, bins="fd" if bins is None else bins)
    dens, edges = np.histogram(x, bins=edges, density=True)
    return EmpiricalDensity(0.5 * (edges[1:] + edges[:-1]), dens, float(edges[1] - edges[0]), x.size, "histogram")


def _grid_for(x: np.ndarray, pad: float, points: int) -> np.ndarray:
    return np.linspace(x.min() - pad, x.max() + pad, points)


def kde_density(x: np.ndarray, grid: np.ndarray | None = None, bandwidth: float | None = None) -> EmpiricalDensity:
    """Gaussian kernel estimate with bandwidth 1.06 σ̂ n^{-1/5} (renormalized on the grid)."""
    x = np.asarray(x, dtype=float)
    h = 1.06 * x.std(ddof=1) * x.size ** -0.2 if bandwidth is None else float(bandwidth)
    g = _grid_for(x, 6 * h, 1001) if grid is None else np.asarray(grid, dtype=float)
    per = np.exp(-0.5 * ((g[None, :] - x[:, None]) / h) ** 2) / (h * math.sqrt(2 * math.pi))
    dens = per.mean(axis=0)
    return EmpiricalDensity(g, dens, h, x.size, "kde", per)


def _conditional_table(nbrs: np.ndarray, p: Potential, u: np.ndarray) -> np.ndarray:
    """Normalized single-site conditional densities q(u | neighbors), one row per sample."""
    nbrs = np.asarray(nbrs, dtype=float)
    if p.name == "quadratic":
        m = nbrs.mean(axis=1)
        return np.sqrt(2.0 / math.pi) * np.exp(-2.0 * (u[None, :] - m[:, None]) ** 2)
    sd = 1.0 / math.sqrt(4 * p.lam)
    z = np.linspace(-12 * sd, 12 * sd, 801)
    m = nbrs.mean(axis=1)
    loc = m[:, None] + z[None, :]
    h = p.eval(loc[:, :, None] - nbrs[:, None, :]).sum(axis=2)
    h0 = h.min(axis=1, keepdims=True)
    Z = np.trapezoid(np.exp(-(h - h0)), z, axis=1)
    hu = p.eval(u[None, :, None] - nbrs[:, None, :]).sum(axis=2)
    return np.exp(-(hu - h0)) / Z[:, None]


def conditional_density(nbrs: np.ndarray, p: Potential, scale: float = 1.0,
                        grid: np.ndarray | None = None, chunk: int = 512) -> EmpiricalDensity:
    """Rao–Blackwellized density of scale·φ(0) from the neighbor values of each sample.

    Averages the exact conditional density of φ(0) given its four neighbors,
    which is unbiased for the marginal and far smoother than a histogram.
    """
    nbrs = np.asarray(nbrs, dtype=float)
    if grid is None:
        sd = nbrs.mean(axis=1).std() * scale + 1e-12
        grid = np.linspace(-6 * sd, 6 * sd, 241)
    grid = np.asarray(grid, dtype=float)
    u = grid / scale
    per = np.concatenate([_conditional_table(nbrs[i:i + chunk], p, u) / scale
                          for i in range(0, nbrs.shape[0], chunk)])
    return EmpiricalDensity(grid, per.mean(axis=0), float(grid[1] - grid[0]), nbrs.shape[0], "conditional", per)


@dataclass
class GaussianReference:
    g_hat: float
    source: str

    def __post_init__(self):
        if not self.g_hat > 0:
            raise ValueError("reference variance must be positive")

    def density(self, x: np.ndarray) -> np.ndarray:
        return np.exp(-np.asarray(x) ** 2 / (2 * self.g_hat)) / math.sqrt(2 * math.pi * self.g_hat)

    def charfn(self, t: np.ndarray) -> np.ndarray:
        return np.exp(-self.g_hat * np.asarray(t) ** 2 / 2)

    @classmethod
    def from_variance(cls, values: np.ndarray, N: int) -> "GaussianReference":
        """Fallback 𝐠̂: sample variance of φ(0)/√log N."""
        return cls(float(np.var(values, ddof=1) / math.log(N)), "variance_fit")

    @classmethod
    def from_g_report(cls, report) -> "GaussianReference":
        return cls(float(report.entries[-1].g_hat), "estimate_g")


@dataclass
class GapReport:
    sup_gap: float
    argmax: float
    grid: np.ndarray = field(repr=False)
    gap_curve: np.ndarray = field(repr=False)
    band: tuple[float, float]
    se: float
    method: str


def clt_gap(density: EmpiricalDensity, reference: GaussianReference, n_boot: int = 200, seed: int = 0,
            block_len: int = 1) -> GapReport:
    """sup_x |g_N(x) − reference(x)| on the density grid with a block-bootstrap band."""
    curve = np.abs(density.density - reference.density(density.grid))
    i = int(np.argmax(curve))
    boots = []
    if density.per_sample is not None and n_boot > 0:
        rng = np.random.default_rng(seed)
        ref = reference.density(density.grid)
        n = density.per_sample.shape[0]
        for _ in range(n_boot):
            idx = block_bootstrap_indices(n, block_len, rng)
            boots.append(float(np.max(np.abs(density.per_sample[idx].mean(axis=0) - ref))))
    if boots:
        band = (float(np.percentile(boots, 2.5)), float(np.percentile(boots, 97.5)))
        se = float(np.std(boots, ddof=1))
    else:
        band, se = (float("nan"), float("nan")), float("nan")
    return GapReport(float(curve[i]), float(density.grid[i]), density.grid, curve, band, se, density.method)


def sample_gap(values: np.ndarray, reference: GaussianReference, N: int, method: str = "kde",
               nbrs: np.ndarray | None = None, p: Potential | None = None, n_boot: int = 200,
               seed: int = 0, correlated: bool = True) -> GapReport:
    """Gap of φ(0)/√log N from its samples (and neighbor samples for ``method="conditional"``)."""
    scale = 1.0 / math.sqrt(math.log(N))
    x = np.asarray(values, dtype=float) * scale
    bl = block_size(x) if correlated else 1
    sd = math.sqrt(reference.g_hat)
    grid = np.linspace(-5 * sd, 5 * sd, 401)
    if method == "conditional":
        if nbrs is None or p is None:
            raise ValueError("conditional density needs neighbor samples and the potential")
        dens = conditional_density(nbrs, p, scale, grid)
    elif method == "kde":
        dens = kde_density(x, grid)
    elif method == "histogram":
        dens = histogram_density(x)
        return clt_gap(dens, reference, 0)
    else:
        raise ValueError(f"unknown density method {method!r}")
    return clt_gap(dens, reference, n_boot, seed, bl)


@dataclass
class RegimeSplit:
    I_small: float
    I_mid: float
    I_large: float
    err_small: float
    err_mid: float
    err_large: float


def regime_split(cf: CharFnEstimate, reference: GaussianReference, a: float, eps: float, N: int) -> RegimeSplit:
    """∫|Ψ − e^{-𝐠t²/2}| over |t| ≤ a and a ≤ |t| ≤ ε√log N, and ∫|Ψ| beyond (up to the grid end).

    Errors add the trapezoid-vs-coarse quadrature difference and the
    integrated MC standard error.
    """
    t = cf.t_grid
    b = eps * math.sqrt(math.log(N))
    if not (t.min() <= -b and t.max() >= b) and not (t.min() >= 0 and t.max() >= b):
        raise ValueError("t grid does not cover the middle regime")
    diff = np.abs(cf.values - reference.charfn(t))
    tail = np.abs(cf.values)
    at = np.abs(t)
    symmetric_half = t.min() >= 0
    factor = 2.0 if symmetric_half else 1.0

    def integ(y, mask):
        tt, yy = t[mask], y[mask]
        if tt.size < 2:
            return 0.0, 0.0
        full = np.trapezoid(yy, tt)
        coarse = np.trapezoid(yy[::2], tt[::2]) if tt.size > 3 else full
        mc = np.trapezoid(cf.se[mask], tt)
        return factor * full, factor * (abs(full - coarse) + mc)

    s = integ(diff, at <= a)
    m = integ(diff, (at >= a) & (at <= b))
    lg = integ(tail, at >= b)
    return RegimeSplit(s[0], m[0], lg[0], s[1], m[1], lg[1])


# ----------------------------------------------------------------- factorization


@dataclass
class FactorizationRow:
    s: float
    lhs: complex
    rhs_outer: complex
    rhs_inner: complex
    diff: complex
    se: float
    gaussian_diff: float

    @property
    def rhs(self) -> complex:
        return self.rhs_outer * self.rhs_inner

    @property
    def deviation(self) -> float:
        """| |diff| − |Gaussian diff| | in units of the combined SE."""
        gap = abs(abs(self.diff) - abs(self.gaussian_diff))
        if self.se > 0:
            return gap / self.se
        return 0.0 if gap < 1e-12 else float("inf")


@dataclass
class FactorizationReport:
    N: int
    k: int
    potential: str
    rows: list[FactorizationRow]
    gaussian_variances: dict[str, float]
    ess_outer: float
    ess_inner: float

    @property
    def ok(self) -> bool:
        return all(r.deviation <= 3.0 for r in self.rows)


def factorization_check(p: Potential, N: int, k: int, s_grid, samples: int, seed: int = 0, gamma: float = 0.5,
                        v: Vertex = (0, 0), inner_samples: int | None = None, **sampler_kw) -> FactorizationReport:
    """⟨e^{isX_{r_k}}⟩ against ⟨e^{isX_{r_{k-1}}}⟩ · E^{B_{r_{k-1}},0}[e^{isA_{k-1}}].

    The left side and the outer factor come from one run on Q_N, the inner
    factor from an independent run on the zero-boundary ball.  For the
    Gaussian case both sides are exact exponentials of Green quadratic forms.
    """
    s_grid = [float(s) for s in s_grid]
    if any(s * s >= 0.5 for s in s_grid):
        raise ValueError("|s|^2 must stay below 1/2")
    if k < 1:
        raise ValueError("k must be at least 1")
    ladder = ScaleLadder(N, gamma, r_min=1.0)
    dom = LatticeDomain(N)
    ev = ProcessEvaluator(dom, ladder, [k - 1, k], v)
    ball = Ball(v, ladder.r(k - 1))
    rho = rho_weights(v, k - 1, ladder)
    w_in, dropped = rho.weights.on(ball)
    if dropped or np.any(w_in[~ball.interior_mask] != 0):
        raise ValueError("increment weights leave the inner ball")

    def inner_obs(stack):
        return {"A": np.tensordot(stack, w_in, axes=([1, 2], [0, 1]))}

    var = {"X_k": ev.gaussian_variance(f"X_r_{k}"), "X_km1": ev.gaussian_variance(f"X_r_{k - 1}"),
           "A_km1_ball": quad_form(ball, w_in)}
    s1, s2 = np.random.SeedSequence(seed).generate_state(2)
    inner_samples = samples if inner_samples is None else inner_samples
    exact = p.name == "quadratic" and not sampler_kw.pop("mcmc", False)
    if exact:
        outer = exact_gaussian_sample(dom, None, samples, seed=int(s1), observe=ev, store=False)
        inner = exact_gaussian_sample(ball, None, inner_samples, seed=int(s2), observe=inner_obs, store=False)
    else:
        outer = sample_batch(dom, None, p, samples, seed=int(s1), observe=ev, store=False, **sampler_kw)
        inner = sample_batch(ball, None, p, inner_samples, seed=int(s2), observe=inner_obs, store=False,
                             **sampler_kw)
    corr = not exact
    xk, xkm1, a = outer.observables[f"X_r_{k}"], outer.observables[f"X_r_{k - 1}"], inner.observables["A"]
    rows = []
    for s in s_grid:
        ek, ekm1, ea = np.exp(1j * s * xk), np.exp(1j * s * xkm1), np.exp(1j * s * a)
        lhs, outer_f, inner_f = ek.mean(), ekm1.mean(), ea.mean()
        diff = lhs - outer_f * inner_f
        if s == 0.0:
            se = 0.0
        else:
            # the imaginary parts vanish in law but carry the O(s) noise, so both count
            z = ek - inner_f * ekm1
            se_outer = math.hypot(mean_se(z.real, corr)[1], mean_se(z.imag, corr)[1])
            se_inner = abs(outer_f) * math.hypot(mean_se(ea.real, corr)[1], mean_se(ea.imag, corr)[1])
            se = math.hypot(se_outer, se_inner)
        g = math.exp(-s * s * var["X_k"] / 2) - math.exp(-s * s * (var["X_km1"] + var["A_km1_ball"]) / 2)
        rows.append(FactorizationRow(s, complex(lhs), complex(outer_f), complex(inner_f), complex(diff), se, g))
    return FactorizationReport(N, k, p.label, rows, var, outer.ess.get(f"X_r_{k}", float(samples)),
                               inner.ess.get("A", float(inner_samples)))


# ----------------------------------------------------------------- inequality probes


@dataclass
class MWFit:
    s_grid: np.ndarray
    modulus: np.ndarray
    se: np.ndarray
    eps1: float
    C: float
    N: int


def mw_char_probe(values: np.ndarray, s_grid, N: int, correlated: bool = True, s_min: float = 0.5) -> MWFit:
    """Fit |⟨e^{isφ(0)}⟩| ≤ min{1 − ε₁, C/s²}^{log N} on the grid points with |s| ≥ s_min.

    With q(s) = (|Ψ(s)| + 3 SE)^{1/log N}, the bound holds at every grid
    point iff 1 − ε₁ ≥ max q and C ≥ max q s², so the largest admissible ε₁
    and the smallest admissible C are reported.  Near s = 0 the modulus
    tends to 1 and no ε₁ > 0 can hold, hence the cutoff.
    """
    cf = char_fn(values, s_grid, "raw", correlated=correlated)
    mod = np.abs(cf.values)
    se = cf.se
    s = cf.t_grid
    keep = np.abs(s) >= max(s_min, 1e-300)
    if not np.any(keep):
        return MWFit(s, mod, se, 0.0, 0.0, N)
    q = np.minimum(mod[keep] + 3 * se[keep], 1.0) ** (1.0 / math.log(N))
    return MWFit(s, mod, se, float(1.0 - q.max()), float(np.max(q * s[keep] ** 2)), N)


@dataclass
class BLExpReport:
    t_grid: np.ndarray
    log_mgf: np.ndarray
    se: np.ndarray
    bound: np.ndarray
    dropped: list[float]

    @property
    def violations(self) -> int:
        ok = np.isfinite(self.log_mgf)
        return int(np.sum(self.log_mgf[ok] > self.bound[ok] + 3 * self.se[ok]))


def bl_exp_probe(values: np.ndarray, quad: float, t_grid, lam: float, correlated: bool = True) -> BLExpReport:
    """log⟨exp(t Σφf)⟩ against (t²/2λ) fᵀGf for the sampled linear statistic Σφf."""
    x = np.asarray(values, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    lm, se, dropped = np.full(t.size, np.nan), np.full(t.size, np.nan), []
    for i, ti in enumerate(t):
        if abs(ti) * np.max(np.abs(x)) > 700:
            dropped.append(float(ti))
            continue
        e = np.exp(ti * x)
        m, s = mean_se(e, correlated) if ti != 0 else (1.0, 0.0)
        lm[i], se[i] = math.log(m), s / m
    return BLExpReport(t, lm, se, t ** 2 / (2 * lam) * quad, dropped)


@dataclass
class TailReport:
    frequency: float
    count: int
    n: int
    interval: tuple[float, float]
    threshold: float


def tail_event_probe(max_abs: np.ndarray, R: float) -> TailReport:
    """Frequency of the bad event max|φ| ≥ (log R)² with a Wilson interval."""
    m = np.asarray(max_abs, dtype=float)
    thr = math.log(R) ** 2
    c = int(np.sum(m >= thr))
    return TailReport(c / m.size, c, m.size, wilson_interval(c, m.size), thr)


def neighbor_observer(domain, v: Vertex = (0, 0)):
    """Observer recording φ(v), its four neighbors and max|φ| for density and tail probes."""
    i, j = domain.index(v)
    mask = domain.vertex_mask

    def observe(stack):
        return {"phi_v": stack[:, i, j].copy(),
                "nb0": stack[:, i - 1, j].copy(), "nb1": stack[:, i + 1, j].copy(),
                "nb2": stack[:, i, j - 1].copy(), "nb3": stack[:, i, j + 1].copy(),
                "maxabs": np.max(np.abs(stack[:, mask]), axis=1)}

    return observe


def neighbors_from(observables: dict) -> np.ndarray:
    return np.column_stack([observables[f"nb{q}"] for q in range(4)])
