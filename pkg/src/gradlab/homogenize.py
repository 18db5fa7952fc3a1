"""Linear gradient statistics, increment variances and quenched homogenization.

The quenched objects freeze the conductance a(e) = V''(∇φ(e)) of one sampled
configuration and study the resulting random-conductance problem: energies
ν(Q, p) with affine boundary data, the coarse matrix ā(Q), flux averages and
the two-scale expansion.  They are labeled "quenched" in every report.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .elliptic import GraphOperator, quad_form, solve_dirichlet
from .lattice import Ball, BoxDomain, Domain, FieldConfig, LatticeDomain, Vertex
from .multiscale import AnnulusWeights, ScaleLadder, rho_weights
from .potential import Potential
from .sampler import SampleBatch, exact_gaussian_sample, sample_batch
from .stats import integrated_autocorr_time, jackknife

# ----------------------------------------------------------------- linear statistics


def edge_divergence(fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
    """(∇*f)(x) = Σ_{e: head = x} f(e) − Σ_{e: tail = x} f(e), so Σ_e f ∇φ = Σ_x φ ∇*f."""
    nx, ny = fy.shape[0], fx.shape[1]
    d = np.zeros((nx, ny))
    d[1:, :] += fx
    d[:-1, :] -= fx
    d[:, 1:] += fy
    d[:, :-1] -= fy
    return d


@dataclass
class LinearStatistic:
    """Φ_R = R^{-1} Σ_e ∇φ(e) f_R(e) on a domain's grid edges (d = 2, so R^{-d/2} = R^{-1})."""

    domain: Domain
    fx: np.ndarray = field(repr=False)  # x-edges, shape (nx-1, ny)
    fy: np.ndarray = field(repr=False)  # y-edges, shape (nx, ny-1)
    R: float
    name: str = "Phi_R"

    def __post_init__(self):
        nx, ny = self.domain.shape
        if self.fx.shape != (nx - 1, ny) or self.fy.shape != (nx, ny - 1):
            raise ValueError("edge weight arrays do not match the domain grid")

    @property
    def normalization(self) -> float:
        return 1.0 / self.R

    @property
    def divergence(self) -> np.ndarray:
        return edge_divergence(self.fx, self.fy)

    @property
    def divergence_sup(self) -> float:
        return float(np.max(np.abs(self.divergence)))

    def vertex_weights(self) -> np.ndarray:
        """w with Φ_R(φ) = Σ_x w(x) φ(x)."""
        return self.normalization * self.divergence

    def __call__(self, stack: np.ndarray) -> dict[str, np.ndarray]:
        stack = np.asarray(stack, dtype=float)
        if stack.ndim == 2:
            stack = stack[None]
        return {self.name: np.tensordot(stack, self.vertex_weights(), axes=([1, 2], [0, 1]))}

    def gaussian_variance(self) -> float:
        """Var Φ_R under the quadratic measure with zero boundary data: wᵀ G w."""
        return quad_form(self.domain, self.vertex_weights())


def phi_R(stat: LinearStatistic, config: FieldConfig) -> float:
    gx = np.diff(config.values, axis=0)
    gy = np.diff(config.values, axis=1)
    return stat.normalization * float(np.sum(gx * stat.fx) + np.sum(gy * stat.fy))


def annulus_statistic(domain: Domain, R: float, center: Vertex = (0, 0)) -> LinearStatistic:
    """f_R(e) = F_i(mid(e)/R) on e_i-edges, with F(x) = x·sin²(2π(|x| − ½)) on ½ < |x| < 1."""
    X, Y = domain.coords
    X = X - center[0]
    Y = Y - center[1]

    def F(mx, my):
        r = np.hypot(mx, my)
        bump = np.where((r > 0.5) & (r < 1.0), np.sin(2 * np.pi * (r - 0.5)) ** 2, 0.0)
        return mx * bump, my * bump

    mx, my = (X[:-1, :] + 0.5) / R, Y[:-1, :] / R
    fx = F(mx, my)[0]
    mx, my = X[:, :-1] / R, (Y[:, :-1] + 0.5) / R
    fy = F(mx, my)[1]
    C = domain.closure_mask
    fx = np.where(C[:-1, :] & C[1:, :], fx, 0.0)
    fy = np.where(C[:, :-1] & C[:, 1:], fy, 0.0)
    return LinearStatistic(domain, fx, fy, R, name=f"Phi_{R:g}")


def build_fR_from_rho(ball: Ball, rho: AnnulusWeights, tol: float = 1e-8) -> LinearStatistic:
    """f(e) = r ∇u(e) with ∇*∇u = ρ on the ball, u = 0 outside; then ∇*f = r ρ inside.

    For zero-boundary fields on the ball, A = Σ ρ φ = r^{-1} Σ_e ∇φ(e) f(e),
    which is exactly the statistic's value with R = r.
    """
    r = float(ball.radius)
    w, dropped = rho.weights.on(ball)
    if dropped or np.any(w[~ball.interior_mask] != 0):
        raise ValueError("rho must be supported inside the ball")
    u = solve_dirichlet(ball, rhs=w)
    fx = r * np.diff(u, axis=0)
    fy = r * np.diff(u, axis=1)
    stat = LinearStatistic(ball, fx, fy, r, name=f"f_from_rho_{rho.k}")
    resid = float(np.max(np.abs((stat.divergence - r * w)[ball.interior_mask])))
    if resid > tol:
        raise RuntimeError(f"divergence identity residual {resid:.3e} exceeds {tol:g}")
    return stat


@dataclass
class VarianceEstimate:
    estimate: float
    standard_error: float
    ess: float
    flagged: bool


def mc_variance(values: np.ndarray, correlated: bool = True) -> VarianceEstimate:
    """Sample variance with a blocked-jackknife standard error.

    Blocks cover the correlation time of the centered squares, so the error
    bar reflects the effective sample size; ESS < 10 is flagged.
    """
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two samples")
    sq = (x - x.mean()) ** 2
    tau = integrated_autocorr_time(sq) if correlated else 0.5
    ess = float(min(x.size, x.size / (2 * tau)))
    block = max(1, int(math.ceil(2 * tau)))
    blocks = int(min(100, max(2, x.size // block)))
    est, se = jackknife(lambda d: float(np.var(d, ddof=1)), x, blocks=blocks)
    return VarianceEstimate(est, se, ess, ess < 10)


def statistic_variance(stat: LinearStatistic | str, batch: SampleBatch) -> VarianceEstimate:
    """mc_variance of a statistic over a batch (from recorded observables when present)."""
    if isinstance(stat, str):
        vals = batch.observables[stat]
    elif stat.name in batch.observables:
        vals = batch.observables[stat.name]
    else:
        if batch.values is None:
            raise ValueError("batch stores neither the statistic nor the configurations")
        vals = stat(batch.values)[stat.name]
    return mc_variance(vals, correlated=batch.moves != "exact")


@dataclass
class GEstimate:
    N: int
    radius: float
    g_hat: float
    se: float
    gaussian: float
    lower: float
    upper: float
    ess: float


@dataclass
class GReport:
    k: int
    gamma: float
    entries: list[GEstimate]
    top_difference: float
    top_combined_se: float

    @property
    def stabilized(self) -> bool:
        return self.top_difference < 3 * self.top_combined_se


def estimate_g(p: Potential, N_list, k: int = 1, gamma: float = 0.5, samples: int = 2000, seed: int = 0,
               **sampler_kw) -> GReport:
    """Var(A_k) under the zero-boundary measure on the ball B_{r_k}, for each N.

    The Gaussian value ρᵀGρ and the brackets [ρᵀGρ/Λ, ρᵀGρ/λ] (convexity
    comparison below, Brascamp-Lieb above) are reported alongside.
    """
    N_list = list(N_list)
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N_list must be increasing")
    seeds = np.random.SeedSequence(seed).generate_state(len(N_list))
    out = []
    for N, s in zip(N_list, seeds):
        ladder = ScaleLadder(N, gamma, r_min=1.0)
        b = Ball((0, 0), ladder.r(k))
        rho = rho_weights((0, 0), k, ladder)
        w, dropped = rho.weights.on(b)
        if dropped or np.any(w[~b.interior_mask] != 0):
            raise ValueError(f"A_{k} weights leave the ball B_{ladder.r(k):.3g}")

        def observe(stack, w=w):
            return {"A": np.tensordot(stack, w, axes=([1, 2], [0, 1]))}

        if p.name == "quadratic" and not sampler_kw.get("mcmc", False):
            batch = exact_gaussian_sample(b, None, samples, seed=int(s), observe=observe, store=False)
        else:
            kw = {key: v for key, v in sampler_kw.items() if key != "mcmc"}
            batch = sample_batch(b, None, p, samples, seed=int(s), observe=observe, store=False, **kw)
        v = statistic_variance("A", batch)
        gq = quad_form(b, w)
        out.append(GEstimate(N, ladder.r(k), v.estimate, v.standard_error, gq, gq / p.Lam, gq / p.lam, v.ess))
    if len(out) >= 2:
        a, c = out[-2], out[-1]
        diff, comb = abs(c.g_hat - a.g_hat), math.hypot(a.se, c.se)
    else:
        diff, comb = 0.0, float("inf")
    return GReport(k, gamma, out, diff, comb)


# ----------------------------------------------------------------- quenched coefficients


@dataclass
class QuenchedCoefficient:
    """Frozen conductances on the grid edges of a domain (quenched surrogate)."""

    origin: Vertex
    ax: np.ndarray = field(repr=False)  # x-edges (nx-1, ny)
    ay: np.ndarray = field(repr=False)  # y-edges (nx, ny-1)
    lam: float
    Lam: float

    def __post_init__(self):
        vals = np.concatenate([self.ax.ravel(), self.ay.ravel()])
        if vals.size and (vals.min() < self.lam - 1e-12 or vals.max() > self.Lam + 1e-12):
            raise ValueError(f"conductances outside [{self.lam}, {self.Lam}]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.ay.shape[0], self.ax.shape[1]

    @classmethod
    def from_config(cls, config: FieldConfig, p: Potential) -> "QuenchedCoefficient":
        gx = np.diff(config.values, axis=0)
        gy = np.diff(config.values, axis=1)
        return cls(config.domain.origin, np.asarray(p.d2(gx), float), np.asarray(p.d2(gy), float), p.lam, p.Lam)

    @classmethod
    def constant(cls, origin: Vertex, shape: tuple[int, int], c: float) -> "QuenchedCoefficient":
        nx, ny = shape
        return cls(origin, np.full((nx - 1, ny), c), np.full((nx, ny - 1), c), c, c)


@dataclass(frozen=True)
class EnergyCube:
    """Closed box corner + [0, 3^m]²; neighboring cubes share faces.

    Edges lying in a face get weight ½ and the volume is 3^{2m}, so energies
    of cubes tiling a larger cube add up exactly.
    """

    corner: Vertex
    m: int

    @property
    def side(self) -> int:
        return 3 ** self.m

    @property
    def volume(self) -> int:
        return self.side ** 2

    @property
    def box(self) -> BoxDomain:
        s = self.side
        return BoxDomain(self.corner, (self.corner[0] + s, self.corner[1] + s))

    def children(self, m: int) -> list["EnergyCube"]:
        if m > self.m:
            raise ValueError("children must be at a level not above the parent's")
        k, s = 3 ** (self.m - m), 3 ** m
        return [EnergyCube((self.corner[0] + i * s, self.corner[1] + j * s), m) for i in range(k) for j in range(k)]


def centered_cube(m: int, center: Vertex = (0, 0)) -> EnergyCube:
    s = 3 ** m
    return EnergyCube((center[0] - s // 2, center[1] - s // 2), m)


@dataclass
class EnergyReport:
    cube: EnergyCube
    p: np.ndarray
    nu: float
    ahom: np.ndarray
    corrector: np.ndarray = field(repr=False)
    flux_avg: np.ndarray = field(default=None)
    label: str = "quenched"


def _cube_conductances(a: QuenchedCoefficient, cube: EnergyCube) -> tuple[np.ndarray, np.ndarray]:
    s = cube.side
    i0, j0 = cube.corner[0] - a.origin[0], cube.corner[1] - a.origin[1]
    nx, ny = a.shape
    if i0 < 0 or j0 < 0 or i0 + s >= nx or j0 + s >= ny:
        raise ValueError(f"cube {cube} does not fit the coefficient grid")
    cx = a.ax[i0:i0 + s, j0:j0 + s + 1].copy()
    cy = a.ay[i0:i0 + s + 1, j0:j0 + s].copy()
    cx[:, 0] *= 0.5
    cx[:, -1] *= 0.5
    cy[0, :] *= 0.5
    cy[-1, :] *= 0.5
    return cx, cy


class _CubeProblem:
    def __init__(self, a: QuenchedCoefficient, cube: EnergyCube):
        self.cube = cube
        self.box = cube.box
        self.cx, self.cy = _cube_conductances(a, cube)
        self.op = GraphOperator(self.box.interior_mask, self.box.boundary_mask, self.cx, self.cy)
        X, Y = self.box.coords
        self.X, self.Y = X - cube.corner[0], Y - cube.corner[1]
        self._v = {}

    def corrector(self, j: int) -> np.ndarray:
        """v(·, Q, e_j): a-harmonic with v = x_j on the boundary."""
        if j not in self._v:
            lin = self.X if j == 0 else self.Y
            self._v[j] = self.op.solve(None, lin.astype(float))
        return self._v[j]

    def energy(self, u: np.ndarray, w: np.ndarray) -> float:
        return float(np.sum(self.cx * np.diff(u, axis=0) * np.diff(w, axis=0))
                     + np.sum(self.cy * np.diff(u, axis=1) * np.diff(w, axis=1)))

    def ahom(self) -> np.ndarray:
        v = [self.corrector(0), self.corrector(1)]
        A = np.array([[self.energy(v[i], v[j]) for j in range(2)] for i in range(2)]) / self.cube.volume
        return 0.5 * (A + A.T)

    def flux_avg(self, v: np.ndarray) -> np.ndarray:
        return np.array([np.sum(self.cx * np.diff(v, axis=0)), np.sum(self.cy * np.diff(v, axis=1))]) / self.cube.volume


def quenched_corrector(a: QuenchedCoefficient, cube: EnergyCube, p) -> EnergyReport:
    """Minimizer v of the cube energy with v = ℓ_p on the boundary, ν(Q, p), ā(Q) and (a∇v)_Q."""
    p = np.asarray(p, dtype=float)
    prob = _CubeProblem(a, cube)
    v = p[0] * prob.corrector(0) + p[1] * prob.corrector(1)
    nu = 0.5 * prob.energy(v, v) / cube.volume
    return EnergyReport(cube, p, nu, prob.ahom(), v, prob.flux_avg(v))


def nu_direct(a: QuenchedCoefficient, cube: EnergyCube, p) -> float:
    """ν(Q, p) from a dedicated solve with boundary data ℓ_p (no linearity shortcut)."""
    p = np.asarray(p, dtype=float)
    prob = _CubeProblem(a, cube)
    v = prob.op.solve(None, p[0] * prob.X + p[1] * prob.Y)
    return 0.5 * prob.energy(v, v) / cube.volume


DEFAULT_SLOPES = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (0, 0), (1, -1), (2, 1), (-1, 3))


def fit_quadratic(slopes, values) -> tuple[np.ndarray, float, np.ndarray, float]:
    """Least squares ν(p) ≈ c + b·p + ½ pᵀ M p; returns (M, c, b, max residual)."""
    P = np.asarray(slopes, dtype=float)
    y = np.asarray(values, dtype=float)
    D = np.column_stack([np.ones(len(P)), P[:, 0], P[:, 1], 0.5 * P[:, 0] ** 2, P[:, 0] * P[:, 1], 0.5 * P[:, 1] ** 2])
    coef, *_ = np.linalg.lstsq(D, y, rcond=None)
    resid = float(np.max(np.abs(D @ coef - y)))
    M = np.array([[coef[3], coef[4]], [coef[4], coef[5]]])
    return M, float(coef[0]), coef[1:3], resid


@dataclass
class SubadditivityReport:
    top: EnergyCube
    levels: list[int]
    quad_residual: float
    constant_term: float
    polarization_gap: float
    subadditivity_min_gap: float
    ahom_mean: dict[int, np.ndarray]
    ahom_dispersion: dict[int, float]
    spectrum: dict[int, tuple[float, float]]
    label: str = "quenched"

    @property
    def ok(self) -> bool:
        return self.quad_residual <= 1e-8 and self.subadditivity_min_gap >= -1e-9


def subadditivity_and_quadratic_check(a, levels, p_list=DEFAULT_SLOPES, top: EnergyCube | None = None
                                      ) -> SubadditivityReport:
    """Quadratic fit of ν(□, ·), subadditivity across levels and ā(□_m) per level.

    ``a`` is one coefficient field or a list (ensemble); dispersion of ā(□_m)
    is the root mean square distance of its entries from their mean over all
    level-m cubes of all members.
    """
    ens = a if isinstance(a, (list, tuple)) else [a]
    levels = sorted(int(m) for m in levels)
    n = levels[-1]
    if n > 4:
        raise ValueError("levels above 4 are not supported")
    top = centered_cube(n) if top is None else top
    quad_res = polar = 0.0
    const = 0.0
    sub_gap = float("inf")
    per_level: dict[int, list[np.ndarray]] = {m: [] for m in levels}
    for coef in ens:
        nus_top = [nu_direct(coef, top, p) for p in p_list]
        M, c, _, r = fit_quadratic(p_list, nus_top)
        quad_res = max(quad_res, r)
        const = max(const, abs(c))
        A_top = _CubeProblem(coef, top).ahom()
        polar = max(polar, float(np.max(np.abs(M - A_top))))
        for m in levels:
            probs = [_CubeProblem(coef, ch) for ch in top.children(m)]
            for prob in probs:
                per_level[m].append(prob.ahom())
            if m < n:
                for p in p_list:
                    pv = np.asarray(p, dtype=float)
                    avg = np.mean([0.5 * pv @ pr.ahom() @ pv for pr in probs])
                    sub_gap = min(sub_gap, avg - 0.5 * pv @ A_top @ pv)
    mean = {m: np.mean(per_level[m], axis=0) for m in levels}
    disp = {m: float(np.sqrt(np.mean([np.sum((A - mean[m]) ** 2) for A in per_level[m]]))) for m in levels}
    spec = {}
    for m in levels:
        eig = np.concatenate([np.linalg.eigvalsh(A) for A in per_level[m]])
        spec[m] = (float(eig.min()), float(eig.max()))
    return SubadditivityReport(top, levels, quad_res, const, polar, sub_gap if sub_gap != float("inf") else 0.0,
                               mean, disp, spec)


@dataclass
class FluxReport:
    m: int
    mean: np.ndarray
    variance: float
    component_variance: np.ndarray
    n: int
    label: str = "quenched"


def flux_concentration(a_ensemble, m: int, p=(1.0, 0.0), center: Vertex = (0, 0)) -> FluxReport:
    """Ensemble variance (summed over components) of the cube-averaged flux (a∇v)_{□_m}."""
    cube = centered_cube(m, center)
    flux = np.array([quenched_corrector(a, cube, p).flux_avg for a in a_ensemble])
    cv = flux.var(axis=0, ddof=1) if len(flux) > 1 else np.zeros(2)
    return FluxReport(m, flux.mean(axis=0), float(cv.sum()), cv, len(flux))


def _homogenized_operator(n: int, A: np.ndarray) -> sp.csr_matrix:
    """−(ā₁₁∂₁₁ + 2ā₁₂∂₁₂ + ā₂₂∂₂₂) on an n×n interior grid with zero Dirichlet data."""
    I = sp.identity(n, format="csr")
    T = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")
    D = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1], format="csr") * 0.5
    return (A[0, 0] * sp.kron(T, I) + A[1, 1] * sp.kron(I, T) - 2 * A[0, 1] * sp.kron(D, D)).tocsr()


@dataclass
class TwoScaleReport:
    m: int
    residual_two_scale: float
    residual_homogenized: float
    norm_u: float
    ahom: np.ndarray
    label: str = "quenched"


def _default_source(x, y):
    return 2 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)


def two_scale_residual(a: QuenchedCoefficient, cube: EnergyCube,
                       f: Callable[[np.ndarray, np.ndarray], np.ndarray] = _default_source) -> TwoScaleReport:
    """Compare the heterogeneous solution with its homogenized and two-scale approximations.

    The cube of side L is the unit square at scale ε = 1/L.  With source
    F(x) = f(x/L)/L² we solve ∇*a∇u^ε = F and the constant-coefficient
    problem with ā(cube), both with zero boundary data, and form
    w = u + Σ_j D_j u χ_j with χ_j = v(·, cube, e_j) − x_j.  Norms are
    root mean squares over the cube's vertices.
    """
    prob = _CubeProblem(a, cube)
    L = cube.side
    rhs = f(prob.X / L, prob.Y / L) / L ** 2
    rhs = np.where(prob.box.interior_mask, rhs, 0.0)
    # the heterogeneous solve uses full conductances; face weights only matter for energies
    s = cube.side
    i0, j0 = cube.corner[0] - a.origin[0], cube.corner[1] - a.origin[1]
    op = GraphOperator(prob.box.interior_mask, prob.box.boundary_mask,
                       a.ax[i0:i0 + s, j0:j0 + s + 1], a.ay[i0:i0 + s + 1, j0:j0 + s])
    ueps = op.solve(rhs, None)
    A = prob.ahom()
    n = s - 1
    u = np.zeros_like(ueps)
    if np.any(rhs):
        u[1:-1, 1:-1] = spsolve(_homogenized_operator(n, A).tocsc(), rhs[1:-1, 1:-1].ravel()).reshape(n, n)
    du = [np.zeros_like(u), np.zeros_like(u)]
    du[0][1:-1, :] = 0.5 * (u[2:, :] - u[:-2, :])
    du[1][:, 1:-1] = 0.5 * (u[:, 2:] - u[:, :-2])
    chi = [prob.corrector(0) - prob.X, prob.corrector(1) - prob.Y]
    w = u + du[0] * chi[0] + du[1] * chi[1]
    rms = lambda z: float(np.sqrt(np.mean(z ** 2)))
    return TwoScaleReport(cube.m, rms(ueps - w), rms(ueps - u), rms(ueps), A)


def homog_rows(ensemble, levels, p_list=((1.0, 0.0), (0.0, 1.0), (1.0, 1.0))) -> list[dict]:
    """Rows (level, p, nu, ahom_xx, ahom_xy, ahom_yy, flux_var) averaged over an ensemble."""
    rows = []
    for m in levels:
        cube = centered_cube(m)
        for p in p_list:
            reps = [quenched_corrector(a, cube, p) for a in ensemble]
            A = np.mean([r.ahom for r in reps], axis=0)
            flux = np.array([r.flux_avg for r in reps])
            fv = float(flux.var(axis=0, ddof=1).sum()) if len(reps) > 1 else 0.0
            rows.append({"level": m, "p": f"{p[0]:g};{p[1]:g}", "nu": float(np.mean([r.nu for r in reps])),
                         "ahom_xx": float(A[0, 0]), "ahom_xy": float(A[0, 1]), "ahom_yy": float(A[1, 1]),
                         "flux_var": fv})
    return rows


def coefficient_ensemble(p: Potential, n_samples: int, levels_max: int = 4, seed: int = 0,
                         **sampler_kw) -> list[QuenchedCoefficient]:
    """Quenched coefficients from independent zero-boundary samples on the smallest square holding □_max."""
    N = 3 ** levels_max // 2 + 1
    dom = LatticeDomain(N)
    if p.name == "quadratic":
        return [QuenchedCoefficient.constant(dom.origin, dom.shape, 1.0) for _ in range(n_samples)]
    batch = sample_batch(dom, None, p, n_samples, seed=seed, **sampler_kw)
    return [QuenchedCoefficient.from_config(c, p) for c in batch.configs]
