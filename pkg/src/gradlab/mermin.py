"""Deformation argument and characteristic-function bounds for circle-valued variables.

The deformation τ shifts the field by b inside a diamond and ramps to zero
across the next dyadic annulus.  Its cost in energy controls the ratio
g(φ+τ)g(φ−τ)/g(φ)², which, passed to a density f on the circle as
f(a+b)f(a−b) ≥ e^{−Cb²/t²} f(a)², forces |∫ e^{iθ} f| to be small.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import Domain, LatticeDomain, edge_masks
from .potential import Potential

# ----------------------------------------------------------------- deformation


@dataclass
class DeformationProfile:
    """τ on a domain grid: b on |x|₁ ≤ 2^{k-1}, ramp on 2^{k-1} ≤ |x|₁ ≤ 2^k, 0 beyond.

    ``form="continuous"`` ramps linearly from b to 0 across the annulus;
    ``form="literal"`` uses b(1 − |x|₁/2^k), which jumps from b to b/2 at
    |x|₁ = 2^{k-1}.
    """

    k: int
    b: float
    domain: Domain
    values: np.ndarray = field(repr=False)
    form: str = "continuous"

    @property
    def energy(self) -> float:
        """Σ_e (∇τ(e))² over edges with an interior endpoint."""
        return tau_energy(self.domain, self.values)

    @property
    def energy_constant(self) -> float:
        return self.energy / self.b ** 2 if self.b else 0.0

    def layer_sets(self) -> dict[int, np.ndarray]:
        """Diamond layers |x|₁ = 2^j, j ≤ k: the sites whose gradients define the conditioning layers."""
        X, Y = self.domain.coords
        d = np.abs(X) + np.abs(Y)
        return {j: (d == 2 ** j) & self.domain.closure_mask for j in range(self.k + 1)}


def tau_formula(X: np.ndarray, Y: np.ndarray, k: int, b: float, form: str = "continuous") -> np.ndarray:
    d = np.abs(X) + np.abs(Y)
    inner, outer = 2.0 ** (k - 1), 2.0 ** k
    if form == "continuous":
        ramp = b * (outer - d) / (outer - inner)
    elif form == "literal":
        ramp = b * (1.0 - d / outer)
    else:
        raise ValueError(f"unknown deformation form {form!r}")
    return np.where(d <= inner, b, np.where(d >= outer, 0.0, ramp))


def tau_energy(domain: Domain, values: np.ndarray) -> float:
    ex, ey = edge_masks(domain, "touching")
    return float(np.sum(np.diff(values, axis=0)[ex] ** 2) + np.sum(np.diff(values, axis=1)[ey] ** 2))


def make_tau(k: int, b: float, domain: Domain, form: str = "continuous") -> DeformationProfile:
    if k < 1:
        raise ValueError("k must be at least 1")
    if isinstance(domain, LatticeDomain) and 2 ** k > domain.N:
        raise ValueError(f"diamond of radius 2^{k} escapes Q_{domain.N}")
    X, Y = domain.coords
    vals = tau_formula(X, Y, k, b, form)
    if np.any(vals[~domain.closure_mask] != 0) or np.any(vals[domain.boundary_mask] != 0):
        if not isinstance(domain, LatticeDomain):
            vals = np.where(domain.interior_mask, vals, 0.0)
        else:
            raise ValueError(f"diamond of radius 2^{k} reaches the boundary")
    return DeformationProfile(k, b, domain, vals, form)


@dataclass
class PerturbationReport:
    worst_ratio: float
    identity_residual: float
    C: float
    energy: float
    b: float
    points: int

    @property
    def holds(self) -> bool:
        return self.worst_ratio >= 1.0 - 1e-12


def _hamiltonian(p: Potential, phis: np.ndarray, ex: np.ndarray, ey: np.ndarray) -> np.ndarray:
    gx = np.diff(phis, axis=1)
    gy = np.diff(phis, axis=2)
    return p.eval(gx[:, ex]).sum(axis=1) + p.eval(gy[:, ey]).sum(axis=1)


def density_perturbation_check(p: Potential, domain: Domain, tau: DeformationProfile | np.ndarray,
                               n_quadrature: int | None = None, halfwidth: float | None = None,
                               chunk: int = 200_000) -> PerturbationReport:
    """Check g(φ+τ)g(φ−τ) ≥ e^{−Cb²} g(φ)² on a tensor grid of configurations.

    Zero boundary data; τ is restricted to the interior.  The constant is
    C b² = Λ Σ_e (∇τ(e))² (second-order Taylor bound with sup V'').  The
    report carries the worst ratio g⁺g⁻/(e^{−Cb²}g²) and, for reference, the
    maximal deviation of log(g⁺g⁻/g²) from −Σ(∇τ)², which vanishes for the
    quadratic potential.
    """
    n_int = domain.n_interior
    if n_int > 6:
        raise ValueError("brute-force quadrature needs at most 6 interior vertices")
    tv = tau.values if isinstance(tau, DeformationProfile) else np.asarray(tau, dtype=float)
    tv = np.where(domain.interior_mask, tv, 0.0)
    b = float(np.max(np.abs(tv))) if isinstance(tau, np.ndarray) else float(tau.b)
    ex, ey = edge_masks(domain, "touching")
    energy = tau_energy(domain, tv)
    C = p.Lam * energy / b ** 2 if b else 0.0
    if n_quadrature is None:
        n_quadrature = max(9, int(2e6 ** (1.0 / max(n_int, 1))))
    hw = 8.0 / math.sqrt(p.lam) if halfwidth is None else halfwidth
    axis = np.linspace(-hw, hw, n_quadrature)
    idx = np.nonzero(domain.interior_mask)
    worst, ident = float("inf"), 0.0
    total = n_quadrature ** n_int
    grid_iter = itertools.product(axis, repeat=n_int)
    done = 0
    while done < total:
        pts = np.array(list(itertools.islice(grid_iter, chunk)))
        done += len(pts)
        phis = np.zeros((len(pts),) + domain.shape)
        phis[:, idx[0], idx[1]] = pts
        h0 = _hamiltonian(p, phis, ex, ey)
        hp = _hamiltonian(p, phis + tv, ex, ey)
        hm = _hamiltonian(p, phis - tv, ex, ey)
        log_ratio = -(hp + hm - 2 * h0)  # log g⁺g⁻/g²
        worst = min(worst, float(np.min(log_ratio + C * b * b)))
        ident = max(ident, float(np.max(np.abs(log_ratio + energy))))
    return PerturbationReport(math.exp(worst), ident, C, energy, b, total)


# ----------------------------------------------------------------- circle densities


@dataclass
class CircleDensity:
    """Density on [0, 2π) sampled on a uniform periodic grid, normalized by the trapezoid rule."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite and nonnegative")
        mass = v.sum() * 2 * np.pi / v.size
        if mass <= 0:
            raise ValueError("density has zero mass")
        self.values = v / mass

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def grid(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n) / self.n

    @property
    def mass(self) -> float:
        return float(self.values.sum() * 2 * np.pi / self.n)

    @classmethod
    def from_function(cls, fn, n: int = 4096) -> "CircleDensity":
        return cls(np.asarray(fn(2 * np.pi * np.arange(n) / n), dtype=float))


def wrapped_gaussian(kappa: float, mu: float = 0.0, n: int = 4096, terms: int | None = None) -> CircleDensity:
    """Wrapped normal with precision κ (variance 1/κ) and mean μ."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    th = 2 * np.pi * np.arange(n) / n
    sd = 1.0 / math.sqrt(kappa)
    terms = int(math.ceil(10 * sd / (2 * np.pi))) + 2 if terms is None else terms
    js = np.arange(-terms, terms + 1)
    d = (th[:, None] - mu + 2 * np.pi * js[None, :])
    vals = np.exp(-0.5 * kappa * d ** 2).sum(axis=1) * math.sqrt(kappa / (2 * np.pi))
    return CircleDensity(vals)


def wrapped_gaussian_charfn(kappa: float, mu: float = 0.0) -> complex:
    """∫ e^{iθ} f for the wrapped normal: e^{iμ − 1/(2κ)}."""
    return complex(np.exp(1j * mu - 0.5 / kappa))


def check_ratio_condition(f: CircleDensity, t: float, C: float) -> float:
    """max over grid pairs (a, b), b ∈ [0, π], of e^{−Cb²/t²} f(a)² − f(a+b) f(a−b).

    A value ≤ 1e-9 means the ratio condition holds on the grid.  Shifts b and
    b − 2π give the same pair of points, so the smaller |b| is the binding one.
    """
    if 2 * np.pi / f.n > np.pi / 256:
        raise ValueError("grid too coarse: need spacing ≤ π/256")
    v = f.values
    n = f.n
    worst = -float("inf")
    f2 = v * v
    for j in range(n // 2 + 1):
        b = 2 * np.pi * j / n
        prod = np.roll(v, -j) * np.roll(v, j)
        worst = max(worst, float(np.max(math.exp(-C * b * b / t ** 2) * f2 - prod)))
    return worst


@dataclass
class CharIntegral:
    value: complex
    error: float


def char_integral(f: CircleDensity) -> CharIntegral:
    """∫₀^{2π} e^{iθ} f(θ) dθ by the periodic trapezoid rule, with a half-grid error estimate."""
    h = 2 * np.pi / f.n
    val = complex(np.sum(np.exp(1j * f.grid) * f.values) * h)
    if f.n % 2 == 0:
        coarse = complex(np.sum(np.exp(1j * f.grid[::2]) * f.values[::2]) * 2 * h)
        err = abs(val - coarse)
    else:
        err = float("nan")
    return CharIntegral(val, err)


@dataclass
class CertifiedBound:
    bound: float
    ratio_bound: float
    arc_term: float
    exponential_form: float
    empirical_bound: float
    arc_ratio: float
    integral: float
    quadrature_error: float
    m: int

    @property
    def holds(self) -> bool:
        return self.integral <= self.bound + self.quadrature_error


def arc_masses(f: CircleDensity, m: int) -> np.ndarray:
    """Masses of the 2m arcs [(k−1)π/m, kπ/m), by the grid rule (requires n divisible by 2m)."""
    if f.n % (2 * m):
        raise ValueError(f"grid size {f.n} not divisible by 2m = {2 * m}")
    return f.values.reshape(2 * m, -1).sum(axis=1) * 2 * np.pi / f.n


def certified_bound(f: CircleDensity, t: float, C: float, m: int | None = None,
                    tolerance: float = 1e-9) -> CertifiedBound:
    """Upper bound on |∫ e^{iθ} f| from the arc-partition argument.

    Pair each arc with its antipode: on the pair, e^{iθ} differs from its
    value at the arc end by at most 2 sin(π/2m), and the antipodal factor is
    −1, so the pair contributes at most |M_k − M_{k+m}| + 2 sin(π/2m)(M_k + M_{k+m}).
    The ratio condition at shifts up to π bounds max f / min f by
    R = e^{Cπ²/t²}, hence |M_k − M_{k+m}| ≤ (R−1)/(R+1)(M_k + M_{k+m}) and
    |∫ e^{iθ} f| ≤ (R−1)/(R+1) + 2 sin(π/2m).
    """
    deficit = check_ratio_condition(f, t, C)
    if deficit > tolerance:
        raise ValueError(f"ratio condition fails (deficit {deficit:.3e})")
    m_min = int(math.ceil(t * t / C)) if C > 0 else 1
    if m is None:
        m = m_min
        while f.n % (2 * m):
            m += 1
    if m < t * t / C:
        raise ValueError(f"m = {m} is below t^2/C = {t * t / C:.3g}")
    arc = 2 * math.sin(math.pi / (2 * m))
    R = math.exp(C * math.pi ** 2 / t ** 2)
    ratio_term = (R - 1) / (R + 1)
    masses = arc_masses(f, m) if f.n % (2 * m) == 0 else None
    if masses is not None and masses.min() > 0:
        Re = float(masses.max() / masses.min())
        emp = (Re - 1) / (Re + 1) + arc
    else:
        Re, emp = float("inf"), float("inf")
    ci = char_integral(f)
    return CertifiedBound(ratio_term + arc, ratio_term, arc, 1 - math.exp(-2 * C / t ** 2) + arc, emp, Re,
                          abs(ci.value), ci.error, m)
