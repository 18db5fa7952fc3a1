"""Scale ladder, circle averages and the harmonic-average process.

Circle averages weight a field by the exit distribution of simple random
walk from the center of a lattice ball.  The process X averages circle
averages over a thin window of integer radii; its increments A_k are linear
functionals ρ·φ supported on two thin annuli.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .elliptic import harmonic_extension, harmonic_measure, quad_form
from .lattice import Ball, Domain, DomainError, FieldConfig, Vertex
from .potential import Potential
from .sampler import BoundaryCondition, exact_gaussian_sample, sample_batch
from .stats import ks_two_sample


@dataclass(frozen=True)
class ScaleLadder:
    """r_k = e^{-k} N and r_{k,±} = (1 ± r_k^{-γ}) r_k for k = 0..k_max (r_{k_max} ≥ r_min)."""

    N: int
    gamma: float = 0.5
    r_min: float = 8.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.N < self.r_min:
            raise ValueError(f"N={self.N} is below r_min={self.r_min}: empty ladder")

    def r(self, k: int) -> float:
        return math.exp(-k) * self.N

    def r_plus(self, k: int) -> float:
        return (1.0 + self.r(k) ** -self.gamma) * self.r(k)

    def r_minus(self, k: int) -> float:
        return (1.0 - self.r(k) ** -self.gamma) * self.r(k)

    @property
    def k_max(self) -> int:
        return int(math.floor(math.log(self.N / self.r_min)))

    @property
    def radii(self) -> list[tuple[float, float, float]]:
        return [(self.r(k), self.r_plus(k), self.r_minus(k)) for k in range(self.k_max + 1)]

    def window(self, center: float, k: int) -> "RadiusWindow":
        return radius_window(center, self.r(k), self.gamma)


@dataclass(frozen=True)
class RadiusWindow:
    """Integer radii in [(1 − ¼ s^{-γ}) c, (1 + ¼ s^{-γ}) c] for center c and scale s.

    Averages use the actual count; the continuum weight (½ s^{1-γ})^{-1}
    is kept for reference.
    """

    center: float
    scale: float
    lo: float
    hi: float
    radii: tuple[int, ...]
    fallback: bool
    nominal_weight: float

    @property
    def weight(self) -> float:
        return 1.0 / len(self.radii)


def radius_window(center: float, scale: float, gamma: float) -> RadiusWindow:
    q = 0.25 * scale ** -gamma
    lo, hi = (1.0 - q) * center, (1.0 + q) * center
    radii = tuple(r for r in range(max(1, math.ceil(lo)), math.floor(hi) + 1))
    fallback = not radii
    if fallback:
        radii = (max(1, int(round(center))),)
    return RadiusWindow(center, scale, lo, hi, radii, fallback, 1.0 / (0.5 * scale ** (1.0 - gamma)))


@dataclass
class LatticeWeights:
    """Real weights on the lattice, stored on a bounding grid anchored at ``origin``."""

    origin: Vertex
    array: np.ndarray = field(repr=False)

    def points(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        i, j = np.nonzero(self.array)
        return i + self.origin[0], j + self.origin[1], self.array[i, j]

    def as_dict(self) -> dict[Vertex, float]:
        X, Y, w = self.points()
        return {(int(a), int(b)): float(c) for a, b, c in zip(X, Y, w)}

    @property
    def l1(self) -> float:
        return float(np.abs(self.array).sum())

    @property
    def total(self) -> float:
        return float(self.array.sum())

    def on(self, domain: Domain) -> tuple[np.ndarray, bool]:
        """Weights on ``domain``'s grid restricted to its closure.

        Returns the array and whether weight was dropped outside the closure,
        which is exact only for fields extended by zero.
        """
        X, Y, w = self.points()
        i, j = X - domain.origin[0], Y - domain.origin[1]
        nx, ny = domain.shape
        inside = (i >= 0) & (i < nx) & (j >= 0) & (j < ny)
        ii, jj = np.where(inside, i, 0), np.where(inside, j, 0)
        inside &= domain.closure_mask[ii, jj]
        out = domain.zeros()
        np.add.at(out, (ii[inside], jj[inside]), w[inside])
        return out, bool(np.any(~inside & (w != 0)))

    def dot(self, config: FieldConfig) -> float:
        X, Y, w = self.points()
        return float(np.dot(w, config.at(X, Y)))


def _combine(parts: list[tuple[float, LatticeWeights]]) -> LatticeWeights:
    lo = (min(p.origin[0] for _, p in parts), min(p.origin[1] for _, p in parts))
    hi = (max(p.origin[0] + p.array.shape[0] for _, p in parts),
          max(p.origin[1] + p.array.shape[1] for _, p in parts))
    out = np.zeros((hi[0] - lo[0], hi[1] - lo[1]))
    for c, p in parts:
        a, b = p.origin[0] - lo[0], p.origin[1] - lo[1]
        out[a:a + p.array.shape[0], b:b + p.array.shape[1]] += c * p.array
    return LatticeWeights(lo, out)


@lru_cache(maxsize=1024)
def circle_weights(v: Vertex, R: float) -> LatticeWeights:
    """Harmonic measure a_{B_R(v)}(v, ·) as lattice weights."""
    b = Ball(v, R)
    return LatticeWeights(b.origin, harmonic_measure(b, v).weights)


def circle_average(config: FieldConfig, v: Vertex, R: float) -> float:
    """C_R(v, φ) = Σ_y a_{B_R(v)}(v, y) φ(y).

    The ball may leave the domain only for zero-boundary fields, which are
    extended by zero.
    """
    v = (int(v[0]), int(v[1]))
    return circle_weights(v, float(R)).dot(config)


@lru_cache(maxsize=256)
def window_weights(v: Vertex, center: float, scale: float, gamma: float) -> LatticeWeights:
    w = radius_window(center, scale, gamma)
    return _combine([(w.weight, circle_weights(v, float(r))) for r in w.radii])


@dataclass
class HarmonicAverageSample:
    k: int
    X_r: float
    X_plus: float
    X_minus: float
    X_next: float
    A: float
    E: float


def _process_weights(v: Vertex, k: int, ladder: ScaleLadder) -> dict[str, LatticeWeights]:
    g = ladder.gamma
    return {
        "X_r": window_weights(v, ladder.r(k), ladder.r(k), g),
        "X_plus": window_weights(v, ladder.r_plus(k), ladder.r(k), g),
        "X_minus": window_weights(v, ladder.r_minus(k), ladder.r(k), g),
        "X_next": window_weights(v, ladder.r(k + 1), ladder.r(k + 1), g),
    }


def window_report(k: int, ladder: ScaleLadder) -> dict[str, RadiusWindow]:
    g = ladder.gamma
    return {
        "X_r": radius_window(ladder.r(k), ladder.r(k), g),
        "X_plus": radius_window(ladder.r_plus(k), ladder.r(k), g),
        "X_minus": radius_window(ladder.r_minus(k), ladder.r(k), g),
        "X_next": radius_window(ladder.r(k + 1), ladder.r(k + 1), g),
    }


def x_process(config: FieldConfig, v: Vertex, k: int, ladder: ScaleLadder) -> HarmonicAverageSample:
    """X_{r_k}, X_{r_{k,±}}, X_{r_{k+1}}, A_k = X_{r_{k+1}} − X_{r_{k,−}} and 𝓔_k = X_{r_k} − X_{r_{k,−}}."""
    v = (int(v[0]), int(v[1]))
    vals = {name: w.dot(config) for name, w in _process_weights(v, k, ladder).items()}
    return HarmonicAverageSample(k, vals["X_r"], vals["X_plus"], vals["X_minus"], vals["X_next"],
                                 vals["X_next"] - vals["X_minus"], vals["X_r"] - vals["X_minus"])


@dataclass
class AnnulusWeights:
    center: Vertex
    k: int
    weights: LatticeWeights

    @property
    def positive_sum(self) -> float:
        return float(self.weights.array[self.weights.array > 0].sum())

    @property
    def negative_sum(self) -> float:
        return float(-self.weights.array[self.weights.array < 0].sum())

    def dot(self, config: FieldConfig) -> float:
        return self.weights.dot(config)


def rho_weights(v: Vertex, k: int, ladder: ScaleLadder) -> AnnulusWeights:
    """ρ = (window average around r_{k+1}) − (window average around r_{k,−}), so A_k = Σ ρ φ.

    The two windows are disjoint, so the positive and negative parts are
    the two averaged harmonic measures and each sums to one.
    """
    v = (int(v[0]), int(v[1]))
    w = _process_weights(v, k, ladder)
    inner = window_report(k, ladder)["X_next"]
    outer = window_report(k, ladder)["X_minus"]
    if max(inner.radii) >= min(outer.radii):
        raise ValueError(f"windows overlap at k={k}: radii {inner.radii} and {outer.radii}")
    return AnnulusWeights(v, k, _combine([(1.0, w["X_next"]), (-1.0, w["X_minus"])]))


class ProcessEvaluator:
    """Evaluates (X, A_k, 𝓔_k) on stacks of configurations of one domain."""

    def __init__(self, domain: Domain, ladder: ScaleLadder, ks, v: Vertex = (0, 0),
                 zero_boundary: bool = True):
        self.domain, self.ladder, self.v = domain, ladder, (int(v[0]), int(v[1]))
        self.ks = list(ks)
        self.arrays: dict[str, np.ndarray] = {}
        self.zero_extended = False
        for k in self.ks:
            for name, w in _process_weights(self.v, k, ladder).items():
                arr, dropped = w.on(domain)
                if dropped and not zero_boundary:
                    raise DomainError(f"window {name} at k={k} leaves the domain")
                self.zero_extended |= dropped
                self.arrays[f"{name}_{k}"] = arr

    def names(self) -> list[str]:
        out = []
        for k in self.ks:
            out += [f"X_r_{k}", f"X_plus_{k}", f"X_minus_{k}", f"X_next_{k}", f"A_{k}", f"E_{k}"]
        return out

    def __call__(self, stack: np.ndarray) -> dict[str, np.ndarray]:
        stack = np.asarray(stack, dtype=float)
        if stack.ndim == 2:
            stack = stack[None]
        out = {name: np.tensordot(stack, arr, axes=([1, 2], [0, 1])) for name, arr in self.arrays.items()}
        for k in self.ks:
            out[f"A_{k}"] = out[f"X_next_{k}"] - out[f"X_minus_{k}"]
            out[f"E_{k}"] = out[f"X_r_{k}"] - out[f"X_minus_{k}"]
        return out

    def gaussian_variance(self, name: str) -> float:
        """Var under the quadratic-potential measure with zero boundary data."""
        if name.startswith("A_") or name.startswith("E_"):
            k = name[2:]
            a = self.arrays[f"X_next_{k}" if name[0] == "A" else f"X_r_{k}"]
            w = a - self.arrays[f"X_minus_{k}"]
        else:
            w = self.arrays[name]
        return quad_form(self.domain, w)


@dataclass
class AnnihilationReport:
    max_residual: float
    max_ratio: float
    tolerance: float
    trials: int

    @property
    def ok(self) -> bool:
        return self.max_ratio <= self.tolerance


def check_harmonic_annihilation(weights: AnnulusWeights, trials: int = 100, seed: int = 0,
                                tolerance: float = 1e-8, radius: float | None = None) -> AnnihilationReport:
    """Σ ρ h for harmonic extensions h of random boundary data on a ball around the support.

    Reports max |Σ ρ h| and max |Σ ρ h| / (‖ρ‖₁ ‖h‖_∞).
    """
    v = weights.center
    X, Y, w = weights.weights.points()
    reach = float(np.sqrt(np.max((X - v[0]) ** 2 + (Y - v[1]) ** 2)))
    R = max(radius or 0.0, reach + 1.0)
    b = Ball(v, R)
    warr, dropped = weights.weights.on(b)
    if dropped or np.any(warr[b.boundary_mask] != 0):
        raise DomainError("weights not supported inside the test ball")
    rng = np.random.default_rng(seed)
    l1 = weights.weights.l1
    worst_abs = worst_ratio = 0.0
    for _ in range(trials):
        data = np.where(b.boundary_mask, rng.uniform(-1.0, 1.0, b.shape), 0.0)
        h = harmonic_extension(b, data)
        r = abs(float(np.sum(warr * h)))
        hmax = float(np.max(np.abs(h[b.closure_mask])))
        worst_abs = max(worst_abs, r)
        worst_ratio = max(worst_ratio, r / (l1 * hmax) if hmax > 0 else 0.0)
    return AnnihilationReport(worst_abs, worst_ratio, tolerance, trials)


@dataclass
class CouplingReport:
    ks_stat: float
    ks_pvalue: float
    bootstrap_pvalue: float
    n: int
    mean_f: float
    mean_zero: float
    max_abs_f: float


def coupling_probe(domain: Domain, f: BoundaryCondition, p: Potential, k: int, n_samples: int, seed: int = 0,
                   ladder: ScaleLadder | None = None, v: Vertex = (0, 0), n_boot: int = 999,
                   exact_gaussian: bool | None = None, **sampler_kw) -> CouplingReport:
    """Two-sample comparison of A_k(v, ·) under boundary data f and under zero data.

    The decoupling estimate needs |f| ≤ 2 (log R)² with R the domain scale;
    larger data are rejected.
    """
    if ladder is None:
        scale = domain.radius if isinstance(domain, Ball) else max(domain.shape) // 2
        ladder = ScaleLadder(int(scale))
    R = ladder.N
    if not f.within_decoupling_range(R):
        raise ValueError(f"max|f| = {f.max_abs:.4g} exceeds 2(log R)^2 = {2 * math.log(R) ** 2:.4g}")
    ev = ProcessEvaluator(domain, ladder, [k], v, zero_boundary=False)
    name = f"A_{k}"
    if exact_gaussian is None:
        exact_gaussian = p.name == "quadratic"
    seeds = np.random.SeedSequence(seed).generate_state(3)
    series = []
    for bc, s in ((f, seeds[0]), (BoundaryCondition.zero(domain), seeds[1])):
        if exact_gaussian:
            batch = exact_gaussian_sample(domain, bc, n_samples, seed=int(s), observe=ev, store=False)
        else:
            batch = sample_batch(domain, bc, p, n_samples, seed=int(s), observe=ev, store=False, **sampler_kw)
        series.append(batch.observables[name])
    a, b = series
    stat, pval = ks_two_sample(a, b)
    rng = np.random.default_rng(seeds[2])
    pooled = np.concatenate([a, b])
    exceed = 0
    for _ in range(n_boot):
        x = rng.choice(pooled, a.size)
        y = rng.choice(pooled, b.size)
        exceed += ks_two_sample(x, y)[0] >= stat
    return CouplingReport(stat, pval, (1 + exceed) / (n_boot + 1), a.size, float(a.mean()), float(b.mean()),
                          f.max_abs)


def export_weights_csv(path, weights: LatticeWeights) -> None:
    X, Y, w = weights.points()
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "y", "value"])
        for a, b, c in zip(X, Y, w):
            wr.writerow([int(a), int(b), repr(float(c))])


def export_process_csv(path, seed: int, observables: dict[str, np.ndarray], ks) -> None:
    """One row per (seed, config index, k) with X_{r_k}, X_{r_{k,±}}, X_{r_{k+1}}, A_k, 𝓔_k."""
    cols = ["X_r", "X_plus", "X_minus", "X_next", "A", "E"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["seed", "config", "k"] + cols)
        n = len(next(iter(observables.values())))
        for i in range(n):
            for k in ks:
                wr.writerow([seed, i, k] + [repr(float(observables[f"{c}_{k}"][i])) for c in cols])


def green_variance(weights: LatticeWeights, domain: Domain) -> float:
    """Σ w G w for zero-boundary data (weights outside the domain see φ = 0)."""
    arr, _ = weights.on(domain)
    return quad_form(domain, arr)


__all__ = [
    "ScaleLadder", "RadiusWindow", "radius_window", "LatticeWeights", "circle_weights", "circle_average",
    "window_weights", "HarmonicAverageSample", "x_process", "window_report", "AnnulusWeights", "rho_weights",
    "ProcessEvaluator", "AnnihilationReport", "check_harmonic_annihilation", "CouplingReport",
    "coupling_probe", "export_weights_csv", "export_process_csv", "green_variance",
]
