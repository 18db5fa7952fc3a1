"""Interaction potentials V with their derivatives and convexity constants."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Func = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Potential:
    """V, V', V'' (vectorized) plus declared constants λ ≤ V'' ≤ Λ and Lip(V'') ≤ L.

    ``cos_eps`` is set when V belongs to the family ``t²/2 + eps·(cos t − 1)``;
    the compiled samplers use it, everything else goes through the callables.
    """

    name: str
    eval: Func = field(repr=False)
    d1: Func = field(repr=False)
    d2: Func = field(repr=False)
    lam: float
    Lam: float
    lipschitz_d2: float
    cos_eps: float | None = None

    @property
    def label(self) -> str:
        if self.cos_eps is not None and self.cos_eps > 0:
            return f"{self.name}(eps={self.cos_eps:g})"
        return self.name

    def spec(self) -> dict:
        d = {"kind": self.name}
        if self.name == "cos_perturbed":
            d["eps"] = self.cos_eps
        return d


def builtin_quadratic() -> Potential:
    return Potential(
        name="quadratic",
        eval=lambda t: 0.5 * np.square(t),
        d1=lambda t: np.asarray(t, dtype=float) * 1.0,
        d2=lambda t: np.ones_like(np.asarray(t, dtype=float)),
        lam=1.0,
        Lam=1.0,
        lipschitz_d2=0.0,
        cos_eps=0.0,
    )


def builtin_cos_perturbed(eps: float) -> Potential:
    """V(t) = t²/2 + eps·(cos t − 1), so V'' = 1 − eps·cos t ∈ [1 − eps, 1 + eps].

    This anharmonic choice is ours; the model only requires uniform convexity.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"cos_perturbed requires 0 < eps < 1, got {eps}")
    return Potential(
        name="cos_perturbed",
        eval=lambda t: 0.5 * np.square(t) + eps * (np.cos(t) - 1.0),
        d1=lambda t: t - eps * np.sin(t),
        d2=lambda t: 1.0 - eps * np.cos(t),
        lam=1.0 - eps,
        Lam=1.0 + eps,
        lipschitz_d2=eps,
        cos_eps=float(eps),
    )


def from_config(kind: str, eps: float | None = None) -> Potential:
    if kind == "quadratic":
        if eps not in (None, 0, 0.0):
            raise ValueError("potential 'quadratic' takes no eps")
        return builtin_quadratic()
    if kind == "cos_perturbed":
        if eps is None:
            raise ValueError("potential 'cos_perturbed' needs eps")
        return builtin_cos_perturbed(float(eps))
    raise ValueError(f"unknown potential kind {kind!r}")


@dataclass
class AssumptionReport:
    lam_hat: float
    Lam_hat: float
    symmetry_residual: float
    lipschitz_ratio: float
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_assumptions(p: Potential, grid_halfwidth: float = 50.0, step: float = 1e-3,
                       tol: float = 1e-12) -> AssumptionReport:
    """Empirical check of symmetry, λ ≤ V'' ≤ Λ and the Lipschitz bound of V''."""
    if step <= 0:
        raise ValueError("step must be positive")
    n = int(round(grid_halfwidth / step))
    t = np.arange(-n, n + 1) * step
    d2 = np.asarray(p.d2(t), dtype=float)
    lam_hat, Lam_hat = float(d2.min()), float(d2.max())
    sym = float(np.max(np.abs(p.eval(t) - p.eval(-t))))
    lip = float(np.max(np.abs(np.diff(d2))) / step) if t.size > 1 else 0.0

    violations = []
    if lam_hat < p.lam - tol:
        violations.append(f"min V'' = {lam_hat:.6g} below declared lambda = {p.lam:.6g}")
    if Lam_hat > p.Lam + tol:
        violations.append(f"max V'' = {Lam_hat:.6g} above declared Lambda = {p.Lam:.6g}")
    if sym > tol * max(1.0, float(np.max(np.abs(p.eval(t))))):
        violations.append(f"symmetry residual {sym:.3g}")
    if lip > p.lipschitz_d2 + max(tol, 1e-9):
        violations.append(f"Lipschitz ratio of V'' = {lip:.6g} exceeds declared L = {p.lipschitz_d2:.6g}")
    if p.lam <= 0:
        violations.append("declared lambda must be positive")
    return AssumptionReport(lam_hat, Lam_hat, sym, lip, violations)


def fd_consistency(p: Potential, h: float, t: np.ndarray | None = None) -> float:
    """Max |central difference of V − V'| over a grid."""
    if t is None:
        t = np.linspace(-10, 10, 2001)
    fd = (p.eval(t + h) - p.eval(t - h)) / (2 * h)
    return float(np.max(np.abs(fd - p.d1(t))))


def conditional_log_density(p: Potential, u: np.ndarray, nbrs: np.ndarray) -> np.ndarray:
    """−Σ_j V(u − y_j) for each row of neighbor values (unnormalized log density)."""
    u = np.asarray(u, dtype=float)
    return -np.sum(p.eval(u[..., None] - nbrs), axis=-1)

