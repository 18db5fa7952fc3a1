"""Discrete elliptic toolkit on lattice domains.

One solve primitive (Jacobi-preconditioned conjugate gradient on the SPD
graph Laplacian) backs Green functions, harmonic measure, harmonic
extension and the H^-1 norms.  Functions on a domain are arrays on its
bounding grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .lattice import Ball, BoxDomain, Domain, TriadicCube, Vertex, triadic_partition

CG_RTOL = 1e-12
RESIDUAL_TOL = 1e-10

# cumulative solver bookkeeping, reported in run manifests
SOLVER_STATS = {"solves": 0, "iterations": 0}


class SolverError(RuntimeError):
    pass


class GraphOperator:
    """Weighted graph Laplacian restricted to ``active`` vertices.

    ``(A u)(x) = Σ_{y∼x} c_xy (u(x) − u(y)) + mass·u(x)`` for active x, where
    neighbors in ``fixed`` contribute Dirichlet data and neighbors that are
    neither active nor fixed are dropped (free/Neumann edges).
    """

    def __init__(self, active: np.ndarray, fixed: np.ndarray, cx: np.ndarray | None = None,
                 cy: np.ndarray | None = None, mass: float = 0.0):
        self.active = np.asarray(active, dtype=bool)
        self.fixed = np.asarray(fixed, dtype=bool) & ~self.active
        nx, ny = self.active.shape
        cx = np.ones((nx - 1, ny)) if cx is None else np.asarray(cx, dtype=float)
        cy = np.ones((nx, ny - 1)) if cy is None else np.asarray(cy, dtype=float)
        self.cx, self.cy = cx, cy
        self.n = int(self.active.sum())
        idx = -np.ones(self.active.shape, dtype=np.int64)
        idx[self.active] = np.arange(self.n)
        self.idx = idx

        rows, cols, vals = [], [], []
        diag = np.zeros(self.n) + mass
        # boundary coupling: B maps fixed-vertex values to the rhs of active rows
        brow, bcol, bval = [], [], []
        flat = np.arange(nx * ny).reshape(nx, ny)
        for (c, a_sl, b_sl) in (
            (cx, (slice(None, -1), slice(None)), (slice(1, None), slice(None))),
            (cy, (slice(None), slice(None, -1)), (slice(None), slice(1, None))),
        ):
            act_a, act_b = self.active[a_sl], self.active[b_sl]
            fix_a, fix_b = self.fixed[a_sl], self.fixed[b_sl]
            ia, ib = idx[a_sl], idx[b_sl]
            fa, fb = flat[a_sl], flat[b_sl]
            both = act_a & act_b
            rows += [ia[both], ib[both]]
            cols += [ib[both], ia[both]]
            vals += [-c[both], -c[both]]
            np.add.at(diag, ia[both], c[both])
            np.add.at(diag, ib[both], c[both])
            m = act_a & fix_b
            np.add.at(diag, ia[m], c[m])
            brow.append(ia[m]); bcol.append(fb[m]); bval.append(c[m])
            m = act_b & fix_a
            np.add.at(diag, ib[m], c[m])
            brow.append(ib[m]); bcol.append(fa[m]); bval.append(c[m])
        rows.append(np.arange(self.n)); cols.append(np.arange(self.n)); vals.append(diag)
        self.A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(self.n, self.n))
        self.B = sp.csr_matrix((np.concatenate(bval), (np.concatenate(brow), np.concatenate(bcol))),
                               shape=(self.n, nx * ny))
        self.diag = diag

    def solve(self, rhs: np.ndarray | None = None, boundary: np.ndarray | None = None) -> np.ndarray:
        """Solve ``A u = rhs + (boundary coupling)``; returns u on the full grid.

        Active entries hold the solution, fixed entries the boundary data,
        everything else zero.
        """
        b = np.zeros(self.n)
        if rhs is not None:
            b += np.asarray(rhs, dtype=float)[self.active]
        out = np.zeros(self.active.shape)
        if boundary is not None:
            bd = np.where(self.fixed, np.asarray(boundary, dtype=float), 0.0)
            b += self.B @ bd.ravel()
            out[self.fixed] = bd[self.fixed]
        out[self.active] = self.solve_vector(b)
        return out

    def solve_vector(self, b: np.ndarray) -> np.ndarray:
        bnorm = float(np.linalg.norm(b))
        if bnorm == 0.0:
            return np.zeros(self.n)
        inv_d = 1.0 / self.diag
        M = LinearOperator((self.n, self.n), matvec=lambda r: inv_d * r, dtype=float)
        iters = [0]

        def _count(_):
            iters[0] += 1

        u, info = cg(self.A, b, rtol=CG_RTOL, atol=0.0, maxiter=10 * max(self.n, 1), M=M, callback=_count)
        res = float(np.linalg.norm(self.A @ u - b))
        SOLVER_STATS["solves"] += 1
        SOLVER_STATS["iterations"] += iters[0]
        if info != 0 or res > RESIDUAL_TOL * bnorm:
            raise SolverError(f"CG did not converge: info={info}, relative residual {res / bnorm:.3e}, "
                              f"{iters[0]} iterations, n={self.n}")
        return u

    def apply(self, u: np.ndarray) -> np.ndarray:
        """``A`` applied to the active part of a grid function (fixed values ignored)."""
        out = np.zeros(self.active.shape)
        out[self.active] = self.A @ np.asarray(u, dtype=float)[self.active]
        return out


@lru_cache(maxsize=64)
def laplacian(domain: Domain) -> GraphOperator:
    """Unit-conductance Dirichlet Laplacian of a domain (cached per domain)."""
    return GraphOperator(domain.interior_mask, domain.boundary_mask)


def apply_laplacian(domain: Domain, u: np.ndarray) -> np.ndarray:
    """(∇*∇u)(x) = Σ_{y∼x}(u(x) − u(y)) at interior x, using boundary values of u."""
    u = np.asarray(u, dtype=float)
    lap = laplacian(domain)
    out = lap.apply(u)
    bd = np.where(lap.fixed, u, 0.0)
    out[lap.active] -= lap.B @ bd.ravel()
    return out


def solve_dirichlet(domain: Domain, boundary_values: np.ndarray | None = None,
                    rhs: np.ndarray | None = None) -> np.ndarray:
    """u with ∇*∇u = rhs on the interior and u = boundary_values on the boundary."""
    return laplacian(domain).solve(rhs, boundary_values)


def green(domain: Domain, x: Vertex) -> np.ndarray:
    """Column G_D(x, ·) of the zero-Dirichlet Green function (grid array)."""
    if not domain.is_interior(x):
        raise ValueError(f"source {x} is not an interior vertex")
    rhs = domain.zeros()
    rhs[domain.index(x)] = 1.0
    return solve_dirichlet(domain, rhs=rhs)


def green_apply(domain: Domain, w: np.ndarray) -> np.ndarray:
    """Σ_y G(·, y) w(y) with w restricted to the interior."""
    return solve_dirichlet(domain, rhs=np.where(domain.interior_mask, w, 0.0))


def quad_form(domain: Domain, w: np.ndarray, w2: np.ndarray | None = None) -> float:
    """Σ_{x,y} w(x) G(x,y) w2(y) over interior vertices (w2 defaults to w)."""
    w = np.where(domain.interior_mask, np.asarray(w, dtype=float), 0.0)
    u = green_apply(domain, w if w2 is None else w2)
    return float(np.sum(w * u))


def embed(weights: np.ndarray, weights_domain: Domain, target: Domain) -> np.ndarray:
    """Move a grid array from one domain's bounding grid onto another's.

    Entries landing outside the target grid must be zero.
    """
    out = target.zeros()
    X, Y = weights_domain.coords
    nz = weights != 0
    i = X[nz] - target.origin[0]
    j = Y[nz] - target.origin[1]
    nx, ny = target.shape
    ok = (i >= 0) & (i < nx) & (j >= 0) & (j < ny)
    if not np.all(ok):
        raise ValueError("weights extend outside the target grid")
    np.add.at(out, (i, j), weights[nz])
    return out


@dataclass
class HarmonicWeights:
    ball: Ball
    center: Vertex
    weights: np.ndarray = field(repr=False)  # on the ball's grid, supported on the boundary

    def as_dict(self) -> dict[Vertex, float]:
        X, Y = self.ball.coords
        m = self.ball.boundary_mask
        return {(int(a), int(b)): float(w) for a, b, w in zip(X[m], Y[m], self.weights[m])}

    @property
    def total(self) -> float:
        return float(self.weights.sum())


def _harmonic_measure_adjoint(b: Ball, v: Vertex) -> np.ndarray:
    # a_B(v, y) = Σ_{x∈B, x∼y} G_B(v, x): exit through the last step x → y
    g = green(b, v)
    g = np.where(b.interior_mask, g, 0.0)
    s = np.zeros_like(g)
    s[1:, :] += g[:-1, :]
    s[:-1, :] += g[1:, :]
    s[:, 1:] += g[:, :-1]
    s[:, :-1] += g[:, 1:]
    return np.where(b.boundary_mask, s, 0.0)


def _harmonic_measure_indicator(b: Ball, v: Vertex) -> np.ndarray:
    # one Dirichlet solve per boundary vertex: u_y(v) = P(exit at y)
    out = b.zeros()
    iv = b.index(v)
    op = laplacian(b)
    for i, j in zip(*np.nonzero(b.boundary_mask)):
        data = b.zeros()
        data[i, j] = 1.0
        out[i, j] = op.solve(None, data)[iv]
    return out


@lru_cache(maxsize=512)
def _centered_harmonic_measure(radius: float, offset: Vertex, method: str) -> np.ndarray:
    b = Ball((0, 0), radius)
    if method == "adjoint":
        return _harmonic_measure_adjoint(b, offset)
    return _harmonic_measure_indicator(b, offset)


def harmonic_measure(b: Ball, v: Vertex | None = None, method: str = "adjoint") -> HarmonicWeights:
    """Exit distribution a_B(v, ·) of simple random walk from v on ∂B.

    ``method="adjoint"`` uses one Green solve; ``"indicator"`` solves one
    Dirichlet problem per boundary vertex (the brute-force route).
    """
    if method not in ("adjoint", "indicator"):
        raise ValueError(method)
    v = b.center if v is None else (int(v[0]), int(v[1]))
    if not b.is_interior(v):
        raise ValueError(f"{v} is not inside {b!r}")
    offset = (v[0] - b.center[0], v[1] - b.center[1])
    w = _centered_harmonic_measure(float(b.radius), offset, method).copy()
    return HarmonicWeights(b, v, w)


def harmonic_extension(domain: Domain, boundary_data: np.ndarray) -> np.ndarray:
    return solve_dirichlet(domain, boundary_values=boundary_data)


def _edge_energy(u: np.ndarray, domain: Domain) -> float:
    C = domain.closure_mask
    gx, gy = u[1:, :] - u[:-1, :], u[:, 1:] - u[:, :-1]
    mx, my = C[1:, :] & C[:-1, :], C[:, 1:] & C[:, :-1]
    return float(np.sum(gx[mx] ** 2) + np.sum(gy[my] ** 2))


def h_minus_one_norm(f: np.ndarray, domain: Domain, normalized: bool = True, kind: str = "dirichlet") -> float:
    """H^-1 norm of f by the variational solve.

    ``kind="dirichlet"``: ‖∇u‖ with ∇*∇u = f in the interior, u = 0 on ∂.
    ``kind="neumann"``: dual of H¹ without boundary condition, realised by
    (∇*∇ + side⁻²) u = f on the whole closure with free edges; the norm is
    (‖∇u‖² + side⁻²‖u‖²)^{1/2}.
    ``normalized`` divides the squared sums by the vertex count |Q|.
    """
    f = np.asarray(f, dtype=float)
    C = domain.closure_mask
    vol = int(C.sum())
    if kind == "dirichlet":
        u = solve_dirichlet(domain, rhs=f)
        e = _edge_energy(np.where(domain.interior_mask, u, 0.0), domain)
    elif kind == "neumann":
        side = float(max(domain.shape))
        mass = side ** -2
        op = _neumann_operator(domain, mass)
        u = op.solve(np.where(C, f, 0.0))
        e = _edge_energy(u, domain) + mass * float(np.sum(u[C] ** 2))
    else:
        raise ValueError(kind)
    return float(np.sqrt(e / vol if normalized else e))


@lru_cache(maxsize=32)
def _neumann_operator(domain: Domain, mass: float) -> GraphOperator:
    return GraphOperator(domain.closure_mask, np.zeros(domain.shape, dtype=bool), mass=mass)


def cube_domain(m: int, center: Vertex = (0, 0)) -> BoxDomain:
    return TriadicCube(m, center).as_domain()


@dataclass
class PoincareReport:
    lhs: float
    rhs_terms: list[float]
    constant: float

    @property
    def rhs_unit(self) -> float:
        return float(sum(self.rhs_terms))


def multiscale_poincare_check(f: np.ndarray, m: int) -> PoincareReport:
    """Compare ‖f‖_{H^-1(□_m)} with ‖f‖_{L²} + Σ_{n<m} 3^n (mean cell average²)^{1/2}.

    ``f`` is an array of shape (3^m, 3^m) on □_m.  The reported constant is
    the smallest C making the inequality hold for this f (0 when f = 0).
    """
    f = np.asarray(f, dtype=float)
    side = 3 ** m
    if f.shape != (side, side):
        raise ValueError(f"f must have shape {(side, side)}")
    dom = cube_domain(m)
    lhs = h_minus_one_norm(f, dom)
    terms = [float(np.sqrt(np.mean(f ** 2)))]
    for n in range(m):
        s = 3 ** n
        k = side // s
        avgs = f.reshape(k, s, k, s).mean(axis=(1, 3))
        terms.append(3 ** n * float(np.sqrt(np.mean(avgs ** 2))))
    total = sum(terms)
    const = lhs / total if total > 0 else 0.0
    return PoincareReport(lhs, terms, const)


@dataclass
class OscillationReport:
    lhs: float
    rhs: float
    constant: float


def gradient_components(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """∇_i u(x) = u(x+e_i) − u(x) as vertex functions (zero where x+e_i leaves the array)."""
    g1 = np.zeros_like(u)
    g2 = np.zeros_like(u)
    g1[:-1, :] = u[1:, :] - u[:-1, :]
    g2[:, :-1] = u[:, 1:] - u[:, :-1]
    return g1, g2


def l2_oscillation_vs_gradient(u: np.ndarray, m: int, zero_boundary: bool = False) -> OscillationReport:
    """‖u − (u)_□‖_{L²} against ‖∇u‖_{H^-1} on □_m (normalized norms).

    Without ``zero_boundary`` the H^-1 norm is the dual of H¹ (no boundary
    condition on test functions) and the mean is subtracted; with it, u is
    taken in H¹_0 and compared as is against the Dirichlet dual norm.
    """
    u = np.asarray(u, dtype=float)
    dom = cube_domain(m)
    if u.shape != dom.shape:
        raise ValueError(f"u must have shape {dom.shape}")
    if zero_boundary:
        lhs = float(np.sqrt(np.mean(u ** 2)))
        kind = "dirichlet"
    else:
        lhs = float(np.sqrt(np.mean((u - u.mean()) ** 2)))
        kind = "neumann"
    g1, g2 = gradient_components(u)
    rhs = float(np.hypot(h_minus_one_norm(g1, dom, kind=kind), h_minus_one_norm(g2, dom, kind=kind)))
    if lhs == 0.0:
        return OscillationReport(lhs, rhs, 0.0)
    return OscillationReport(lhs, rhs, lhs / rhs if rhs > 0 else float("inf"))


def bl_bound_linear(rho: np.ndarray, lam: float, domain: Domain) -> float:
    """(1/λ) Σ G(x,y) ρ(x) ρ(y): variance bound for the linear observable Σ ρ φ."""
    return quad_form(domain, rho) / lam


def cell_averages(f: np.ndarray, m: int, n: int) -> np.ndarray:
    """Averages of f over the level-n cells of □_m (array of shape (3^{m-n}, 3^{m-n}))."""
    cells = triadic_partition(m, n)
    k = 3 ** (m - n)
    base = TriadicCube(m).lower
    out = np.empty(len(cells))
    for i, c in enumerate(cells):
        out[i] = f[c.slices(base)].mean()
    return out.reshape(k, k)


# Largest constant seen over the random suite at m ≤ 3 was 0.96 (seeds 0 and 1);
# this rounded-up value is the one the suite is held to.
POINCARE_CONSTANT = 2.0


@dataclass
class PoincareSuite:
    """Smallest constants seen over a family of random test functions, per level m."""

    poincare: dict[int, float]
    oscillation: dict[int, float]
    trials: int

    @property
    def constant(self) -> float:
        return max(list(self.poincare.values()) + list(self.oscillation.values()))

    def violations(self, C: float) -> int:
        return sum(c > C for c in list(self.poincare.values()) + list(self.oscillation.values()))


def _random_field(rng: np.random.Generator, side: int, family: str) -> np.ndarray:
    x = (np.arange(side) + 0.5) / side
    X, Y = np.meshgrid(x, x, indexing="ij")
    if family == "white":
        return rng.standard_normal((side, side))
    if family == "smooth":
        a, b = rng.integers(1, 4, size=2)
        ph = rng.uniform(0, 2 * np.pi, size=2)
        return np.sin(np.pi * a * X + ph[0]) * np.cos(np.pi * b * Y + ph[1])
    if family == "blocks":
        s = 3 ** int(rng.integers(0, max(1, round(np.log(side) / np.log(3)))))
        k = side // s
        return np.kron(rng.standard_normal((k, k)), np.ones((s, s)))
    if family == "offset":
        return rng.normal() + 0.3 * rng.standard_normal((side, side))
    raise ValueError(family)


FAMILIES = ("white", "smooth", "blocks", "offset")


def poincare_suite(m_max: int = 3, trials: int = 20, seed: int = 0) -> PoincareSuite:
    """Run both inequalities on ``trials`` random functions of each family for m = 1..m_max."""
    rng = np.random.default_rng(seed)
    mp, osc = {}, {}
    for m in range(1, m_max + 1):
        side = 3 ** m
        c1 = c2 = 0.0
        for fam in FAMILIES:
            for _ in range(trials):
                c1 = max(c1, multiscale_poincare_check(_random_field(rng, side, fam), m).constant)
                c2 = max(c2, l2_oscillation_vs_gradient(_random_field(rng, side, fam), m).constant)
        mp[m], osc[m] = c1, c2
    return PoincareSuite(mp, osc, trials)
