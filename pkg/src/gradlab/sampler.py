"""Sampling the gradient Gibbs measure on a lattice domain.

MCMC uses exact heat-bath conditionals (single sites, optionally followed by
dyadic block shifts, which are also exact Gibbs moves).  For the quadratic
potential an exact sampler factorizes the Dirichlet Laplacian.
"""
from __future__ import annotations

import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.fft
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import _kernels
from .elliptic import harmonic_extension, laplacian
from .lattice import Ball, Domain, FieldConfig, LatticeDomain
from .potential import Potential
from .stats import ess as _ess

MAX_PROPOSALS = 10**6
SNAPSHOT_MAGIC = b"GRDF"
SNAPSHOT_VERSION = 1

Observer = Callable[[np.ndarray], dict]


class SamplerError(RuntimeError):
    pass


@dataclass
class BoundaryCondition:
    """Dirichlet data f on a domain's boundary (stored on the bounding grid)."""

    domain: Domain
    values: np.ndarray = field(repr=False)
    kind: str = "explicit"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.domain.shape:
            raise ValueError(f"boundary values shape {v.shape} != domain grid {self.domain.shape}")
        self.values = np.where(self.domain.boundary_mask, v, 0.0)
        if self.kind not in ("zero", "explicit"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "zero" and np.any(self.values != 0.0):
            raise ValueError("zero boundary condition with nonzero values")

    @classmethod
    def zero(cls, domain: Domain) -> "BoundaryCondition":
        return cls(domain, domain.zeros(), "zero")

    @classmethod
    def explicit(cls, domain: Domain, values) -> "BoundaryCondition":
        """``values`` is a grid array or a function ``f(X, Y)`` of lattice coordinates."""
        if callable(values):
            X, Y = domain.coords
            values = np.asarray(values(X, Y), dtype=float)
        return cls(domain, values, "explicit")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or not np.any(self.values)

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def within_decoupling_range(self, R: float) -> bool:
        """|f| ≤ 2 (log R)², the boundary size allowed by the decoupling estimate."""
        return self.max_abs <= 2.0 * math.log(R) ** 2


@dataclass
class ChainState:
    field: FieldConfig
    sweep_count: int
    rng: np.random.Generator


@dataclass
class SampleBatch:
    domain: Domain
    bc: BoundaryCondition
    potential: str
    values: np.ndarray | None = field(repr=False)  # (count, nx, ny) or None when not stored
    observables: dict[str, np.ndarray] = field(repr=False)
    thinning: int
    burn_in: int
    seed: int
    moves: str
    ess: dict[str, float]
    warnings: list[str] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(next(iter(self.observables.values())))

    @property
    def configs(self) -> list[FieldConfig]:
        if self.values is None:
            raise ValueError("configurations were not stored for this batch")
        return [FieldConfig(self.domain, v) for v in self.values]


def center_index(domain: Domain) -> tuple[int, int]:
    """Grid index of the observed site: the domain center, else the origin of Z²."""
    if isinstance(domain, (LatticeDomain, Ball)):
        return domain.center_index
    return domain.index((0, 0))


def default_levels(domain: Domain) -> int:
    """Block levels b = 2..2^L with 2^L just covering the domain."""
    side = max(domain.shape)
    return max(1, int(math.ceil(math.log2(side))) - 1)


def _radius(domain: Domain) -> float:
    if isinstance(domain, LatticeDomain):
        return domain.N
    if isinstance(domain, Ball):
        return domain.radius
    return max(domain.shape) / 2.0


def default_schedule(domain: Domain, moves: str) -> tuple[int, int]:
    """(burn_in, thinning) in sweeps.

    Site moves: 20 N² and N²/4 (diffusive relaxation).  Multilevel moves:
    20 L² and L for L block levels, since block shifts relax all scales
    in O(1) sweeps each.  Both are heuristics; ESS is always reported.
    """
    if moves == "site":
        n = _radius(domain)
        return int(math.ceil(20 * n * n)), max(1, int(math.ceil(n * n / 4)))
    L = default_levels(domain)
    return 20 * L * L, L


def _site_sweep_numpy(phi: np.ndarray, interior: np.ndarray, p: Potential, rng: np.random.Generator,
                      diag: np.ndarray) -> None:
    """Checkerboard heat bath for potentials outside the compiled family."""
    nx, ny = phi.shape
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    for parity in (0, 1):
        sel = interior & ((I + J) % 2 == parity)
        ii, jj = np.nonzero(sel)
        nb = np.stack([phi[ii - 1, jj], phi[ii + 1, jj], phi[ii, jj - 1], phi[ii, jj + 1]], axis=1)
        c = nb.mean(axis=1)
        for _ in range(3):
            c = c - p.d1(c[:, None] - nb).sum(axis=1) / p.d2(c[:, None] - nb).sum(axis=1)
        h0 = p.eval(c[:, None] - nb).sum(axis=1)
        g0 = p.d1(c[:, None] - nb).sum(axis=1)
        prec = 4.0 * p.lam
        mean = c - g0 / prec
        out = np.empty_like(c)
        todo = np.arange(c.size)
        for _ in range(MAX_PROPOSALS):
            if todo.size == 0:
                break
            u = mean[todo] + rng.standard_normal(todo.size) / math.sqrt(prec)
            diag[0] += todo.size
            hu = p.eval(u[:, None] - nb[todo]).sum(axis=1)
            du = u - c[todo]
            gap = hu - (h0[todo] + g0[todo] * du + 0.5 * prec * du * du)
            diag[1] += int(np.sum(gap < -1e-9 * (1.0 + np.abs(hu))))
            acc = rng.random(todo.size) < np.exp(-np.maximum(gap, -700.0))
            out[todo[acc]] = u[acc]
            todo = todo[~acc]
        if todo.size:
            diag[2] = _kernels.ENVELOPE_EXHAUSTED
            return
        phi[ii, jj] = out


def _run_sweeps(phi: np.ndarray, interior: np.ndarray, p: Potential, rng: np.random.Generator,
                n_sweeps: int, levels: int, diag: np.ndarray) -> None:
    if n_sweeps <= 0:
        return
    if p.cos_eps is not None:
        seed = int(rng.integers(0, 2**31 - 1))
        _kernels.sweep(phi, interior, float(p.cos_eps), float(p.lam), seed, int(n_sweeps), int(levels),
                       MAX_PROPOSALS, diag)
    else:
        if levels > 0:
            raise SamplerError("block moves need a potential from the compiled cos family")
        for _ in range(n_sweeps):
            _site_sweep_numpy(phi, interior, p, rng, diag)
            if diag[2] != _kernels.OK:
                break
    if diag[2] != _kernels.OK:
        raise SamplerError(
            f"envelope rejection exhausted {MAX_PROPOSALS} proposals at one update "
            f"({int(diag[0])} proposals so far, {int(diag[1])} envelope violations); "
            f"the potential's declared lambda={p.lam} is likely wrong")
    if diag[1] > 0:
        raise SamplerError(f"Gaussian envelope violated {int(diag[1])} times: V'' < declared lambda={p.lam}")


def heat_bath_sweep(state: ChainState, p: Potential, levels: int = 0) -> ChainState:
    """One checkerboard sweep of exact single-site conditionals (plus ``levels`` block passes).

    The field is updated in place; boundary values are never touched.
    """
    dom = state.field.domain
    diag = np.zeros(3, dtype=np.int64)
    _run_sweeps(state.field.values, dom.interior_mask.astype(np.uint8), p, state.rng, 1, levels, diag)
    state.sweep_count += 1
    return state


def _initial_field(domain: Domain, bc: BoundaryCondition) -> np.ndarray:
    if bc.is_zero:
        return domain.zeros()
    return harmonic_extension(domain, bc.values)


def _chain(domain: Domain, bc: BoundaryCondition, p: Potential, n: int, burn_in: int, thinning: int,
           levels: int, seq: np.random.SeedSequence, observe: Observer | None, store: bool,
           init: np.ndarray | None) -> tuple[np.ndarray | None, dict, dict]:
    rng = np.random.default_rng(seq)
    phi = (_initial_field(domain, bc) if init is None else np.array(init, dtype=float)).copy()
    phi[domain.boundary_mask] = bc.values[domain.boundary_mask]
    interior = domain.interior_mask.astype(np.uint8)
    diag = np.zeros(3, dtype=np.int64)
    ci = center_index(domain)
    _run_sweeps(phi, interior, p, rng, burn_in, levels, diag)
    stored = np.empty((n,) + phi.shape) if store else None
    obs: dict[str, list] = {"phi0": []}
    chunk: list[np.ndarray] = []

    def flush():
        if observe is not None and chunk:
            for k, v in observe(np.stack(chunk)).items():
                obs.setdefault(k, []).append(np.asarray(v, dtype=float))
        chunk.clear()

    for s in range(n):
        if s > 0:
            _run_sweeps(phi, interior, p, rng, thinning, levels, diag)
        obs["phi0"].append(np.array([phi[ci]]))
        if store:
            stored[s] = phi
        if observe is not None:
            chunk.append(phi.copy())
            if len(chunk) >= 64:
                flush()
    flush()
    return stored, {k: np.concatenate(v) for k, v in obs.items()}, {
        "proposals": int(diag[0]), "sweeps": burn_in + max(n - 1, 0) * thinning}


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("GRADLAB_THREADS", "1")))
    except ValueError:
        return 1


def sample_batch(domain: Domain, bc: BoundaryCondition | None, p: Potential, n_samples: int,
                 burn_in: int | None = None, thinning: int | None = None, seed: int = 0,
                 moves: str = "multilevel", n_chains: int = 1, observe: Observer | None = None,
                 store: bool = True, init: np.ndarray | None = None) -> SampleBatch:
    """Run ``n_chains`` independent heat-bath chains and collect ``n_samples`` in total.

    Sample s of a chain is taken after ``burn_in + s·thinning`` sweeps.
    ``moves="multilevel"`` adds dyadic block shifts to every sweep;
    ``"site"`` is the plain single-site heat bath.  ``observe`` maps a stack
    of configurations to named per-sample statistics, so large runs need not
    store fields (``store=False``).  Chains run on GRADLAB_THREADS threads;
    results do not depend on the thread count.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if moves not in ("site", "multilevel"):
        raise ValueError(f"unknown move set {moves!r}")
    bc = BoundaryCondition.zero(domain) if bc is None else bc
    if bc.domain != domain:
        raise ValueError("boundary condition belongs to another domain")
    b0, t0 = default_schedule(domain, moves)
    burn_in = b0 if burn_in is None else int(burn_in)
    thinning = t0 if thinning is None else int(thinning)
    if burn_in < 0 or thinning < 0:
        raise ValueError("burn_in and thinning must be non-negative")
    levels = default_levels(domain) if moves == "multilevel" else 0
    n_chains = max(1, min(int(n_chains), n_samples))
    sizes = [n_samples // n_chains + (1 if c < n_samples % n_chains else 0) for c in range(n_chains)]
    seqs = np.random.SeedSequence(seed).spawn(n_chains)
    args = [(domain, bc, p, sizes[c], burn_in, thinning, levels, seqs[c], observe, store, init)
            for c in range(n_chains)]
    workers = min(_threads(), n_chains)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(lambda a: _chain(*a), args))
    else:
        results = [_chain(*a) for a in args]

    values = np.concatenate([r[0] for r in results]) if store else None
    observables = {k: np.concatenate([r[1][k] for r in results]) for k in results[0][1]}
    ess = {}
    for k, series in observables.items():
        parts = np.split(series, np.cumsum(sizes)[:-1])
        ess[k] = float(min(series.size, sum(_ess(part) for part in parts)))
    warnings = []
    if burn_in == b0 and thinning == t0:
        warnings.append(f"heuristic burn-in/thinning defaults for {moves} moves")
    diagnostics = {"proposals": sum(r[2]["proposals"] for r in results),
                   "sweeps": sum(r[2]["sweeps"] for r in results), "levels": levels, "chains": n_chains}
    return SampleBatch(domain, bc, p.label, values, observables, thinning, burn_in, int(seed), moves,
                       ess, warnings, diagnostics)


# ----------------------------------------------------------------- exact Gaussian


def _is_rectangle(domain: Domain) -> bool:
    m = domain.interior_mask
    ii, jj = np.nonzero(m)
    if ii.size == 0:
        return False
    box = m[ii.min():ii.max() + 1, jj.min():jj.max() + 1]
    return bool(box.all()) and box.sum() == m.sum()


class _GaussianFactor:
    """Draws N(0, (∇*∇)^{-1}) on the interior of a domain."""

    def __init__(self, domain: Domain):
        self.domain = domain
        m = domain.interior_mask
        if _is_rectangle(domain):
            ii, jj = np.nonzero(m)
            self.sl = (slice(ii.min(), ii.max() + 1), slice(jj.min(), jj.max() + 1))
            a, b = ii.max() - ii.min() + 1, jj.max() - jj.min() + 1
            ka = 2.0 - 2.0 * np.cos(np.pi * np.arange(1, a + 1) / (a + 1))
            kb = 2.0 - 2.0 * np.cos(np.pi * np.arange(1, b + 1) / (b + 1))
            self.inv_sqrt = 1.0 / np.sqrt(ka[:, None] + kb[None, :])
            self.kind = "dst"
            return
        A = sp.csc_matrix(laplacian(domain).A)
        lu = splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise SamplerError("symmetric factorization of the Laplacian failed (pivoting occurred)")
        d = lu.U.diagonal()
        if np.any(d <= 0):
            raise SamplerError("Laplacian is not positive definite; the domain is malformed")
        self.Lt = sp.csr_matrix(lu.L.T)
        self.d_isqrt = 1.0 / np.sqrt(d)
        self.perm = lu.perm_c
        self.kind = "ldl"

    def draw(self, rng: np.random.Generator, k: int) -> np.ndarray:
        out = np.zeros((k,) + self.domain.shape)
        if self.kind == "dst":
            z = rng.standard_normal((k,) + self.inv_sqrt.shape)
            x = scipy.fft.idstn(z * self.inv_sqrt, type=1, norm="ortho", axes=(1, 2))
            out[(slice(None),) + self.sl] = x
            return out
        from scipy.sparse.linalg import spsolve_triangular

        z = rng.standard_normal((self.Lt.shape[0], k)) * self.d_isqrt[:, None]
        y = spsolve_triangular(self.Lt, z, lower=False, unit_diagonal=True)
        # Pr A Pc = L U with Pr = Pc^T, so x = Pc y
        x = y[self.perm]
        out[:, self.domain.interior_mask] = x.T
        return out


_FACTORS: dict = {}


def _factor(domain: Domain) -> _GaussianFactor:
    if domain not in _FACTORS:
        if len(_FACTORS) > 16:
            _FACTORS.clear()
        _FACTORS[domain] = _GaussianFactor(domain)
    return _FACTORS[domain]


def exact_gaussian_sample(domain: Domain, bc: BoundaryCondition | None, n_samples: int, seed: int = 0,
                          observe: Observer | None = None, store: bool = True,
                          chunk: int = 256) -> SampleBatch:
    """Independent draws from the quadratic-potential measure with boundary data f.

    Rectangular domains diagonalize the Laplacian with the type-I sine
    transform; other domains use a sparse LDLᵀ factorization.  The mean is
    the discrete-harmonic extension of f.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    bc = BoundaryCondition.zero(domain) if bc is None else bc
    mean = _initial_field(domain, bc)
    fac = _factor(domain)
    rng = np.random.default_rng(seed)
    ci = center_index(domain)
    stored = np.empty((n_samples,) + domain.shape) if store else None
    obs: dict[str, list] = {"phi0": []}
    done = 0
    while done < n_samples:
        k = min(chunk, n_samples - done)
        block = fac.draw(rng, k) + mean
        obs["phi0"].append(block[:, ci[0], ci[1]].copy())
        if store:
            stored[done:done + k] = block
        if observe is not None:
            for name, v in observe(block).items():
                obs.setdefault(name, []).append(np.asarray(v, dtype=float))
        done += k
    observables = {k: np.concatenate(v) for k, v in obs.items()}
    ess = {k: float(v.size) for k, v in observables.items()}
    return SampleBatch(domain, bc, "quadratic(exact)", stored, observables, 0, 0, int(seed), "exact", ess,
                       [], {"factorization": fac.kind})


# ----------------------------------------------------------------- events and snapshots


def max_abs_field(config: FieldConfig) -> float:
    return float(np.max(np.abs(config.values[config.domain.vertex_mask])))


def event_M_indicator(config: FieldConfig, R: float) -> bool:
    """The good event max_D |φ| < (log R)²."""
    return max_abs_field(config) < math.log(R) ** 2


def write_snapshot(path, values: np.ndarray, N: int) -> None:
    """Little-endian GRDF file: magic, version, N, count, then float64 fields row-major."""
    values = np.asarray(values, dtype="<f8")
    side = 2 * N + 1
    if values.ndim == 2:
        values = values[None]
    if values.shape[1:] != (side, side):
        raise ValueError(f"fields must be {side}x{side} for N={N}")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC + struct.pack("<III", SNAPSHOT_VERSION, N, values.shape[0]))
        fh.write(np.ascontiguousarray(values).tobytes())


def read_snapshot(path) -> tuple[int, np.ndarray]:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != SNAPSHOT_MAGIC:
            raise ValueError("not a GRDF snapshot")
        version, N, count = struct.unpack("<III", head[4:])
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        side = 2 * N + 1
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != count * side * side:
        raise ValueError("snapshot payload size does not match its header")
    return N, data.reshape(count, side, side).astype(float)
