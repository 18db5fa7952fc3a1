"""Lattice geometry: square domains Q_N, lattice balls, triadic cubes, edges.

Every domain lives on a rectangular bounding grid.  Array index ``[i, j]``
corresponds to the lattice point ``(origin[0] + i, origin[1] + j)``, so for
the square ``Q_N`` the vertex ``(x, y)`` sits at ``[x + N, y + N]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator

import numpy as np

Vertex = tuple[int, int]

_NEIGHBOR_OFFSETS = ((1, 0), (-1, 0), (0, 1), (0, -1))


class DomainError(ValueError):
    """Raised for degenerate or inconsistent lattice domains."""


def _outer_boundary(mask: np.ndarray) -> np.ndarray:
    """Vertices outside ``mask`` at graph distance 1 from it (mask must be padded)."""
    grown = np.zeros_like(mask)
    grown[1:, :] |= mask[:-1, :]
    grown[:-1, :] |= mask[1:, :]
    grown[:, 1:] |= mask[:, :-1]
    grown[:, :-1] |= mask[:, 1:]
    return grown & ~mask


class Domain:
    """Common interface of lattice domains.

    Subclasses provide ``origin``, ``interior_mask`` and ``boundary_mask`` on a
    bounding grid.  The interior holds the free heights; the boundary holds the
    Dirichlet data.
    """

    origin: Vertex
    interior_mask: np.ndarray
    boundary_mask: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.interior_mask.shape

    @cached_property
    def closure_mask(self) -> np.ndarray:
        return self.interior_mask | self.boundary_mask

    @property
    def vertex_mask(self) -> np.ndarray:
        """The domain's own vertex set (see subclasses)."""
        return self.closure_mask

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Lattice coordinates ``(X, Y)`` of every grid cell."""
        nx, ny = self.shape
        x = np.arange(nx) + self.origin[0]
        y = np.arange(ny) + self.origin[1]
        return np.meshgrid(x, y, indexing="ij")

    def index(self, v: Vertex) -> tuple[int, int]:
        i, j = v[0] - self.origin[0], v[1] - self.origin[1]
        nx, ny = self.shape
        if not (0 <= i < nx and 0 <= j < ny):
            raise DomainError(f"vertex {v} outside the bounding grid of {self!r}")
        return i, j

    def contains(self, v: Vertex) -> bool:
        try:
            i, j = self.index(v)
        except DomainError:
            return False
        return bool(self.vertex_mask[i, j])

    def is_interior(self, v: Vertex) -> bool:
        try:
            i, j = self.index(v)
        except DomainError:
            return False
        return bool(self.interior_mask[i, j])

    def _points(self, mask: np.ndarray) -> set[Vertex]:
        X, Y = self.coords
        return {(int(a), int(b)) for a, b in zip(X[mask], Y[mask])}

    @property
    def vertices(self) -> set[Vertex]:
        return self._points(self.vertex_mask)

    @property
    def interior(self) -> set[Vertex]:
        return self._points(self.interior_mask)

    @property
    def boundary(self) -> set[Vertex]:
        return self._points(self.boundary_mask)

    @property
    def n_interior(self) -> int:
        return int(self.interior_mask.sum())

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def descriptor(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        return json.dumps(self.descriptor(), sort_keys=True)


@dataclass(frozen=True, eq=False)
class LatticeDomain(Domain):
    """The square Q_N = [-N, N]^2 with its outermost ring as boundary."""

    half_width: int

    def __post_init__(self):
        if int(self.half_width) != self.half_width or self.half_width < 1:
            raise DomainError(f"degenerate domain: half_width={self.half_width} must be an integer >= 1")

    def __eq__(self, other):
        return isinstance(other, LatticeDomain) and other.half_width == self.half_width

    def __hash__(self):
        return hash(("square", self.half_width))

    def __repr__(self):
        return f"LatticeDomain(N={self.half_width})"

    @property
    def N(self) -> int:
        return self.half_width

    @property
    def origin(self) -> Vertex:
        return (-self.half_width, -self.half_width)

    @cached_property
    def interior_mask(self) -> np.ndarray:
        n = 2 * self.half_width + 1
        m = np.zeros((n, n), dtype=bool)
        m[1:-1, 1:-1] = True
        return m

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        return ~self.interior_mask

    @property
    def center_index(self) -> tuple[int, int]:
        return (self.half_width, self.half_width)

    def descriptor(self) -> dict:
        return {"kind": "square", "N": self.half_width}


def build_square(N: int) -> LatticeDomain:
    return LatticeDomain(N)


@dataclass(frozen=True, eq=False)
class Ball(Domain):
    """B_R(v) = {y : |v - y|^2 < R^2} with its outer vertex boundary.

    The vertex set is the interior; the boundary is the first layer outside,
    i.e. the exit set of simple random walk started inside.
    """

    center: Vertex
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", (int(self.center[0]), int(self.center[1])))

    def __eq__(self, other):
        return isinstance(other, Ball) and other.center == self.center and other.radius == self.radius

    def __hash__(self):
        return hash(("ball", self.center, self.radius))

    def __repr__(self):
        return f"Ball(center={self.center}, R={self.radius})"

    @cached_property
    def _reach(self) -> int:
        # largest |coordinate offset| of a ball vertex, plus one boundary layer
        return int(np.ceil(self.radius)) + 1

    @property
    def origin(self) -> Vertex:
        return (self.center[0] - self._reach, self.center[1] - self._reach)

    @cached_property
    def interior_mask(self) -> np.ndarray:
        r = self._reach
        d = np.arange(-r, r + 1)
        dx, dy = np.meshgrid(d, d, indexing="ij")
        return dx * dx + dy * dy < self.radius * self.radius

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        return _outer_boundary(self.interior_mask)

    @property
    def vertex_mask(self) -> np.ndarray:
        return self.interior_mask

    @property
    def center_index(self) -> tuple[int, int]:
        return (self._reach, self._reach)

    def translate(self, v: Vertex) -> "Ball":
        return Ball(v, self.radius)

    def descriptor(self) -> dict:
        return {"kind": "ball", "center": list(self.center), "R": self.radius}


def ball(v: Vertex, R: float) -> Ball:
    return Ball(v, R)


@dataclass(frozen=True, eq=False)
class VertexSetDomain(Domain):
    """A finite vertex set with its outer vertex boundary (used for tiny test domains)."""

    points: frozenset

    def __post_init__(self):
        if not self.points:
            raise DomainError("empty vertex set")
        object.__setattr__(self, "points", frozenset((int(a), int(b)) for a, b in self.points))

    def __eq__(self, other):
        return isinstance(other, VertexSetDomain) and other.points == self.points

    def __hash__(self):
        return hash(("set", self.points))

    @property
    def origin(self) -> Vertex:
        xs = [p[0] for p in self.points]
        ys = [p[1] for p in self.points]
        return (min(xs) - 1, min(ys) - 1)

    @cached_property
    def interior_mask(self) -> np.ndarray:
        xs = [p[0] for p in self.points]
        ys = [p[1] for p in self.points]
        ox, oy = self.origin
        m = np.zeros((max(xs) - ox + 2, max(ys) - oy + 2), dtype=bool)
        for a, b in self.points:
            m[a - ox, b - oy] = True
        return m

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        return _outer_boundary(self.interior_mask)

    @property
    def vertex_mask(self) -> np.ndarray:
        return self.interior_mask

    def descriptor(self) -> dict:
        return {"kind": "vertex_set", "points": sorted(list(p) for p in self.points)}


def path_domain(length: int) -> VertexSetDomain:
    """Horizontal path of ``length`` free vertices starting at the origin."""
    return VertexSetDomain(frozenset((i, 0) for i in range(length)))


def domain_from_descriptor(d: dict) -> Domain:
    kind = d.get("kind")
    if kind == "square":
        return LatticeDomain(int(d["N"]))
    if kind == "ball":
        return Ball(tuple(d["center"]), float(d["R"]))
    if kind == "vertex_set":
        return VertexSetDomain(frozenset(tuple(p) for p in d["points"]))
    raise DomainError(f"unknown domain kind {kind!r}")


@dataclass(frozen=True)
class TriadicCube:
    """Triadic cube of level m: ``center + [-(3^m-1)/2, (3^m-1)/2]^2``.

    Cells of level m centred on ``3^m Z^2`` tile a level-n cube exactly, which
    is what the partition and cell-average machinery needs.
    """

    level: int
    center: Vertex = (0, 0)

    def __post_init__(self):
        if self.level < 0:
            raise DomainError("triadic level must be >= 0")

    @property
    def side(self) -> int:
        return 3 ** self.level

    @property
    def half(self) -> int:
        return (3 ** self.level - 1) // 2

    @property
    def lower(self) -> Vertex:
        return (self.center[0] - self.half, self.center[1] - self.half)

    @property
    def upper(self) -> Vertex:
        return (self.center[0] + self.half, self.center[1] + self.half)

    @property
    def vertices(self) -> set[Vertex]:
        (x0, y0), (x1, y1) = self.lower, self.upper
        return {(x, y) for x in range(x0, x1 + 1) for y in range(y0, y1 + 1)}

    def slices(self, origin: Vertex = (0, 0)) -> tuple[slice, slice]:
        """Array slices selecting this cube on a grid with the given origin."""
        (x0, y0), (x1, y1) = self.lower, self.upper
        return (slice(x0 - origin[0], x1 - origin[0] + 1), slice(y0 - origin[1], y1 - origin[1] + 1))

    def as_domain(self) -> "BoxDomain":
        return BoxDomain(self.lower, self.upper)


def triadic_partition(n: int, m: int, center: Vertex = (0, 0)) -> list[TriadicCube]:
    """Level-m cells ``{y + cube_m : y in 3^m Z^2 ∩ cube_n}`` of the level-n cube."""
    if m < 0 or n < 0:
        raise DomainError("levels must be >= 0")
    if m > n:
        raise DomainError(f"cell level m={m} exceeds parent level n={n}")
    k = 3 ** (n - m)
    step = 3 ** m
    offs = [(i - (k - 1) // 2) * step for i in range(k)]
    return [TriadicCube(m, (center[0] + a, center[1] + b)) for a in offs for b in offs]


@dataclass(frozen=True, eq=False)
class BoxDomain(Domain):
    """Closed axis-parallel box ``[lower, upper]`` with its outer ring as boundary."""

    lower: Vertex
    upper: Vertex

    def __post_init__(self):
        if self.upper[0] - self.lower[0] < 1 or self.upper[1] - self.lower[1] < 1:
            raise DomainError("box must span at least two vertices per axis")

    def __eq__(self, other):
        return isinstance(other, BoxDomain) and (self.lower, self.upper) == (other.lower, other.upper)

    def __hash__(self):
        return hash(("box", self.lower, self.upper))

    @property
    def origin(self) -> Vertex:
        return self.lower

    @cached_property
    def interior_mask(self) -> np.ndarray:
        m = np.zeros((self.upper[0] - self.lower[0] + 1, self.upper[1] - self.lower[1] + 1), dtype=bool)
        m[1:-1, 1:-1] = True
        return m

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        return ~self.interior_mask

    def descriptor(self) -> dict:
        return {"kind": "box", "lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class Edge:
    """Directed axis-positive edge, ``head - tail`` in {e1, e2}."""

    tail: Vertex
    head: Vertex

    def __post_init__(self):
        d = (self.head[0] - self.tail[0], self.head[1] - self.tail[1])
        if d not in ((1, 0), (0, 1)):
            raise DomainError(f"edge {self.tail}->{self.head} is not axis-positive unit length")

    @property
    def direction(self) -> int:
        return 0 if self.head[0] != self.tail[0] else 1


def edge_masks(domain: Domain, kind: str = "internal") -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks of e1-edges (shape (nx-1, ny)) and e2-edges (shape (nx, ny-1)).

    ``kind="internal"``: both endpoints in the domain's vertex set.
    ``kind="touching"``: at least one endpoint interior, both in the closure.
    """
    if kind == "internal":
        V = domain.vertex_mask
        return V[1:, :] & V[:-1, :], V[:, 1:] & V[:, :-1]
    if kind == "touching":
        I, C = domain.interior_mask, domain.closure_mask
        ex = (I[1:, :] | I[:-1, :]) & C[1:, :] & C[:-1, :]
        ey = (I[:, 1:] | I[:, :-1]) & C[:, 1:] & C[:, :-1]
        return ex, ey
    raise ValueError(f"unknown edge kind {kind!r}")


def edges(domain: Domain, kind: str = "internal") -> list[Edge]:
    ex, ey = edge_masks(domain, kind)
    ox, oy = domain.origin
    out = [Edge((int(i) + ox, int(j) + oy), (int(i) + ox + 1, int(j) + oy)) for i, j in zip(*np.nonzero(ex))]
    out += [Edge((int(i) + ox, int(j) + oy), (int(i) + ox, int(j) + oy + 1)) for i, j in zip(*np.nonzero(ey))]
    return out


def gradients(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences along both axes: ``(phi(v+e1)-phi(v), phi(v+e2)-phi(v))``."""
    return values[1:, :] - values[:-1, :], values[:, 1:] - values[:, :-1]


def neighbors(v: Vertex) -> Iterator[Vertex]:
    for dx, dy in _NEIGHBOR_OFFSETS:
        yield (v[0] + dx, v[1] + dy)


@dataclass
class FieldConfig:
    """Height function on a domain's bounding grid.

    Values outside the closure are meaningless and kept at zero.
    """

    domain: Domain
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.domain.shape:
            raise DomainError(f"values shape {self.values.shape} != domain grid {self.domain.shape}")
        if not np.all(np.isfinite(self.values[self.domain.closure_mask])):
            raise DomainError("field values must be finite")

    def __getitem__(self, v: Vertex) -> float:
        return float(self.values[self.domain.index(v)])

    @property
    def boundary_is_zero(self) -> bool:
        return bool(np.all(self.values[self.domain.boundary_mask] == 0.0))

    def at(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Values at lattice points, zero-extended outside the closure.

        The zero extension is the convention for zero-boundary fields; for
        nonzero boundary data a point outside the closure is an error.
        """
        xs = np.asarray(xs)
        ys = np.asarray(ys)
        i = xs - self.domain.origin[0]
        j = ys - self.domain.origin[1]
        nx, ny = self.domain.shape
        inside = (i >= 0) & (i < nx) & (j >= 0) & (j < ny)
        ii, jj = np.where(inside, i, 0), np.where(inside, j, 0)
        inside &= self.domain.closure_mask[ii, jj]
        if not np.all(inside) and not self.boundary_is_zero:
            raise DomainError("lattice points outside the domain closure with nonzero boundary data")
        return np.where(inside, self.values[ii, jj], 0.0)

    def gradients(self) -> tuple[np.ndarray, np.ndarray]:
        return gradients(self.values)

    def copy(self) -> "FieldConfig":
        return FieldConfig(self.domain, self.values.copy())
