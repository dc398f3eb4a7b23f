"""
Box geometry - the box [0, L)^d, its outer boundary and the edge set.

Edges are keyed canonically as (x, i): the unordered edge between x and
x + e_i, with 1-based direction i. The ordering of keys is the stationary
lexicographic order: first compare base vertices lexicographically, then
directions. Dataclass ordering on (x, i) gives exactly that.
"""

import itertools
import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterable, List, Sequence, Set, Tuple

import numpy as np

from .exceptions import DomainError

logger = logging.getLogger(__name__)

Point = Tuple[int, ...]


@dataclass(frozen=True, order=True)
class EdgeKey:
    """Canonical edge key (x, i), i in {1..d}"""
    x: Point
    i: int

    @property
    def axis(self) -> int:
        return self.i - 1

    @property
    def head(self) -> Point:
        """The endpoint x + e_i"""
        return tuple(c + (1 if k == self.axis else 0) for k, c in enumerate(self.x))

    def endpoints(self) -> Tuple[Point, Point]:
        return self.x, self.head

    def __str__(self) -> str:
        return f"({self.x}, {self.i})"


def shift_edge(e: EdgeKey, z: Sequence[int]) -> EdgeKey:
    """Translate an edge by z. Order preserving."""
    if len(z) != len(e.x):
        raise DomainError(f"shift {tuple(z)} does not match dimension {len(e.x)}")
    return EdgeKey(tuple(int(a) + int(b) for a, b in zip(e.x, z)), e.i)


@dataclass(frozen=True)
class BoxDomain:
    """
    The box [0, L)^d with boundary and edge set.

    Vertex index: interior vertices in lexicographic order come first
    (0 .. L^d - 1), boundary vertices follow in lexicographic order.
    Edge index: position in the stationary order.
    """
    d: int
    L: int

    def __post_init__(self):
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise DomainError(f"dimension must be a positive integer, got {self.d!r}")
        if not isinstance(self.L, (int, np.integer)) or self.L < 1:
            raise DomainError(f"side must be a positive integer, got {self.L!r}")

    # ------------------------------------------------------------------ vertices

    @property
    def n_interior(self) -> int:
        return self.L ** self.d

    @property
    def n_boundary(self) -> int:
        return 2 * self.d * self.L ** (self.d - 1)

    @property
    def n_vertices(self) -> int:
        return self.n_interior + self.n_boundary

    @property
    def n_edges(self) -> int:
        return self.d * (self.L + 1) * self.L ** (self.d - 1)

    @cached_property
    def interior(self) -> np.ndarray:
        grid = np.indices((self.L,) * self.d).reshape(self.d, -1).T
        return np.ascontiguousarray(grid, dtype=np.int64)

    @cached_property
    def boundary(self) -> np.ndarray:
        faces = []
        for axis in range(self.d):
            for side in (-1, self.L):
                face = np.array(
                    list(itertools.product(range(self.L), repeat=self.d - 1)), dtype=np.int64
                )
                face = np.insert(face, axis, side, axis=1)
                faces.append(face)
        pts = np.concatenate(faces).astype(np.int64)
        order = np.lexsort(pts.T[::-1])
        return np.ascontiguousarray(pts[order])

    @cached_property
    def vertices(self) -> np.ndarray:
        return np.concatenate([self.interior, self.boundary])

    @cached_property
    def _vertex_grid(self) -> np.ndarray:
        # grid over [-1, L]^d, -1 where there is no vertex (corners)
        grid = np.full((self.L + 2,) * self.d, -1, dtype=np.int64)
        grid[tuple((self.vertices + 1).T)] = np.arange(self.n_vertices)
        return grid

    def contains(self, x: Sequence[int]) -> bool:
        return len(x) == self.d and all(0 <= c < self.L for c in x)

    def is_boundary(self, x: Sequence[int]) -> bool:
        if len(x) != self.d or self.contains(x):
            return False
        outside = [c for c in x if not 0 <= c < self.L]
        return len(outside) == 1 and outside[0] in (-1, self.L)

    def vertex_index(self, x: Sequence[int]) -> int:
        if not (self.contains(x) or self.is_boundary(x)):
            raise DomainError(f"vertex {tuple(x)} is not in the box or its boundary")
        return int(self._vertex_grid[tuple(int(c) + 1 for c in x)])

    def vertex_indices(self, points: np.ndarray) -> np.ndarray:
        """Vectorised vertex lookup; -1 for points off the box and boundary"""
        pts = np.asarray(points, dtype=np.int64).reshape(-1, self.d) + 1
        inside = np.all((pts >= 0) & (pts <= self.L + 1), axis=1)
        out = np.full(len(pts), -1, dtype=np.int64)
        out[inside] = self._vertex_grid[tuple(pts[inside].T)]
        return out

    def vertex(self, index: int) -> Point:
        return tuple(int(c) for c in self.vertices[index])

    def center(self) -> Point:
        return (self.L // 2,) * self.d

    # --------------------------------------------------------------------- edges

    @cached_property
    def _edge_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        bases, axes = [], []
        for axis in range(self.d):
            shape = [self.L] * self.d
            shape[axis] = self.L + 1
            pts = np.indices(shape).reshape(self.d, -1).T
            pts[:, axis] -= 1
            bases.append(pts)
            axes.append(np.full(len(pts), axis))
        base = np.concatenate(bases).astype(np.int64)
        axis = np.concatenate(axes).astype(np.int64)
        # primary key x_1, then x_2, ..., last the direction
        order = np.lexsort((axis,) + tuple(base.T[::-1]))
        return np.ascontiguousarray(base[order]), np.ascontiguousarray(axis[order])

    @property
    def edge_base(self) -> np.ndarray:
        return self._edge_arrays[0]

    @property
    def edge_axis(self) -> np.ndarray:
        """0-based direction of every edge"""
        return self._edge_arrays[1]

    @cached_property
    def edge_tail(self) -> np.ndarray:
        return self.vertex_indices(self.edge_base)

    @cached_property
    def edge_head(self) -> np.ndarray:
        heads = self.edge_base + np.eye(self.d, dtype=np.int64)[self.edge_axis]
        return self.vertex_indices(heads)

    @cached_property
    def interior_edge_mask(self) -> np.ndarray:
        """Edges with both endpoints in the box"""
        return (self.edge_tail < self.n_interior) & (self.edge_head < self.n_interior)

    @cached_property
    def _edge_grid(self) -> np.ndarray:
        grid = np.full((self.L + 1,) * self.d + (self.d,), -1, dtype=np.int64)
        idx = tuple((self.edge_base + 1).T) + (self.edge_axis,)
        grid[idx] = np.arange(self.n_edges)
        return grid

    def edge_index(self, e: EdgeKey) -> int:
        if len(e.x) != self.d or not 1 <= e.i <= self.d:
            raise DomainError(f"edge {e} does not match dimension {self.d}")
        pos = tuple(int(c) + 1 for c in e.x)
        if any(not 0 <= c <= self.L for c in pos):
            raise DomainError(f"edge {e} is not in the edge set of {self}")
        index = int(self._edge_grid[pos + (e.axis,)])
        if index < 0:
            raise DomainError(f"edge {e} is not in the edge set of {self}")
        return index

    def edge_indices(self, bases: np.ndarray, axes: np.ndarray) -> np.ndarray:
        """Vectorised edge lookup from base vertices and 0-based axes; -1 when absent"""
        pos = np.asarray(bases, dtype=np.int64).reshape(-1, self.d) + 1
        axes = np.asarray(axes, dtype=np.int64).reshape(-1)
        inside = np.all((pos >= 0) & (pos <= self.L), axis=1)
        out = np.full(len(pos), -1, dtype=np.int64)
        out[inside] = self._edge_grid[tuple(pos[inside].T) + (axes[inside],)]
        return out

    def edge(self, index: int) -> EdgeKey:
        return EdgeKey(tuple(int(c) for c in self.edge_base[index]), int(self.edge_axis[index]) + 1)

    def edges(self) -> List[EdgeKey]:
        return [self.edge(k) for k in range(self.n_edges)]

    def __str__(self) -> str:
        return f"Box(d={self.d}, L={self.L})"


@lru_cache(maxsize=64)
def box(d: int, L: int) -> BoxDomain:
    """Shared instance per (d, L); cached arrays are built once"""
    return BoxDomain(d, L)


def enumerate_edges(domain: BoxDomain) -> List[EdgeKey]:
    """All edges of the box in increasing stationary order"""
    return domain.edges()


def boundary_vertices(domain: BoxDomain) -> Set[Point]:
    return {tuple(int(c) for c in p) for p in domain.boundary}


def brute_force_edges(domain: BoxDomain) -> List[EdgeKey]:
    """Reference enumeration by scanning every candidate (x, i) around the box"""
    found = []
    for x in itertools.product(range(-1, domain.L + 1), repeat=domain.d):
        for i in range(1, domain.d + 1):
            e = EdgeKey(tuple(x), i)
            if domain.contains(e.x) or domain.contains(e.head):
                found.append(e)
    return sorted(found)


def count_edges_up_to(domain: BoxDomain, e: EdgeKey) -> int:
    """Number of edges b of the box with b <= e"""
    return sum(1 for b in brute_force_edges(domain) if b <= e)


def centered_offset(inner: BoxDomain, outer: BoxDomain) -> Point:
    """Offset placing `inner` at the center of `outer`"""
    if inner.d != outer.d or inner.L > outer.L:
        raise DomainError(f"{inner} does not fit into {outer}")
    return ((outer.L - inner.L) // 2,) * inner.d


def as_points(points: Iterable[Sequence[int]]) -> List[Point]:
    return [tuple(int(c) for c in p) for p in points]
