import itertools

import numpy as np
import pytest

from ohmstat.exceptions import DomainError
from ohmstat.lattice import (
    BoxDomain,
    EdgeKey,
    boundary_vertices,
    box,
    brute_force_edges,
    centered_offset,
    count_edges_up_to,
    enumerate_edges,
    shift_edge,
)

pytestmark = pytest.mark.unit


class TestCounts:
    @pytest.mark.parametrize("d", [1, 2, 3])
    @pytest.mark.parametrize("L", [1, 2, 3, 5, 8, 16])
    def test_edge_set_matches_brute_force(self, d, L):
        domain = box(d, L)
        edges = enumerate_edges(domain)
        assert domain.n_interior == L ** d
        assert len(edges) == d * (L + 1) * L ** (d - 1) == domain.n_edges
        assert edges == brute_force_edges(domain)

    def test_edges_strictly_increasing(self):
        edges = enumerate_edges(box(3, 4))
        assert all(a < b for a, b in zip(edges, edges[1:]))


class TestOrdering:
    def test_61st_edge_of_the_side_7_square(self):
        domain = box(2, 7)
        assert enumerate_edges(domain)[60] == EdgeKey((3, 3), 2)
        assert count_edges_up_to(domain, EdgeKey((3, 3), 2)) == 61

    def test_side_2_square(self):
        edges = enumerate_edges(box(2, 2))
        assert len(edges) == 12
        assert edges[0] == EdgeKey((-1, 0), 1)

    def test_path_of_two_vertices(self):
        assert enumerate_edges(box(1, 2)) == [
            EdgeKey((-1,), 1), EdgeKey((0,), 1), EdgeKey((1,), 1)
        ]

    def test_total_order_on_small_box(self):
        edges = enumerate_edges(box(2, 2))
        for a, b in itertools.product(edges, repeat=2):
            assert (a <= b) or (b <= a)
            if a <= b and b <= a:
                assert a == b

    def test_same_base_orders_by_direction(self):
        assert EdgeKey((0, 0), 1) < EdgeKey((0, 0), 2) < EdgeKey((0, 1), 1)


class TestShift:
    def test_examples(self):
        assert shift_edge(EdgeKey((0, 0), 1), (2, 3)) == EdgeKey((2, 3), 1)
        e = EdgeKey((4, -1), 2)
        assert shift_edge(e, (0, 0)) == e

    def test_order_preserved(self, rng):
        for _ in range(10_000):
            x, y = rng.integers(-5, 6, size=(2, 2))
            i, j = rng.integers(1, 3, size=2)
            e, f = sorted([EdgeKey(tuple(int(c) for c in x), int(i)),
                           EdgeKey(tuple(int(c) for c in y), int(j))])
            z = tuple(int(c) for c in rng.integers(-10, 11, size=2))
            assert shift_edge(e, z) <= shift_edge(f, z)

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            shift_edge(EdgeKey((0, 0), 1), (1,))


class TestBoundary:
    def test_path(self):
        assert boundary_vertices(box(1, 2)) == {(-1,), (2,)}

    def test_square_has_no_corners(self):
        bd = boundary_vertices(box(2, 2))
        assert len(bd) == 8
        assert (-1, -1) not in bd and (2, 2) not in bd

    def test_side_7(self):
        assert len(boundary_vertices(box(2, 7))) == 28

    @pytest.mark.parametrize("d,L", [(1, 3), (2, 4), (3, 3)])
    def test_every_boundary_vertex_touches_the_box(self, d, L):
        domain = box(d, L)
        unit = np.eye(d, dtype=int)
        for p in boundary_vertices(domain):
            assert not domain.contains(p)
            assert any(domain.contains(tuple(np.array(p) + s * u)) for u in unit for s in (1, -1))


class TestIndexing:
    def test_vertex_index_is_a_bijection(self):
        domain = box(2, 5)
        for k, p in enumerate(domain.vertices):
            assert domain.vertex_index(tuple(p)) == k
        assert domain.n_vertices == 25 + 20

    def test_interior_first(self):
        domain = box(2, 3)
        assert all(domain.contains(domain.vertex(k)) for k in range(domain.n_interior))
        assert all(domain.is_boundary(domain.vertex(k))
                   for k in range(domain.n_interior, domain.n_vertices))

    def test_edge_endpoints(self):
        domain = box(3, 3)
        for k, e in enumerate(domain.edges()):
            x, y = e.endpoints()
            assert domain.vertex(domain.edge_tail[k]) == x
            assert domain.vertex(domain.edge_head[k]) == y
            assert domain.edge_index(e) == k

    def test_lookup_errors(self):
        domain = box(2, 3)
        with pytest.raises(DomainError):
            domain.vertex_index((5, 5))
        with pytest.raises(DomainError):
            domain.edge_index(EdgeKey((-1, -1), 1))
        with pytest.raises(DomainError):
            domain.edge_index(EdgeKey((0, 0), 3))

    def test_vectorised_lookup_marks_absent(self):
        domain = box(2, 3)
        idx = domain.edge_indices(np.array([[0, 0], [-1, -1]]), np.array([0, 0]))
        assert idx[0] == domain.edge_index(EdgeKey((0, 0), 1))
        assert idx[1] == -1

    def test_invalid_box(self):
        with pytest.raises(DomainError):
            BoxDomain(0, 3)

    def test_centered_offset(self):
        assert centered_offset(box(2, 4), box(2, 16)) == (6, 6)
        with pytest.raises(DomainError):
            centered_offset(box(2, 8), box(2, 4))
