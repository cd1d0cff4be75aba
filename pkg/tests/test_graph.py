import numpy as np
import pytest

from regiongcn.graph import (SpatialGraph, connected_components,
                             from_edge_list, renormalized_laplacian,
                             row_normalize, symmetrize_flows)
from regiongcn.numerics import Prng

from helpers import random_graph


class TestFromEdgeList:
    def test_path_graph_degrees(self):
        g = from_edge_list(3, [(0, 1), (1, 2)])
        assert np.array_equal(g.degrees(), [1, 2, 1])

    def test_self_loop_rejected(self):
        with pytest.raises(ValueError, match="self-loop"):
            from_edge_list(2, [(0, 0)])

    def test_duplicate_pair_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            from_edge_list(4, [(0, 1, 2.0), (1, 0, 2.0)])

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            from_edge_list(2, [(0, 5)])

    def test_nonpositive_weight_rejected(self):
        with pytest.raises(ValueError, match="weight"):
            from_edge_list(2, [(0, 1, 0.0)])

    def test_adjacency_symmetric(self):
        g = random_graph(12, 8, seed=0)
        diff = (g.adjacency - g.adjacency.T)
        assert abs(diff).max() == 0

    def test_edge_round_trip(self):
        edges = [(0, 1, 2.0), (1, 2, 0.5), (0, 3, 1.5)]
        g = from_edge_list(4, edges)
        assert g.edge_list() == sorted(edges)

    def test_duplicate_node_ids_rejected(self):
        with pytest.raises(ValueError, match="unique"):
            from_edge_list(2, [(0, 1)], node_ids=["a", "a"])


class TestRowNormalize:
    def test_regular_graph_uniform(self):
        g = from_edge_list(4, [(0, 1), (1, 2), (2, 3), (3, 0)])  # 2-regular
        d = row_normalize(g).toarray()
        assert np.allclose(d[d > 0], 0.5)

    def test_path_middle_row(self):
        g = from_edge_list(3, [(0, 1), (1, 2)])
        assert np.allclose(row_normalize(g)[1].toarray(), [[0.5, 0, 0.5]])

    def test_isolated_node_named(self):
        g = from_edge_list(3, [(0, 1)], node_ids=["a", "b", "lonely"])
        with pytest.raises(ValueError, match="lonely"):
            row_normalize(g)

    def test_rows_sum_to_one(self):
        g = random_graph(15, 10, seed=1)
        sums = np.asarray(row_normalize(g).sum(axis=1)).ravel()
        assert np.max(np.abs(sums - 1.0)) <= 1e-12

    def test_weighted_degree_used(self):
        g = from_edge_list(3, [(0, 1, 3.0), (1, 2, 1.0)])
        row = row_normalize(g)[1].toarray().ravel()
        assert np.allclose(row, [0.75, 0, 0.25])


class TestRenormalizedLaplacian:
    def test_single_node(self):
        g = from_edge_list(1, [])
        lap = renormalized_laplacian(g)
        assert np.allclose(lap.toarray(), [[1.0]])

    def test_two_cycle_all_half(self):
        g = from_edge_list(2, [(0, 1)])
        assert np.allclose(renormalized_laplacian(g).toarray(),
                           [[0.5, 0.5], [0.5, 0.5]])

    def test_symmetric(self):
        g = random_graph(12, 6, seed=2)
        lap = renormalized_laplacian(g)
        assert abs(lap - lap.T).max() <= 1e-12

    def test_unit_eigenvector_identity(self):
        g = random_graph(10, 5, seed=3)
        at = g.adjacency.toarray() + np.eye(10)
        d_half = np.sqrt(at.sum(axis=1))
        lap = renormalized_laplacian(g).toarray()
        assert np.allclose(lap @ d_half, d_half, atol=1e-12)

    def test_spectral_radius_at_most_one(self):
        g = random_graph(9, 6, seed=4)
        vals = np.linalg.eigvalsh(renormalized_laplacian(g).toarray())
        assert vals.max() <= 1.0 + 1e-12


class TestConnectedComponents:
    def test_path_single_component(self):
        g = from_edge_list(3, [(0, 1), (1, 2)])
        assert len(set(connected_components(g))) == 1

    def test_two_disjoint_edges(self):
        g = from_edge_list(4, [(0, 1), (2, 3)])
        labels = connected_components(g)
        assert len(set(labels)) == 2
        assert labels[0] == labels[1] and labels[2] == labels[3]

    def test_matches_bfs_oracle(self):
        rng = Prng(5).gen
        n = 20
        edges = set()
        while len(edges) < 12:
            a, b = sorted(int(v) for v in rng.integers(n, size=2))
            if a != b:
                edges.add((a, b))
        g = from_edge_list(n, sorted(edges))

        # plain BFS oracle
        oracle = -np.ones(n, dtype=int)
        nxt = 0
        adj = {i: [] for i in range(n)}
        for a, b in edges:
            adj[a].append(b)
            adj[b].append(a)
        for start in range(n):
            if oracle[start] >= 0:
                continue
            queue = [start]
            oracle[start] = nxt
            while queue:
                u = queue.pop(0)
                for v in adj[u]:
                    if oracle[v] < 0:
                        oracle[v] = nxt
                        queue.append(v)
            nxt += 1
        ours = connected_components(g)
        # same partition up to relabeling
        assert len(set(zip(ours, oracle))) == len(set(ours)) == len(set(oracle))


class TestSymmetrizeFlows:
    def test_average_of_directions(self):
        g = symmetrize_flows(2, [(0, 1, 2.0), (1, 0, 4.0)])
        assert g.edge_list() == [(0, 1, 3.0)]

    def test_symmetric_input_fixed_point(self):
        edges = [(0, 1, 2.0), (1, 0, 2.0), (1, 2, 5.0), (2, 1, 5.0)]
        g = symmetrize_flows(3, edges)
        assert g.edge_list() == [(0, 1, 2.0), (1, 2, 5.0)]

    def test_missing_direction_halves(self):
        g = symmetrize_flows(2, [(0, 1, 2.0)])
        assert g.edge_list() == [(0, 1, 1.0)]

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError, match="negative"):
            symmetrize_flows(2, [(0, 1, -1.0)])

    def test_zero_result_edges_dropped(self):
        g = symmetrize_flows(3, [(0, 1, 0.0), (1, 2, 1.0)])
        assert g.edge_list() == [(1, 2, 0.5)]
