import numpy as np
import pytest
from scipy.stats import chisquare

from regiongcn.data import grid_graph
from regiongcn.graph import connected_components, from_edge_list
from regiongcn.numerics import Prng
from regiongcn.regions import (Allocation, boundary_nodes, grow_regions,
                               kmeans_allocate, optimize_allocation)

from helpers import random_graph, region_connected


class TestAllocation:
    def test_label_range_enforced(self):
        with pytest.raises(ValueError, match="labels"):
            Allocation(np.array([0, 1]), 2)
        with pytest.raises(ValueError, match="labels"):
            Allocation(np.array([1, 3]), 2)

    def test_region_sizes(self):
        a = Allocation(np.array([1, 1, 3]), 3)
        assert np.array_equal(a.region_sizes(), [2, 0, 1])


class TestGrowRegions:
    def test_single_region(self):
        g = random_graph(10, 5, seed=0)
        a = grow_regions(g, 1, Prng(0))
        assert np.all(a.labels == 1)

    def test_every_node_own_region(self):
        g = random_graph(8, 3, seed=1)
        a = grow_regions(g, 8, Prng(1))
        assert sorted(a.labels) == list(range(1, 9))

    def test_regions_connected_and_cover(self):
        g = random_graph(40, 30, seed=2)
        a = grow_regions(g, 4, Prng(3))
        assert np.all(a.labels >= 1)
        for region in range(1, 5):
            assert region_connected(g, a, region)

    def test_disconnected_graph_rejected(self):
        g = from_edge_list(4, [(0, 1), (2, 3)])
        with pytest.raises(ValueError, match="connected"):
            grow_regions(g, 2, Prng(0))

    def test_p_out_of_range(self):
        g = random_graph(5, 2, seed=3)
        with pytest.raises(ValueError):
            grow_regions(g, 6, Prng(0))

    def test_deterministic_per_seed(self):
        g = random_graph(30, 15, seed=4)
        a = grow_regions(g, 3, Prng(9))
        b = grow_regions(g, 3, Prng(9))
        assert np.array_equal(a.labels, b.labels)

    def test_seed_uniformity_chi_square(self):
        # seeds are the nodes whose label survives at their own index before
        # growth; recover them by rerunning choice with the same stream
        g = grid_graph(5)   # n=25
        n, p, runs = g.n, 2, 200
        counts = np.zeros(n)
        for k in range(runs):
            rng = Prng(5000 + k)
            seeds = rng.gen.choice(n, size=p, replace=False)
            grown = grow_regions(g, p, Prng(5000 + k))
            # the chosen seeds must carry their region label
            assert np.array_equal(grown.labels[seeds], [1, 2])
            counts[seeds] += 1
        expected = runs * p / n
        _, pval = chisquare(counts, f_exp=np.full(n, expected))
        assert pval > 0.01


class TestBoundaryNodes:
    def test_single_region_empty(self):
        g = random_graph(10, 5, seed=5)
        a = Allocation(np.ones(10, dtype=int), 1)
        assert boundary_nodes(g, a).size == 0

    def test_all_singletons_every_connected_node(self):
        g = from_edge_list(4, [(0, 1), (1, 2), (2, 3)])
        a = Allocation(np.arange(1, 5), 4)
        assert np.array_equal(boundary_nodes(g, a), [0, 1, 2, 3])

    def test_path_split(self):
        g = from_edge_list(4, [(0, 1), (1, 2), (2, 3)])
        a = Allocation(np.array([1, 1, 2, 2]), 2)
        assert np.array_equal(boundary_nodes(g, a), [1, 2])


class TestOptimizeAllocation:
    def test_single_region_unchanged(self):
        g = random_graph(8, 4, seed=6)
        a = Allocation(np.ones(8, dtype=int), 1)
        out = optimize_allocation(lambda alloc: 0.0, g, a)
        assert np.array_equal(out.labels, a.labels)

    def test_hand_built_loss_converges(self):
        g = from_edge_list(4, [(0, 1), (1, 2), (2, 3)])
        target = np.array([1, 1, 2, 2])

        def loss(alloc):
            return float(np.sum((alloc.labels - target) ** 2))

        start = Allocation(np.array([1, 2, 2, 2]), 2)
        out = optimize_allocation(loss, g, start)
        assert np.array_equal(out.labels, target)
        assert loss(out) == 0.0

    def test_moves_strictly_decrease_and_terminate(self):
        g = random_graph(25, 15, seed=7)
        rng = Prng(8)
        weights = rng.gen.standard_normal(25)

        def loss(alloc):
            # clustering-style loss: within-region variance of weights
            total = 0.0
            for r in range(1, alloc.p + 1):
                vals = weights[alloc.labels == r]
                if vals.size:
                    total += float(np.sum((vals - vals.mean()) ** 2))
            return total

        start = grow_regions(g, 3, rng.substream("start"))
        trail = []
        out = optimize_allocation(
            loss, g, start,
            on_move=lambda i, a, b, lb, la: trail.append((lb, la)))
        for before, after in trail:
            assert after < before
        # a fresh run from the result makes no further move
        again = optimize_allocation(loss, g, out)
        assert np.array_equal(again.labels, out.labels)

    def test_contiguous_preserves_connectivity(self):
        g = grid_graph(6)
        rng = Prng(11)
        weights = rng.gen.standard_normal(36)

        def loss(alloc):
            total = 0.0
            for r in range(1, alloc.p + 1):
                vals = weights[alloc.labels == r]
                if vals.size:
                    total += float(np.sum((vals - vals.mean()) ** 2))
            return total

        start = grow_regions(g, 3, rng.substream("start"))
        out = optimize_allocation(loss, g, start, contiguous=True)
        for region in range(1, 4):
            if (out.labels == region).any():
                assert region_connected(g, out, region)

    def test_contiguous_drags_single_neighbor_dependent(self):
        # star-with-tail: node 1 is pendant on node 0; 0 also linked to 2, 3
        g = from_edge_list(4, [(0, 1), (0, 2), (2, 3)])
        start = Allocation(np.array([1, 1, 2, 2]), 2)
        target = np.array([2, 2, 2, 2])

        def loss(alloc):
            return float(np.sum((alloc.labels - target) ** 2))

        out = optimize_allocation(loss, g, start, contiguous=True)
        # moving 0 alone would strand its pendant 1; they move together
        assert np.array_equal(out.labels, target)


class TestKmeansAllocate:
    def test_single_cluster(self):
        x = np.random.default_rng(0).standard_normal((10, 3))
        a = kmeans_allocate(x, 1, Prng(0))
        assert np.all(a.labels == 1)

    def test_each_point_own_cluster(self):
        x = np.arange(6, dtype=float).reshape(6, 1) * 10
        a = kmeans_allocate(x, 6, Prng(1))
        assert sorted(a.labels) == list(range(1, 7))

    def test_separated_blobs_recovered(self):
        rng = np.random.default_rng(2)
        blob_a = rng.standard_normal((30, 2)) + [0, 0]
        blob_b = rng.standard_normal((30, 2)) + [25, 25]
        x = np.vstack([blob_a, blob_b])
        a = kmeans_allocate(x, 2, Prng(2))
        first, second = a.labels[:30], a.labels[30:]
        assert len(set(first)) == 1 and len(set(second)) == 1
        assert first[0] != second[0]

    def test_p_too_large(self):
        with pytest.raises(ValueError):
            kmeans_allocate(np.ones((3, 2)), 4, Prng(0))

    def test_deterministic(self):
        x = np.random.default_rng(3).standard_normal((40, 4))
        a = kmeans_allocate(x, 4, Prng(5))
        b = kmeans_allocate(x, 4, Prng(5))
        assert np.array_equal(a.labels, b.labels)
