"""Cluster filter against brute-force oracles.

The oracles deliberately take the slow road: all-pairs loops for adjacency
and merge criteria, with connected components delegated to scipy's graph
routines.  Partitions are compared as sets of point sets so label numbering
stays a separate, explicitly tested contract.
"""

import numpy as np
import numpy.testing as npt
import pytest
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from roadsurf.filtering import (
    FilterParams,
    clean_clusters,
    get_neighbors,
    grow_regions,
    merge_clusters,
    run_filter,
)
from roadsurf.grid import PointGrid


def make_points(z, cell=1.0, origin=(0.0, 0.0)):
    z = np.asarray(z, dtype=float)
    h, w = z.shape
    return PointGrid(w, h, cell, cell, origin[0], origin[1], z)


def brute_neighbors(points, theta_z):
    """All-pairs 8-adjacency with the elevation gate."""
    cells = points.indices()
    out = {p: [] for p in cells}
    for a in cells:
        for b in cells:
            if a == b:
                continue
            if abs(a[0] - b[0]) <= 1 and abs(a[1] - b[1]) <= 1:
                if abs(points.z[a[1], a[0]] - points.z[b[1], b[0]]) <= theta_z:
                    out[a].append(b)
    for lst in out.values():
        lst.sort()
    return out


def partition_from_labels(labels):
    """Set of frozensets of (i, j) cells, one per nonzero label."""
    groups = {}
    jj, ii = np.nonzero(labels)
    for i, j in zip(ii, jj):
        groups.setdefault(labels[j, i], set()).add((int(i), int(j)))
    return {frozenset(g) for g in groups.values()}


def brute_components(points, theta_z):
    """Connected components of the brute-force adjacency graph."""
    cells = points.indices()
    index = {c: k for k, c in enumerate(cells)}
    nbrs = brute_neighbors(points, theta_z)
    rows, cols = [], []
    for a, lst in nbrs.items():
        for b in lst:
            rows.append(index[a])
            cols.append(index[b])
    n = len(cells)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    groups = {}
    for c, k in zip(cells, comp):
        groups.setdefault(k, set()).add(c)
    return {frozenset(g) for g in groups.values()}


def brute_merge(points, labels, theta_xy, theta_z):
    """Transitive closure of the pairwise merge criterion over all point pairs."""
    cells = points.indices()
    n_lab = labels.label_count
    rows, cols = [], []
    for a in cells:
        xa, ya = points.cell_to_world(a[0], a[1])
        za = points.z[a[1], a[0]]
        la = labels.labels[a[1], a[0]]
        for b in cells:
            lb = labels.labels[b[1], b[0]]
            if lb == la:
                continue
            xb, yb = points.cell_to_world(b[0], b[1])
            if (xa - xb) ** 2 + (ya - yb) ** 2 > theta_xy ** 2:
                continue
            if abs(za - points.z[b[1], b[0]]) > theta_z:
                continue
            rows.append(la - 1)
            cols.append(lb - 1)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_lab, n_lab))
    _, comp = connected_components(graph, directed=False)
    groups = {}
    for a in cells:
        la = labels.labels[a[1], a[0]]
        groups.setdefault(comp[la - 1], set()).add(a)
    return {frozenset(g) for g in groups.values()}


def random_point_grid(rng, max_side=20):
    h = int(rng.integers(3, max_side + 1))
    w = int(rng.integers(3, max_side + 1))
    z = rng.normal(0.0, 1.0, (h, w))
    # plateaus make elevation-connected blobs; gaps make separate clusters
    z[rng.random((h, w)) < 0.3] += rng.uniform(3.0, 12.0)
    z[rng.random((h, w)) < 0.35] = np.nan
    cell = float(rng.choice([0.5, 1.0, 2.0]))
    return make_points(z, cell=cell)


class TestNeighbors:
    def test_flat_pair_mutual(self):
        points = make_points([[1.0, 1.0], [np.nan, np.nan]])
        nbrs = get_neighbors(points, 0.5)
        assert nbrs[(0, 0)] == [(1, 0)]
        assert nbrs[(1, 0)] == [(0, 0)]

    def test_threshold_is_inclusive(self):
        points = make_points([[0.0, 0.5], [np.nan, np.nan]])
        assert get_neighbors(points, 0.5)[(0, 0)] == [(1, 0)]
        points = make_points([[0.0, 0.5 + 1e-9], [np.nan, np.nan]])
        assert get_neighbors(points, 0.5)[(0, 0)] == []

    def test_no_point_no_entry(self):
        points = make_points([[1.0, np.nan], [np.nan, 1.0]])
        nbrs = get_neighbors(points, 0.5)
        assert set(nbrs) == {(0, 0), (1, 1)}

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(101)
        for _ in range(20):
            points = random_point_grid(rng, max_side=10)
            theta_z = float(rng.uniform(0.2, 3.0))
            assert get_neighbors(points, theta_z) == brute_neighbors(points, theta_z)


class TestGrowRegions:
    def test_flat_grid_single_label(self):
        points = make_points(np.zeros((3, 3)))
        labels = grow_regions(points, get_neighbors(points, 0.5))
        assert labels.label_count == 1
        npt.assert_array_equal(labels.labels, 1)

    def test_elevated_block_splits(self):
        z = np.zeros((4, 4))
        z[1:3, 1:3] = 5.0  # 10x the threshold used below
        points = make_points(z)
        labels = grow_regions(points, get_neighbors(points, 0.5))
        assert labels.label_count == 2
        assert partition_from_labels(labels.labels) == brute_components(points, 0.5)

    def test_empty_grid(self):
        points = make_points(np.full((3, 3), np.nan))
        labels = grow_regions(points, get_neighbors(points, 0.5))
        assert labels.label_count == 0
        npt.assert_array_equal(labels.labels, 0)

    def test_labels_row_major_by_seed(self):
        z = np.array([[np.nan, 9.0], [0.0, np.nan]])
        points = make_points(z)
        labels = grow_regions(points, get_neighbors(points, 0.5))
        # scan order meets (1, 0) in row 0 first
        assert labels.labels[0, 1] == 1
        assert labels.labels[1, 0] == 2

    def test_matches_bruteforce_components(self):
        rng = np.random.default_rng(202)
        for _ in range(25):
            points = random_point_grid(rng, max_side=14)
            theta_z = float(rng.uniform(0.2, 3.0))
            labels = grow_regions(points, get_neighbors(points, theta_z))
            assert partition_from_labels(labels.labels) == \
                brute_components(points, theta_z)
            # labels only on occupied cells, contiguous from 1
            assert (labels.labels[~points.occupancy] == 0).all()
            present = np.unique(labels.labels[labels.labels > 0])
            npt.assert_array_equal(present, np.arange(1, labels.label_count + 1))


class TestMergeClusters:
    def test_bridges_nodata_gap(self):
        z = np.array([[0.0, np.nan, 0.0], [np.nan] * 3])
        points = make_points(z)
        labels = grow_regions(points, get_neighbors(points, 0.5))
        assert labels.label_count == 2
        merged = merge_clusters(points, labels, theta_xy=10.0, theta_z=0.5)
        assert merged.label_count == 1

    def test_planar_gap_beyond_theta_xy(self):
        z = np.full((2, 30), np.nan)
        z[0, :3] = 0.0
        z[0, -3:] = 0.0
        points = make_points(z)
        labels = grow_regions(points, get_neighbors(points, 0.5))
        merged = merge_clusters(points, labels, theta_xy=10.0, theta_z=0.5)
        assert merged.label_count == 2

    def test_elevation_gate_blocks_merge(self):
        z = np.array([[0.0, np.nan, 4.0], [np.nan] * 3])
        points = make_points(z)
        labels = grow_regions(points, get_neighbors(points, 0.5))
        merged = merge_clusters(points, labels, theta_xy=10.0, theta_z=0.5)
        assert merged.label_count == 2

    def test_single_cluster_identity(self):
        points = make_points(np.zeros((2, 2)))
        labels = grow_regions(points, get_neighbors(points, 0.5))
        merged = merge_clusters(points, labels, theta_xy=10.0, theta_z=0.5)
        npt.assert_array_equal(merged.labels, labels.labels)
        assert merged.label_count == 1

    def test_plan_distance_respects_cell_size(self):
        # same index gap, but the coarse grid puts the pair beyond theta_xy
        z = np.array([[0.0, np.nan, np.nan, 0.0], [np.nan] * 4])
        fine = make_points(z, cell=1.0)
        coarse = make_points(z, cell=5.0)
        lab_f = grow_regions(fine, get_neighbors(fine, 0.5))
        lab_c = grow_regions(coarse, get_neighbors(coarse, 0.5))
        assert merge_clusters(fine, lab_f, 10.0, 0.5).label_count == 1
        assert merge_clusters(coarse, lab_c, 10.0, 0.5).label_count == 2

    def test_matches_bruteforce_closure(self):
        rng = np.random.default_rng(303)
        for _ in range(25):
            points = random_point_grid(rng, max_side=14)
            theta_z = float(rng.uniform(0.2, 3.0))
            theta_xy = float(rng.uniform(1.5, 8.0)) * points.cell_size_x
            labels = grow_regions(points, get_neighbors(points, theta_z))
            merged = merge_clusters(points, labels, theta_xy, theta_z)
            assert partition_from_labels(merged.labels) == \
                brute_merge(points, labels, theta_xy, theta_z)

    def test_renumbering_row_major_first_appearance(self):
        rng = np.random.default_rng(404)
        points = random_point_grid(rng, max_side=12)
        labels = grow_regions(points, get_neighbors(points, 0.8))
        merged = merge_clusters(points, labels, 3.0, 0.8)
        seen = []
        for i, j in points.indices():
            lab = merged.labels[j, i]
            if lab not in seen:
                seen.append(lab)
        assert seen == list(range(1, merged.label_count + 1))


class TestCleanClusters:
    def make_three_clusters(self):
        # sizes 100, 10, 5 in separate elevation bands
        z = np.full((10, 30), np.nan)
        z[:10, :10] = 0.0      # 100 cells
        z[0, 15:25] = 100.0    # 10 cells
        z[5, 25:30] = 200.0    # 5 cells
        points = make_points(z)
        labels = grow_regions(points, get_neighbors(points, 0.5))
        assert labels.label_count == 3
        return points, labels

    def test_top1_keeps_largest(self):
        points, labels = self.make_three_clusters()
        cleaned, mask = clean_clusters(points, labels, top_k=1)
        assert cleaned.label_count == 1
        assert mask.count == 100
        assert (cleaned.labels[mask.bits == 1] == 1).all()

    def test_topk_covering_all_is_identity(self):
        points, labels = self.make_three_clusters()
        cleaned, mask = clean_clusters(points, labels, top_k=5)
        npt.assert_array_equal(cleaned.labels, labels.labels)
        assert mask.count == points.count

    def test_single_cluster_mask_equals_occupancy(self):
        z = np.where(np.random.default_rng(5).random((6, 6)) < 0.7, 1.0, np.nan)
        points = make_points(z)
        labels = grow_regions(points, get_neighbors(points, 0.5))
        merged = merge_clusters(points, labels, 50.0, 0.5)
        assert merged.label_count == 1
        _, mask = clean_clusters(points, merged, top_k=1)
        npt.assert_array_equal(mask.bits.astype(bool), points.occupancy)

    def test_tie_keeps_smaller_label(self):
        z = np.full((2, 5), np.nan)
        z[0, :2] = 0.0
        z[0, 3:] = 50.0
        points = make_points(z)
        labels = grow_regions(points, get_neighbors(points, 0.5))
        cleaned, _ = clean_clusters(points, labels, top_k=1)
        assert cleaned.labels[0, 0] == 1
        assert cleaned.labels[0, 3] == 0

    def test_empty_labels(self):
        points = make_points(np.full((2, 2), np.nan))
        labels = grow_regions(points, get_neighbors(points, 0.5))
        cleaned, mask = clean_clusters(points, labels, top_k=1)
        assert cleaned.label_count == 0
        assert mask.count == 0


class TestRunFilter:
    def ribbon_with_spikes(self, n_spikes=20, spike_height=1.8):
        """Flat road band plus isolated single-cell roof spikes."""
        rng = np.random.default_rng(99)
        z = np.full((20, 100), np.nan)
        z[8:13, :] = 0.0
        road = ~np.isnan(z)
        spots = rng.choice(np.flatnonzero(road), size=n_spikes, replace=False)
        spiked = np.zeros_like(road)
        spiked.flat[spots] = True
        z[spiked] = spike_height
        return make_points(z), road, spiked

    def test_spikes_removed_road_retained(self):
        points, road, spiked = self.ribbon_with_spikes()
        filtered, mask = run_filter(points, FilterParams())
        kept = mask.bits.astype(bool)
        assert not (kept & spiked).any()
        clean = road & ~spiked
        retention = (kept & clean).sum() / clean.sum()
        assert retention >= 0.99

    def test_clean_connected_road_idempotent(self):
        z = np.full((9, 9), np.nan)
        z[3:6, :] = 0.1 * np.arange(9)  # gentle cross slope, still connected
        points = make_points(z)
        filtered, mask = run_filter(points, FilterParams())
        npt.assert_array_equal(mask.bits.astype(bool), points.occupancy)
        npt.assert_allclose(filtered.z, points.z, equal_nan=True)

    def test_huge_theta_z_single_cluster(self):
        rng = np.random.default_rng(17)
        z = rng.uniform(0.0, 8.0, (12, 12))  # rough, but far below 10 m gaps
        points = make_points(z)
        _, mask = run_filter(points, FilterParams(theta_z=10.0))
        npt.assert_array_equal(mask.bits, 1)

    def test_filtered_points_subset(self):
        points, _, _ = self.ribbon_with_spikes()
        filtered, mask = run_filter(points, FilterParams())
        on = filtered.occupancy
        npt.assert_array_equal(on, mask.bits.astype(bool))
        npt.assert_allclose(filtered.z[on], points.z[on])

    def test_tiny_theta_xy_warns(self):
        points = make_points(np.zeros((3, 3)))
        with pytest.warns(UserWarning, match="cell diagonal"):
            run_filter(points, FilterParams(theta_xy=1.0))

    def test_param_validation(self):
        with pytest.raises(ValueError, match="positive"):
            FilterParams(theta_xy=0.0)
        with pytest.raises(ValueError, match="positive"):
            FilterParams(theta_z=-1.0)
        with pytest.raises(ValueError, match="top_k"):
            FilterParams(top_k=0)
