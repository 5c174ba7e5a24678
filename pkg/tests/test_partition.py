import math

import numpy as np
import pytest

from region_sched import (
    BitMask,
    DensityField,
    FeatureField,
    LatentGrid,
    ParameterError,
    QuickshiftParams,
    QuickshiftSettings,
    RegionMap,
    build_feature_field,
    default_quickshift_params,
    dilate_mask,
    enforce_min_region_size,
    estimate_density,
    kmeans_partition,
    quickshift_segment,
    uniform_partition,
)
from region_sched.partition import EXACT_SCAN_LIMIT, _knn_sq_dists_exact, _knn_sq_dists_tree


def _field(values) -> FeatureField:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    return FeatureField(arr)


class TestFeatureField:
    def test_rank_enforced(self):
        with pytest.raises(ParameterError):
            FeatureField(np.zeros((3, 3)))

    def test_finite_enforced(self):
        with pytest.raises(ParameterError):
            FeatureField(np.full((2, 2, 1), np.inf))

    def test_properties_and_read_only(self):
        f = _field(np.zeros((2, 5)))
        assert (f.height, f.width, f.dim) == (2, 5, 1)
        assert not f.data.flags.writeable


class TestBuildFeatureField:
    def test_single_pixel_layout(self):
        xp = LatentGrid(np.asarray([[[0.3]]]))
        eps = LatentGrid(np.asarray([[[-0.1]]]))
        f = build_feature_field(xp, eps, 0.0)
        np.testing.assert_array_equal(f.data[0, 0], [0.3, -0.1, 0.0, 0.0])

    def test_descriptor_dim(self):
        rng = np.random.default_rng(0)
        for c in (1, 2, 3):
            g = LatentGrid(rng.normal(size=(3, 4, c)))
            assert build_feature_field(g, g, 0.5).dim == 2 * c + 2

    def test_coordinates_normalized_then_scaled(self):
        xp = LatentGrid(np.zeros((2, 2, 1)))
        f = build_feature_field(xp, xp, 1.0)
        # Layout is [x_pred | eps | g*x/W | g*y/H].
        np.testing.assert_allclose(f.data[1, 1, 2:], [0.5, 0.5], rtol=0, atol=0)
        np.testing.assert_allclose(f.data[0, 1, 2:], [0.5, 0.0], rtol=0, atol=0)
        np.testing.assert_allclose(f.data[1, 0, 2:], [0.0, 0.5], rtol=0, atol=0)

    def test_zero_weight_kills_position(self):
        rng = np.random.default_rng(1)
        g = LatentGrid(rng.normal(size=(4, 6, 2)))
        f = build_feature_field(g, g, 0.0)
        np.testing.assert_array_equal(f.data[..., 4:], np.zeros((4, 6, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ParameterError):
            build_feature_field(LatentGrid(np.zeros((2, 2, 1))), LatentGrid(np.zeros((2, 3, 1))), 0.5)

    def test_negative_weight(self):
        g = LatentGrid(np.zeros((2, 2, 1)))
        with pytest.raises(ParameterError):
            build_feature_field(g, g, -0.1)


class TestParams:
    def test_density_field_positive(self):
        with pytest.raises(ParameterError):
            DensityField(np.zeros((2, 2)))
        with pytest.raises(ParameterError):
            DensityField(np.ones((2, 2, 1)))

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"bandwidth": 0.0},
            {"bandwidth": 1.0, "window": 0},
            {"bandwidth": 1.0, "knn": 0},
            {"bandwidth": 1.0, "max_link_dist": 0.0},
            {"bandwidth": 1.0, "spatial_weight": -1.0},
        ],
    )
    def test_quickshift_params_validation(self, kwargs):
        defaults = {"max_link_dist": 3.0}
        defaults.update(kwargs)
        with pytest.raises(ParameterError):
            QuickshiftParams(**defaults)

    def test_settings_validation(self):
        with pytest.raises(ParameterError):
            QuickshiftSettings(window=0)
        with pytest.raises(ParameterError):
            QuickshiftSettings(bandwidth=-1.0)

    def test_default_bandwidth_floor_on_constant_field(self):
        f = _field(np.full((4, 4), 2.0))
        p = default_quickshift_params(f)
        assert p.bandwidth == 1e-6
        assert p.max_link_dist == 3e-6

    def test_default_bandwidth_from_norm_spread(self):
        f = _field(np.asarray([[0.0, 0.0, 10.0, 10.0]]))
        p = default_quickshift_params(f)
        assert math.isclose(p.bandwidth, 0.5 * 5.0, rel_tol=0, abs_tol=1e-12)
        assert math.isclose(p.max_link_dist, 3.0 * p.bandwidth, rel_tol=0, abs_tol=1e-12)

    def test_explicit_values_win(self):
        f = _field(np.zeros((3, 3)))
        p = default_quickshift_params(f, bandwidth=0.7, max_link_dist=1.3)
        assert (p.bandwidth, p.max_link_dist) == (0.7, 1.3)

    def test_knn_clamped_to_population(self):
        f = _field(np.zeros((2, 2)))
        assert default_quickshift_params(f, knn=16).knn == 3

    def test_settings_resolve_matches_functional_form(self):
        rng = np.random.default_rng(3)
        f = _field(rng.normal(size=(5, 5)))
        s = QuickshiftSettings(window=3, knn=7, spatial_weight=0.25)
        assert s.resolve(f) == default_quickshift_params(f, window=3, knn=7, spatial_weight=0.25)


class TestEstimateDensity:
    def test_knn_must_leave_neighbors(self):
        f = _field(np.zeros((2, 2)))
        with pytest.raises(ParameterError):
            estimate_density(f, QuickshiftParams(bandwidth=1.0, knn=4, max_link_dist=1.0))

    def test_identical_descriptors_give_knn_count(self):
        f = _field(np.full((3, 3), 1.25))
        p = QuickshiftParams(bandwidth=1.0, knn=4, max_link_dist=1.0)
        rho = estimate_density(f, p).values
        np.testing.assert_allclose(rho, np.full((3, 3), 4.0), rtol=0, atol=1e-12)

    def test_two_pixel_pair(self):
        f = _field(np.asarray([[0.0, 3.0]]))
        p = QuickshiftParams(bandwidth=1.5, knn=1, max_link_dist=1.0)
        rho = estimate_density(f, p).values
        np.testing.assert_allclose(rho, np.full((1, 2), math.exp(-2.0)), rtol=0, atol=1e-15)

    def test_cluster_beats_outlier(self):
        vals = np.asarray([[0.0, 0.1, -0.05, 0.02, 0.07, -0.1, 0.04, 50.0]])
        f = _field(vals)
        p = QuickshiftParams(bandwidth=1.0, knn=3, max_link_dist=1.0)
        rho = estimate_density(f, p).values[0]
        assert np.all(rho[:7] > rho[7])

    def test_tree_path_matches_exact_scan(self):
        # Above EXACT_SCAN_LIMIT pixels the KD-tree backend takes over; it
        # must return the same kNN distances as the brute-force scan.
        rng = np.random.default_rng(17)
        h, w = 65, 64
        assert h * w > EXACT_SCAN_LIMIT
        x = rng.normal(size=(h * w, 4))
        k = 8
        exact = np.sort(_knn_sq_dists_exact(x, k), axis=1)
        tree = np.sort(_knn_sq_dists_tree(x, k), axis=1)
        np.testing.assert_allclose(tree, exact, rtol=1e-12, atol=1e-12)

        f = FeatureField(x.reshape(h, w, 4))
        p = QuickshiftParams(bandwidth=1.0, knn=k, max_link_dist=1.0)
        rho = estimate_density(f, p).values
        want = np.exp(-exact / 2.0).sum(axis=1).reshape(h, w)
        np.testing.assert_allclose(rho, want, rtol=1e-12, atol=1e-12)


class TestQuickshiftSegment:
    def test_uniform_field_single_region(self):
        f = _field(np.full((6, 5), 3.0))
        p = QuickshiftParams(bandwidth=1.0, window=2, knn=4, max_link_dist=1.0)
        m = quickshift_segment(f, estimate_density(f, p), p)
        assert m.region_count == 1

    def test_half_planes_split(self):
        vals = np.zeros((8, 8))
        vals[:, 4:] = 10.0
        f = _field(vals)
        p = QuickshiftParams(bandwidth=1.0, window=2, knn=8, max_link_dist=3.0)
        m = quickshift_segment(f, estimate_density(f, p), p)
        assert m.region_count == 2
        want = np.zeros((8, 8), dtype=np.int64)
        want[:, 4:] = 1
        np.testing.assert_array_equal(m.labels, want)

    def test_window_cap_and_tie_trace(self):
        # 1x7 line [5, 0, 0, 0, 0, 0, 5]: the end pixels are feature-identical
        # but 6 apart spatially, and 25 > max_link_dist^2 bars them from the
        # middle plateau.  The plateau chains to its lowest index.
        f = _field(np.asarray([[5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.0]]))
        p = QuickshiftParams(bandwidth=1.0, window=2, knn=2, max_link_dist=3.0)
        rho = estimate_density(f, p)
        end = 1.0 + math.exp(-12.5)
        np.testing.assert_allclose(rho.values[0], [end, 2, 2, 2, 2, 2, end], rtol=0, atol=1e-12)
        m = quickshift_segment(f, rho, p)
        np.testing.assert_array_equal(m.labels, [[0, 1, 1, 1, 1, 1, 2]])

    def test_unbounded_window_collapses_to_global_mode(self):
        # With no window or link cap and all-distinct densities, the only
        # parentless pixel is the density argmax, so one tree remains.
        rng = np.random.default_rng(23)
        f = _field(rng.normal(size=(1, 16)))
        p = QuickshiftParams(bandwidth=0.8, window=16, knn=4, max_link_dist=1e9)
        rho = estimate_density(f, p)
        assert np.unique(rho.values).size == 16
        assert quickshift_segment(f, rho, p).region_count == 1

    def test_determinism(self):
        rng = np.random.default_rng(5)
        f = _field(rng.normal(size=(10, 9)))
        p = default_quickshift_params(f, window=3, knn=6)
        a = quickshift_segment(f, estimate_density(f, p), p)
        b = quickshift_segment(f, estimate_density(f, p), p)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_density_shape_mismatch(self):
        f = _field(np.zeros((3, 3)))
        rho = DensityField(np.ones((2, 3)))
        with pytest.raises(ParameterError):
            quickshift_segment(f, rho, QuickshiftParams(bandwidth=1.0, max_link_dist=1.0))

    def test_region_map_contract_on_random_fields(self):
        rng = np.random.default_rng(29)
        for _ in range(5):
            f = _field(rng.normal(size=(7, 8)))
            p = default_quickshift_params(f, window=2, knn=5)
            m = quickshift_segment(f, estimate_density(f, p), p)
            assert m.labels.shape == (7, 8)
            ids = np.unique(m.labels)
            np.testing.assert_array_equal(ids, np.arange(m.region_count))


class TestUniformPartition:
    def test_exact_tiling(self):
        m = uniform_partition(4, 4, 2)
        assert m.region_count == 4
        np.testing.assert_array_equal(m.sizes(), [4, 4, 4, 4])

    def test_layout_scan_order(self):
        m = uniform_partition(4, 6, 2)
        want = np.asarray(
            [
                [0, 0, 1, 1, 2, 2],
                [0, 0, 1, 1, 2, 2],
                [3, 3, 4, 4, 5, 5],
                [3, 3, 4, 4, 5, 5],
            ]
        )
        np.testing.assert_array_equal(m.labels, want)

    def test_edge_patches_clipped(self):
        m = uniform_partition(5, 4, 2)
        assert m.region_count == 6
        np.testing.assert_array_equal(m.sizes(), [4, 4, 4, 4, 2, 2])

    def test_patch_count_formula(self):
        for h, w, patch in ((7, 9, 3), (8, 8, 5), (3, 11, 4)):
            m = uniform_partition(h, w, patch)
            assert m.region_count == math.ceil(h / patch) * math.ceil(w / patch)

    def test_giant_patch_single_region(self):
        assert uniform_partition(5, 7, 7).region_count == 1

    def test_validation(self):
        with pytest.raises(ParameterError):
            uniform_partition(4, 4, 0)
        with pytest.raises(ParameterError):
            uniform_partition(0, 4, 2)


class TestKmeansPartition:
    def test_k_one(self):
        rng = np.random.default_rng(2)
        f = _field(rng.normal(size=(3, 4)))
        m = kmeans_partition(f, 1)
        assert m.region_count == 1

    def test_two_blobs(self):
        rng = np.random.default_rng(9)
        left = rng.normal(scale=0.05, size=(4, 2, 2))
        right = rng.normal(loc=10.0, scale=0.05, size=(4, 2, 2))
        f = FeatureField(np.concatenate([left, right], axis=1))
        m = kmeans_partition(f, 2, seed=4)
        assert m.region_count == 2
        np.testing.assert_array_equal(m.labels[:, :2], np.zeros((4, 2), dtype=np.int64))
        np.testing.assert_array_equal(m.labels[:, 2:], np.ones((4, 2), dtype=np.int64))

    def test_seeded_determinism(self):
        rng = np.random.default_rng(13)
        f = _field(rng.normal(size=(6, 6)))
        a = kmeans_partition(f, 4, seed=11)
        b = kmeans_partition(f, 4, seed=11)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_objective_non_increasing(self):
        rng = np.random.default_rng(31)
        f = FeatureField(rng.normal(size=(6, 6, 3)))
        x = f.data.reshape(-1, 3)

        def objective(m: RegionMap) -> float:
            lab = m.labels.ravel()
            total = 0.0
            for k in range(m.region_count):
                pts = x[lab == k]
                total += float(((pts - pts.mean(axis=0)) ** 2).sum())
            return total

        costs = [objective(kmeans_partition(f, 4, iters=i, seed=1)) for i in range(1, 7)]
        for prev, cur in zip(costs, costs[1:]):
            assert cur <= prev + 1e-9

    def test_validation(self):
        f = _field(np.zeros((2, 2)))
        with pytest.raises(ParameterError):
            kmeans_partition(f, 0)
        with pytest.raises(ParameterError):
            kmeans_partition(f, 5)
        with pytest.raises(ParameterError):
            kmeans_partition(f, 2, iters=0)


def _reference_min_size(labels: np.ndarray, feats: np.ndarray, min_size: int) -> RegionMap:
    """Independent fixed-point reference built from per-pixel python loops."""
    labels = labels.astype(np.int64).copy()
    h, w = labels.shape
    flat_f = feats.reshape(h * w, -1)
    while True:
        ids, counts = np.unique(labels, return_counts=True)
        if ids.size <= 1 or counts.min() >= min_size:
            break
        victim = sorted(zip(counts.tolist(), ids.tolist()))[0][1]
        neigh = set()
        for y in range(h):
            for x in range(w):
                if labels[y, x] != victim:
                    continue
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w and labels[yy, xx] != victim:
                            neigh.add(int(labels[yy, xx]))
        if not neigh:
            break
        vm = flat_f[labels.ravel() == victim].mean(axis=0)
        best, best_d = None, np.inf
        for nb in sorted(neigh):
            nm = flat_f[labels.ravel() == nb].mean(axis=0)
            d = float(((vm - nm) ** 2).sum())
            if d < best_d:
                best, best_d = nb, d
        labels[labels == victim] = best
    return RegionMap.from_labels(labels)


class TestEnforceMinRegionSize:
    def test_no_op_when_all_large(self):
        m = uniform_partition(4, 4, 2)
        f = _field(np.arange(16.0).reshape(4, 4))
        out = enforce_min_region_size(m, f, 4)
        np.testing.assert_array_equal(out.labels, m.labels)

    def test_single_pixel_merges_into_only_neighbor(self):
        labels = np.zeros((3, 3), dtype=np.int64)
        labels[1, 1] = 1
        m = RegionMap.from_labels(labels)
        f = _field(np.zeros((3, 3)))
        out = enforce_min_region_size(m, f, 4)
        assert out.region_count == 1

    def test_merges_into_nearest_mean(self):
        m = RegionMap.from_labels(np.asarray([[0, 0, 1, 2, 2, 2]]))
        f = _field(np.asarray([[0.0, 0.0, 5.0, 9.0, 9.0, 9.0]]))
        out = enforce_min_region_size(m, f, 2)
        np.testing.assert_array_equal(out.labels, [[0, 0, 1, 1, 1, 1]])

    def test_mean_tie_prefers_lower_id(self):
        m = RegionMap.from_labels(np.asarray([[0, 0, 1, 2, 2, 2]]))
        f = _field(np.asarray([[0.0, 0.0, 4.5, 9.0, 9.0, 9.0]]))
        out = enforce_min_region_size(m, f, 2)
        np.testing.assert_array_equal(out.labels, [[0, 0, 0, 1, 1, 1]])

    def test_cascades_to_fixed_point(self):
        m = RegionMap.from_labels(np.asarray([[0, 1, 2, 3, 3]]))
        f = _field(np.asarray([[0.0, 10.0, 10.1, 20.0, 20.0]]))
        out = enforce_min_region_size(m, f, 2)
        np.testing.assert_array_equal(out.labels, [[0, 0, 0, 1, 1]])

    def test_matches_reference_on_random_maps(self):
        rng = np.random.default_rng(41)
        for _ in range(10):
            raw = rng.integers(0, 6, size=(12, 12))
            feats = rng.normal(size=(12, 12, 3))
            m = RegionMap.from_labels(raw)
            f = FeatureField(feats)
            got = enforce_min_region_size(m, f, 10)
            want = _reference_min_size(m.labels, feats, 10)
            np.testing.assert_array_equal(got.labels, want.labels)

    def test_validation(self):
        m = uniform_partition(4, 4, 2)
        f = _field(np.zeros((4, 4)))
        with pytest.raises(ParameterError):
            enforce_min_region_size(m, f, 0)
        with pytest.raises(ParameterError):
            enforce_min_region_size(m, _field(np.zeros((4, 5))), 2)


def _brute_dilate(bits: np.ndarray, r: int) -> np.ndarray:
    """Union of Chebyshev balls of radius r around every set pixel."""
    h, w = bits.shape
    out = np.zeros_like(bits)
    for y, x in zip(*np.nonzero(bits)):
        out[max(0, y - r) : y + r + 1, max(0, x - r) : x + r + 1] = True
    return out


class TestDilateMask:
    def test_zero_radius_identity(self):
        m = BitMask(np.asarray([[True, False], [False, False]]))
        np.testing.assert_array_equal(dilate_mask(m, 0).bits, m.bits)

    def test_center_pixel_block(self):
        bits = np.zeros((5, 5), dtype=bool)
        bits[2, 2] = True
        got = dilate_mask(BitMask(bits), 1).bits
        want = np.zeros((5, 5), dtype=bool)
        want[1:4, 1:4] = True
        np.testing.assert_array_equal(got, want)

    def test_corner_clipped(self):
        bits = np.zeros((4, 4), dtype=bool)
        bits[0, 0] = True
        got = dilate_mask(BitMask(bits), 1).bits
        want = np.zeros((4, 4), dtype=bool)
        want[:2, :2] = True
        np.testing.assert_array_equal(got, want)

    def test_matches_chebyshev_oracle(self):
        rng = np.random.default_rng(47)
        for _ in range(30):
            bits = rng.random((16, 16)) < 0.08
            m = BitMask(bits)
            for r in (0, 1, 2, 3):
                np.testing.assert_array_equal(dilate_mask(m, r).bits, _brute_dilate(bits, r))

    def test_monotone_and_composable(self):
        rng = np.random.default_rng(53)
        bits = rng.random((10, 10)) < 0.1
        m = BitMask(bits)
        one = dilate_mask(m, 1)
        assert np.all(one.bits[bits])
        np.testing.assert_array_equal(dilate_mask(m, 3).bits, dilate_mask(dilate_mask(m, 2), 1).bits)

    def test_full_mask_fixed_point(self):
        m = BitMask.full(6, 6)
        np.testing.assert_array_equal(dilate_mask(m, 2).bits, m.bits)

    def test_negative_radius(self):
        with pytest.raises(ParameterError):
            dilate_mask(BitMask.empty(3, 3), -1)
