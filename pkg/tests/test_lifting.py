import numpy as np
import pytest

from gaussocc.errors import ConfigurationError
from gaussocc.lifting import (
    CameraLiftParams,
    CameraView,
    DepthChunking,
    DepthPlaneStack,
    KeypointParams,
    KeypointSet,
    LdfaParams,
    MultiViewFeatureSet,
    aggregate_camera,
    chunk_means,
    cross_depth_modulate,
    gated_global_fusion,
    generate_keypoints,
    ldfa_depth_sample,
    lift_lidar,
    partition_depths,
    project_to_view,
    sample_bilinear,
)


def make_view(plane, f=100.0, c=(50.0, 50.0)):
    intr = np.array([[f, 0.0, c[0]], [0.0, f, c[1]], [0.0, 0.0, 1.0]])
    return CameraView(plane=plane, intrinsics=intr, extrinsics=np.eye(4))


def constant_view(value, h=101, w=101, channels=3):
    return make_view(np.full((h, w, channels), float(value)))


def make_stack(planes, origin=(0.0, 0.0), cell=(1.0, 1.0)):
    d = planes.shape[0]
    z = np.stack([np.arange(d, dtype=float), np.arange(d, dtype=float) + 1.0], axis=1)
    return DepthPlaneStack(planes=planes, z_intervals=z, origin_xy=np.array(origin), cell_size=np.array(cell))


class TestProjectToView:
    def test_optical_axis_hits_principal_point(self):
        uv, depth, valid = project_to_view(np.array([0.0, 0.0, 1.0]), constant_view(0.0))
        np.testing.assert_allclose(uv, [50.0, 50.0])
        assert depth == pytest.approx(1.0)
        assert valid

    def test_point_behind_camera_invalid(self):
        _, _, valid = project_to_view(np.array([0.0, 0.0, -1.0]), constant_view(0.0))
        assert not valid

    def test_hand_pinhole_arithmetic(self):
        uv, _, valid = project_to_view(np.array([0.1, 0.0, 1.0]), constant_view(0.0))
        np.testing.assert_allclose(uv, [60.0, 50.0])
        assert valid

    def test_outside_plane_invalid(self):
        _, _, valid = project_to_view(np.array([10.0, 0.0, 1.0]), constant_view(0.0))
        assert not valid


class TestSampleBilinear:
    def test_on_texel_identity(self):
        rng = np.random.default_rng(0)
        plane = rng.normal(size=(4, 5, 3))
        np.testing.assert_allclose(sample_bilinear(plane, np.array([2.0, 1.0])), plane[1, 2])

    def test_midway_average(self):
        plane = np.zeros((2, 2, 2))
        plane[0, 0] = 2.0
        plane[0, 1] = 4.0
        np.testing.assert_allclose(sample_bilinear(plane, np.array([0.5, 0.0])), [3.0, 3.0])

    def test_fully_outside_zero(self):
        plane = np.ones((4, 4, 2))
        np.testing.assert_array_equal(sample_bilinear(plane, np.array([-5.0, 1.0])), [0.0, 0.0])
        np.testing.assert_array_equal(sample_bilinear(plane, np.array([1.0, 99.0])), [0.0, 0.0])

    def test_boundary_partial_contribution(self):
        plane = np.ones((4, 4, 1))
        np.testing.assert_allclose(sample_bilinear(plane, np.array([-0.5, 1.0])), [0.5])


class TestAggregateCamera:
    def test_constant_plane_returns_value(self):
        params = CameraLiftParams(offsets=np.zeros((4, 2)), weight_logits=np.zeros(4))
        views = MultiViewFeatureSet(views=(constant_view(7.5),))
        out = aggregate_camera(np.array([0.0, 0.0, 1.0]), views, params)
        np.testing.assert_allclose(out, np.full(3, 7.5))

    def test_anchor_behind_all_cameras(self):
        params = CameraLiftParams(offsets=np.zeros((4, 2)), weight_logits=np.zeros(4))
        views = MultiViewFeatureSet(views=(constant_view(7.5), constant_view(2.5)))
        out = aggregate_camera(np.array([0.0, 0.0, -1.0]), views, params)
        np.testing.assert_array_equal(out, np.zeros(3))

    def test_two_views_average(self):
        params = CameraLiftParams(offsets=np.zeros((4, 2)), weight_logits=np.zeros(4))
        views = MultiViewFeatureSet(views=(constant_view(1.0), constant_view(3.0)))
        out = aggregate_camera(np.array([0.0, 0.0, 1.0]), views, params)
        np.testing.assert_allclose(out, np.full(3, 2.0))

    def test_view_order_invariance(self):
        rng = np.random.default_rng(8)
        params = CameraLiftParams(offsets=rng.normal(size=(4, 2)), weight_logits=rng.normal(size=4))
        a = constant_view(1.0)
        b = make_view(rng.normal(size=(101, 101, 3)))
        point = np.array([0.05, -0.02, 1.3])
        out_ab = aggregate_camera(point, MultiViewFeatureSet(views=(a, b)), params)
        out_ba = aggregate_camera(point, MultiViewFeatureSet(views=(b, a)), params)
        np.testing.assert_allclose(out_ab, out_ba, rtol=1e-12, atol=1e-12)


class TestLdfaDepthSample:
    def test_single_keypoint_on_texel(self):
        rng = np.random.default_rng(1)
        planes = rng.normal(size=(3, 4, 5, 2))
        stack = make_stack(planes)
        kp = KeypointSet(offsets=np.zeros((1, 3)), weights=np.ones(1))
        # centroid at world (2.5, 1.5): plane coords (2.0, 1.0) = texel (row1, col2)
        rows = ldfa_depth_sample(np.array([2.5, 1.5, 0.0]), kp, stack)
        for d in range(3):
            np.testing.assert_allclose(rows[d], planes[d, 1, 2])

    def test_two_keypoints_weighted_sum(self):
        planes = np.zeros((1, 2, 3, 1))
        planes[0, 0, 0] = 2.0
        planes[0, 0, 2] = 4.0
        stack = make_stack(planes)
        offsets = np.array([[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        kp = KeypointSet(offsets=offsets, weights=np.array([0.5, 0.5]))
        rows = ldfa_depth_sample(np.array([1.5, 0.5, 0.0]), kp, stack)
        np.testing.assert_allclose(rows[0], [3.0])

    def test_zero_weights_zero_rows(self):
        rng = np.random.default_rng(2)
        stack = make_stack(rng.normal(size=(4, 3, 3, 2)))
        kp = KeypointSet(offsets=rng.normal(size=(3, 3)), weights=np.zeros(3))
        rows = ldfa_depth_sample(np.array([1.0, 1.0, 0.0]), kp, stack)
        np.testing.assert_array_equal(rows, np.zeros((4, 2)))

    def test_linear_in_plane_values(self):
        rng = np.random.default_rng(3)
        planes = rng.normal(size=(2, 6, 6, 3))
        kp = KeypointSet(offsets=rng.normal(size=(4, 3)) * 0.5, weights=rng.random(4))
        centroid = np.array([3.0, 3.0, 0.5])
        base = ldfa_depth_sample(centroid, kp, make_stack(planes))
        scaled = ldfa_depth_sample(centroid, kp, make_stack(3.0 * planes))
        np.testing.assert_allclose(scaled, 3.0 * base, rtol=1e-12, atol=1e-12)


class TestPartitionDepths:
    def test_singleton_chunks(self):
        chunking = partition_depths(4, 4, seed=0, training=False)
        assert chunking.chunk_sets == ((0,), (1,), (2,), (3,))
        np.testing.assert_array_equal(chunking.permutation, np.arange(4))

    def test_even_split(self):
        chunking = partition_depths(4, 2, seed=0, training=False)
        assert chunking.chunk_sets == ((0, 1), (2, 3))

    def test_remainder_to_last(self):
        chunking = partition_depths(3, 2, seed=0, training=False)
        assert tuple(len(s) for s in chunking.chunk_sets) == (1, 2)

    def test_chunks_exceed_levels(self):
        with pytest.raises(ConfigurationError):
            partition_depths(3, 4, seed=0, training=False)

    def test_inference_ignores_seed(self):
        a = partition_depths(8, 3, seed=1, training=False)
        b = partition_depths(8, 3, seed=999, training=False)
        np.testing.assert_array_equal(a.permutation, b.permutation)

    def test_training_permutation_seeded(self):
        a = partition_depths(8, 3, seed=5, training=True)
        b = partition_depths(8, 3, seed=5, training=True)
        np.testing.assert_array_equal(a.permutation, b.permutation)
        assert sorted(a.permutation.tolist()) == list(range(8))


class TestChunkMeans:
    def test_singleton_identity(self):
        rng = np.random.default_rng(4)
        f_depth = rng.normal(size=(4, 3))
        chunking = partition_depths(4, 4, seed=0, training=False)
        np.testing.assert_array_equal(chunk_means(f_depth, chunking), f_depth)

    def test_hand_mean(self):
        f_depth = np.array([[0.0, 0.0], [2.0, 2.0], [5.0, 5.0], [7.0, 7.0]])
        chunking = partition_depths(4, 2, seed=0, training=False)
        np.testing.assert_allclose(chunk_means(f_depth, chunking), [[1.0, 1.0], [6.0, 6.0]])

    def test_constant_field(self):
        f_depth = np.full((6, 2), 3.25)
        chunking = partition_depths(6, 3, seed=0, training=False)
        np.testing.assert_allclose(chunk_means(f_depth, chunking), np.full((3, 2), 3.25))

    def test_permutation_selects_rows(self):
        f_depth = np.arange(4, dtype=float)[:, None]
        chunking = DepthChunking(
            chunk_count=2, permutation=np.array([3, 2, 1, 0]), chunk_sets=((0, 1), (2, 3))
        )
        np.testing.assert_allclose(chunk_means(f_depth, chunking), [[2.5], [0.5]])

    def test_equal_chunks_recover_global_mean(self):
        rng = np.random.default_rng(5)
        f_depth = rng.normal(size=(8, 3))
        chunking = partition_depths(8, 4, seed=0, training=False)
        np.testing.assert_allclose(
            chunk_means(f_depth, chunking).mean(axis=0), f_depth.mean(axis=0), rtol=1e-12, atol=1e-12
        )


def ldfa_params(f, k, phi_w=None, phi_b=None, gate_w=None, gate_b=0.0):
    return LdfaParams(
        phi_w=np.zeros(((k - 1) * f, f)) if phi_w is None else phi_w,
        phi_b=np.zeros(f) if phi_b is None else phi_b,
        gate_w=np.zeros(2 * f) if gate_w is None else gate_w,
        gate_b=gate_b,
    )


class TestCrossDepthModulate:
    def test_open_mask_passes_last_chunk(self):
        chunks = np.array([[1.0, -1.0], [0.5, 0.5], [2.0, 3.0]])
        params = ldfa_params(2, 3, phi_b=np.full(2, 40.0))
        np.testing.assert_allclose(cross_depth_modulate(chunks, params), [2.0, 3.0])

    def test_zero_last_chunk_annihilates(self):
        rng = np.random.default_rng(6)
        chunks = rng.normal(size=(3, 4))
        chunks[-1] = 0.0
        params = ldfa_params(4, 3, phi_w=rng.normal(size=(8, 4)))
        np.testing.assert_array_equal(cross_depth_modulate(chunks, params), np.zeros(4))

    def test_half_mask(self):
        chunks = np.array([[9.0, 9.0], [2.0, 2.0]])
        params = ldfa_params(2, 2)
        np.testing.assert_allclose(cross_depth_modulate(chunks, params), [1.0, 1.0])

    def test_single_chunk_rejected(self):
        with pytest.raises(ConfigurationError):
            cross_depth_modulate(np.ones((1, 4)), ldfa_params(4, 2))


class TestGatedGlobalFusion:
    def test_saturated_open_gate(self):
        m = np.array([5.0, -5.0])
        f_depth = np.zeros((4, 2))
        params = ldfa_params(2, 2, gate_b=80.0)
        np.testing.assert_allclose(gated_global_fusion(m, f_depth, params), m)

    def test_saturated_closed_gate(self):
        m = np.array([5.0, -5.0])
        f_depth = np.ones((4, 2))
        params = ldfa_params(2, 2, gate_b=-80.0)
        np.testing.assert_allclose(gated_global_fusion(m, f_depth, params), np.ones(2))

    def test_half_gate_blend(self):
        m = np.full(2, 2.0)
        f_depth = np.zeros((3, 2))
        params = ldfa_params(2, 2)
        np.testing.assert_allclose(gated_global_fusion(m, f_depth, params), [1.0, 1.0])

    def test_output_in_convex_hull(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            m = rng.normal(size=5)
            f_depth = rng.normal(size=(6, 5))
            params = ldfa_params(5, 2, gate_w=rng.normal(size=10), gate_b=float(rng.normal()))
            out = gated_global_fusion(m, f_depth, params)
            g = f_depth.mean(axis=0)
            lo = np.minimum(m, g) - 1e-12
            hi = np.maximum(m, g) + 1e-12
            assert np.all(out >= lo) and np.all(out <= hi)


class TestLiftLidarDriver:
    def test_keypoint_weights_normalized(self, small_bundle, small_model):
        params = KeypointParams.from_bundle(small_bundle, small_model.feature_width, small_model.lidar_keypoints)
        rng = np.random.default_rng(9)
        kp = generate_keypoints(rng.normal(size=(10, 16)), rng.uniform(0.2, 1.0, size=(10, 3)), params)
        np.testing.assert_allclose(kp.weights.sum(axis=-1), np.ones(10), atol=1e-12)
        assert kp.offsets.shape == (10, 4, 3)

    def test_full_chain_shapes(self, small_bundle, small_model, small_scene):
        rng = np.random.default_rng(10)
        centroids = rng.uniform(-4, 4, size=(12, 3))
        features = np.zeros((12, 16))
        scales = np.full((12, 3), 0.5)
        kp_params = KeypointParams.from_bundle(small_bundle, 16, 4)
        ld_params = LdfaParams.from_bundle(small_bundle, 16, 4)
        chunking = partition_depths(8, 4, seed=0, training=False)
        out = lift_lidar(centroids, features, scales, small_scene.stack, kp_params, ld_params, chunking)
        assert out.shape == (12, 16)
        assert np.all(np.isfinite(out))
