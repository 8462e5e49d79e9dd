"""Tests for the objective terms and their analytic gradients."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import ndimage

from focusdepth.core import DepthMap, FocusProbabilityMap, ValidationError, named_rng
from focusdepth.losses import (
    GradFusionMap,
    SharpnessWeights,
    apply_grad_fusion,
    depth_gradient,
    depth_loss,
    focal_variational_loss,
    sharpness_weights,
    spatial_variational_loss,
    total_loss,
)
from focusdepth.surface import SurfaceField


class TestSharpnessWeights:
    def test_hand_example(self):
        # D* = 2 with planes [1, 2, 3]: softmax(-[1, 0, 1]).
        gt = DepthMap(np.full((2, 2), 2.0))
        q = sharpness_weights(gt, [1.0, 2.0, 3.0]).q
        assert_allclose(q[0, 0], [0.2119, 0.5761, 0.2119], atol=5e-5)

    def test_rows_sum_to_one(self):
        rng = named_rng(0, "q_rows")
        gt = DepthMap(rng.uniform(0.5, 2.5, (6, 6)))
        q = sharpness_weights(gt, [0.5, 1.0, 1.5, 2.0, 2.5]).q
        assert_allclose(q.sum(axis=-1), 1.0, atol=1e-12)

    def test_peaks_at_nearest_plane(self):
        gt = DepthMap(np.array([[0.55, 1.9]]))
        q = sharpness_weights(gt, [0.5, 1.0, 1.5, 2.0]).q
        assert q[0, 0].argmax() == 0
        assert q[0, 1].argmax() == 3

    def test_invalid_pixels_get_uniform(self):
        vals = np.array([[1.0, np.nan]])
        q = sharpness_weights(DepthMap(vals), [1.0, 2.0]).q
        assert_allclose(q[0, 1], [0.5, 0.5], atol=0)

    def test_rejects_single_plane(self):
        with pytest.raises(ValidationError):
            sharpness_weights(DepthMap(np.ones((2, 2))), [1.0])

    def test_q_validation(self):
        with pytest.raises(ValidationError):
            SharpnessWeights(np.full((2, 2, 3), 0.5))  # rows sum to 1.5


class TestFocalVariationalLoss:
    def test_hand_example(self):
        # Bimodal [0.1, 0.3, 0.2, 0.3, 0.1]: the lowest-index max fixes
        # k=1; the only violation is the later rise 0.2 -> 0.3.
        value, _ = focal_variational_loss(np.array([[[0.1, 0.3, 0.2, 0.3, 0.1]]]))
        assert_allclose(value, 0.01, atol=1e-12)

    def test_zero_for_unimodal(self):
        for p in ([0.1, 0.2, 0.4, 0.2, 0.1], [0.7, 0.2, 0.1], [0.1, 0.2, 0.7]):
            value, grad = focal_variational_loss(np.array([[p]]))
            assert value == 0.0
            assert_allclose(grad, 0.0, atol=0)

    def test_sums_over_pixels(self):
        row = [0.1, 0.3, 0.2, 0.3, 0.1]
        value, _ = focal_variational_loss(np.array([[row, row], [row, row]]))
        assert_allclose(value, 0.04, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = named_rng(1, "fv_fd")
        logits = rng.standard_normal((3, 3, 5))
        p = np.exp(logits)
        p /= p.sum(axis=-1, keepdims=True)
        _, grad = focal_variational_loss(p)
        eps = 1e-7
        for idx in [(0, 0, 1), (1, 2, 3), (2, 1, 0), (2, 2, 4)]:
            q = p.copy()
            q[idx] += eps
            up, _ = focal_variational_loss(q)
            q[idx] -= 2 * eps
            down, _ = focal_variational_loss(q)
            assert abs((up - down) / (2 * eps) - grad[idx]) < 1e-6

    def test_accepts_probability_map(self):
        p = np.full((2, 2, 4), 0.25)
        value, _ = focal_variational_loss(FocusProbabilityMap(p))
        assert value == 0.0


class TestDepthLoss:
    def test_quadratic_branch(self):
        value, _ = depth_loss(DepthMap(np.array([[1.5]])), DepthMap(np.array([[1.0]])))
        assert_allclose(value, 0.125, atol=1e-12)

    def test_linear_branch(self):
        value, _ = depth_loss(DepthMap(np.array([[3.0]])), DepthMap(np.array([[1.0]])))
        assert_allclose(value, 1.5, atol=1e-12)

    def test_averages_over_valid_pixels(self):
        pred = DepthMap(np.array([[1.5, 3.0]]))
        gt = DepthMap(np.array([[1.0, 1.0]]))
        value, _ = depth_loss(pred, gt)
        assert_allclose(value, (0.125 + 1.5) / 2, atol=1e-12)

    def test_invalid_pixels_excluded(self):
        pred = DepthMap(np.array([[1.5, 3.0]]))
        gt = DepthMap(np.array([[1.0, np.nan]]))
        value, grad = depth_loss(pred, gt)
        assert_allclose(value, 0.125, atol=1e-12)
        assert grad[0, 1] == 0.0

    def test_gradient_matches_finite_differences(self):
        rng = named_rng(2, "depth_fd")
        gt_vals = rng.uniform(0.5, 2.5, (4, 4))
        pred_vals = gt_vals + rng.uniform(-2.0, 2.0, (4, 4))
        pred_vals = np.clip(pred_vals, 0.1, None)
        _, grad = depth_loss(DepthMap(pred_vals), DepthMap(gt_vals))
        eps = 1e-6
        for idx in [(0, 0), (1, 3), (3, 2)]:
            v = np.array(pred_vals)
            v[idx] += eps
            up, _ = depth_loss(DepthMap(v.copy()), DepthMap(gt_vals))
            v[idx] -= 2 * eps
            down, _ = depth_loss(DepthMap(v.copy()), DepthMap(gt_vals))
            assert abs((up - down) / (2 * eps) - grad[idx]) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            depth_loss(DepthMap(np.ones((2, 2))), DepthMap(np.ones((3, 3))))

    def test_no_joint_valid_pixels(self):
        with pytest.raises(ValidationError):
            depth_loss(DepthMap(np.array([[1.0, np.nan]])),
                       DepthMap(np.array([[np.nan, 1.0]])))


class TestTotalLoss:
    def test_hand_example(self):
        # Defaults weight the spatial term by 20 and the focal term by 100.
        report = total_loss(1.0, 0.1, 0.01)
        assert_allclose(report.total, 4.0, atol=1e-12)
        assert report.depth_term == 1.0
        assert report.sv_term == 0.1
        assert report.fv_term == 0.01

    def test_custom_weights(self):
        report = total_loss(2.0, 0.5, 0.25, lambda_sv=2.0, lambda_fv=4.0)
        assert_allclose(report.total, 4.0, atol=1e-12)
        assert report.lambda_sv == 2.0
        assert report.lambda_fv == 4.0


def _conv_oracle(z_plane, theta):
    """Independent 3x3 zero-padded convolution via scipy.ndimage."""
    h, w, c2 = z_plane.shape
    out = np.broadcast_to(theta.bias, (h, w, 2)).copy()
    for d in range(2):
        for c in range(c2):
            out[:, :, d] += ndimage.correlate(
                z_plane[:, :, c], theta.weights[:, :, c, d], mode="constant")
    return out


class TestGradFusion:
    def test_matches_scipy_oracle(self):
        rng = named_rng(3, "fusion_oracle")
        z = rng.standard_normal((6, 7, 4))
        theta = GradFusionMap(rng.standard_normal((3, 3, 4, 2)),
                              rng.standard_normal(2))
        assert_allclose(apply_grad_fusion(z, theta), _conv_oracle(z, theta), atol=1e-12)

    def test_identity_kernel_passes_channels_through(self):
        rng = named_rng(4, "fusion_identity")
        z = rng.standard_normal((5, 5, 2))
        w = np.zeros((3, 3, 2, 2))
        w[1, 1] = np.eye(2)
        out = apply_grad_fusion(z, GradFusionMap(w, np.zeros(2)))
        assert_allclose(out, z, atol=0)

    def test_random_init_is_bounded(self):
        theta = GradFusionMap.random_init(8, seed=1)
        assert theta.channels == 8
        assert np.max(np.abs(theta.weights)) <= 0.1
        assert_allclose(theta.bias, 0.0, atol=0)

    def test_validation(self):
        with pytest.raises(ValidationError):
            GradFusionMap(np.zeros((2, 2, 4, 2)), np.zeros(2))
        with pytest.raises(ValidationError):
            GradFusionMap(np.zeros((3, 3, 4, 2)), np.zeros(3))


def _sv_setup(seed, hs=6, ws=6, c2=3, n=4):
    rng = named_rng(seed, "sv_setup")
    z = SurfaceField(rng.standard_normal((hs, ws, c2, n)))
    theta = GradFusionMap(0.3 * rng.standard_normal((3, 3, c2, 2)),
                          0.1 * rng.standard_normal(2))
    gt = DepthMap(rng.uniform(0.5, 2.5, (hs, ws)))
    planes = np.linspace(0.5, 2.5, n)
    q = sharpness_weights(gt, planes)
    return z, theta, gt, q


class TestSpatialVariationalLoss:
    def test_value_matches_loop_oracle(self):
        z, theta, gt, q = _sv_setup(5)
        res = spatial_variational_loss(z, theta, gt, q)
        dx, dy = depth_gradient(gt.values)
        target = np.stack([dx, dy], axis=-1)
        # Forward differences leaving the grid never contribute.
        comp = np.ones(target.shape)
        comp[:, -1, 0] = 0.0
        comp[-1, :, 1] = 0.0
        expected = 0.0
        for k in range(z.shape[3]):
            pred = _conv_oracle(z.z[:, :, :, k], theta)
            expected += np.sum(q.q[:, :, k][..., None] * comp * np.abs(target - pred))
        assert_allclose(res.value, expected, atol=1e-10)

    def test_perfect_fit_gives_zero(self):
        # If the fused prediction equals the target gradients exactly, the
        # loss and all gradients except the interior sign terms vanish.
        hs, ws, n = 5, 5, 3
        gt = DepthMap(np.full((hs, ws), 1.5))
        q = sharpness_weights(gt, [1.0, 1.5, 2.0])
        z = SurfaceField(np.zeros((hs, ws, 2, n)))
        theta = GradFusionMap(np.zeros((3, 3, 2, 2)), np.zeros(2))
        res = spatial_variational_loss(z, theta, gt, q)
        assert res.value == 0.0
        assert_allclose(res.grad_z, 0.0, atol=0)

    def test_gradients_match_finite_differences(self):
        z, theta, gt, q = _sv_setup(6)
        res = spatial_variational_loss(z, theta, gt, q)
        eps = 1e-6

        def value_at(zz, th):
            return spatial_variational_loss(SurfaceField(zz), th, gt, q).value

        for idx in [(0, 0, 0, 0), (2, 3, 1, 2), (5, 5, 2, 3)]:
            zz = z.z.copy()
            zz[idx] += eps
            up = value_at(zz, theta)
            zz[idx] -= 2 * eps
            down = value_at(zz, theta)
            assert abs((up - down) / (2 * eps) - res.grad_z[idx]) < 1e-5

        for idx in [(0, 0, 0, 0), (1, 2, 2, 1), (2, 2, 1, 0)]:
            w = theta.weights.copy()
            w[idx] += eps
            up = value_at(z.z, GradFusionMap(w, theta.bias))
            w[idx] -= 2 * eps
            down = value_at(z.z, GradFusionMap(w, theta.bias))
            assert abs((up - down) / (2 * eps) - res.grad_weights[idx]) < 1e-5

        for idx in (0, 1):
            b = theta.bias.copy()
            b[idx] += eps
            up = value_at(z.z, GradFusionMap(theta.weights, b))
            b[idx] -= 2 * eps
            down = value_at(z.z, GradFusionMap(theta.weights, b))
            assert abs((up - down) / (2 * eps) - res.grad_bias[idx]) < 1e-5

    def test_gradient_step_decreases_value(self):
        z, theta, gt, q = _sv_setup(7)
        res = spatial_variational_loss(z, theta, gt, q)
        lr = 1e-3
        z2 = SurfaceField(z.z - lr * res.grad_z)
        theta2 = GradFusionMap(theta.weights - lr * res.grad_weights,
                               theta.bias - lr * res.grad_bias)
        res2 = spatial_variational_loss(z2, theta2, gt, q)
        assert res2.value < res.value

    def test_downsamples_ground_truth(self):
        # A surface field at half resolution must still be scored.
        hs, ws, n = 4, 4, 3
        rng = named_rng(8, "sv_down")
        gt = DepthMap(rng.uniform(0.5, 2.5, (8, 8)))
        z = SurfaceField(rng.standard_normal((hs, ws, 2, n)))
        theta = GradFusionMap.random_init(2)
        from focusdepth.core import area_downsample
        small, _ = area_downsample(gt.values, (hs, ws), gt.mask)
        q = sharpness_weights(DepthMap(small), np.linspace(0.5, 2.5, n))
        res = spatial_variational_loss(z, theta, gt, q)
        assert np.isfinite(res.value) and res.value > 0.0

    def test_channel_mismatch_rejected(self):
        z, _, gt, q = _sv_setup(9)
        theta = GradFusionMap.random_init(z.shape[2] + 1)
        with pytest.raises(ValidationError):
            spatial_variational_loss(z, theta, gt, q)
