"""
Unit tests for covariance construction and the ray-Gaussian transform.
"""

import numpy as np
import pytest
from scipy import optimize

from gvkf.core.exceptions import InvalidParameterError, InvalidRayError, SingularCovarianceError
from gvkf.core.gaussian_core import (
    GaussianCloud,
    covariance_from_rs,
    evaluate_3d,
    inverse_covariances,
    ray_gaussian_transform,
    trace_rays,
)
from gvkf.models.primitives import GaussianPrimitive, Ray

IDENTITY = [1.0, 0.0, 0.0, 0.0]


def random_quaternion(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


class TestCovariance:
    """Tests for covariance_from_rs."""

    def test_identity(self):
        """Test identity rotation and unit scale give the identity."""
        cov = covariance_from_rs(IDENTITY, [1.0, 1.0, 1.0])
        np.testing.assert_allclose(cov.matrix, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(cov.inverse, np.eye(3), atol=1e-15)

    def test_diagonal(self):
        """Test scale (2, 1, 1) squares onto the diagonal."""
        cov = covariance_from_rs(IDENTITY, [2.0, 1.0, 1.0])
        np.testing.assert_allclose(cov.matrix, np.diag([4.0, 1.0, 1.0]), atol=1e-15)

    def test_random_rotation_eigenvalues(self, rng):
        """Test eigenvalues are the squared scales for any rotation."""
        for _ in range(20):
            cov = covariance_from_rs(random_quaternion(rng), [0.5, 1.0, 2.0])
            np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(cov.matrix)), [0.25, 1.0, 4.0], atol=1e-12)
            np.testing.assert_allclose(cov.matrix @ cov.inverse, np.eye(3), atol=1e-12)
            np.testing.assert_array_equal(cov.matrix, cov.matrix.T)

    def test_non_positive_scale(self):
        """Test zero or negative scales are rejected."""
        with pytest.raises(InvalidParameterError):
            covariance_from_rs(IDENTITY, [1.0, 0.0, 1.0])
        with pytest.raises(InvalidParameterError):
            covariance_from_rs(IDENTITY, [1.0, -1.0, 1.0])

    def test_near_singular(self):
        """Test condition numbers above 1e12 are rejected."""
        with pytest.raises(SingularCovarianceError):
            covariance_from_rs(IDENTITY, [1.0, 1.0, 1e-7])

    def test_non_unit_quaternion(self):
        """Test a non-normalized quaternion is rejected."""
        with pytest.raises(InvalidParameterError):
            covariance_from_rs([2.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0])

    def test_batched_inverse_matches_single(self, rng):
        """Test the batched inverse agrees with the per-primitive inverse."""
        quats = np.stack([random_quaternion(rng) for _ in range(5)])
        scales = rng.uniform(0.2, 2.0, size=(5, 3))
        batched = inverse_covariances(quats, scales)
        for q, s, inv in zip(quats, scales, batched):
            np.testing.assert_allclose(inv, covariance_from_rs(q, s).inverse, rtol=1e-10, atol=1e-12)


class TestEvaluate3D:
    """Tests for evaluate_3d."""

    def test_peak_is_opacity(self):
        """Test the density at the mean equals the opacity."""
        g = GaussianPrimitive([1.0, 2.0, 3.0], IDENTITY, [0.3, 0.5, 0.7], 0.6, [0.0, 0.0, 0.0])
        assert evaluate_3d(g, [1.0, 2.0, 3.0]) == pytest.approx(0.6, abs=1e-15)

    def test_unit_offset(self):
        """Test a unit offset under Σ = I gives exp(-1/2)."""
        g = GaussianPrimitive([0.0, 0.0, 0.0], IDENTITY, [1.0, 1.0, 1.0], 1.0, [0.0, 0.0, 0.0])
        assert evaluate_3d(g, [1.0, 0.0, 0.0]) == pytest.approx(np.exp(-0.5), abs=1e-12)

    def test_anisotropic_matches_dense_oracle(self, rng):
        """Test an anisotropic Gaussian against direct matrix arithmetic."""
        q = random_quaternion(rng)
        scale = np.array([0.3, 0.8, 1.5])
        g = GaussianPrimitive([0.1, -0.2, 0.4], q, scale, 0.7, [0.0, 0.0, 0.0])
        w, x, y, z = q
        rot = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        sigma = rot @ np.diag(scale**2) @ rot.T
        point = np.array([0.5, 0.3, -0.2])
        d = point - g.position
        expected = 0.7 * np.exp(-0.5 * d @ np.linalg.inv(sigma) @ d)
        assert evaluate_3d(g, point) == pytest.approx(expected, abs=1e-12)


class TestRayGaussianTransform:
    """Tests for ray_gaussian_transform."""

    def test_on_axis(self, unit_gaussian):
        """Test a ray through the mean peaks at the mean with unit height."""
        kernel = ray_gaussian_transform(unit_gaussian, Ray([0.0, 0.0, 0.0], [0.0, 0.0, 1.0]))
        assert kernel.t == pytest.approx(5.0)
        assert kernel.k == pytest.approx(0.5)
        assert kernel.g_max == pytest.approx(1.0)
        assert not kernel.culled

    def test_off_axis(self):
        """Test a unit miss distance lowers the peak to exp(-1/2)."""
        g = GaussianPrimitive([1.0, 0.0, 5.0], IDENTITY, [1.0, 1.0, 1.0], 1.0, [0.0, 0.0, 0.0])
        kernel = ray_gaussian_transform(g, Ray([0.0, 0.0, 0.0], [0.0, 0.0, 1.0]))
        assert kernel.t == pytest.approx(5.0)
        assert kernel.g_max == pytest.approx(np.exp(-0.5), abs=1e-12)
        assert kernel.alpha == pytest.approx(np.exp(-0.5), abs=1e-12)

    def test_behind_camera_is_culled(self):
        """Test kernels peaking behind the origin are flagged."""
        g = GaussianPrimitive([0.0, 0.0, -5.0], IDENTITY, [1.0, 1.0, 1.0], 1.0, [0.0, 0.0, 0.0])
        assert ray_gaussian_transform(g, Ray([0.0, 0.0, 0.0], [0.0, 0.0, 1.0])).culled

    def test_faint_kernel_is_culled(self):
        """Test kernels below the alpha threshold are flagged."""
        g = GaussianPrimitive([10.0, 0.0, 5.0], IDENTITY, [1.0, 1.0, 1.0], 1.0, [0.0, 0.0, 0.0])
        assert ray_gaussian_transform(g, Ray([0.0, 0.0, 0.0], [0.0, 0.0, 1.0])).culled

    def test_degenerate_direction(self):
        """Test a zero direction is rejected."""
        with pytest.raises(InvalidRayError):
            Ray.towards([0.0, 0.0, 0.0], [0.0, 0.0, 0.0])

    def test_uniform_scaling_scales_sharpness(self, unit_gaussian):
        """Test scaling s by λ scales k by 1/λ²."""
        ray = Ray([0.0, 0.0, 0.0], [0.0, 0.0, 1.0])
        wide = GaussianPrimitive(unit_gaussian.position, IDENTITY, [3.0, 3.0, 3.0], 1.0, [0.0, 0.0, 0.0])
        assert ray_gaussian_transform(wide, ray).k == pytest.approx(
            ray_gaussian_transform(unit_gaussian, ray).k / 9.0
        )

    def test_peak_matches_numeric_argmax(self, rng):
        """Test the analytic peak is the argmax of the 3D density along the ray."""
        for _ in range(25):
            g = GaussianPrimitive(
                rng.uniform(-1.0, 1.0, size=3) + [0.0, 0.0, 5.0],
                random_quaternion(rng),
                rng.uniform(0.2, 1.0, size=3),
                float(rng.uniform(0.1, 1.0)),
                [0.5, 0.5, 0.5],
            )
            ray = Ray.towards(rng.uniform(-0.5, 0.5, size=3), [0.0, 0.0, 1.0] + rng.uniform(-0.2, 0.2, size=3))
            kernel = ray_gaussian_transform(g, ray, alpha_min=0.0)
            numeric = optimize.minimize_scalar(
                lambda t: -evaluate_3d(g, ray.at(t)),
                bounds=(kernel.t - 3.0, kernel.t + 3.0),
                method="bounded",
                options={"xatol": 1e-9},
            ).x
            assert abs(numeric - kernel.t) <= 1e-4
            assert kernel.g_max == pytest.approx(evaluate_3d(g, ray.at(kernel.t)) / g.opacity, abs=1e-12)


class TestTraceRays:
    """Tests for batched tracing."""

    def test_empty_cloud(self, empty_cloud):
        """Test an empty cloud gives empty rows."""
        batch = trace_rays(empty_cloud, np.zeros((4, 3)), np.tile([0.0, 0.0, 1.0], (4, 1)))
        assert batch.num_rays == 4
        assert batch.slots == 0
        assert batch.counts.tolist() == [0, 0, 0, 0]

    def test_matches_single_transform(self, rng):
        """Test batched kernels equal per-pair transforms, sorted by t."""
        primitives = [
            GaussianPrimitive([0.0, 0.0, z], random_quaternion(rng), [0.3, 0.4, 0.5], 0.8, [z / 10.0, 0.0, 0.0])
            for z in (7.0, 3.0, 5.0)
        ]
        cloud = GaussianCloud.from_primitives(primitives)
        ray = Ray([0.05, -0.02, 0.0], [0.0, 0.0, 1.0])
        batch = trace_rays(cloud, ray.origin[None], ray.direction[None])
        assert batch.counts[0] == 3
        assert np.all(np.diff(batch.t[0]) >= 0.0)
        for slot in range(3):
            kernel = ray_gaussian_transform(primitives[batch.index[0, slot]], ray)
            assert batch.t[0, slot] == pytest.approx(kernel.t, rel=1e-12)
            assert batch.k[0, slot] == pytest.approx(kernel.k, rel=1e-12)
            assert batch.alpha[0, slot] == pytest.approx(kernel.alpha, rel=1e-12)

    def test_padding_is_neutral(self):
        """Test padded slots have alpha 0, k 1 and index -1."""
        cloud = GaussianCloud.from_primitives(
            [GaussianPrimitive([0.0, 0.0, 5.0], IDENTITY, [0.5, 0.5, 0.5], 0.9, [1.0, 1.0, 1.0])]
        )
        origins = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
        directions = np.tile([0.0, 0.0, 1.0], (2, 1))
        batch = trace_rays(cloud, origins, directions)
        assert batch.counts.tolist() == [1, 0]
        assert batch.alpha[1, 0] == 0.0
        assert batch.k[1, 0] == 1.0
        assert batch.index[1, 0] == -1

    def test_far_bound_culls(self, unit_gaussian):
        """Test kernels beyond the far bound are dropped."""
        cloud = GaussianCloud.from_primitives([unit_gaussian])
        batch = trace_rays(cloud, np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]]), far=4.0)
        assert batch.counts[0] == 0

    def test_cloud_bounds(self, unit_gaussian):
        """Test bounds pad each mean by three largest scales."""
        box = GaussianCloud.from_primitives([unit_gaussian]).bounds()
        np.testing.assert_allclose(box, [[-3.0, -3.0, 2.0], [3.0, 3.0, 8.0]])
        assert GaussianCloud.from_primitives([]).bounds() is None
