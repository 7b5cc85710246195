"""
Unit tests for the sparse voxel grid.

Tests construction from points, Gaussian generation, gradient
registration and the subdivide/prune cycle.
"""

import numpy as np
import pytest

from gvkf.core.exceptions import (
    EmptyInputError,
    InvalidParameterError,
    InvalidVoxelIdError,
    MissingCameraError,
)
from gvkf.core.voxel_store import SparseVoxelGrid
from gvkf.models.config import GVKFConfig
from gvkf.models.primitives import GaussianPrimitive
from gvkf.models.voxel import FeatureVoxel, children_keys, edge_length

IDENTITY = [1.0, 0.0, 0.0, 0.0]


def five_cell_points(rng):
    """Ten points in each of five unit cells along x."""
    return np.concatenate([rng.uniform(0.0, 1.0, size=(10, 3)) + [i, 0.0, 0.0] for i in range(5)])


def force_visible(grid):
    """Zero the last alpha layer and give it a positive bias so every Gaussian is kept."""
    weight, bias = grid.decoders.alpha.layers[-1]
    grid.decoders.alpha.layers[-1] = (np.zeros_like(weight), np.full_like(bias, 3.0))


def direct_primitive(position):
    return GaussianPrimitive(position, IDENTITY, [0.05, 0.05, 0.05], 0.5, [0.5, 0.5, 0.5])


class TestVoxelKeys:
    """Tests for octree key helpers."""

    def test_edge_halves_per_depth(self):
        """Test edge = base / 2^depth."""
        assert edge_length(0.8, 0) == 0.8
        assert edge_length(0.8, 3) == pytest.approx(0.1)

    def test_children(self):
        """Test the eight children tile the parent at depth + 1."""
        children = children_keys((1, 0, -1, 0))
        assert len(set(children)) == 8
        assert {k[3] for k in children} == {1}
        assert {k[0] for k in children} == {2, 3}
        assert {k[2] for k in children} == {-2, -1}

    def test_offsets_within_half_extent(self):
        """Test offsets outside [-0.5, 0.5] are rejected."""
        with pytest.raises(InvalidParameterError):
            FeatureVoxel(key=(0, 0, 0, 0), edge=1.0, feature=np.zeros(4), offsets=[[0.6, 0.0, 0.0]])


class TestInitFromPoints:
    """Tests for SparseVoxelGrid.init_from_points."""

    def test_single_point(self):
        """Test one point gives one voxel containing it."""
        grid = SparseVoxelGrid.init_from_points([[0.25, 0.35, 0.45]], 0.1)
        assert len(grid) == 1
        voxel = next(iter(grid.voxels.values()))
        assert voxel.key == (2, 3, 4, 0)
        low, high = voxel.bounds()
        assert np.all(low <= [0.25, 0.35, 0.45]) and np.all([0.25, 0.35, 0.45] < high)

    def test_cube_corners_in_one_large_voxel(self):
        """Test eight unit-cube corners share one voxel of size 10."""
        corners = np.array([[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)])
        assert len(SparseVoxelGrid.init_from_points(corners, 10.0)) == 1

    def test_voxel_count_bounded_by_cells(self, rng):
        """Test 10000 points in the unit cube occupy at most 1000 cells of size 0.1."""
        grid = SparseVoxelGrid.init_from_points(rng.uniform(0.0, 1.0, size=(10000, 3)), 0.1)
        assert 0 < len(grid) <= 1000

    def test_features_seeded(self, rng):
        """Test the same seed gives the same features."""
        points = five_cell_points(rng)
        a = SparseVoxelGrid.init_from_points(points, 1.0, GVKFConfig(seed=5))
        b = SparseVoxelGrid.init_from_points(points, 1.0, GVKFConfig(seed=5))
        for key in a.sorted_keys():
            np.testing.assert_array_equal(a.voxels[key].feature, b.voxels[key].feature)
            assert np.abs(a.voxels[key].feature).max() <= 0.1

    def test_empty_points(self):
        """Test an empty point set is rejected."""
        with pytest.raises(EmptyInputError):
            SparseVoxelGrid.init_from_points(np.zeros((0, 3)), 0.1)

    def test_non_positive_size(self):
        """Test a zero voxel size is rejected."""
        with pytest.raises(InvalidParameterError):
            SparseVoxelGrid.init_from_points([[0.0, 0.0, 0.0]], 0.0)


class TestGenerateGaussians:
    """Tests for SparseVoxelGrid.generate_gaussians."""

    def test_neural_count(self, rng, small_camera):
        """Test five voxels with ten offsets give fifty visible Gaussians."""
        grid = SparseVoxelGrid.init_from_points(five_cell_points(rng), 1.0)
        force_visible(grid)
        primitives = grid.generate_gaussians(small_camera)
        assert len(primitives) == 50
        assert grid.num_gaussians() == 50

    def test_neural_gaussians_stay_in_voxel(self, rng, small_camera):
        """Test decoded positions lie inside their voxel and carry its key."""
        grid = SparseVoxelGrid.init_from_points(five_cell_points(rng), 1.0)
        force_visible(grid)
        for g in grid.generate_gaussians(small_camera):
            low, high = grid.voxels[g.voxel_key].bounds()
            assert np.all(g.position >= low - 1e-12) and np.all(g.position <= high + 1e-12)
            assert np.all(g.scale <= 1.0)

    def test_hidden_gaussians_omitted(self, rng, small_camera):
        """Test Gaussians with non-positive opacity are dropped."""
        grid = SparseVoxelGrid.init_from_points(five_cell_points(rng), 1.0)
        weight, bias = grid.decoders.alpha.layers[-1]
        grid.decoders.alpha.layers[-1] = (np.zeros_like(weight), np.full_like(bias, -1.0))
        assert grid.generate_gaussians(small_camera) == []

    def test_missing_camera(self, rng):
        """Test neural decoding requires a camera."""
        grid = SparseVoxelGrid.init_from_points(five_cell_points(rng), 1.0)
        with pytest.raises(MissingCameraError):
            grid.generate_gaussians()

    def test_direct_passthrough(self):
        """Test direct mode returns the stored primitives."""
        primitives = [direct_primitive([0.2, 0.2, 0.2]), direct_primitive([1.5, 0.2, 0.2])]
        grid = SparseVoxelGrid.from_gaussians(primitives, 1.0)
        out = grid.generate_gaussians()
        assert len(grid) == 2
        assert [g.voxel_key for g in out] == [(0, 0, 0, 0), (1, 0, 0, 0)]
        assert out[0].same_as(primitives[0])

    def test_add_voxel_checks(self):
        """Test duplicate keys and depths beyond the cap are rejected."""
        grid = SparseVoxelGrid(1.0, mode="direct")
        grid.add_voxel(FeatureVoxel(key=(0, 0, 0, 0), edge=1.0, feature=np.zeros(4)))
        with pytest.raises(InvalidParameterError):
            grid.add_voxel(FeatureVoxel(key=(0, 0, 0, 0), edge=1.0, feature=np.zeros(4)))
        with pytest.raises(InvalidParameterError):
            grid.add_voxel(FeatureVoxel(key=(0, 0, 0, 4), edge=edge_length(1.0, 4), feature=np.zeros(4)))


class TestRegistration:
    """Tests for gradient registration and voxel evaluation."""

    @pytest.fixture
    def grid(self):
        return SparseVoxelGrid.from_gaussians(
            [direct_primitive([0.25, 0.25, 0.25]), direct_primitive([0.75, 0.75, 0.75])], 1.0
        )

    def test_running_mean(self, grid):
        """Test norms {1e-4, 3e-4} average to 2e-4."""
        key = (0, 0, 0, 0)
        grid.register_gradients([(key, 1e-4)])
        grid.register_gradients([(key, 3e-4)])
        assert grid.voxels[key].accumulated_gradient == pytest.approx(2e-4)
        assert grid.voxels[key].usage_count == 2

    def test_unknown_voxel(self, grid):
        """Test gradients for unknown keys are rejected."""
        with pytest.raises(InvalidVoxelIdError):
            grid.register_gradients([((9, 9, 9, 0), 1e-4)])

    def test_invalid_norm(self, grid):
        """Test negative norms are rejected."""
        with pytest.raises(InvalidParameterError):
            grid.register_gradients([((0, 0, 0, 0), -1.0)])

    def test_small_gradient_unchanged(self, grid):
        """Test a mean below the threshold keeps the voxel."""
        grid.register_gradients([((0, 0, 0, 0), 1e-4)])
        report = grid.evaluate_voxels()
        assert grid.sorted_keys() == [(0, 0, 0, 0)]
        assert report.subdivided == [] and report.pruned == []

    def test_large_gradient_subdivides(self, grid):
        """Test a mean above the threshold replaces the voxel with eight children."""
        grid.register_gradients([((0, 0, 0, 0), 3e-4)])
        report = grid.evaluate_voxels()
        assert report.subdivided == [(0, 0, 0, 0)]
        assert report.created == 8
        assert sorted(grid.sorted_keys()) == sorted(children_keys((0, 0, 0, 0)))
        assert grid.num_gaussians() == 2
        assert len(grid.voxels[(0, 0, 0, 1)].gaussians) == 1
        assert len(grid.voxels[(1, 1, 1, 1)].gaussians) == 1
        assert all(v.edge == 0.5 for v in grid.voxels.values())

    def test_children_copy_parent_state(self, rng):
        """Test neural children inherit the parent feature and offsets."""
        grid = SparseVoxelGrid.init_from_points([[0.1, 0.2, 0.3], [0.7, 0.6, 0.5]], 1.0)
        parent = grid.voxels[(0, 0, 0, 0)]
        grid.register_gradients([(parent.key, 1.0)])
        grid.evaluate_voxels()
        for key in children_keys(parent.key):
            np.testing.assert_array_equal(grid.voxels[key].feature, parent.feature)
            np.testing.assert_array_equal(grid.voxels[key].offsets, parent.offsets)

    def test_depth_cap(self):
        """Test voxels at the maximum depth are not subdivided."""
        grid = SparseVoxelGrid(1.0, mode="direct", config=GVKFConfig(max_depth=3))
        key = (0, 0, 0, 3)
        grid.add_voxel(FeatureVoxel(key=key, edge=edge_length(1.0, 3), feature=np.zeros(4)))
        grid.register_gradients([(key, 1.0)])
        report = grid.evaluate_voxels()
        assert report.subdivided == []
        assert grid.sorted_keys() == [key]

    def test_unused_voxel_pruned(self):
        """Test voxels without visible Gaussians over the window are removed."""
        grid = SparseVoxelGrid.from_gaussians(
            [direct_primitive([0.5, 0.5, 0.5]), direct_primitive([2.5, 0.5, 0.5])], 1.0
        )
        grid.register_gradients([], visible_keys=[(0, 0, 0, 0)])
        report = grid.evaluate_voxels()
        assert report.pruned == [(2, 0, 0, 0)]
        assert grid.sorted_keys() == [(0, 0, 0, 0)]

    def test_counters_reset(self, grid):
        """Test evaluation resets the accumulation window."""
        grid.register_gradients([((0, 0, 0, 0), 1e-5)])
        grid.evaluate_voxels()
        voxel = grid.voxels[(0, 0, 0, 0)]
        assert voxel.accumulated_gradient == 0.0
        assert voxel.usage_count == 0

    def test_copy_is_independent(self, grid):
        """Test mutating a copy leaves the original intact."""
        clone = grid.copy()
        clone.register_gradients([((0, 0, 0, 0), 1.0)])
        clone.evaluate_voxels()
        assert len(clone) == 8
        assert len(grid) == 1
        assert grid.voxels[(0, 0, 0, 0)].usage_count == 0
