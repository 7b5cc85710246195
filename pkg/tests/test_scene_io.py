"""
Unit tests for scene, camera and target-directory files.
"""

import json

import numpy as np
import pytest

from gvkf.core.exceptions import SceneFormatError
from gvkf.core.scenes import build_scene, default_camera
from gvkf.core.voxel_store import SparseVoxelGrid
from gvkf.utils.scene_io import (
    discover_targets,
    load_camera,
    load_scene,
    save_camera,
    save_scene,
)


def write_json(path, document):
    path.write_text(json.dumps(document), encoding="utf-8")
    return path


class TestSceneFiles:
    """Tests for gvkf-scene-v1 documents."""

    def test_direct_round_trip(self, tmp_path, triplet_scene):
        """Test direct scenes reload with identical primitives."""
        save_scene(triplet_scene, tmp_path / "scene.json")
        loaded = load_scene(tmp_path / "scene.json")
        assert loaded.mode == "direct"
        original = triplet_scene.generate_gaussians()
        restored = loaded.generate_gaussians()
        assert len(restored) == len(original) == 3
        assert all(a.same_as(b) for a, b in zip(original, restored))

    def test_document_layout(self, tmp_path, triplet_scene):
        """Test the written JSON carries the format tag and field names."""
        save_scene(triplet_scene, tmp_path / "scene.json")
        document = json.loads((tmp_path / "scene.json").read_text())
        assert document["format"] == "gvkf-scene-v1"
        assert document["voxel_size"] == 0.5
        assert set(document["gaussians"][0]) == {"position", "rotation_quat", "scale", "opacity", "rgb"}

    def test_neural_round_trip(self, tmp_path, rng, small_camera):
        """Test neural scenes reload with the same voxels and decoders."""
        grid = SparseVoxelGrid.init_from_points(rng.uniform(-0.5, 0.5, size=(40, 3)), 0.25)
        save_scene(grid, tmp_path / "neural.json")
        loaded = load_scene(tmp_path / "neural.json")
        assert loaded.sorted_keys() == grid.sorted_keys()
        a, b = grid.decode(small_camera), loaded.decode(small_camera)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.colors, b.colors)

    def test_extra_field_rejected(self, tmp_path):
        """Test unknown keys are a format error naming the field."""
        path = write_json(tmp_path / "bad.json", {"mode": "direct", "voxel_size": 0.1, "colour": [1, 0, 0]})
        with pytest.raises(SceneFormatError, match="colour"):
            load_scene(path)

    def test_invalid_scale(self, tmp_path):
        """Test a non-positive scale points at the offending Gaussian."""
        record = {"position": [0, 0, 0], "rotation_quat": [2, 0, 0, 0], "scale": [1, -1, 1], "opacity": 0.5, "rgb": [1, 1, 1]}
        path = write_json(tmp_path / "bad.json", {"mode": "direct", "voxel_size": 0.1, "gaussians": [record]})
        with pytest.raises(SceneFormatError, match="gaussians.0"):
            load_scene(path)

    def test_mode_mismatch(self, tmp_path):
        voxel = {"center": [0.05, 0.05, 0.05], "depth": 0, "feature": [0.0]}
        path = write_json(tmp_path / "bad.json", {"mode": "direct", "voxel_size": 0.1, "voxels": [voxel]})
        with pytest.raises(SceneFormatError):
            load_scene(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(SceneFormatError, match="invalid JSON"):
            load_scene(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(SceneFormatError):
            load_scene(tmp_path / "absent.json")

    def test_empty_scene(self, tmp_path):
        save_scene(SparseVoxelGrid(0.1, mode="direct"), tmp_path / "empty.json")
        assert len(load_scene(tmp_path / "empty.json")) == 0


class TestCameraFiles:
    """Tests for camera documents."""

    def test_round_trip(self, tmp_path):
        cam = default_camera(24)
        save_camera(cam, tmp_path / "cam.json")
        loaded = load_camera(tmp_path / "cam.json")
        np.testing.assert_array_equal(loaded.position, cam.position)
        assert (loaded.width, loaded.height, loaded.fov_y) == (24, 24, cam.fov_y)

    def test_degenerate_camera(self, tmp_path):
        """Test cameras looking at their own position are rejected."""
        path = write_json(
            tmp_path / "cam.json",
            {"position": [0, 0, 1], "look_at": [0, 0, 1], "fov_y": 45, "width": 4, "height": 4},
        )
        with pytest.raises(SceneFormatError):
            load_camera(path)


class TestDiscoverTargets:
    """Tests for pairing target views."""

    def test_pairs_sorted(self, tmp_path):
        for n in (1, 0):
            (tmp_path / f"view_{n:04d}.json").write_text("{}")
            (tmp_path / f"view_{n:04d}.ppm").write_bytes(b"")
        (tmp_path / "notes.txt").write_text("ignored")
        pairs = discover_targets(tmp_path)
        assert [p[0].name for p in pairs] == ["view_0000.json", "view_0001.json"]
        assert [p[1].name for p in pairs] == ["view_0000.ppm", "view_0001.ppm"]

    def test_orphans_listed(self, tmp_path):
        """Test unpaired files are named in the error."""
        (tmp_path / "view_0000.json").write_text("{}")
        (tmp_path / "view_0000.ppm").write_bytes(b"")
        (tmp_path / "view_0001.json").write_text("{}")
        (tmp_path / "view_0002.ppm").write_bytes(b"")
        with pytest.raises(SceneFormatError, match="unpaired target files: view_0001.json, view_0002.ppm"):
            discover_targets(tmp_path)

    def test_empty_directory(self, tmp_path):
        with pytest.raises(SceneFormatError):
            discover_targets(tmp_path)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(SceneFormatError):
            discover_targets(tmp_path / "absent")
