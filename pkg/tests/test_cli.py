"""
Tests for the gvkf command-line interface.
"""

import json

import pytest
from click.testing import CliRunner

from gvkf.cli.main import cli, main
from gvkf.core.voxel_store import SparseVoxelGrid
from gvkf.utils.image_io import read_pfm, read_ppm
from gvkf.utils.mesh_io import read_mesh
from gvkf.utils.scene_io import save_scene


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def triplet_files(runner, tmp_path):
    """Triplet scene, an 8x8 camera and one 16x16 target view."""
    result = runner.invoke(
        cli,
        [
            "make-scene", "triplet",
            "--out", str(tmp_path / "scene.json"),
            "--camera-out", str(tmp_path / "cam.json"),
            "--targets-out", str(tmp_path / "targets"),
            "--views", "1",
            "--size", "16",
        ],
    )
    assert result.exit_code == 0, result.output
    return tmp_path


class TestMakeScene:
    """Tests for the make-scene command."""

    def test_writes_scene_and_targets(self, triplet_files):
        document = json.loads((triplet_files / "scene.json").read_text())
        assert document["mode"] == "direct"
        assert len(document["gaussians"]) == 3
        assert (triplet_files / "targets" / "view_0000.json").exists()
        assert read_ppm(triplet_files / "targets" / "view_0000.ppm").width == 16

    def test_unknown_kind(self, runner, tmp_path):
        result = runner.invoke(cli, ["make-scene", "teapot", "--out", str(tmp_path / "s.json")])
        assert result.exit_code == 2


class TestRender:
    """Tests for the render command."""

    def test_color_depth_normal(self, runner, triplet_files):
        out = triplet_files / "img.ppm"
        result = runner.invoke(
            cli,
            [
                "render",
                "--scene", str(triplet_files / "scene.json"),
                "--camera", str(triplet_files / "cam.json"),
                "--out", str(out),
                "--depth", str(triplet_files / "depth.pfm"),
                "--normal", str(triplet_files / "normal.ppm"),
            ],
        )
        assert result.exit_code == 0, result.output
        assert read_ppm(out).height == 16
        assert read_pfm(triplet_files / "depth.pfm").channels == "gray32f"
        assert (triplet_files / "normal.ppm").exists()

    def test_bad_background(self, runner, triplet_files):
        result = runner.invoke(
            cli,
            [
                "render",
                "--scene", str(triplet_files / "scene.json"),
                "--camera", str(triplet_files / "cam.json"),
                "--out", str(triplet_files / "img.ppm"),
                "--bg", "2,0,0",
            ],
        )
        assert result.exit_code == 2
        assert "error:" in result.output

    def test_missing_scene_file(self, runner, triplet_files):
        result = runner.invoke(
            cli,
            [
                "render",
                "--scene", str(triplet_files / "absent.json"),
                "--camera", str(triplet_files / "cam.json"),
                "--out", str(triplet_files / "img.ppm"),
            ],
        )
        assert result.exit_code == 2
        assert "error: cannot read" in result.output

    def test_missing_option_usage_error(self, triplet_files, capsys):
        """Test a missing required flag exits 2 with an error line."""
        code = main(["render", "--camera", str(triplet_files / "cam.json"), "--out", "x.ppm"])
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestMesh:
    """Tests for the mesh command."""

    def test_empty_scene_gives_empty_mesh(self, runner, tmp_path):
        save_scene(SparseVoxelGrid(0.1, mode="direct"), tmp_path / "empty.json")
        out = tmp_path / "empty.ply"
        result = runner.invoke(
            cli, ["mesh", "--scene", str(tmp_path / "empty.json"), "--out", str(out), "--resolution", "8"]
        )
        assert result.exit_code == 0, result.output
        assert read_mesh(out).is_empty

    def test_triplet_obj(self, runner, triplet_files):
        out = triplet_files / "mesh.obj"
        result = runner.invoke(
            cli, ["mesh", "--scene", str(triplet_files / "scene.json"), "--out", str(out), "--resolution", "16"]
        )
        assert result.exit_code == 0, result.output
        assert out.exists()
        assert len(read_mesh(out).vertices) == 0 or not read_mesh(out).is_empty

    def test_resolution_out_of_range(self, runner, triplet_files):
        result = runner.invoke(
            cli, ["mesh", "--scene", str(triplet_files / "scene.json"), "--out", "m.ply", "--resolution", "1"]
        )
        assert result.exit_code == 2

    def test_inverted_bounds(self, runner, triplet_files):
        result = runner.invoke(
            cli,
            [
                "mesh",
                "--scene", str(triplet_files / "scene.json"),
                "--out", str(triplet_files / "m.ply"),
                "--bounds", "1,1,1,0,0,0",
            ],
        )
        assert result.exit_code == 2
        assert "error:" in result.output


class TestFit:
    """Tests for the fit command."""

    def test_zero_iterations(self, runner, triplet_files):
        out = triplet_files / "fitted.json"
        result = runner.invoke(
            cli,
            [
                "fit",
                "--scene", str(triplet_files / "scene.json"),
                "--targets", str(triplet_files / "targets"),
                "--iters", "0",
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        assert not [line for line in result.output.splitlines() if line.startswith("iter ")]
        assert json.loads(out.read_text()) == json.loads((triplet_files / "scene.json").read_text())

    def test_loss_lines(self, runner, triplet_files):
        result = runner.invoke(
            cli,
            [
                "fit",
                "--scene", str(triplet_files / "scene.json"),
                "--targets", str(triplet_files / "targets"),
                "--iters", "2",
                "--out", str(triplet_files / "fitted.json"),
            ],
        )
        assert result.exit_code == 0, result.output
        lines = [line for line in result.output.splitlines() if line.startswith("iter")]
        assert len(lines) == 2
        assert lines[0].startswith("iter      0  loss ")

    def test_orphan_targets(self, runner, triplet_files):
        (triplet_files / "targets" / "view_0001.json").write_text("{}")
        result = runner.invoke(
            cli,
            [
                "fit",
                "--scene", str(triplet_files / "scene.json"),
                "--targets", str(triplet_files / "targets"),
                "--iters", "1",
                "--out", str(triplet_files / "fitted.json"),
            ],
        )
        assert result.exit_code == 2
        assert "unpaired target files: view_0001.json" in result.output


class TestVerify:
    """Tests for the verify command."""

    def test_all_pass(self, runner):
        result = runner.invoke(cli, ["verify"])
        assert result.exit_code == 0, result.output
        assert "FAIL" not in result.output

    def test_negated_suite_fails(self, runner):
        result = runner.invoke(cli, ["verify", "--self-test-negate"])
        assert result.exit_code == 1
        assert "error: verification failed" in result.output


class TestDeterminism:
    """Tests for byte-identical outputs across runs and thread counts."""

    @pytest.fixture
    def sphere_files(self, runner, tmp_path):
        result = runner.invoke(
            cli,
            [
                "make-scene", "sphere",
                "--out", str(tmp_path / "sphere.json"),
                "--camera-out", str(tmp_path / "cam.json"),
                "--size", "24",
            ],
        )
        assert result.exit_code == 0, result.output
        return tmp_path

    def test_render_bytes_across_threads(self, runner, sphere_files):
        """Test color, depth and normal files match for threads 1, 4 and a repeated 4."""
        outputs = []
        for n, threads in enumerate(["1", "4", "4"]):
            files = [sphere_files / f"run{n}{suffix}" for suffix in (".ppm", ".pfm", "_normal.ppm")]
            result = runner.invoke(
                cli,
                [
                    "--threads", threads,
                    "render",
                    "--scene", str(sphere_files / "sphere.json"),
                    "--camera", str(sphere_files / "cam.json"),
                    "--out", str(files[0]),
                    "--depth", str(files[1]),
                    "--normal", str(files[2]),
                ],
            )
            assert result.exit_code == 0, result.output
            outputs.append([path.read_bytes() for path in files])
        assert outputs[0] == outputs[1] == outputs[2]

    def test_mesh_bytes_across_threads(self, runner, sphere_files):
        """Test the binary PLY matches for threads 1, 4 and a repeated 4."""
        payloads = []
        for n, threads in enumerate(["1", "4", "4"]):
            out = sphere_files / f"mesh{n}.ply"
            result = runner.invoke(
                cli,
                [
                    "--threads", threads,
                    "mesh",
                    "--scene", str(sphere_files / "sphere.json"),
                    "--out", str(out),
                    "--resolution", "32",
                ],
            )
            assert result.exit_code == 0, result.output
            payloads.append(out.read_bytes())
        assert not read_mesh(sphere_files / "mesh0.ply").is_empty
        assert payloads[0] == payloads[1] == payloads[2]
