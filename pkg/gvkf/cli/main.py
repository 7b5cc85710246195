"""Command-line interface for the GVKF reference pipeline."""

import functools
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import click
import structlog
from pydantic import ValidationError

from gvkf.core.exceptions import GVKFError
from gvkf.core.mesher import MeshExtractor
from gvkf.core.renderer import Renderer
from gvkf.core.scenes import SCENES, build_scene, default_camera, orbit_cameras, perturb_scene, render_targets, write_targets
from gvkf.core.trainer import Trainer
from gvkf.core.verification import InvariantSuite
from gvkf.core.voxel_store import SparseVoxelGrid
from gvkf.models.config import CliConfig, GVKFConfig
from gvkf.utils.image_io import read_ppm, write_image, write_pfm, write_ppm
from gvkf.utils.logging import setup_logging
from gvkf.utils.mesh_io import export_mesh
from gvkf.utils.scene_io import (
    describe_validation_error,
    discover_targets,
    load_camera,
    load_scene,
    save_camera,
    save_scene,
)

logger = structlog.get_logger(__name__)

LOSS_REPORT_EVERY = 100


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def handle_errors(func):
    """Map library errors to a single ``error:`` line and their exit code."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except GVKFError as e:
            _fail(str(e), e.exit_code)
        except ValidationError as e:
            _fail(describe_validation_error(e), 2)

    return wrapper


def _float_list(count: int):
    def parse(ctx, param, value: Optional[str]) -> Optional[List[float]]:
        if value is None:
            return None
        try:
            numbers = [float(part) for part in value.split(",")]
        except ValueError:
            raise click.BadParameter(f"expected {count} comma-separated numbers, got {value!r}")
        if len(numbers) != count:
            raise click.BadParameter(f"expected {count} comma-separated numbers, got {len(numbers)}")
        return numbers

    return parse


@click.group()
@click.option('--log-level', '-l', default=None,
              type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
              help='Logging level (logs go to stderr)')
@click.option('--log-format', type=click.Choice(['text', 'json']), default=None,
              help='Log renderer')
@click.option('--threads', '-j', type=click.IntRange(min=1), default=None,
              help='Worker threads for ray batches')
@click.option('--seed', type=int, default=42, show_default=True,
              help='Seed for pseudo-random draws (GVKF_SEED overrides)')
@click.pass_context
def cli(ctx, log_level: Optional[str], log_format: Optional[str], threads: Optional[int], seed: int):
    """Gaussian Voxel Kernel Functions: render, mesh, fit and verify."""
    ctx.ensure_object(dict)

    overrides = {}
    if log_level:
        overrides['log_level'] = log_level
    if log_format:
        overrides['log_format'] = log_format
    if threads:
        overrides['threads'] = threads
    if 'GVKF_SEED' not in os.environ:
        overrides['seed'] = seed

    try:
        config = GVKFConfig(**overrides)
    except ValidationError as e:
        _fail(f"invalid configuration: {describe_validation_error(e)}", 2)

    setup_logging(config)
    ctx.obj['config'] = config


# ============================================================================
# render
# ============================================================================


@cli.command()
@click.option('--scene', '-s', required=True, type=click.Path(), help='Scene JSON')
@click.option('--camera', '-c', required=True, type=click.Path(), help='Camera JSON')
@click.option('--out', '-o', required=True, type=click.Path(), help='Color image (.ppm or .png)')
@click.option('--depth', type=click.Path(), default=None, help='Depth map (.pfm)')
@click.option('--normal', type=click.Path(), default=None, help='Normal map (.ppm)')
@click.option('--bg', callback=_float_list(3), default=None, help='Background color r,g,b in [0, 1]')
@click.pass_context
@handle_errors
def render(ctx, scene: str, camera: str, out: str, depth: Optional[str], normal: Optional[str],
           bg: Optional[List[float]]):
    """Render color, depth and normal images of a scene."""
    config: GVKFConfig = ctx.obj['config']
    ctx.obj['args'] = CliConfig(subcommand='render', scene=scene, camera=camera, out=out, seed=config.seed)

    background = bg or [0.0, 0.0, 0.0]
    if any(not 0.0 <= c <= 1.0 for c in background):
        _fail("--bg components must be in [0, 1]", 2)

    grid = load_scene(scene, config)
    cam = load_camera(camera)
    result = Renderer(config).render_image(grid, cam, background)

    write_image(result.color, out)
    if depth:
        write_pfm(result.depth, depth)
    if normal:
        write_ppm(result.normal, normal)
    click.echo(f"wrote {out} ({cam.width}x{cam.height})")


# ============================================================================
# mesh
# ============================================================================


@cli.command()
@click.option('--scene', '-s', required=True, type=click.Path(), help='Scene JSON')
@click.option('--out', '-o', required=True, type=click.Path(), help='Mesh file (.ply or .obj)')
@click.option('--resolution', '-r', type=click.IntRange(2, 1024), default=None,
              help='Grid samples along the longest axis')
@click.option('--mu', type=click.FloatRange(min=0.0, min_open=True), default=None, help='Logistic smooth factor')
@click.option('--iso', type=float, default=0.0, show_default=True, help='SDF level to triangulate')
@click.option('--sigma-mode', type=click.Choice(['per-ray', 'global']), default=None, help='Sigma^2 per ray or shared')
@click.option('--format', 'fmt', type=click.Choice(['ply_ascii', 'ply_binary_le', 'obj']), default=None,
              help='Mesh encoding (default from the extension)')
@click.option('--probes', type=click.Choice(['3', '6']), default=None, help='Axis probe directions per sample')
@click.option('--aggregate', type=click.Choice(['visibility', 'min_abs']), default=None,
              help='How probe distances are fused')
@click.option('--mapping', type=click.Choice(['logistic', 'linear']), default=None, help='Opacity to SDF map')
@click.option('--bounds', callback=_float_list(6), default=None, help='Sampling box x0,y0,z0,x1,y1,z1')
@click.pass_context
@handle_errors
def mesh(ctx, scene: str, out: str, resolution: Optional[int], mu: Optional[float], iso: float,
         sigma_mode: Optional[str], fmt: Optional[str], probes: Optional[str], aggregate: Optional[str],
         mapping: Optional[str], bounds: Optional[List[float]]):
    """Extract the D = 0 surface of a scene with marching cubes."""
    config: GVKFConfig = ctx.obj['config']
    ctx.obj['args'] = CliConfig(
        subcommand='mesh', scene=scene, out=out, resolution=resolution, mu=mu, iso=iso, seed=config.seed
    )

    update = {}
    if probes:
        update['probe_directions'] = int(probes)
    if aggregate:
        update['probe_aggregation'] = aggregate
    if mapping:
        update['sdf_mapping'] = mapping
    config = config.model_copy(update=update)

    if fmt is None:
        fmt = 'obj' if Path(out).suffix.lower() == '.obj' else config.mesh_format

    grid = load_scene(scene, config)
    extractor = MeshExtractor(config)
    box = [bounds[:3], bounds[3:]] if bounds else None
    sdf = extractor.sample_sdf_grid(grid, box, resolution, mu, sigma_mode)
    surface = extractor.marching_cubes(sdf, iso)

    export_mesh(surface, out, fmt)
    click.echo(f"wrote {out}: {len(surface.vertices)} vertices, {len(surface.faces)} faces")


# ============================================================================
# fit
# ============================================================================


@cli.command()
@click.option('--scene', '-s', required=True, type=click.Path(), help='Initial scene JSON')
@click.option('--targets', '-t', required=True, type=click.Path(), help='Directory of view_NNNN.json/.ppm pairs')
@click.option('--iters', '-n', required=True, type=click.IntRange(min=0), help='Iterations')
@click.option('--out', '-o', required=True, type=click.Path(), help='Fitted scene JSON')
@click.option('--voxel-size', type=click.FloatRange(min=0.0, min_open=True), default=None,
              help='Re-register direct-mode Gaussians at this voxel size')
@click.option('--lambda-dssim', type=click.FloatRange(0.0, 1.0), default=None, help='D-SSIM weight')
@click.option('--lambda-dist', type=click.FloatRange(min=0.0), default=None, help='Depth distortion weight')
@click.pass_context
@handle_errors
def fit(ctx, scene: str, targets: str, iters: int, out: str, voxel_size: Optional[float],
        lambda_dssim: Optional[float], lambda_dist: Optional[float]):
    """Fit a scene to posed target images and print the loss curve."""
    config: GVKFConfig = ctx.obj['config']
    ctx.obj['args'] = CliConfig(
        subcommand='fit', scene=scene, out=out, iters=iters, voxel_size=voxel_size, seed=config.seed
    )

    loss_update = {}
    if lambda_dssim is not None:
        loss_update['lambda_dssim'] = lambda_dssim
    if lambda_dist is not None:
        loss_update['lambda_dist'] = lambda_dist
    loss = config.loss.model_copy(update=loss_update)

    grid = load_scene(scene, config)
    if voxel_size is not None:
        if grid.mode != 'direct':
            _fail("--voxel-size only applies to direct-mode scenes", 2)
        grid = SparseVoxelGrid.from_gaussians(grid.generate_gaussians(), voxel_size, config)

    views = [(load_camera(cam_path), read_ppm(img_path)) for cam_path, img_path in discover_targets(targets)]
    result = Trainer(config, loss).fit(grid, views, iters)

    for n, value in enumerate(result.history):
        if n % LOSS_REPORT_EVERY == 0 or n + 1 == len(result.history):
            click.echo(f"iter {n:6d}  loss {value:.6f}")
    save_scene(result.grid, out)
    click.echo(f"wrote {out}")


# ============================================================================
# verify
# ============================================================================


@cli.command()
@click.option('--self-test-negate', is_flag=True, help='Inject a fault to prove failures are reported')
@click.pass_context
@handle_errors
def verify(ctx, self_test_negate: bool):
    """Run the invariant suite and print pass/fail per property."""
    config: GVKFConfig = ctx.obj['config']
    ctx.obj['args'] = CliConfig(subcommand='verify', seed=config.seed)

    report = InvariantSuite(config).run(negate=self_test_negate)
    for line in report.lines():
        click.echo(line)
    if not report.passed:
        _fail(f"verification failed: {', '.join(report.failed)}", 1)


# ============================================================================
# make-scene
# ============================================================================


@cli.command('make-scene')
@click.argument('kind', type=click.Choice(sorted(SCENES)))
@click.option('--out', '-o', required=True, type=click.Path(), help='Scene JSON')
@click.option('--camera-out', type=click.Path(), default=None, help='Default camera JSON')
@click.option('--targets-out', type=click.Path(), default=None, help='Directory for rendered target views')
@click.option('--views', type=click.IntRange(min=1), default=4, show_default=True, help='Target view count')
@click.option('--size', type=click.IntRange(min=1), default=64, show_default=True, help='Image width and height')
@click.option('--perturb', type=click.FloatRange(0.0, 1.0), default=0.0, show_default=True,
              help='Jitter colors and opacities of the written scene (targets stay exact)')
@click.pass_context
@handle_errors
def make_scene(ctx, kind: str, out: str, camera_out: Optional[str], targets_out: Optional[str],
               views: int, size: int, perturb: float):
    """Write a built-in synthetic scene and optional cameras and targets."""
    config: GVKFConfig = ctx.obj['config']
    ctx.obj['args'] = CliConfig(subcommand='make-scene', out=out, seed=config.seed)

    grid = build_scene(kind, config)
    if targets_out:
        write_targets(render_targets(grid, orbit_cameras(views, size), config), targets_out)
        click.echo(f"wrote {views} target views to {targets_out}")
    if camera_out:
        save_camera(default_camera(size), camera_out)
        click.echo(f"wrote {camera_out}")

    if perturb > 0.0:
        grid = perturb_scene(grid, perturb, config.seed)
    save_scene(grid, out)
    click.echo(f"wrote {out} ({grid.num_gaussians()} gaussians)")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point that reports usage errors with the ``error:`` prefix."""
    try:
        cli.main(args=list(argv) if argv is not None else None, prog_name='gvkf', standalone_mode=False)
    except click.UsageError as e:
        if e.ctx is not None:
            click.echo(e.ctx.get_usage(), err=True)
        click.echo(f"error: {e.format_message()}", err=True)
        return 2
    except click.ClickException as e:
        click.echo(f"error: {e.format_message()}", err=True)
        return e.exit_code
    except click.Abort:
        click.echo("error: aborted", err=True)
        return 1
    return 0
