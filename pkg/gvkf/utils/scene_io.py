"""Scene, camera and target-directory files."""

import json
import re
from pathlib import Path
from typing import List, Optional, Tuple, Type, TypeVar, Union

import numpy as np
import structlog
from pydantic import BaseModel, ValidationError

from gvkf.core.decoders import DecoderSet
from gvkf.core.exceptions import GVKFError, SceneFormatError
from gvkf.core.voxel_store import SparseVoxelGrid
from gvkf.models.config import GVKFConfig
from gvkf.models.geometry import Camera
from gvkf.models.primitives import GaussianPrimitive
from gvkf.models.scene_file import (
    CameraFile,
    DecoderWeights,
    GaussianRecord,
    SceneFile,
    VoxelRecord,
)
from gvkf.models.voxel import FeatureVoxel, edge_length

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]
Model = TypeVar("Model", bound=BaseModel)

TARGET_PATTERN = re.compile(r"^view_(\d{4})\.(json|ppm)$")


def describe_validation_error(error: ValidationError) -> str:
    first = error.errors()[0]
    location = ".".join(str(part) for part in first["loc"]) or "<root>"
    return f"{location}: {first['msg']}"


def _read_document(path: PathLike, model: Type[Model]) -> Model:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise SceneFormatError(f"cannot read {path}: {e.strerror or e}") from e
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    try:
        return model.model_validate(raw)
    except ValidationError as e:
        raise SceneFormatError(f"{path}: {describe_validation_error(e)}") from e


def _write_document(path: PathLike, document: BaseModel) -> None:
    path = Path(path)
    text = json.dumps(document.model_dump(mode="json", exclude_none=True), indent=2) + "\n"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise SceneFormatError(f"cannot write {path}: {e.strerror or e}") from e


# ============================================================================
# Scenes
# ============================================================================


def scene_from_document(document: SceneFile, config: Optional[GVKFConfig] = None) -> SparseVoxelGrid:
    """Build the voxel grid a validated scene document describes."""
    config = config or GVKFConfig()

    if document.mode == "direct":
        primitives = []
        for n, record in enumerate(document.gaussians):
            try:
                primitives.append(
                    GaussianPrimitive.from_raw(
                        record.position, record.rotation_quat, record.scale, record.opacity, record.rgb
                    )
                )
            except GVKFError as e:
                raise SceneFormatError(f"gaussians.{n}: {e}") from e
        return SparseVoxelGrid.from_gaussians(primitives, document.voxel_size, config)

    if document.decoder_weights is not None:
        try:
            decoders = DecoderSet.from_records(document.decoder_weights.model_dump())
        except GVKFError as e:
            raise SceneFormatError(f"decoder_weights: {e}") from e
    else:
        feature_dim = len(document.voxels[0].feature) if document.voxels else config.feature_dim
        decoders = DecoderSet.initialize(config.seed, feature_dim, config.decoder_hidden, config.gaussians_per_voxel)
        logger.info("Scene has no decoder weights, using seeded decoders", seed=config.seed)

    grid = SparseVoxelGrid(document.voxel_size, mode="neural", decoders=decoders, config=config)
    for n, record in enumerate(document.voxels):
        if len(record.feature) != decoders.feature_dim:
            raise SceneFormatError(
                f"voxels.{n}.feature: expected {decoders.feature_dim} values, got {len(record.feature)}"
            )
        if len(record.offsets) > decoders.gaussians_per_voxel:
            raise SceneFormatError(f"voxels.{n}.offsets: more than {decoders.gaussians_per_voxel} offsets")
        edge = edge_length(document.voxel_size, record.depth)
        cell = np.floor(np.asarray(record.center) / edge).astype(np.int64).tolist()
        key = (*cell, record.depth)
        voxel = FeatureVoxel(key=key, edge=edge, feature=record.feature, offsets=np.asarray(record.offsets).reshape(-1, 3))
        try:
            grid.add_voxel(voxel)
        except GVKFError as e:
            raise SceneFormatError(f"voxels.{n}: {e}") from e
    return grid


def scene_to_document(grid: SparseVoxelGrid) -> SceneFile:
    """Serialize a grid; voxels and Gaussians are written in sorted key order."""
    if grid.mode == "direct":
        gaussians = [
            GaussianRecord(
                position=g.position.tolist(),
                rotation_quat=g.rotation.tolist(),
                scale=g.scale.tolist(),
                opacity=g.opacity,
                rgb=g.color.tolist(),
            )
            for g in grid.generate_gaussians()
        ]
        return SceneFile(mode="direct", voxel_size=grid.base_voxel_size, gaussians=gaussians)

    voxels = [
        VoxelRecord(
            center=grid.voxels[key].center.tolist(),
            depth=grid.voxels[key].depth,
            feature=grid.voxels[key].feature.tolist(),
            offsets=grid.voxels[key].offsets.tolist(),
        )
        for key in grid.sorted_keys()
    ]
    return SceneFile(
        mode="neural",
        voxel_size=grid.base_voxel_size,
        voxels=voxels,
        decoder_weights=DecoderWeights.model_validate(grid.decoders.to_records()),
    )


def load_scene(path: PathLike, config: Optional[GVKFConfig] = None) -> SparseVoxelGrid:
    """Read a gvkf-scene-v1 file."""
    grid = scene_from_document(_read_document(path, SceneFile), config)
    logger.debug("Loaded scene", path=str(path), mode=grid.mode, voxels=len(grid))
    return grid


def save_scene(grid: SparseVoxelGrid, path: PathLike) -> None:
    """Write a gvkf-scene-v1 file with 64-bit round-trip float text."""
    _write_document(path, scene_to_document(grid))
    logger.debug("Saved scene", path=str(path), mode=grid.mode, voxels=len(grid))


# ============================================================================
# Cameras
# ============================================================================


def camera_from_document(document: CameraFile) -> Camera:
    return Camera(
        position=np.asarray(document.position),
        look_at=np.asarray(document.look_at),
        up=np.asarray(document.up),
        fov_y=document.fov_y,
        width=document.width,
        height=document.height,
        near=document.near,
        far=document.far,
    )


def camera_to_document(cam: Camera) -> CameraFile:
    return CameraFile(
        position=cam.position.tolist(),
        look_at=cam.look_at.tolist(),
        up=cam.up.tolist(),
        fov_y=cam.fov_y,
        width=cam.width,
        height=cam.height,
        near=cam.near,
        far=cam.far,
    )


def load_camera(path: PathLike) -> Camera:
    document = _read_document(path, CameraFile)
    try:
        return camera_from_document(document)
    except GVKFError as e:
        raise SceneFormatError(f"{path}: {e}") from e


def save_camera(cam: Camera, path: PathLike) -> None:
    _write_document(path, camera_to_document(cam))


# ============================================================================
# Target directories
# ============================================================================


def discover_targets(directory: PathLike) -> List[Tuple[Path, Path]]:
    """
    Pair ``view_%04d.json`` cameras with ``view_%04d.ppm`` images.

    Returns:
        (camera path, image path) pairs sorted by view number

    Raises:
        SceneFormatError: Directory unreadable, empty, or holding unpaired files
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise SceneFormatError(f"targets directory {directory} does not exist")

    found: dict = {}
    for entry in sorted(directory.iterdir()):
        match = TARGET_PATTERN.match(entry.name)
        if match:
            found.setdefault(match.group(1), {})[match.group(2)] = entry

    orphans = sorted(
        str(path.name) for files in found.values() if len(files) == 1 for path in files.values()
    )
    if orphans:
        raise SceneFormatError(f"unpaired target files: {', '.join(orphans)}")
    if not found:
        raise SceneFormatError(f"no view_NNNN.json/view_NNNN.ppm pairs in {directory}")

    return [(found[number]["json"], found[number]["ppm"]) for number in sorted(found)]
