"""Pydantic schemas for the gvkf-scene-v1 scene file and camera files."""

from typing import Annotated, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SCENE_FORMAT = "gvkf-scene-v1"

Vec3 = Annotated[List[float], Field(min_length=3, max_length=3)]
Quat = Annotated[List[float], Field(min_length=4, max_length=4)]


class GaussianRecord(BaseModel):
    """One explicit Gaussian of a direct-mode scene."""
    model_config = ConfigDict(extra="forbid")

    position: Vec3 = Field(..., description="World position")
    rotation_quat: Quat = Field(..., description="Unit quaternion (w, x, y, z)")
    scale: Vec3 = Field(..., description="Per-axis standard deviations")
    opacity: float = Field(..., gt=0.0, le=1.0, description="Opacity in (0, 1]")
    rgb: Vec3 = Field(..., description="Color in [0, 1]")


class VoxelRecord(BaseModel):
    """One feature voxel of a neural-mode scene."""
    model_config = ConfigDict(extra="forbid")

    center: Vec3 = Field(..., description="Voxel center")
    depth: int = Field(..., ge=0, description="Octree depth")
    feature: List[float] = Field(..., min_length=1, description="Feature vector")
    offsets: List[Vec3] = Field(default_factory=list, description="Offsets in units of the voxel edge")

    @field_validator("offsets")
    @classmethod
    def validate_offsets(cls, v: List[List[float]]) -> List[List[float]]:
        """Offsets stay inside the voxel's half extent."""
        if any(abs(c) > 0.5 for offset in v for c in offset):
            raise ValueError("offset components must lie in [-0.5, 0.5]")
        return v


class LayerRecord(BaseModel):
    """Dense layer weights; weight rows are output units."""
    model_config = ConfigDict(extra="forbid")

    weight: List[List[float]]
    bias: List[float]


class DecoderWeights(BaseModel):
    """Layers of the four shared decoders."""
    model_config = ConfigDict(extra="forbid")

    alpha: List[LayerRecord] = Field(..., min_length=1)
    rotation: List[LayerRecord] = Field(..., min_length=1)
    scale: List[LayerRecord] = Field(..., min_length=1)
    color: List[LayerRecord] = Field(..., min_length=1)


class SceneFile(BaseModel):
    """Top-level scene document."""
    model_config = ConfigDict(extra="forbid")

    format: Literal["gvkf-scene-v1"] = Field(default=SCENE_FORMAT)
    mode: Literal["direct", "neural"] = Field(..., description="Scene representation")
    voxel_size: float = Field(..., gt=0.0, description="Base voxel edge length")
    voxels: List[VoxelRecord] = Field(default_factory=list)
    gaussians: List[GaussianRecord] = Field(default_factory=list)
    decoder_weights: Optional[DecoderWeights] = Field(default=None)

    @model_validator(mode="after")
    def validate_mode(self) -> "SceneFile":
        """Direct scenes carry Gaussians only; neural scenes carry voxels only."""
        if self.mode == "direct" and self.voxels:
            raise ValueError("direct-mode scenes must not list voxels")
        if self.mode == "neural" and self.gaussians:
            raise ValueError("neural-mode scenes must not list gaussians")
        return self


class CameraFile(BaseModel):
    """Pinhole camera document."""
    model_config = ConfigDict(extra="forbid")

    position: Vec3
    look_at: Vec3
    up: Vec3 = Field(default_factory=lambda: [0.0, 1.0, 0.0])
    fov_y: float = Field(..., gt=0.0, lt=180.0, description="Vertical field of view in degrees")
    width: int = Field(..., gt=0)
    height: int = Field(..., gt=0)
    near: float = Field(default=0.01, gt=0.0)
    far: float = Field(default=100.0, gt=0.0)
