"""Configuration management using Pydantic settings."""

from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class LossConfig(BaseModel):
    """Photometric and regularization loss weights."""

    lambda_dssim: float = Field(default=0.2, ge=0.0, le=1.0, description="D-SSIM weight")
    lambda_dist: float = Field(
        default=0.1, ge=0.0, description="Depth distortion weight (t normalized by scene extent)"
    )
    ssim_window: int = Field(default=11, description="SSIM Gaussian window size")
    ssim_sigma: float = Field(default=1.5, gt=0.0, description="SSIM Gaussian window sigma")
    ssim_k1: float = Field(default=0.01, gt=0.0, description="SSIM luminance constant")
    ssim_k2: float = Field(default=0.03, gt=0.0, description="SSIM contrast constant")

    @field_validator("ssim_window")
    @classmethod
    def validate_window(cls, v: int) -> int:
        """SSIM windows are odd and at least 3 pixels wide."""
        if v < 3 or v % 2 == 0:
            raise ValueError("ssim_window must be an odd integer >= 3")
        return v


class QuadratureConfig(BaseModel):
    """Uniform sampling for the dense volume-rendering oracle."""

    step: float = Field(default=1e-3, gt=0.0, description="Sample spacing along the ray")
    far: float = Field(default=10.0, gt=0.0, description="Far bound B of the integral")
    scheme: Literal["midpoint", "trapezoid"] = Field(
        default="midpoint", description="Quadrature rule for the density integral"
    )

    @model_validator(mode="after")
    def validate_far(self) -> "QuadratureConfig":
        """The far bound must span at least one sample."""
        if self.far <= self.step:
            raise ValueError("far bound must exceed the quadrature step")
        return self


class GVKFConfig(BaseSettings):
    """Configuration for the GVKF reference pipeline."""

    model_config = SettingsConfigDict(
        env_prefix="GVKF_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Run Settings
    seed: int = Field(default=42, description="Seed for every pseudo-random draw")
    threads: int = Field(default=1, ge=1, description="Worker threads for ray batches")
    ray_chunk_size: int = Field(default=2048, ge=1, description="Rays traced per batch")

    # Logging Settings
    log_level: str = Field(default="WARNING", description="Logging level")
    log_format: str = Field(default="text", description="Log format (json|text)")
    log_file: Optional[str] = Field(default=None, description="Log file path")
    log_max_size_mb: int = Field(default=10, description="Max log file size in MB")
    log_backup_count: int = Field(default=3, description="Number of log backups")

    # Voxel Registration Settings
    voxel_size: float = Field(default=0.01, gt=0.0, description="Base voxel edge length")
    feature_dim: int = Field(default=32, ge=1, description="Voxel feature dimension")
    gaussians_per_voxel: int = Field(default=10, ge=1, description="Offsets stored per voxel")
    decoder_hidden: int = Field(default=32, ge=1, description="Decoder hidden layer width")
    feature_init_range: float = Field(default=0.1, gt=0.0, description="Feature init half-range")
    gradient_threshold: float = Field(default=2e-4, gt=0.0, description="Subdivision threshold")
    max_depth: int = Field(default=3, ge=0, description="Maximum octree depth")
    evaluation_interval: int = Field(default=500, ge=1, description="Iterations between voxel evaluations")

    # Rendering Settings
    alpha_cull: float = Field(default=1e-4, ge=0.0, description="Minimum kernel alpha kept on a ray")
    influence_sigmas: float = Field(default=3.0, gt=0.0, description="Sphere-of-influence radius in sigmas")
    early_stop_transmittance: float = Field(
        default=1e-4, ge=0.0, description="Stop compositing below this transmittance"
    )

    # Surface Mapping Settings
    mu: float = Field(default=8.0, gt=0.0, description="Logistic smooth factor")
    solver_tol: float = Field(default=1e-10, gt=0.0, description="u0 residual tolerance")
    solver_max_iter: int = Field(default=200, ge=1, description="Bisection iteration cap")
    newton_steps: int = Field(default=5, ge=0, description="Newton polish steps after bisection")
    sdf_clamp_eps: float = Field(default=1e-7, gt=0.0, lt=0.5, description="Phi clamp margin")
    surface_window_sigmas: float = Field(default=3.0, gt=0.0, description="Surface kernel window")
    surface_weight_fraction: float = Field(
        default=0.25, ge=0.0, le=1.0, description="Minimum blending-weight share of a surface kernel"
    )
    sigma_mode: Literal["per-ray", "global"] = Field(default="global", description="Sigma^2 mode")
    sdf_mapping: Literal["logistic", "linear"] = Field(default="logistic", description="Phi to SDF map")

    # Meshing Settings
    mesh_resolution: int = Field(default=64, ge=2, le=1024, description="Samples along the longest axis")
    probe_directions: int = Field(default=6, description="Axis probes per sample (3 or 6)")
    probe_aggregation: Literal["visibility", "min_abs"] = Field(
        default="visibility", description="How probe SDF values are fused"
    )
    mesh_format: Literal["ply_ascii", "ply_binary_le", "obj"] = Field(
        default="ply_binary_le", description="Default mesh export format"
    )

    # Fitting Settings
    fd_step: float = Field(default=1e-4, gt=0.0, description="Central finite-difference step")
    optimizer: Literal["adam", "sgd"] = Field(default="adam", description="Update rule")
    lr_color: float = Field(default=0.02, gt=0.0, description="Color step size")
    lr_opacity: float = Field(default=0.02, gt=0.0, description="Opacity step size")
    lr_position: float = Field(default=0.002, gt=0.0, description="Position step size")
    lr_feature: float = Field(default=0.01, gt=0.0, description="Voxel feature step size")
    lr_offset: float = Field(default=0.01, gt=0.0, description="Voxel offset step size")
    direct_groups: List[str] = Field(
        default=["color", "opacity", "position"], description="Active groups in direct mode"
    )
    neural_groups: List[str] = Field(default=["feature", "offset"], description="Active groups in neural mode")
    log_every: int = Field(default=100, ge=1, description="Iterations between loss reports")

    loss: LossConfig = Field(default_factory=LossConfig)
    quadrature: QuadratureConfig = Field(default_factory=QuadratureConfig)

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate log level."""
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in valid_levels:
            raise ValueError(f"log_level must be one of {valid_levels}")
        return v.upper()

    @field_validator("probe_directions")
    @classmethod
    def validate_probes(cls, v: int) -> int:
        """Probes run along +axes only or along both signs."""
        if v not in (3, 6):
            raise ValueError("probe_directions must be 3 or 6")
        return v

    @field_validator("direct_groups", "neural_groups")
    @classmethod
    def validate_groups(cls, v: List[str]) -> List[str]:
        """Only known parameter groups may be optimized."""
        known = {"color", "opacity", "position", "feature", "offset"}
        unknown = [g for g in v if g not in known]
        if unknown:
            raise ValueError(f"unknown parameter groups: {unknown}")
        return v

    def learning_rates(self) -> dict:
        """Get step size per parameter group."""
        return {
            "color": self.lr_color,
            "opacity": self.lr_opacity,
            "position": self.lr_position,
            "feature": self.lr_feature,
            "offset": self.lr_offset,
        }


class CliConfig(BaseModel):
    """Resolved arguments of one CLI invocation."""

    subcommand: Literal["render", "mesh", "fit", "verify", "make-scene"]
    scene: Optional[str] = None
    camera: Optional[str] = None
    out: Optional[str] = None
    resolution: Optional[int] = Field(default=None, ge=2, le=1024)
    mu: Optional[float] = Field(default=None, gt=0.0)
    iso: float = 0.0
    iters: Optional[int] = Field(default=None, ge=0)
    seed: int = 42
    voxel_size: Optional[float] = Field(default=None, gt=0.0)

    @model_validator(mode="after")
    def validate_required(self) -> "CliConfig":
        """Check the flags each subcommand requires."""
        required = {
            "render": ("scene", "camera", "out"),
            "mesh": ("scene", "out"),
            "fit": ("scene", "out", "iters"),
            "verify": (),
            "make-scene": ("out",),
        }[self.subcommand]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.subcommand} requires: {', '.join(missing)}")
        return self
