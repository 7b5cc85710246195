"""Settings, records and file schemas."""

from gvkf.models.config import CliConfig, GVKFConfig, LossConfig, QuadratureConfig
from gvkf.models.field import RayBatch, RayField
from gvkf.models.geometry import Camera, ImageBuffer, ScalarGrid, TriangleMesh
from gvkf.models.primitives import Covariance3, GaussianPrimitive, Ray, RayKernel
from gvkf.models.surface import SurfaceDiagnostics, SurfaceSolve
from gvkf.models.voxel import FeatureVoxel

__all__ = [
    "CliConfig",
    "GVKFConfig",
    "LossConfig",
    "QuadratureConfig",
    "RayBatch",
    "RayField",
    "Camera",
    "ImageBuffer",
    "ScalarGrid",
    "TriangleMesh",
    "Covariance3",
    "GaussianPrimitive",
    "Ray",
    "RayKernel",
    "SurfaceDiagnostics",
    "SurfaceSolve",
    "FeatureVoxel",
]
