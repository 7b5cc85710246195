"""
Gaussian Voxel Kernel Functions

A CPU reference implementation of sparse-voxel Gaussian scenes whose
primitives define a continuous opacity field along camera rays: images are
rendered by kernel-regression alpha blending and surfaces are extracted
through an opacity-to-SDF mapping and marching cubes.
"""

__version__ = "1.0.0"
__description__ = "Reference implementation of Gaussian voxel kernel functions"

from gvkf.core.mesher import MeshExtractor
from gvkf.core.renderer import Renderer
from gvkf.core.trainer import Trainer
from gvkf.core.voxel_store import SparseVoxelGrid
from gvkf.models.config import GVKFConfig

__all__ = [
    "GVKFConfig",
    "MeshExtractor",
    "Renderer",
    "SparseVoxelGrid",
    "Trainer",
]
