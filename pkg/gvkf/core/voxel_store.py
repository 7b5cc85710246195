"""
Sparse voxel grid that owns voxel features and produces Gaussians.

Neural mode decodes up to m Gaussians per voxel through the shared
DecoderSet; direct mode stores explicit primitives per voxel. Voxels
accumulate positional-gradient norms and are subdivided or pruned on the
registration cadence.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
import structlog

from gvkf.core.decoders import DecoderSet
from gvkf.core.exceptions import (
    EmptyInputError,
    InvalidParameterError,
    InvalidVoxelIdError,
    MissingCameraError,
)
from gvkf.core.gaussian_core import GaussianCloud
from gvkf.models.config import GVKFConfig
from gvkf.models.geometry import Camera
from gvkf.models.primitives import GaussianPrimitive, VoxelKey
from gvkf.models.voxel import FeatureVoxel, children_keys, edge_length

logger = structlog.get_logger(__name__)

Mode = Literal["direct", "neural"]


@dataclass
class DecodedGaussians:
    """Struct-of-arrays Gaussians decoded from voxels (visible ones only).

    ``slots`` holds the (voxel row, offset index) each neural Gaussian came from.
    """

    positions: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    keys: List[VoxelKey]
    slots: Optional[np.ndarray] = None

    def to_cloud(self) -> GaussianCloud:
        return GaussianCloud.from_arrays(
            self.positions, self.rotations, self.scales, self.opacities, self.colors, list(self.keys)
        )

    def to_primitives(self) -> List[GaussianPrimitive]:
        return [
            GaussianPrimitive(
                position=self.positions[n],
                rotation=self.rotations[n],
                scale=self.scales[n],
                opacity=float(self.opacities[n]),
                color=self.colors[n],
                voxel_key=self.keys[n],
            )
            for n in range(len(self.keys))
        ]


@dataclass
class VoxelEvaluation:
    """Outcome of one registration step."""

    subdivided: List[VoxelKey] = field(default_factory=list)
    pruned: List[VoxelKey] = field(default_factory=list)
    created: int = 0


def decode_voxel_gaussians(
    decoders: DecoderSet,
    keys: Sequence[VoxelKey],
    centers: np.ndarray,
    edges: np.ndarray,
    features: np.ndarray,
    offsets: np.ndarray,
    offset_mask: np.ndarray,
    camera_position: np.ndarray,
) -> DecodedGaussians:
    """
    Decode voxels into Gaussians, dropping those with opacity ≤ 0.

    Args:
        decoders: Shared decoders
        keys: Voxel keys, one per row
        centers: (V, 3) voxel centers
        edges: (V,) voxel edge lengths
        features: (V, F) voxel features
        offsets: (V, m, 3) offsets in edge units (padded)
        offset_mask: (V, m) True where an offset exists
        camera_position: Camera center conditioning opacity and color

    Returns:
        DecodedGaussians in voxel order, then offset order
    """
    count = len(keys)
    if count == 0:
        return DecodedGaussians(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), [])

    view = centers - np.asarray(camera_position, dtype=np.float64)[None, :]
    norms = np.linalg.norm(view, axis=1, keepdims=True)
    view = np.where(norms > 1e-12, view / np.maximum(norms, 1e-12), 0.0)

    decoded = decoders.decode(features, view)
    visible = offset_mask & (decoded.opacity > 0.0)
    rows, cols = np.nonzero(visible)

    positions = centers[rows] + offsets[rows, cols] * edges[rows, None]
    scales = decoded.scale_fraction[rows, cols] * edges[rows, None]
    return DecodedGaussians(
        positions=positions,
        rotations=decoded.rotation[rows, cols],
        scales=scales,
        opacities=np.minimum(decoded.opacity[rows, cols], 1.0),
        colors=decoded.color[rows, cols],
        keys=[keys[r] for r in rows.tolist()],
        slots=np.stack([rows, cols], axis=1),
    )


class SparseVoxelGrid:
    """Spatial hash from (cell, depth) to FeatureVoxel."""

    def __init__(
        self,
        base_voxel_size: float,
        mode: Mode = "neural",
        decoders: Optional[DecoderSet] = None,
        config: Optional[GVKFConfig] = None,
    ):
        if not base_voxel_size > 0.0:
            raise InvalidParameterError(f"voxel size must be positive, got {base_voxel_size}")
        self.config = config or GVKFConfig()
        self.base_voxel_size = float(base_voxel_size)
        self.mode: Mode = mode
        if mode == "neural" and decoders is None:
            decoders = DecoderSet.initialize(
                self.config.seed,
                self.config.feature_dim,
                self.config.decoder_hidden,
                self.config.gaussians_per_voxel,
            )
        self.decoders = decoders
        self.voxels: Dict[VoxelKey, FeatureVoxel] = {}
        self.logger = logger.bind(component="voxel_store", mode=mode)

    # ========================================================================
    # Construction
    # ========================================================================

    @classmethod
    def init_from_points(
        cls,
        points: Sequence[Sequence[float]],
        voxel_size: float,
        config: Optional[GVKFConfig] = None,
    ) -> "SparseVoxelGrid":
        """
        One neural voxel per occupied cell.

        Offsets start at the cell-relative positions of the first m points of
        each cell in input order; features are seeded uniform draws.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if pts.shape[0] == 0:
            raise EmptyInputError("cannot build a voxel grid from an empty point set")

        grid = cls(voxel_size, mode="neural", config=config)
        cfg = grid.config
        cells = np.floor(pts / voxel_size).astype(np.int64)

        members: Dict[Tuple[int, int, int], List[int]] = {}
        for n, cell in enumerate(map(tuple, cells.tolist())):
            members.setdefault(cell, []).append(n)

        rng = np.random.default_rng(cfg.seed)
        for cell in sorted(members):
            key = (*cell, 0)
            center = (np.asarray(cell, dtype=np.float64) + 0.5) * voxel_size
            chosen = pts[members[cell][: cfg.gaussians_per_voxel]]
            offsets = np.clip((chosen - center) / voxel_size, -0.5, 0.5)
            feature = rng.uniform(-cfg.feature_init_range, cfg.feature_init_range, size=cfg.feature_dim)
            grid.voxels[key] = FeatureVoxel(key=key, edge=voxel_size, feature=feature, offsets=offsets)

        grid.logger.info("Initialized voxel grid from points", points=len(pts), voxels=len(grid.voxels))
        return grid

    @classmethod
    def from_gaussians(
        cls,
        primitives: Sequence[GaussianPrimitive],
        voxel_size: float,
        config: Optional[GVKFConfig] = None,
    ) -> "SparseVoxelGrid":
        """Direct-mode grid: each primitive is stored in the depth-0 cell containing it."""
        grid = cls(voxel_size, mode="direct", config=config)
        for primitive in primitives:
            cell = tuple(np.floor(primitive.position / voxel_size).astype(np.int64).tolist())
            key = (*cell, 0)
            voxel = grid.voxels.get(key)
            if voxel is None:
                voxel = FeatureVoxel(key=key, edge=voxel_size, feature=np.zeros(grid.config.feature_dim))
                grid.voxels[key] = voxel
            voxel.gaussians.append(_with_key(primitive, key))
        return grid

    def add_voxel(self, voxel: FeatureVoxel) -> None:
        if voxel.key in self.voxels:
            raise InvalidParameterError(f"voxel {voxel.key} already exists")
        if voxel.depth > self.config.max_depth:
            raise InvalidParameterError(f"voxel depth {voxel.depth} exceeds {self.config.max_depth}")
        self.voxels[voxel.key] = voxel

    # ========================================================================
    # Queries
    # ========================================================================

    def __len__(self) -> int:
        return len(self.voxels)

    def sorted_keys(self) -> List[VoxelKey]:
        return sorted(self.voxels)

    def edge_length(self, depth: int) -> float:
        return edge_length(self.base_voxel_size, depth)

    def num_gaussians(self) -> int:
        if self.mode == "direct":
            return sum(len(v.gaussians) for v in self.voxels.values())
        return sum(len(v.offsets) for v in self.voxels.values())

    def neural_inputs(self) -> dict:
        """Padded per-voxel arrays in sorted key order for batched decoding."""
        keys = self.sorted_keys()
        m = self.decoders.gaussians_per_voxel if self.decoders else self.config.gaussians_per_voxel
        count = len(keys)
        offsets = np.zeros((count, m, 3))
        mask = np.zeros((count, m), dtype=bool)
        features = np.zeros((count, self.decoders.feature_dim if self.decoders else self.config.feature_dim))
        centers = np.zeros((count, 3))
        edges = np.zeros(count)
        for row, key in enumerate(keys):
            voxel = self.voxels[key]
            n = min(len(voxel.offsets), m)
            offsets[row, :n] = voxel.offsets[:n]
            mask[row, :n] = True
            features[row] = voxel.feature
            centers[row] = voxel.center
            edges[row] = voxel.edge
        return {
            "keys": keys,
            "centers": centers,
            "edges": edges,
            "features": features,
            "offsets": offsets,
            "offset_mask": mask,
        }

    def decode(self, camera: Optional[Camera]) -> DecodedGaussians:
        """All Gaussians of the grid as arrays, in sorted voxel order."""
        if self.mode == "direct":
            primitives = [g for key in self.sorted_keys() for g in self.voxels[key].gaussians]
            if not primitives:
                return DecodedGaussians(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), [])
            return DecodedGaussians(
                positions=np.stack([g.position for g in primitives]),
                rotations=np.stack([g.rotation for g in primitives]),
                scales=np.stack([g.scale for g in primitives]),
                opacities=np.array([g.opacity for g in primitives]),
                colors=np.stack([g.color for g in primitives]),
                keys=[g.voxel_key for g in primitives],
            )

        if camera is None:
            raise MissingCameraError("neural voxels need a camera to decode opacity and color")
        inputs = self.neural_inputs()
        return decode_voxel_gaussians(self.decoders, camera_position=camera.position, **inputs)

    def generate_gaussians(self, camera: Optional[Camera] = None) -> List[GaussianPrimitive]:
        """
        Primitives of every voxel in sorted key order.

        Direct mode returns the stored primitives themselves; neural mode
        decodes them for ``camera`` and omits Gaussians with opacity ≤ 0.
        """
        if self.mode == "direct":
            return [g for key in self.sorted_keys() for g in self.voxels[key].gaussians]
        return self.decode(camera).to_primitives()

    # ========================================================================
    # Registration
    # ========================================================================

    def register_gradients(
        self,
        grad_norms: Iterable[Tuple[VoxelKey, float]],
        visible_keys: Optional[Iterable[VoxelKey]] = None,
    ) -> "SparseVoxelGrid":
        """
        Fold per-Gaussian positional-gradient norms into voxel running means.

        ``visible_keys`` marks the voxels that produced visible Gaussians this
        iteration; it defaults to the voxels receiving gradients.
        """
        entries = [(tuple(key), float(norm)) for key, norm in grad_norms]
        visible = set(tuple(k) for k in visible_keys) if visible_keys is not None else {k for k, _ in entries}

        for key, norm in entries:
            if key not in self.voxels:
                raise InvalidVoxelIdError(f"unknown voxel {key}")
            if not np.isfinite(norm) or norm < 0.0:
                raise InvalidParameterError(f"gradient norm must be finite and non-negative, got {norm}")
        for key in visible:
            if key not in self.voxels:
                raise InvalidVoxelIdError(f"unknown voxel {key}")

        for key, norm in entries:
            self.voxels[key].record_gradient(norm)
        for key in visible:
            self.voxels[key].usage_count += 1
        return self

    def evaluate_voxels(self) -> VoxelEvaluation:
        """
        Prune unused voxels and subdivide those with large gradients.

        A voxel unused over the window is removed. A used voxel whose mean
        gradient exceeds the threshold and whose depth is below the cap is
        replaced by its eight children. Every counter is reset afterwards.
        """
        report = VoxelEvaluation()
        threshold = self.config.gradient_threshold

        for key in self.sorted_keys():
            voxel = self.voxels[key]
            if voxel.usage_count == 0:
                del self.voxels[key]
                report.pruned.append(key)
            elif voxel.accumulated_gradient > threshold and voxel.depth < self.config.max_depth:
                del self.voxels[key]
                report.created += self._subdivide(voxel)
                report.subdivided.append(key)

        for voxel in self.voxels.values():
            voxel.reset_window()

        self.logger.info(
            "Evaluated voxels",
            subdivided=len(report.subdivided),
            pruned=len(report.pruned),
            created=report.created,
            voxels=len(self.voxels),
        )
        return report

    def _subdivide(self, parent: FeatureVoxel) -> int:
        child_edge = parent.edge / 2.0
        children: Dict[VoxelKey, FeatureVoxel] = {}
        for key in children_keys(parent.key):
            if key in self.voxels:
                self.logger.warning("Child voxel already present", key=key)
                continue
            children[key] = FeatureVoxel(
                key=key,
                edge=child_edge,
                feature=parent.feature.copy(),
                offsets=parent.offsets.copy(),
            )

        for primitive in parent.gaussians:
            low = 2 * np.asarray(parent.cell)
            cell = np.floor(primitive.position / child_edge).astype(np.int64)
            cell = np.clip(cell, low, low + 1)
            key = (*cell.tolist(), parent.depth + 1)
            if key in children:
                children[key].gaussians.append(_with_key(primitive, key))

        self.voxels.update(children)
        return len(children)

    # ========================================================================
    # Copies
    # ========================================================================

    def copy(self) -> "SparseVoxelGrid":
        """Deep copy of voxels; decoders are shared unless replaced."""
        clone = SparseVoxelGrid(self.base_voxel_size, self.mode, self.decoders, self.config)
        for key, voxel in self.voxels.items():
            clone.voxels[key] = FeatureVoxel(
                key=key,
                edge=voxel.edge,
                feature=voxel.feature.copy(),
                offsets=voxel.offsets.copy(),
                gaussians=list(voxel.gaussians),
                accumulated_gradient=voxel.accumulated_gradient,
                gradient_samples=voxel.gradient_samples,
                usage_count=voxel.usage_count,
            )
        return clone


def _with_key(primitive: GaussianPrimitive, key: VoxelKey) -> GaussianPrimitive:
    if primitive.voxel_key == key:
        return primitive
    return GaussianPrimitive(
        position=primitive.position,
        rotation=primitive.rotation,
        scale=primitive.scale,
        opacity=primitive.opacity,
        color=primitive.color,
        voxel_key=key,
    )
