"""
Shared per-scene decoders from voxel features to Gaussian attributes.

Four small ReLU networks map a voxel feature (plus the camera-to-voxel
direction for opacity and color) to the attributes of that voxel's m
Gaussians. Opacity is squashed with tanh and negative values hide the
Gaussian; scales are a sigmoid fraction of the voxel edge.
"""

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.special import expit

from gvkf.core.exceptions import InvalidParameterError, ShapeError

MIN_SCALE_FRACTION = 1e-4


@dataclass
class MLP:
    """Dense ReLU network; ``layers`` holds (weight[out, in], bias[out]) pairs."""

    layers: List[Tuple[np.ndarray, np.ndarray]]

    @classmethod
    def initialize(cls, widths: Sequence[int], rng: np.random.Generator) -> "MLP":
        """He-normal weights and zero biases."""
        layers = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
            layers.append((weight, np.zeros(fan_out)))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return int(self.layers[0][0].shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.layers[-1][0].shape[0])

    def __call__(self, inputs: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"decoder expects {self.in_dim} inputs, got {x.shape[1]}")
        for n, (weight, bias) in enumerate(self.layers):
            x = x @ weight.T + bias
            if n < len(self.layers) - 1:
                x = np.maximum(x, 0.0)
        return x

    def to_records(self) -> List[Dict[str, list]]:
        return [{"weight": w.tolist(), "bias": b.tolist()} for w, b in self.layers]

    @classmethod
    def from_records(cls, records: Sequence[Dict[str, Sequence]]) -> "MLP":
        layers = []
        for record in records:
            weight = np.asarray(record["weight"], dtype=np.float64)
            bias = np.asarray(record["bias"], dtype=np.float64).reshape(-1)
            if weight.ndim != 2 or weight.shape[0] != bias.size:
                raise ShapeError("decoder layer weight and bias sizes disagree")
            layers.append((weight, bias))
        if not layers:
            raise ShapeError("decoder has no layers")
        for (w_prev, _), (w_next, _) in zip(layers[:-1], layers[1:]):
            if w_prev.shape[0] != w_next.shape[1]:
                raise ShapeError("decoder layer widths do not chain")
        return cls(layers)


@dataclass
class DecodedAttributes:
    """Raw decoder outputs for V voxels and m Gaussians each."""

    opacity: np.ndarray
    rotation: np.ndarray
    scale_fraction: np.ndarray
    color: np.ndarray


@dataclass
class DecoderSet:
    """The alpha, rotation, scale and color decoders shared by all voxels."""

    alpha: MLP
    rotation: MLP
    scale: MLP
    color: MLP
    gaussians_per_voxel: int

    NAMES = ("alpha", "rotation", "scale", "color")

    @classmethod
    def initialize(
        cls,
        seed: int,
        feature_dim: int = 32,
        hidden: int = 32,
        gaussians_per_voxel: int = 10,
    ) -> "DecoderSet":
        """Seeded decoders with widths [in, hidden, hidden, out]."""
        if feature_dim < 1 or hidden < 1 or gaussians_per_voxel < 1:
            raise InvalidParameterError("decoder sizes must be positive")
        rng = np.random.default_rng(seed)
        m = gaussians_per_voxel
        view_dim = feature_dim + 3
        return cls(
            alpha=MLP.initialize([view_dim, hidden, hidden, m], rng),
            rotation=MLP.initialize([feature_dim, hidden, hidden, 4 * m], rng),
            scale=MLP.initialize([feature_dim, hidden, hidden, 3 * m], rng),
            color=MLP.initialize([view_dim, hidden, hidden, 3 * m], rng),
            gaussians_per_voxel=m,
        )

    @property
    def feature_dim(self) -> int:
        return self.rotation.in_dim

    def decode(self, features: np.ndarray, view_dirs: np.ndarray) -> DecodedAttributes:
        """
        Decode V voxels at once.

        Args:
            features: (V, F) voxel features
            view_dirs: (V, 3) unit camera-to-voxel directions

        Returns:
            DecodedAttributes with shapes (V, m), (V, m, 4), (V, m, 3), (V, m, 3)
        """
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        view_dirs = np.atleast_2d(np.asarray(view_dirs, dtype=np.float64))
        m = self.gaussians_per_voxel
        count = features.shape[0]
        with_view = np.concatenate([features, view_dirs], axis=1)

        opacity = np.tanh(self.alpha(with_view))
        rotation = self.rotation(features).reshape(count, m, 4)
        norms = np.linalg.norm(rotation, axis=2, keepdims=True)
        identity = np.array([1.0, 0.0, 0.0, 0.0])
        rotation = np.where(norms > 1e-12, rotation / np.maximum(norms, 1e-12), identity)
        scale_fraction = np.maximum(expit(self.scale(features)), MIN_SCALE_FRACTION)
        color = expit(self.color(with_view))

        return DecodedAttributes(
            opacity=opacity,
            rotation=rotation,
            scale_fraction=scale_fraction.reshape(count, m, 3),
            color=color.reshape(count, m, 3),
        )

    def to_records(self) -> Dict[str, list]:
        return {name: getattr(self, name).to_records() for name in self.NAMES}

    @classmethod
    def from_records(cls, records: Dict[str, Sequence]) -> "DecoderSet":
        nets = {name: MLP.from_records(records[name]) for name in cls.NAMES}
        m = nets["alpha"].out_dim
        if nets["rotation"].out_dim != 4 * m or nets["scale"].out_dim != 3 * m or nets["color"].out_dim != 3 * m:
            raise ShapeError("decoder output sizes disagree on Gaussians per voxel")
        return cls(gaussians_per_voxel=m, **nets)
