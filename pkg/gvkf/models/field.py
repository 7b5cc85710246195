"""Per-ray kernel sets: a single sorted field and a padded batch of fields."""

from dataclasses import dataclass, field as dataclass_field
from functools import cached_property
from typing import Iterable, Sequence, Tuple

import numpy as np

from gvkf.core.exceptions import InvalidParameterError
from gvkf.models.primitives import RayKernel

BLACK = np.zeros(3)


@dataclass(frozen=True, eq=False)
class RayField:
    """Kernels on one ray, sorted ascending by peak location.

    Ties on t are broken by primitive index so compositing is deterministic.
    """

    kernels: Tuple[RayKernel, ...]
    background: np.ndarray = dataclass_field(default_factory=lambda: BLACK.copy())

    def __post_init__(self) -> None:
        object.__setattr__(self, "kernels", tuple(self.kernels))
        object.__setattr__(self, "background", np.asarray(self.background, dtype=np.float64).reshape(3))
        ts = [kernel.t for kernel in self.kernels]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise InvalidParameterError("RayField kernels must be sorted by t; use RayField.from_kernels")

    @classmethod
    def from_kernels(cls, kernels: Iterable[RayKernel], background: Sequence[float] = BLACK) -> "RayField":
        """Sort kernels by (t, primitive index, input order) and drop culled ones."""
        indexed = [(kernel.t, kernel.index, n, kernel) for n, kernel in enumerate(kernels) if not kernel.culled]
        indexed.sort(key=lambda item: item[:3])
        return cls(tuple(item[3] for item in indexed), background)

    @property
    def count(self) -> int:
        return len(self.kernels)

    @cached_property
    def t(self) -> np.ndarray:
        return np.array([kernel.t for kernel in self.kernels], dtype=np.float64)

    @cached_property
    def k(self) -> np.ndarray:
        return np.array([kernel.k for kernel in self.kernels], dtype=np.float64)

    @cached_property
    def alpha(self) -> np.ndarray:
        return np.array([kernel.alpha for kernel in self.kernels], dtype=np.float64)

    @cached_property
    def colors(self) -> np.ndarray:
        if not self.kernels:
            return np.zeros((0, 3))
        return np.stack([kernel.color for kernel in self.kernels])


@dataclass(frozen=True, eq=False)
class RayBatch:
    """Kernels of many rays in padded (rays, slots) arrays.

    Row p holds ``counts[p]`` sorted kernels followed by padding slots with
    alpha 0, t 0, k 1 and index -1, which leave every compositing sum unchanged.
    """

    t: np.ndarray
    k: np.ndarray
    g_max: np.ndarray
    alpha: np.ndarray
    colors: np.ndarray
    index: np.ndarray
    counts: np.ndarray

    @property
    def num_rays(self) -> int:
        return int(self.t.shape[0])

    @property
    def slots(self) -> int:
        return int(self.t.shape[1])

    @property
    def valid(self) -> np.ndarray:
        return self.index >= 0

    @classmethod
    def empty(cls, num_rays: int) -> "RayBatch":
        return cls(
            t=np.zeros((num_rays, 0)),
            k=np.ones((num_rays, 0)),
            g_max=np.zeros((num_rays, 0)),
            alpha=np.zeros((num_rays, 0)),
            colors=np.zeros((num_rays, 0, 3)),
            index=np.full((num_rays, 0), -1, dtype=np.int64),
            counts=np.zeros(num_rays, dtype=np.int64),
        )

    @classmethod
    def from_fields(cls, fields: Sequence[RayField]) -> "RayBatch":
        """Pack single-ray fields into padded arrays."""
        num_rays = len(fields)
        slots = max((field.count for field in fields), default=0)
        batch = cls.empty(num_rays)
        t = np.zeros((num_rays, slots))
        k = np.ones((num_rays, slots))
        g_max = np.zeros((num_rays, slots))
        alpha = np.zeros((num_rays, slots))
        colors = np.zeros((num_rays, slots, 3))
        index = np.full((num_rays, slots), -1, dtype=np.int64)
        counts = np.zeros(num_rays, dtype=np.int64)
        for row, field in enumerate(fields):
            n = field.count
            counts[row] = n
            if n == 0:
                continue
            t[row, :n] = field.t
            k[row, :n] = field.k
            g_max[row, :n] = [kernel.g_max for kernel in field.kernels]
            alpha[row, :n] = field.alpha
            colors[row, :n] = field.colors
            index[row, :n] = [max(kernel.index, 0) for kernel in field.kernels]
        if num_rays == 0:
            return batch
        return cls(t=t, k=k, g_max=g_max, alpha=alpha, colors=colors, index=index, counts=counts)

    def field(self, row: int, background: Sequence[float] = BLACK) -> RayField:
        """The sorted RayField of one ray."""
        n = int(self.counts[row])
        kernels = tuple(
            RayKernel(
                t=float(self.t[row, j]),
                k=float(self.k[row, j]),
                g_max=float(self.g_max[row, j]),
                alpha=float(self.alpha[row, j]),
                color=self.colors[row, j],
                index=int(self.index[row, j]),
            )
            for j in range(n)
        )
        return RayField(kernels, background)
