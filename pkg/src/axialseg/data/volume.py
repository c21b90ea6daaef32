"""3-d scalar volumes and soft masks with physical voxel spacing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, ParameterError


def _coerce_voxel_size(voxel_size) -> tuple:
    # pixdim is float32 on disk; coercing here keeps I/O round trips exact
    vs = tuple(float(np.float32(v)) for v in voxel_size)
    if len(vs) != 3 or any(v <= 0 for v in vs):
        raise ParameterError(f"voxel_size must be 3 positive floats, got {voxel_size}")
    return vs


@dataclass
class Volume:
    """A 3-d scalar field plus voxel spacing in millimetres."""

    data: np.ndarray
    voxel_size: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or any(s < 1 for s in self.data.shape):
            raise DimensionError(f"volume must be 3-d and non-empty, got shape {self.data.shape}")
        self.voxel_size = _coerce_voxel_size(self.voxel_size)

    @property
    def shape(self) -> tuple:
        return self.data.shape


@dataclass
class MaskVolume(Volume):
    """A Volume constrained to soft values in [0, 1]."""

    def __post_init__(self):
        super().__post_init__()
        lo, hi = float(self.data.min()), float(self.data.max())
        if lo < 0.0 or hi > 1.0:
            raise ParameterError(f"mask values must lie in [0, 1], got [{lo}, {hi}]")

    @property
    def is_binary(self) -> bool:
        return bool(np.isin(self.data, (0, 1)).all())
