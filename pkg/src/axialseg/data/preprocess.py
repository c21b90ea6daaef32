"""Intensity standardization and training-mask bounding-box cropping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, ParameterError, UndefinedValueError
from .volume import MaskVolume, Volume


def z_normalize(volume: Volume) -> Volume:
    """Shift/scale to zero mean, unit standard deviation over all voxels."""
    arr = np.asarray(volume.data, dtype=np.float64)
    sd = arr.std()
    if sd == 0.0:
        raise UndefinedValueError("cannot z-normalize a constant image")
    return Volume((arr - arr.mean()) / sd, volume.voxel_size)


def z_normalize_array(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    sd = arr.std()
    if sd == 0.0:
        raise UndefinedValueError("cannot z-normalize a constant image")
    return (arr - arr.mean()) / sd


@dataclass(frozen=True)
class CropBox:
    """Half-open [start, stop) index ranges per axis."""

    start: tuple
    stop: tuple

    def __post_init__(self):
        if len(self.start) != 3 or len(self.stop) != 3:
            raise ParameterError("CropBox needs 3 start and 3 stop indices")
        if any(b <= a for a, b in zip(self.start, self.stop)):
            raise ParameterError(f"empty crop box: start {self.start}, stop {self.stop}")

    @property
    def shape(self) -> tuple:
        return tuple(b - a for a, b in zip(self.start, self.stop))

    def slices(self) -> tuple:
        return tuple(slice(a, b) for a, b in zip(self.start, self.stop))

    def to_dict(self) -> dict:
        return {"start": list(self.start), "stop": list(self.stop)}

    @classmethod
    def from_dict(cls, d: dict) -> "CropBox":
        return cls(tuple(int(v) for v in d["start"]), tuple(int(v) for v in d["stop"]))


def crop_bbox(train_masks, margin: int = 10) -> CropBox:
    """Bounding box of every nonzero voxel across the masks, grown by `margin`
    voxels per side and clamped to the grid."""
    masks = [m.data if isinstance(m, Volume) else np.asarray(m) for m in train_masks]
    if not masks:
        raise ParameterError("crop_bbox needs at least one mask")
    if margin < 0:
        raise ParameterError(f"margin must be >= 0, got {margin}")
    shape = masks[0].shape
    for m in masks:
        if m.shape != shape:
            raise DimensionError(f"masks disagree on grid shape: {m.shape} vs {shape}")

    lo = np.full(3, np.iinfo(np.int64).max)
    hi = np.full(3, -1)
    for m in masks:
        idx = np.nonzero(m)
        if idx[0].size == 0:
            continue
        for d in range(3):
            lo[d] = min(lo[d], idx[d].min())
            hi[d] = max(hi[d], idx[d].max())
    if np.any(hi < 0):
        raise ParameterError("all masks are empty; no bounding box exists")

    start = tuple(int(max(0, l - margin)) for l in lo)
    stop = tuple(int(min(s, h + margin + 1)) for s, h in zip(shape, hi))
    return CropBox(start, stop)


def apply_crop(volume, box: CropBox):
    """Extract the sub-volume; accepts Volume/MaskVolume or a bare array."""
    if isinstance(volume, Volume):
        if any(b > s for b, s in zip(box.stop, volume.shape)):
            raise DimensionError(f"crop box {box} exceeds volume shape {volume.shape}")
        cls = MaskVolume if isinstance(volume, MaskVolume) else Volume
        return cls(volume.data[box.slices()].copy(), volume.voxel_size)
    arr = np.asarray(volume)
    if any(b > s for b, s in zip(box.stop, arr.shape)):
        raise DimensionError(f"crop box {box} exceeds array shape {arr.shape}")
    return arr[box.slices()].copy()


def embed_crop(arr: np.ndarray, box: CropBox, full_shape, fill=0.0) -> np.ndarray:
    """Place a crop-shaped array back into a full-sized volume of `fill`."""
    arr = np.asarray(arr)
    if tuple(arr.shape) != box.shape:
        raise DimensionError(f"array shape {arr.shape} != crop box shape {box.shape}")
    out = np.full(tuple(full_shape), fill, dtype=arr.dtype)
    out[box.slices()] = arr
    return out
