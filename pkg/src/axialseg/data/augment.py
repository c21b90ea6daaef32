"""Random affine augmentation for paired image/mask volumes.

The transform is one global isotropic scale, independent per-axis rotations
composed in the fixed order x then y then z about the volume center, then a
per-axis voxel translation. Images resample trilinearly, masks by nearest
neighbor, so binary masks stay binary. Output shapes never change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import DimensionError, ParameterError
from .volume import MaskVolume, Volume


@dataclass
class AugmentConfig:
    """Sampling ranges; each draw is uniform within its range."""

    scale: tuple = (0.9, 1.2)
    rotation_deg: tuple = (-10.0, 10.0)
    translation_vox: tuple = (-5.0, 5.0)

    def __post_init__(self):
        for name in ("scale", "rotation_deg", "translation_vox"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ParameterError(f"{name} range is inverted: ({lo}, {hi})")
        if self.scale[0] <= 0:
            raise ParameterError("scale must stay positive")

    def to_dict(self) -> dict:
        return {
            "scale": list(self.scale),
            "rotation_deg": list(self.rotation_deg),
            "translation_vox": list(self.translation_vox),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        return cls(
            scale=tuple(d["scale"]),
            rotation_deg=tuple(d["rotation_deg"]),
            translation_vox=tuple(d["translation_vox"]),
        )


def _rotation_matrix(angles_deg) -> np.ndarray:
    """Compose per-axis rotations in the fixed order x then y then z."""
    ax, ay, az = np.deg2rad(angles_deg)
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def apply_affine_arrays(
    image: np.ndarray,
    mask: np.ndarray,
    scale: float,
    rotation_deg,
    translation_vox,
):
    """Deterministic core: resample both arrays under one affine map.

    The forward map sends source p to scale*R(p - c) + c + t with c the
    volume center; resampling inverts it. Out-of-view voxels fill with 0.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask)
    if image.shape != mask.shape:
        raise DimensionError(f"image {image.shape} and mask {mask.shape} differ")

    forward = scale * _rotation_matrix(rotation_deg)
    inv = np.linalg.inv(forward)
    center = (np.asarray(image.shape, dtype=np.float64) - 1.0) / 2.0
    t = np.asarray(translation_vox, dtype=np.float64)
    # scipy maps output coords o to input coords inv @ o + offset
    offset = center - inv @ (center + t)

    out_image = ndimage.affine_transform(
        image, inv, offset=offset, order=1, mode="constant", cval=0.0, prefilter=False
    )
    out_mask = ndimage.affine_transform(
        mask.astype(np.float64), inv, offset=offset, order=0, mode="constant", cval=0.0
    ).astype(mask.dtype)
    return out_image, out_mask


def augment_affine_arrays(image, mask, config: AugmentConfig, rng: np.random.Generator):
    """Draw one transform from `config` and apply it to the pair."""
    scale = rng.uniform(*config.scale)
    rotations = rng.uniform(config.rotation_deg[0], config.rotation_deg[1], size=3)
    translation = rng.uniform(
        config.translation_vox[0], config.translation_vox[1], size=3
    )
    return apply_affine_arrays(image, mask, scale, rotations, translation)


def augment_affine(
    volume: Volume, mask: MaskVolume, config: AugmentConfig, rng: np.random.Generator
):
    """Volume-typed wrapper around augment_affine_arrays."""
    img, msk = augment_affine_arrays(volume.data, mask.data, config, rng)
    return Volume(img, volume.voxel_size), MaskVolume(msk, mask.voxel_size)
