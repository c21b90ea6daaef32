"""Procedural 3-d phantoms: two dark ellipsoidal cavities, each holding a
thin bright curved ribbon, over a uniform background with a smooth
multiplicative bias field and additive Gaussian noise.

The ribbon voxels are the ground-truth mask. With noise and bias disabled
the image has exactly three intensity levels. Generation is deterministic
given (spec, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as tt
from ..errors import NumericalError, ParameterError
from .volume import MaskVolume, Volume

STRATA_SCALES = {"small": 0.7, "medium": 1.0, "large": 1.3}

# Cavity centers sit at these fractions of the last axis, one per side.
_SIDE_FRACTIONS = (0.3, 0.7)

# Normalized head-room the ribbon (curve plus thickness plus sampling slack)
# must leave inside the unit ellipsoid.
_INSIDE_LIMIT = 0.98
_MIN_EXTENT = 0.15


@dataclass
class PhantomSpec:
    """Geometry and intensity knobs for one phantom draw.

    Cavity semi-axes are drawn per axis as a fraction of that axis' length;
    the last axis separates the two cavities, so its fraction range should
    stay small enough that they cannot meet. If a drawn ribbon cannot fit its
    cavity at all, generation raises a parameter error; if it merely wants to
    be longer than the cavity allows, its extent is capped.
    """

    shape: tuple = (48, 48, 40)
    voxel_size: tuple = (1.0, 1.0, 1.0)
    background_intensity: float = 0.55
    cavity_intensity: float = 0.15
    ribbon_intensity: float = 0.95
    noise_sd: float = 0.04
    bias_amplitude: float = 0.10
    cavity_semiaxis_frac: tuple = ((0.16, 0.22), (0.16, 0.22), (0.10, 0.13))
    center_jitter_vox: float = 1.5
    ribbon_radius_vox: tuple = (0.9, 1.2)  # half-thickness
    ribbon_extent: tuple = (0.30, 0.45)  # of the cavity, in normalized coords
    strata: str = "medium"
    # configured sanity bounds on total mask voxels (both ribbons together)
    mask_voxel_bounds: tuple = (6, 400)

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        if len(self.shape) != 3 or any(s < 8 for s in self.shape):
            raise ParameterError(f"shape must be 3 ints >= 8, got {self.shape}")
        if self.noise_sd < 0 or self.bias_amplitude < 0:
            raise ParameterError("noise_sd and bias_amplitude must be >= 0")
        if self.strata not in STRATA_SCALES:
            raise ParameterError(f"strata must be one of {sorted(STRATA_SCALES)}, got {self.strata!r}")
        self.cavity_semiaxis_frac = tuple(tuple(r) for r in self.cavity_semiaxis_frac)
        if len(self.cavity_semiaxis_frac) != 3 or any(
            len(r) != 2 or r[0] <= 0 or r[1] < r[0] for r in self.cavity_semiaxis_frac
        ):
            raise ParameterError("cavity_semiaxis_frac must be 3 (lo, hi) pairs with 0 < lo <= hi")
        lo, hi = self.ribbon_radius_vox
        if lo < 0.9:
            # below ~sqrt(3)/2 a thin curve can thread between voxel centers
            raise ParameterError(f"ribbon radius must be >= 0.9 voxels, got {lo}")
        if hi < lo or self.ribbon_extent[1] < self.ribbon_extent[0]:
            raise ParameterError("inverted range in ribbon parameters")
        if self.ribbon_extent[0] <= 0:
            raise ParameterError("ribbon_extent must be positive")
        levels = (self.background_intensity, self.cavity_intensity, self.ribbon_intensity)
        if len(set(levels)) != 3:
            raise ParameterError(f"the three intensity levels must be distinct, got {levels}")

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "voxel_size": list(self.voxel_size),
            "background_intensity": self.background_intensity,
            "cavity_intensity": self.cavity_intensity,
            "ribbon_intensity": self.ribbon_intensity,
            "noise_sd": self.noise_sd,
            "bias_amplitude": self.bias_amplitude,
            "cavity_semiaxis_frac": [list(r) for r in self.cavity_semiaxis_frac],
            "center_jitter_vox": self.center_jitter_vox,
            "ribbon_radius_vox": list(self.ribbon_radius_vox),
            "ribbon_extent": list(self.ribbon_extent),
            "strata": self.strata,
            "mask_voxel_bounds": list(self.mask_voxel_bounds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        kwargs = dict(d)
        for key in ("shape", "voxel_size", "ribbon_radius_vox", "ribbon_extent", "mask_voxel_bounds"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if "cavity_semiaxis_frac" in kwargs:
            kwargs["cavity_semiaxis_frac"] = tuple(tuple(r) for r in kwargs["cavity_semiaxis_frac"])
        return cls(**kwargs)


def _smooth_field(shape, rng: np.random.Generator) -> np.ndarray:
    """Low-frequency field in [-1, 1]: a coarse random grid upsampled trilinearly."""
    coarse = rng.uniform(-1.0, 1.0, size=(4, 4, 4))
    with tt.no_grad():
        return tt.trilinear_resize(tt.Tensor(coarse), shape).data


def _ribbon_points(semiaxes, extent, rng: np.random.Generator, n: int = 256) -> np.ndarray:
    """Sample a curved line in normalized ellipsoid coordinates, norm <= extent."""
    main = int(np.argmax(semiaxes))
    others = [d for d in range(3) if d != main]
    t = np.linspace(0.0, 1.0, n)
    span = extent * 0.92
    budget = np.sqrt(max(extent**2 - span**2, 0.0) + 0.15 * extent**2)
    amp1 = rng.uniform(0.3, 1.0) * budget
    amp2 = rng.uniform(0.2, 0.8) * budget
    ph1, ph2 = rng.uniform(0.0, 2 * np.pi, size=2)
    pts = np.zeros((n, 3))
    pts[:, main] = (2.0 * t - 1.0) * span
    pts[:, others[0]] = amp1 * np.sin(np.pi * t + ph1)
    pts[:, others[1]] = amp2 * np.sin(2 * np.pi * t + ph2)
    norms = np.linalg.norm(pts, axis=1)
    over = norms > extent
    if np.any(over):  # project stray samples back onto the allowed ball
        pts[over] *= (extent / norms[over])[:, None]
    return pts


def _mark_ribbon(mask, center, semiaxes, extent, radius, rng) -> None:
    pts_norm = _ribbon_points(semiaxes, extent, rng)
    pts = center + pts_norm * semiaxes  # voxel coordinates
    pad = radius + 1.0
    lo = np.maximum(np.floor(pts.min(axis=0) - pad).astype(int), 0)
    hi = np.minimum(np.ceil(pts.max(axis=0) + pad).astype(int) + 1, mask.shape)
    grids = np.meshgrid(*(np.arange(lo[d], hi[d]) for d in range(3)), indexing="ij")
    vox = np.stack([g.ravel() for g in grids], axis=1).astype(np.float64)
    d2 = ((vox[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2).min(axis=1)
    hit = (d2 <= radius * radius).reshape(tuple(hi - lo))
    region = tuple(slice(lo[d], hi[d]) for d in range(3))
    mask[region] |= hit


def generate_phantom(spec: PhantomSpec, rng: np.random.Generator):
    """Draw one (image Volume, mask MaskVolume) pair from a PhantomSpec."""
    shape = np.asarray(spec.shape, dtype=np.float64)
    extent_scale = STRATA_SCALES[spec.strata]

    cavity = np.zeros(spec.shape, dtype=bool)
    ribbon = np.zeros(spec.shape, dtype=bool)
    cavity_list = []

    centers = [
        np.array([shape[0] / 2.0, shape[1] / 2.0, shape[2] * side_frac])
        + rng.uniform(-spec.center_jitter_vox, spec.center_jitter_vox, size=3)
        for side_frac in _SIDE_FRACTIONS
    ]
    # cavities must never meet along the separation axis, whatever was drawn
    half_gap = (abs(centers[1][2] - centers[0][2]) - 1.5) / 2.0
    if half_gap <= 1.0:
        raise ParameterError(
            f"volume of shape {spec.shape} too small to separate two cavities "
            f"with center jitter {spec.center_jitter_vox}"
        )

    for center in centers:
        semiaxes = np.array(
            [shape[d] * rng.uniform(*spec.cavity_semiaxis_frac[d]) for d in range(3)]
        )
        semiaxes[2] = min(semiaxes[2], half_gap)
        radius = rng.uniform(*spec.ribbon_radius_vox)
        wanted = rng.uniform(*spec.ribbon_extent) * extent_scale

        # curve plus thickness plus sampling slack must stay inside the cavity
        min_semi = semiaxes.min()
        extent_cap = _INSIDE_LIMIT - (radius + 0.25) / min_semi
        if extent_cap < _MIN_EXTENT:
            raise ParameterError(
                f"ribbon of radius {radius:.2f} voxels cannot fit inside a cavity "
                f"with minimum semi-axis {min_semi:.2f} voxels"
            )
        extent = float(min(wanted, extent_cap))
        cavity_list.append((center, semiaxes))

        coords = np.indices(spec.shape, dtype=np.float64)
        norm2 = sum(((coords[d] - center[d]) / semiaxes[d]) ** 2 for d in range(3))
        cavity |= norm2 <= 1.0
        _mark_ribbon(ribbon, center, semiaxes, extent, radius, rng)

    (c0, s0), (c1, s1) = cavity_list
    if abs(c1[2] - c0[2]) <= s0[2] + s1[2]:
        raise NumericalError("cavities touch despite the separation cap")
    if not ribbon.any():
        raise NumericalError("phantom produced an empty mask")
    if np.any(ribbon & ~cavity):
        raise NumericalError("ribbon escaped its cavity; spec too tight")

    image = np.full(spec.shape, spec.background_intensity, dtype=np.float64)
    image[cavity] = spec.cavity_intensity
    image[ribbon] = spec.ribbon_intensity
    if spec.bias_amplitude > 0:
        image *= 1.0 + spec.bias_amplitude * _smooth_field(spec.shape, rng)
    if spec.noise_sd > 0:
        image += rng.normal(0.0, spec.noise_sd, size=spec.shape)

    return (
        Volume(image, spec.voxel_size),
        MaskVolume(ribbon.astype(np.uint8), spec.voxel_size),
    )
