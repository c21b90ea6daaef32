"""Synthetic data generation, volume I/O, preprocessing, augmentation and splits."""

from .augment import AugmentConfig, apply_affine_arrays, augment_affine, augment_affine_arrays
from .manifest import DatasetManifest, ManifestEntry, make_folds, stratified_split
from .nifti import read_volume, write_volume
from .phantom import PhantomSpec, generate_phantom
from .preprocess import CropBox, apply_crop, crop_bbox, embed_crop, z_normalize, z_normalize_array
from .volume import MaskVolume, Volume

__all__ = [
    "AugmentConfig",
    "CropBox",
    "DatasetManifest",
    "ManifestEntry",
    "MaskVolume",
    "PhantomSpec",
    "Volume",
    "apply_affine_arrays",
    "apply_crop",
    "augment_affine",
    "augment_affine_arrays",
    "crop_bbox",
    "embed_crop",
    "generate_phantom",
    "make_folds",
    "read_volume",
    "stratified_split",
    "write_volume",
    "z_normalize",
    "z_normalize_array",
]
