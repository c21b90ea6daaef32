"""Minimal single-file NIfTI-1 reader and writer.

Supports uncompressed .nii (the tested path) and transparently gzipped
.nii.gz, 3-d volumes only, with uint8/int16/float32/float64 payloads. Data is
stored in the standard on-disk order (first index fastest). Round trips are
bit-exact; scl_slope/scl_inter are honored on read when they encode a real
rescaling.
"""

from __future__ import annotations

import gzip
import struct

import numpy as np

from ..errors import NiftiParseError, ParameterError
from .volume import Volume

HEADER_SIZE = 348
MAGIC_OFFSET = 344
VOX_OFFSET = 352

# NIfTI-1 datatype codes for the supported payloads.
DTYPE_CODES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
CODE_FOR_DTYPE = {v: k for k, v in DTYPE_CODES.items()}


def _open(path, mode):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def write_volume(path, volume: Volume) -> None:
    """Write a Volume as single-file NIfTI-1 (little-endian, vox_offset 352)."""
    arr = np.asarray(volume.data)
    if arr.dtype not in CODE_FOR_DTYPE:
        raise ParameterError(
            f"unsupported dtype {arr.dtype}; use one of {sorted(str(d) for d in CODE_FOR_DTYPE)}"
        )
    code = CODE_FOR_DTYPE[arr.dtype]
    bitpix = arr.dtype.itemsize * 8

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)  # sizeof_hdr
    hdr[38] = ord("r")  # regular
    struct.pack_into("<8h", hdr, 40, 3, *arr.shape, 1, 1, 1, 1)  # dim
    struct.pack_into("<h", hdr, 70, code)  # datatype
    struct.pack_into("<h", hdr, 72, bitpix)  # bitpix
    struct.pack_into("<8f", hdr, 76, 1.0, *volume.voxel_size, 1.0, 1.0, 1.0, 1.0)  # pixdim
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))  # vox_offset
    struct.pack_into("<ff", hdr, 112, 0.0, 0.0)  # scl_slope, scl_inter: no scaling
    hdr[123] = 2  # spatial units: mm
    struct.pack_into("<4s", hdr, MAGIC_OFFSET, b"n+1\x00")

    with _open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00" * (VOX_OFFSET - HEADER_SIZE))
        fh.write(np.asfortranarray(arr).tobytes(order="F"))


def read_volume(path) -> Volume:
    """Parse a single-file NIfTI-1 volume, validating the header fields we rely on."""
    with _open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < HEADER_SIZE:
        raise NiftiParseError(
            f"truncated header: file has {len(blob)} bytes, need {HEADER_SIZE}", offset=len(blob)
        )

    (size_le,) = struct.unpack_from("<i", blob, 0)
    (size_be,) = struct.unpack_from(">i", blob, 0)
    if size_le == HEADER_SIZE:
        endian = "<"
    elif size_be == HEADER_SIZE:
        endian = ">"
    else:
        raise NiftiParseError(f"sizeof_hdr is {size_le}, expected {HEADER_SIZE}", offset=0)

    magic = struct.unpack_from("4s", blob, MAGIC_OFFSET)[0]
    if magic not in (b"n+1\x00",):
        raise NiftiParseError(f"bad magic {magic!r}, expected b'n+1\\x00'", offset=MAGIC_OFFSET)

    dim = struct.unpack_from(endian + "8h", blob, 40)
    if dim[0] != 3:
        raise NiftiParseError(f"only 3-d volumes supported, got dim[0]={dim[0]}", offset=40)
    shape = tuple(int(d) for d in dim[1:4])
    if any(s < 1 for s in shape):
        raise NiftiParseError(f"non-positive dimension in {shape}", offset=40)

    (datatype,) = struct.unpack_from(endian + "h", blob, 70)
    if datatype not in DTYPE_CODES:
        raise NiftiParseError(f"unsupported datatype code {datatype}", offset=70)
    dtype = DTYPE_CODES[datatype].newbyteorder(endian)

    (bitpix,) = struct.unpack_from(endian + "h", blob, 72)
    if bitpix != dtype.itemsize * 8:
        raise NiftiParseError(
            f"bitpix {bitpix} inconsistent with datatype code {datatype}", offset=72
        )

    pixdim = struct.unpack_from(endian + "8f", blob, 76)
    voxel_size = tuple(float(p) if p > 0 else 1.0 for p in pixdim[1:4])

    (vox_offset_f,) = struct.unpack_from(endian + "f", blob, 108)
    offset = int(vox_offset_f)
    if offset < HEADER_SIZE:
        raise NiftiParseError(f"vox_offset {offset} below header size", offset=108)

    slope, inter = struct.unpack_from(endian + "ff", blob, 112)

    count = int(np.prod(shape))
    nbytes = count * dtype.itemsize
    if len(blob) < offset + nbytes:
        raise NiftiParseError(
            f"truncated data: need {nbytes} bytes at offset {offset}, file has {len(blob)}",
            offset=len(blob),
        )
    flat = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    data = flat.reshape(shape, order="F")
    data = np.ascontiguousarray(data.astype(data.dtype.newbyteorder("=")))

    # slope 0 means "no scaling stored"; apply only a real rescale
    if slope != 0.0 and (slope != 1.0 or inter != 0.0):
        data = data.astype(np.float64) * slope + inter

    return Volume(data, voxel_size)
