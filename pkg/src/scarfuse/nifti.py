"""Minimal single-file NIfTI-1 reader and writer.

Only the subset of NIfTI-1 needed by this package is implemented: scalar
volumes of up to four dimensions, little-endian, stored uncompressed or
gzip-compressed, with no extensions.  Data is laid out in the standard
NIfTI (Fortran) order with ``dim[1]`` fastest; in memory we keep numpy's
default C order, so round trips are exact.

Writes are byte-deterministic: the header carries no timestamps and the
gzip stream is created with ``mtime=0``.
"""

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

# NIfTI-1 datatype codes for the dtypes we support.
_DTYPE_TO_CODE = {
    np.dtype(np.uint8): 2,
    np.dtype(np.int16): 4,
    np.dtype(np.int32): 8,
    np.dtype(np.float32): 16,
    np.dtype(np.float64): 64,
}
_CODE_TO_DTYPE = {code: dt for dt, code in _DTYPE_TO_CODE.items()}


def _is_gzip(raw: bytes) -> bool:
    return raw[:2] == b"\x1f\x8b"


def write_nifti(path, data, spacing=None):
    """Write ``data`` to ``path`` (gzipped when the name ends in .gz).

    Args:
        path: destination filename (.nii or .nii.gz).
        data: numpy array, 1 to 4 dimensions, dtype in
            {uint8, int16, int32, float32, float64}.
        spacing: optional per-axis physical size, same length as
            ``data.ndim``; stored in pixdim.
    """
    data = np.asarray(data)
    if data.ndim < 1 or data.ndim > 4:
        raise DataError(f"can only write 1..4-dimensional volumes, got ndim={data.ndim}")
    if data.dtype not in _DTYPE_TO_CODE:
        raise DataError(f"unsupported dtype for NIfTI output: {data.dtype}")
    if spacing is not None and len(spacing) != data.ndim:
        raise DataError(
            f"spacing has {len(spacing)} entries for a {data.ndim}-dimensional volume"
        )

    dim = [data.ndim] + list(data.shape) + [1] * (7 - data.ndim)
    pixdim = [1.0] * 8
    if spacing is not None:
        for i, s in enumerate(spacing):
            pixdim[i + 1] = float(s)

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 70, _DTYPE_TO_CODE[data.dtype])
    struct.pack_into("<h", hdr, 72, data.dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope
    struct.pack_into("<f", hdr, 116, 0.0)  # scl_inter
    descrip = b"scarfuse"
    hdr[148 : 148 + len(descrip)] = descrip
    struct.pack_into("<h", hdr, 252, 0)  # qform_code
    struct.pack_into("<h", hdr, 254, 0)  # sform_code
    hdr[344:348] = MAGIC

    payload = bytes(hdr) + b"\x00\x00\x00\x00" + data.tobytes(order="F")
    path = Path(path)
    if path.suffix == ".gz":
        with open(path, "wb") as fh:
            with gzip.GzipFile(filename="", mode="wb", fileobj=fh, mtime=0) as gz:
                gz.write(payload)
    else:
        path.write_bytes(payload)


def read_nifti(path):
    """Read a NIfTI-1 file written by this module (or compatible).

    Returns:
        (data, spacing): the volume as a numpy array and a tuple with the
        per-axis physical sizes from pixdim.
    """
    raw = Path(path).read_bytes()
    if _is_gzip(raw):
        raw = gzip.decompress(raw)
    if len(raw) < HEADER_SIZE:
        raise DataError(f"{path}: file too short to hold a NIfTI-1 header")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        raise DataError(f"{path}: not a little-endian NIfTI-1 file (sizeof_hdr={sizeof_hdr})")
    if raw[344:347] != MAGIC[:3]:
        raise DataError(f"{path}: bad NIfTI magic {raw[344:348]!r}")

    dim = struct.unpack_from("<8h", raw, 40)
    ndim = dim[0]
    if ndim < 1 or ndim > 4:
        raise DataError(f"{path}: unsupported number of dimensions {ndim}")
    shape = tuple(dim[1 : 1 + ndim])
    (code,) = struct.unpack_from("<h", raw, 70)
    if code not in _CODE_TO_DTYPE:
        raise DataError(f"{path}: unsupported NIfTI datatype code {code}")
    dtype = _CODE_TO_DTYPE[code]
    pixdim = struct.unpack_from("<8f", raw, 76)
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    (slope,) = struct.unpack_from("<f", raw, 112)
    (inter,) = struct.unpack_from("<f", raw, 116)

    offset = int(vox_offset)
    count = int(np.prod(shape))
    end = offset + count * dtype.itemsize
    if end > len(raw):
        raise DataError(f"{path}: truncated data section")
    flat = np.frombuffer(raw[offset:end], dtype=dtype)
    data = flat.reshape(shape, order="F").copy()
    if slope not in (0.0, 1.0) or inter != 0.0:
        data = data.astype(np.float64) * slope + inter
    spacing = tuple(float(pixdim[i + 1]) for i in range(ndim))
    return data, spacing
