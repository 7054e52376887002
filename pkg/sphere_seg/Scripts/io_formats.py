"""
Volume serialization.

NIfTI-1 (single file .nii / .nii.gz) through nibabel, restricted to the subset the
pipeline needs, and SVOL, the small binary format of the segmenter exchange:

    magic   "SVOL"            4 bytes
    version u32 = 1
    dtype   u8  (0 = f32, 1 = u8 labels)
    ndim    u8  (3 or 4)
    dims    u32 x ndim
    spacing f64 x 3 (mm)
    data    row-major, little-endian
"""
import gzip
import io
import logging
import os
import struct
from typing import Tuple, Union

import nibabel as nib
import numpy as np

from .config import settings
from .exceptions import (
    BadMagicError,
    InvalidLabelError,
    InvalidVolumeError,
    SvolLengthError,
    SvolMagicError,
    SvolVersionError,
    TruncatedDataError,
    UnsupportedDatatypeError,
    UnsupportedNiftiFormError,
)
from .volume_core import (
    BRATS_LABELS,
    LABEL_DTYPE,
    SCALAR_DTYPE,
    LabelVolume,
    MultiChannelVolume,
    ScalarVolume,
    Spacing,
)

# --- NIfTI constants ---
NIFTI_HEADER_SIZE: int = 348
NIFTI_VOX_OFFSET: int = 352
NIFTI_SINGLE_MAGIC: bytes = b"n+1"
NIFTI_PAIR_MAGIC: bytes = b"ni1"
SUPPORTED_DATATYPES = {2: "uint8", 4: "int16", 16: "float32", 64: "float64"}
GZIP_MAGIC: bytes = b"\x1f\x8b"
LEGACY_ENHANCING_LABEL: int = 3

# --- SVOL constants ---
SVOL_DTYPE_F32: int = 0
SVOL_DTYPE_LABEL: int = 1
_SVOL_PREFIX = struct.Struct("<4sIBB")

Volume = Union[ScalarVolume, LabelVolume, MultiChannelVolume]


# --- NIfTI ---
def _read_bytes(path: str) -> bytes:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == GZIP_MAGIC:
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as e:
            raise TruncatedDataError(f"Corrupt gzip stream in {path}: {e}") from e
    return raw


def read_nifti_header(raw: bytes, path: str = "<bytes>") -> nib.Nifti1Header:
    """Parses and validates the 348-byte header; endianness is detected from sizeof_hdr."""
    if len(raw) < NIFTI_HEADER_SIZE:
        raise TruncatedDataError(f"{path}: {len(raw)} bytes is shorter than a NIfTI-1 header")

    header = nib.Nifti1Header(binaryblock=raw[:NIFTI_HEADER_SIZE], check=False)
    magic = np.asarray(header["magic"]).item().rstrip(b"\x00")
    if magic == NIFTI_PAIR_MAGIC:
        raise UnsupportedNiftiFormError(f"{path}: two-file NIfTI ('ni1') is not supported")
    if magic != NIFTI_SINGLE_MAGIC or int(header["sizeof_hdr"]) != NIFTI_HEADER_SIZE:
        raise BadMagicError(f"{path}: not a single-file NIfTI-1 image (magic {magic!r})")

    datatype = int(header["datatype"])
    if datatype not in SUPPORTED_DATATYPES:
        raise UnsupportedDatatypeError(f"{path}: datatype code {datatype} is not supported")

    dims = header.get_data_shape()
    if not 3 <= len(dims) <= 4 or min(dims) < 1:
        raise InvalidVolumeError(f"{path}: expected 3D or 4D data, got dims {dims}")
    return header


def _warn_on_rotation(header: nib.Nifti1Header, path: str) -> None:
    if int(header["sform_code"]) <= 0:
        return
    rotation = header.get_sform()[:3, :3]
    off_diagonal = rotation - np.diag(np.diag(rotation))
    if np.abs(off_diagonal).max() > 1e-6:
        logging.warning(f"⚠️ {path}: non axis-aligned sform ignored, only pixdim spacing is used")


def _load_nifti(path: str) -> Tuple[np.ndarray, Spacing]:
    raw = _read_bytes(path)
    header = read_nifti_header(raw, path)

    dims = header.get_data_shape()
    needed = int(header["vox_offset"]) + int(np.prod(dims)) * header.get_data_dtype().itemsize
    if len(raw) < needed:
        raise TruncatedDataError(f"{path}: expected {needed} bytes, found {len(raw)}")
    _warn_on_rotation(header, path)

    image = nib.Nifti1Image.from_bytes(raw)
    # dataobj applies scl_slope / scl_inter when the slope is set
    data = np.asanyarray(image.dataobj)
    spacing = Spacing.from_sequence(header.get_zooms()[:3])
    return data, spacing


def read_nifti(path: str, as_labels: bool = False) -> Union[MultiChannelVolume, LabelVolume]:
    """
    Reads a single-file NIfTI-1 image. Scalars come back as a MultiChannelVolume (a 4D
    file is split along its last axis); labels are validated against {0,1,2,4} with the
    historical label 3 remapped to 4.
    """
    data, spacing = _load_nifti(path)

    if as_labels:
        if data.ndim != 3:
            raise InvalidVolumeError(f"{path}: a label volume must be 3D, got {data.shape}")
        labels = np.rint(data).astype(np.int64)
        if (labels == LEGACY_ENHANCING_LABEL).any():
            logging.warning(f"⚠️ {path}: label 3 found, remapped to 4")
            labels[labels == LEGACY_ENHANCING_LABEL] = 4
        invalid = np.setdiff1d(np.unique(labels), BRATS_LABELS)
        if invalid.size:
            raise InvalidLabelError(f"{path}: labels outside {{0,1,2,4}}: {invalid.tolist()}")
        return LabelVolume(labels.astype(LABEL_DTYPE), spacing)

    data = data.astype(SCALAR_DTYPE)
    if data.ndim == 3:
        data = data[..., None]
    channels = tuple(ScalarVolume(data[..., c], spacing) for c in range(data.shape[-1]))
    return MultiChannelVolume(channels)


def write_nifti(v: Volume, path: str) -> None:
    """Writes float32 scalars or uint8 labels; 4D for multichannel volumes."""
    if isinstance(v, LabelVolume):
        data = np.asarray(v.data, dtype=LABEL_DTYPE)
        dtype = np.uint8
    elif isinstance(v, MultiChannelVolume):
        data = v.stacked().astype(SCALAR_DTYPE)
        dtype = np.float32
    else:
        data = np.asarray(v.data, dtype=SCALAR_DTYPE)
        dtype = np.float32
    if data.size == 0:
        raise InvalidVolumeError("Refusing to write an empty volume")

    spacing = v.spacing
    affine = np.diag([spacing.sx, spacing.sy, spacing.sz, 1.0])
    image = nib.Nifti1Image(data, affine)
    image.header.set_data_dtype(dtype)
    image.header.set_xyzt_units("mm")
    zooms = (spacing.sx, spacing.sy, spacing.sz) + ((1.0,) if data.ndim == 4 else ())
    image.header.set_zooms(zooms)

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    nib.save(image, path)


# --- SVOL ---
def encode_svol(data: np.ndarray, spacing: Spacing, is_label: bool) -> bytes:
    data = np.asarray(data)
    if data.ndim not in (3, 4):
        raise InvalidVolumeError(f"SVOL holds 3D or 4D data, got {data.ndim}D")
    dtype_code = SVOL_DTYPE_LABEL if is_label else SVOL_DTYPE_F32
    payload = data.astype("<u1" if is_label else "<f4")

    buffer = io.BytesIO()
    buffer.write(_SVOL_PREFIX.pack(settings.PROJECT.SVOL_MAGIC, settings.PROJECT.SVOL_VERSION, dtype_code, data.ndim))
    buffer.write(struct.pack(f"<{data.ndim}I", *data.shape))
    buffer.write(struct.pack("<3d", spacing.sx, spacing.sy, spacing.sz))
    buffer.write(np.ascontiguousarray(payload).tobytes())
    return buffer.getvalue()


def decode_svol(raw: bytes, path: str = "<bytes>") -> Tuple[np.ndarray, Spacing, bool]:
    if len(raw) < _SVOL_PREFIX.size or raw[:4] != settings.PROJECT.SVOL_MAGIC:
        raise SvolMagicError(f"{path}: missing SVOL magic")
    _, version, dtype_code, ndim = _SVOL_PREFIX.unpack_from(raw, 0)
    if version != settings.PROJECT.SVOL_VERSION:
        raise SvolVersionError(f"{path}: SVOL version {version}, expected {settings.PROJECT.SVOL_VERSION}")
    if dtype_code not in (SVOL_DTYPE_F32, SVOL_DTYPE_LABEL) or ndim not in (3, 4):
        raise SvolLengthError(f"{path}: bad SVOL header (dtype {dtype_code}, ndim {ndim})")

    offset = _SVOL_PREFIX.size
    header_end = offset + 4 * ndim + 24
    if len(raw) < header_end:
        raise SvolLengthError(f"{path}: truncated SVOL header")
    dims = struct.unpack_from(f"<{ndim}I", raw, offset)
    spacing = Spacing.from_sequence(struct.unpack_from("<3d", raw, offset + 4 * ndim))

    is_label = dtype_code == SVOL_DTYPE_LABEL
    dtype = np.dtype("<u1" if is_label else "<f4")
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header_end != expected:
        raise SvolLengthError(f"{path}: {len(raw) - header_end} data bytes, expected {expected}")

    data = np.frombuffer(raw, dtype=dtype, offset=header_end).reshape(dims)
    return data.astype(LABEL_DTYPE if is_label else SCALAR_DTYPE), spacing, is_label


def write_svol(v, path: str) -> None:
    """Writes a ScalarVolume, LabelVolume, MultiChannelVolume or SphericalVolume."""
    if isinstance(v, MultiChannelVolume):
        raw = encode_svol(v.stacked(), v.spacing, is_label=False)
    else:
        is_label = isinstance(v, LabelVolume) or bool(getattr(v, "is_label", False))
        raw = encode_svol(v.data, v.spacing, is_label=is_label)
    with open(path, "wb") as f:
        f.write(raw)


def read_svol(path: str) -> Union[ScalarVolume, LabelVolume, MultiChannelVolume]:
    with open(path, "rb") as f:
        raw = f.read()
    data, spacing, is_label = decode_svol(raw, path)
    if is_label:
        if data.ndim != 3:
            raise SvolLengthError(f"{path}: label SVOL must be 3D")
        return LabelVolume(data, spacing)
    if data.ndim == 4:
        return MultiChannelVolume(tuple(ScalarVolume(data[..., c], spacing) for c in range(data.shape[-1])))
    return ScalarVolume(data, spacing)


def read_svol_array(path: str) -> Tuple[np.ndarray, Spacing, bool]:
    """Raw SVOL contents, used for spherical-domain data that has no Cartesian spacing."""
    with open(path, "rb") as f:
        return decode_svol(f.read(), path)


# --- Dispatch by extension ---
def is_nifti_path(path: str) -> bool:
    return path.endswith(".nii") or path.endswith(".nii.gz")


def read_volume(path: str, as_labels: bool = False):
    if is_nifti_path(path):
        return read_nifti(path, as_labels=as_labels)
    volume = read_svol(path)
    if as_labels and not isinstance(volume, LabelVolume):
        raise InvalidLabelError(f"{path}: expected a label SVOL")
    if not as_labels and isinstance(volume, ScalarVolume):
        return MultiChannelVolume((volume,))
    return volume


def write_volume(v: Volume, path: str) -> None:
    if is_nifti_path(path):
        write_nifti(v, path)
    else:
        write_svol(v, path)
