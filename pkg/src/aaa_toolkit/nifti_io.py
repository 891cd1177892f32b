"""NIfTI-1 and raw-sidecar volume files.

Header fields are packed and unpacked with nibabel's Nifti1Header; the voxel
payload is read and written directly with numpy so that float64 data
round-trips bit-exactly. qform/sform rotations are ignored: volumes are
assumed axis-aligned and only the qoffset translation is used as origin.
"""

import logging
import math
from pathlib import Path

import nibabel as nib
import numpy as np

from aaa_toolkit.errors import (
    DimensionalityError,
    NiftiFormatError,
    UnsupportedDatatypeError,
    VolumeIOError,
)
from aaa_toolkit.volume import Volume3D, VolumeKind

logger = logging.getLogger(__name__)

HEADER_SIZE = 348
VOX_OFFSET = 352
SINGLE_FILE_MAGIC = b"n+1\x00"
PAIR_MAGIC = b"ni1\x00"
KIND_TAG = "aaa-toolkit kind="

# NIfTI datatype code -> numpy dtype
SUPPORTED_DATATYPES: dict[int, np.dtype] = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}


def _read_header_block(path: Path) -> bytes:
    try:
        with path.open("rb") as f:
            block = f.read(HEADER_SIZE)
    except OSError as e:
        raise VolumeIOError(f"Cannot read {path}: {e}") from e
    if len(block) < HEADER_SIZE:
        raise NiftiFormatError(f"{path} is shorter than a NIfTI-1 header ({len(block)} bytes)")
    sizes = {int.from_bytes(block[:4], "little"), int.from_bytes(block[:4], "big")}
    if HEADER_SIZE not in sizes:
        raise NiftiFormatError(f"{path}: sizeof_hdr is not {HEADER_SIZE}")
    magic = block[344:348]
    if magic not in (SINGLE_FILE_MAGIC, PAIR_MAGIC):
        raise NiftiFormatError(f"{path}: bad NIfTI-1 magic {magic!r}")
    return block


def _kind_from_descrip(header: nib.Nifti1Header) -> VolumeKind | None:
    raw = header["descrip"].item()
    descrip = raw.decode("ascii", errors="ignore") if isinstance(raw, bytes) else str(raw)
    if descrip.startswith(KIND_TAG):
        try:
            return VolumeKind(descrip[len(KIND_TAG) :].strip())
        except ValueError:
            return None
    return None


def read_nifti(path: Path | str, kind: VolumeKind | None = None) -> Volume3D:
    """
    Read a 3D NIfTI-1 volume.

    Args:
        path: .nii file (or the .hdr of an ni1 pair)
        kind: Override the volume kind; by default it is taken from the
            header description written by write_nifti, else intensity

    Returns:
        Volume3D with scl_slope/scl_inter applied and float64 data

    Raises:
        NiftiFormatError: Header size or magic wrong
        UnsupportedDatatypeError: Datatype outside uint8/int16/int32/float32/float64
        DimensionalityError: dim[0] != 3
        VolumeIOError: Missing file or truncated payload
    """
    path = Path(path)
    block = _read_header_block(path)
    header = nib.Nifti1Header(binaryblock=block, check=False)

    dim = [int(d) for d in header["dim"]]
    if dim[0] != 3:
        raise DimensionalityError(f"{path}: only 3D volumes are supported (dim[0] = {dim[0]})")
    code = int(header["datatype"])
    if code not in SUPPORTED_DATATYPES:
        raise UnsupportedDatatypeError(f"{path}: unsupported NIfTI datatype code {code}")

    dims = (dim[1], dim[2], dim[3])
    dtype = SUPPORTED_DATATYPES[code].newbyteorder(header.endianness)
    nbytes = dtype.itemsize * dims[0] * dims[1] * dims[2]

    if block[344:348] == PAIR_MAGIC:
        payload_path = path.with_suffix(".img")
        offset = int(header["vox_offset"])
    else:
        payload_path = path
        offset = int(header["vox_offset"])
        if offset < HEADER_SIZE:
            raise NiftiFormatError(f"{path}: vox_offset {offset} points inside the header")
    try:
        with payload_path.open("rb") as f:
            f.seek(offset)
            buf = f.read(nbytes)
    except OSError as e:
        raise VolumeIOError(f"Cannot read payload of {path}: {e}") from e
    if len(buf) < nbytes:
        raise VolumeIOError(f"{path}: truncated payload ({len(buf)} of {nbytes} bytes)")

    data = np.frombuffer(buf, dtype=dtype).astype(np.float64).reshape(dims, order="F")
    slope = float(header["scl_slope"])
    inter = float(header["scl_inter"])
    if not math.isfinite(inter):
        inter = 0.0
    if slope != 0.0 and math.isfinite(slope) and (slope, inter) != (1.0, 0.0):
        data = data * slope + inter

    pixdim = [float(p) for p in header["pixdim"]]
    spacing = (abs(pixdim[1]), abs(pixdim[2]), abs(pixdim[3]))
    origin = (float(header["qoffset_x"]), float(header["qoffset_y"]), float(header["qoffset_z"]))
    volume_kind = kind or _kind_from_descrip(header) or VolumeKind.INTENSITY

    logger.debug(
        f"Read NIfTI volume {path}",
        extra={"dims": dims, "datatype": code, "kind": volume_kind.value},
    )
    return Volume3D(data, spacing, origin, volume_kind)


def _build_header(volume: Volume3D) -> nib.Nifti1Header:
    header = nib.Nifti1Header(endianness="<")
    header.set_data_shape(volume.dims)
    header.set_data_dtype(np.float64)
    header.set_zooms(volume.spacing)
    affine = np.diag([*volume.spacing, 1.0])
    affine[:3, 3] = volume.origin
    header.set_qform(affine, code=1)
    header.set_sform(affine, code=1)
    header.set_xyzt_units("mm")
    header["vox_offset"] = VOX_OFFSET
    header["scl_slope"] = 1.0
    header["scl_inter"] = 0.0
    header["descrip"] = f"{KIND_TAG}{volume.kind.value}".encode("ascii")
    return header


def write_nifti(volume: Volume3D, path: Path | str) -> None:
    """
    Write a single-file NIfTI-1 with a little-endian float64 payload.

    Raises:
        VolumeIOError: Path not writable
    """
    path = Path(path)
    header = _build_header(volume)
    payload = volume.data.astype("<f8").tobytes(order="F")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as f:
            f.write(header.binaryblock)
            f.write(b"\x00" * (VOX_OFFSET - HEADER_SIZE))
            f.write(payload)
    except OSError as e:
        raise VolumeIOError(f"Cannot write {path}: {e}") from e
    logger.debug(f"Wrote NIfTI volume {path}", extra={"dims": volume.dims})


def _format_floats(values: tuple[float, ...]) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_raw(volume: Volume3D, path: Path | str) -> Path:
    """
    Write a plain-text header plus a little-endian float64 .raw payload.

    Returns:
        Path of the payload file
    """
    path = Path(path)
    payload_path = path.with_suffix(".raw")
    text = "\n".join(
        [
            f"dims = {' '.join(str(n) for n in volume.dims)}",
            f"spacing = {_format_floats(volume.spacing)}",
            f"origin = {_format_floats(volume.origin)}",
            f"kind = {volume.kind.value}",
            f"payload = {payload_path.name}",
        ]
    )
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
        payload_path.write_bytes(volume.data.astype("<f8").tobytes(order="F"))
    except OSError as e:
        raise VolumeIOError(f"Cannot write {path}: {e}") from e
    return payload_path


def read_raw(path: Path | str) -> Volume3D:
    """Read a volume written by write_raw."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise VolumeIOError(f"Cannot read {path}: {e}") from e
    fields: dict[str, str] = {}
    for line in lines:
        if "=" in line:
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
    missing = {"dims", "spacing", "origin", "kind", "payload"} - set(fields)
    if missing:
        raise VolumeIOError(f"{path}: raw header missing {sorted(missing)}")

    dims = tuple(int(v) for v in fields["dims"].split())
    spacing = tuple(float(v) for v in fields["spacing"].split())
    origin = tuple(float(v) for v in fields["origin"].split())
    if len(dims) != 3:
        raise DimensionalityError(f"{path}: raw volume must be 3D")
    payload_path = path.parent / fields["payload"]
    try:
        buf = payload_path.read_bytes()
    except OSError as e:
        raise VolumeIOError(f"Cannot read {payload_path}: {e}") from e
    expected = 8 * dims[0] * dims[1] * dims[2]
    if len(buf) < expected:
        raise VolumeIOError(f"{payload_path}: truncated payload ({len(buf)} of {expected} bytes)")
    data = np.frombuffer(buf[:expected], dtype="<f8").reshape(dims, order="F")
    return Volume3D(data, spacing, origin, VolumeKind(fields["kind"]))  # type: ignore[arg-type]
