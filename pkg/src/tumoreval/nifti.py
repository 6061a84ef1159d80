"""Minimal NIfTI-1 reader/writer (single-file ``.nii`` and ``.hdr``/``.img`` pairs, optional gzip).

Only geometry (dim/pixdim) and intensity scaling are interpreted; the affine
fields are parsed into the header record but never used for resampling.
"""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BadMagic,
    ChannelCountMismatch,
    DimMismatch,
    GeometryMismatch,
    IoFailure,
    NiftiError,
    ProbabilityOutOfRange,
    TruncatedFile,
    UnsupportedDatatype,
)
from .volume import REGIONS, DEFAULT_REMAP, Dims, LabelVolume, ProbVolume, RegionId, Spacing, remap_labels

HEADER_SIZE = 348
NIFTI2_HEADER_SIZE = 540
WRITE_VOX_OFFSET = 352
GZIP_MAGIC = b"\x1f\x8b"

DATATYPES: dict[int, np.dtype] = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
DATATYPE_CODES = {v: k for k, v in DATATYPES.items()}

# (name, struct format, byte offset); sizes follow the NIfTI-1 C header
_FIELDS = [
    ("sizeof_hdr", "i", 0),
    ("data_type", "10s", 4),
    ("db_name", "18s", 14),
    ("extents", "i", 32),
    ("session_error", "h", 36),
    ("regular", "c", 38),
    ("dim_info", "B", 39),
    ("dim", "8h", 40),
    ("intent_p1", "f", 56),
    ("intent_p2", "f", 60),
    ("intent_p3", "f", 64),
    ("intent_code", "h", 68),
    ("datatype", "h", 70),
    ("bitpix", "h", 72),
    ("slice_start", "h", 74),
    ("pixdim", "8f", 76),
    ("vox_offset", "f", 108),
    ("scl_slope", "f", 112),
    ("scl_inter", "f", 116),
    ("slice_end", "h", 120),
    ("slice_code", "B", 122),
    ("xyzt_units", "B", 123),
    ("cal_max", "f", 124),
    ("cal_min", "f", 128),
    ("slice_duration", "f", 132),
    ("toffset", "f", 136),
    ("glmax", "i", 140),
    ("glmin", "i", 144),
    ("descrip", "80s", 148),
    ("aux_file", "24s", 228),
    ("qform_code", "h", 252),
    ("sform_code", "h", 254),
    ("quatern", "6f", 256),
    ("srow_x", "4f", 280),
    ("srow_y", "4f", 296),
    ("srow_z", "4f", 312),
    ("intent_name", "16s", 328),
    ("magic", "4s", 344),
]


@dataclass
class NiftiHeader:
    dim: tuple[int, ...]
    datatype: int
    pixdim: tuple[float, ...]
    vox_offset: float = float(WRITE_VOX_OFFSET)
    scl_slope: float = 1.0
    scl_inter: float = 0.0
    qform_code: int = 0
    sform_code: int = 0
    quatern: tuple[float, ...] = (0.0,) * 6
    srow_x: tuple[float, ...] = (0.0,) * 4
    srow_y: tuple[float, ...] = (0.0,) * 4
    srow_z: tuple[float, ...] = (0.0,) * 4
    magic: bytes = b"n+1\x00"
    byteorder: str = "<"
    extra: dict = field(default_factory=dict)

    @property
    def ndim(self) -> int:
        return self.dim[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.dim[1 : self.dim[0] + 1])

    @property
    def dims(self) -> Dims:
        s = tuple(self.shape) + (1, 1, 1)
        return Dims(*s[:3])

    @property
    def spacing(self) -> Spacing:
        return Spacing(*(abs(float(p)) for p in self.pixdim[1:4]))

    @property
    def scaling(self) -> tuple[float, float] | None:
        slope, inter = float(self.scl_slope), float(self.scl_inter)
        if not np.isfinite(slope) or slope == 0.0:
            return None
        if not np.isfinite(inter):
            inter = 0.0
        if (slope, inter) == (1.0, 0.0):
            return None
        return slope, inter


def _open_bytes(path: Path) -> bytes:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc.strerror or exc}") from exc
    if raw[:2] == GZIP_MAGIC:
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise TruncatedFile(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def _detect_byteorder(buf: bytes, path) -> str:
    if len(buf) < HEADER_SIZE:
        raise TruncatedFile(f"{path}: {len(buf)} bytes, a NIfTI-1 header needs {HEADER_SIZE}")
    for bo in ("<", ">"):
        (size,) = struct.unpack_from(bo + "i", buf, 0)
        if size == NIFTI2_HEADER_SIZE:
            raise BadMagic(f"{path}: NIfTI-2 files are not supported")
    for bo in ("<", ">"):
        (d0,) = struct.unpack_from(bo + "h", buf, 40)
        if 1 <= d0 <= 7:
            return bo
    raise DimMismatch(f"{path}: dim[0] is not in [1, 7] under either byte order")


def parse_header(buf: bytes, path="<buffer>") -> NiftiHeader:
    bo = _detect_byteorder(buf, path)
    vals = {name: struct.unpack_from(bo + fmt, buf, off) for name, fmt, off in _FIELDS}
    vals = {k: (v[0] if len(v) == 1 else v) for k, v in vals.items()}
    magic = vals["magic"]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise BadMagic(f"{path}: magic {magic!r} is not a NIfTI-1 signature")
    if vals["sizeof_hdr"] != HEADER_SIZE:
        raise BadMagic(f"{path}: sizeof_hdr is {vals['sizeof_hdr']}, expected {HEADER_SIZE}")
    dim = tuple(int(d) for d in vals["dim"])
    if any(d < 1 for d in dim[1 : dim[0] + 1]):
        raise DimMismatch(f"{path}: non-positive extent in dim {dim}")
    datatype = int(vals["datatype"])
    if datatype not in DATATYPES:
        raise UnsupportedDatatype(datatype)
    extra = {k: vals[k] for k in ("intent_code", "xyzt_units", "descrip", "cal_min", "cal_max")}
    return NiftiHeader(
        dim=dim,
        datatype=datatype,
        pixdim=tuple(float(p) for p in vals["pixdim"]),
        vox_offset=float(vals["vox_offset"]),
        scl_slope=float(vals["scl_slope"]),
        scl_inter=float(vals["scl_inter"]),
        qform_code=int(vals["qform_code"]),
        sform_code=int(vals["sform_code"]),
        quatern=tuple(vals["quatern"]),
        srow_x=tuple(vals["srow_x"]),
        srow_y=tuple(vals["srow_y"]),
        srow_z=tuple(vals["srow_z"]),
        magic=magic,
        byteorder=bo,
        extra=extra,
    )


def _image_path(path: Path) -> Path:
    name = path.name
    for hdr, img in ((".hdr.gz", ".img.gz"), (".hdr", ".img")):
        if name.endswith(hdr):
            return path.with_name(name[: -len(hdr)] + img)
    raise BadMagic(f"{path}: header-pair magic but file is not a .hdr")


def read_volume(path) -> tuple[NiftiHeader, np.ndarray, Spacing, Dims]:
    """Decode a NIfTI-1 file into (header, voxel array, spacing, spatial dims).

    The array is indexed ``[x, y, z, ...]`` (x-fastest in memory).  When the
    header carries a non-trivial scl_slope/scl_inter, values are scaled in
    float64 and returned as float64.
    """
    path = Path(path)
    buf = _open_bytes(path)
    hdr = parse_header(buf, path)
    if hdr.magic == b"ni1\x00":
        data = _open_bytes(_image_path(path))
        offset = int(hdr.vox_offset)
    else:
        data = buf
        offset = max(int(hdr.vox_offset), HEADER_SIZE)
    dtype = DATATYPES[hdr.datatype].newbyteorder(hdr.byteorder)
    shape = hdr.shape
    n = int(np.prod(shape))
    need = offset + n * dtype.itemsize
    if len(data) < need:
        raise TruncatedFile(f"{path}: {len(data)} bytes, expected at least {need} for shape {shape}")
    arr = np.frombuffer(data, dtype=dtype, count=n, offset=offset)
    arr = arr.astype(dtype.newbyteorder("="), copy=True).reshape(shape, order="F")
    scale = hdr.scaling
    if scale is not None:
        arr = arr.astype(np.float64) * scale[0] + scale[1]
    return hdr, arr, hdr.spacing, hdr.dims


def write_volume(path, data: np.ndarray, spacing: Spacing, byteorder: str = "<", compress: bool | None = None) -> None:
    """Write a 3D or 4D array as a single-file NIfTI-1 (gzip when the name ends in .gz)."""
    path = Path(path)
    data = np.asarray(data)
    if data.dtype not in DATATYPE_CODES:
        raise UnsupportedDatatype(-1)
    if not 3 <= data.ndim <= 7:
        raise DimMismatch(f"cannot write a {data.ndim}D array")
    if byteorder not in "<>":
        raise ValueError(f"byteorder must be '<' or '>', got {byteorder!r}")
    if compress is None:
        compress = path.name.endswith(".gz")
    code = DATATYPE_CODES[data.dtype]
    dim = [data.ndim, *data.shape] + [1] * (7 - data.ndim)
    pixdim = [1.0, *spacing.as_tuple()] + [1.0] * 4
    values = {
        "sizeof_hdr": HEADER_SIZE,
        "dim": dim,
        "datatype": code,
        "bitpix": data.dtype.itemsize * 8,
        "pixdim": pixdim,
        "vox_offset": float(WRITE_VOX_OFFSET),
        "scl_slope": 1.0,
        "scl_inter": 0.0,
        "xyzt_units": 2,  # millimetres
        "magic": b"n+1\x00",
    }
    hdr = bytearray(HEADER_SIZE)
    for name, fmt, off in _FIELDS:
        if name not in values:
            continue
        v = values[name]
        if isinstance(v, (list, tuple)):
            struct.pack_into(byteorder + fmt, hdr, off, *v)
        else:
            struct.pack_into(byteorder + fmt, hdr, off, v)
    body = np.asarray(data, dtype=data.dtype.newbyteorder(byteorder)).tobytes(order="F")
    blob = bytes(hdr) + b"\x00" * (WRITE_VOX_OFFSET - HEADER_SIZE) + body
    if compress:
        blob = gzip.compress(blob, compresslevel=6, mtime=0)
    try:
        path.write_bytes(blob)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc.strerror or exc}") from exc


def write_label_volume(path, labels: LabelVolume, byteorder: str = "<") -> None:
    write_volume(path, np.asarray(labels.voxels, dtype=np.uint8), labels.spacing, byteorder=byteorder)


def read_label_volume(path, mapping=None) -> LabelVolume:
    """Read a label map and remap it to canonical codes (legacy 4 -> 3 by default)."""
    hdr, arr, spacing, _ = read_volume(path)
    if arr.ndim > 3:
        if any(s != 1 for s in arr.shape[3:]):
            raise DimMismatch(f"{path}: label maps must be 3D, got shape {arr.shape}")
        arr = arr.reshape(arr.shape[:3], order="F")
    elif arr.ndim < 3:
        arr = arr.reshape(arr.shape + (1,) * (3 - arr.ndim), order="F")
    return remap_labels(arr, DEFAULT_REMAP if mapping is None else mapping, spacing)


def _check_probabilities(arr: np.ndarray, path) -> np.ndarray:
    lo, hi = -1e-6, 1.0 + 1e-6
    bad = ~np.isfinite(arr) | (arr < lo) | (arr > hi)
    if bad.any():
        first = np.argwhere(bad)[0]
        raise ProbabilityOutOfRange(
            f"{path}: value {arr[tuple(first)]!r} at voxel {tuple(int(i) for i in first)} is outside [0, 1]"
        )
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


def read_prob_volume(paths, channel_order: Sequence[str] = ("WT", "TC", "ET")) -> ProbVolume:
    """Load region probabilities from one 4D file (dim[4] = 3) or three 3D files.

    ``channel_order`` names the region stored in each channel/file.
    """
    order = [RegionId(c) for c in channel_order]
    if sorted(order) != sorted(REGIONS):
        raise ValueError(f"channel_order must be a permutation of WT/TC/ET, got {channel_order}")
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    paths = [Path(p) for p in paths]
    chans: dict[RegionId, np.ndarray] = {}
    if len(paths) == 1:
        _, arr, spacing, _ = read_volume(paths[0])
        if arr.ndim != 4 or arr.shape[3] != 3:
            raise ChannelCountMismatch(f"{paths[0]}: expected a 4D volume with 3 channels, got shape {arr.shape}")
        for i, region in enumerate(order):
            chans[region] = _check_probabilities(arr[..., i], paths[0])
    elif len(paths) == 3:
        spacing = None
        shape = None
        for p, region in zip(paths, order):
            _, arr, sp, _ = read_volume(p)
            if arr.ndim == 4 and arr.shape[3] == 1:
                arr = arr[..., 0]
            if arr.ndim != 3:
                raise ChannelCountMismatch(f"{p}: expected a 3D channel, got shape {arr.shape}")
            if shape is None:
                shape, spacing = arr.shape, sp
            elif arr.shape != shape or not sp.isclose(spacing):
                raise GeometryMismatch(f"{p}: geometry {arr.shape}@{sp.as_tuple()} differs from {shape}@{spacing.as_tuple()}")
            chans[region] = _check_probabilities(arr, p)
    else:
        raise ChannelCountMismatch(f"expected one 4D file or three 3D files, got {len(paths)} paths")
    return ProbVolume([chans[r] for r in REGIONS], spacing)


def write_prob_volume(path, probs: ProbVolume, channel_order: Sequence[str] = ("WT", "TC", "ET"), byteorder: str = "<") -> None:
    stack = np.stack([probs.channel(RegionId(c)) for c in channel_order], axis=3)
    write_volume(path, np.asfortranarray(stack, dtype=np.float32), probs.spacing, byteorder=byteorder)


__all__ = [
    "NiftiHeader",
    "NiftiError",
    "parse_header",
    "read_volume",
    "write_volume",
    "read_label_volume",
    "write_label_volume",
    "read_prob_volume",
    "write_prob_volume",
]
