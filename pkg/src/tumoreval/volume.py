"""Voxel-grid data model: geometry, label volumes, masks and region probabilities.

Arrays are indexed ``[x, y, z]`` and stored Fortran-contiguous so that the
flat buffer is x-fastest, the same order NIfTI uses on disk.  Volumes are
immutable once built (the underlying arrays are flagged read-only).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import GeometryMismatch, NonCanonicalLabels, UnmappedCode

BACKGROUND, NCR, ED, ET = 0, 1, 2, 3
CANONICAL_CODES = (BACKGROUND, NCR, ED, ET)

# legacy BraTS releases store enhancing tumor as 4
DEFAULT_REMAP: dict[int, int] = {0: 0, 1: 1, 2: 2, 3: 3, 4: 3}


class RegionId(str, enum.Enum):
    WT = "WT"
    TC = "TC"
    ET = "ET"


REGIONS = (RegionId.WT, RegionId.TC, RegionId.ET)

REGION_CODES: dict[RegionId, tuple[int, ...]] = {
    RegionId.WT: (NCR, ED, ET),
    RegionId.TC: (NCR, ET),
    RegionId.ET: (ET,),
}


@dataclass(frozen=True)
class Dims:
    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        for n in (self.nx, self.ny, self.nz):
            if int(n) != n or n < 1:
                raise ValueError(f"voxel counts must be positive integers, got {self.shape}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz


@dataclass(frozen=True)
class Spacing:
    dx: float = 1.0
    dy: float = 1.0
    dz: float = 1.0

    def __post_init__(self):
        for d in self.as_tuple():
            if not (math.isfinite(d) and d > 0):
                raise ValueError(f"spacing must be positive and finite, got {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (float(self.dx), float(self.dy), float(self.dz))

    def isclose(self, other: "Spacing", rel_tol: float = 1e-6) -> bool:
        return all(math.isclose(a, b, rel_tol=rel_tol) for a, b in zip(self.as_tuple(), other.as_tuple()))


def voxel_volume_mm3(spacing: Spacing) -> float:
    return spacing.dx * spacing.dy * spacing.dz


def physical_diagonal(dims: Dims, spacing: Spacing) -> float:
    """Length in mm of the diagonal of the full imaged box."""
    return math.sqrt(sum((n * d) ** 2 for n, d in zip(dims.shape, spacing.as_tuple())))


def _as_spacing(spacing) -> Spacing:
    if isinstance(spacing, Spacing):
        return spacing
    if spacing is None:
        return Spacing()
    return Spacing(*spacing)


def _freeze(arr: np.ndarray, dtype) -> np.ndarray:
    arr = np.asfortranarray(np.asarray(arr, dtype=dtype))
    if arr.ndim != 3:
        raise ValueError(f"expected a 3D array, got shape {arr.shape}")
    if arr.base is not None or arr.flags.writeable:
        arr = arr.copy(order="F")
    arr.flags.writeable = False
    return arr


class _Grid:
    voxels: np.ndarray
    spacing: Spacing

    @property
    def dims(self) -> Dims:
        return Dims(*self.voxels.shape)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape

    def same_geometry(self, other) -> bool:
        return self.shape == other.shape and self.spacing.isclose(other.spacing)


class BinaryMask(_Grid):
    __slots__ = ("voxels", "spacing")

    def __init__(self, voxels, spacing=None):
        self.voxels = _freeze(voxels, bool)
        self.spacing = _as_spacing(spacing)

    def count(self) -> int:
        return int(np.count_nonzero(self.voxels))

    def any(self) -> bool:
        return bool(self.voxels.any())

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.same_geometry(other) and np.array_equal(self.voxels, other.voxels)

    def __repr__(self):
        return f"BinaryMask(shape={self.shape}, count={self.count()}, spacing={self.spacing.as_tuple()})"


class LabelVolume(_Grid):
    """One canonical class code (0 background, 1 NCR, 2 ED, 3 ET) per voxel."""

    __slots__ = ("voxels", "spacing")

    def __init__(self, voxels, spacing=None):
        arr = np.asarray(voxels)
        bad = np.setdiff1d(np.unique(arr), CANONICAL_CODES)
        if bad.size:
            raise NonCanonicalLabels(bad)
        self.voxels = _freeze(arr, np.uint8)
        self.spacing = _as_spacing(spacing)

    def region(self, region: RegionId) -> BinaryMask:
        return compose_region(self, region)

    def class_mask(self, code: int) -> BinaryMask:
        return BinaryMask(self.voxels == code, self.spacing)

    def __eq__(self, other):
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return self.same_geometry(other) and np.array_equal(self.voxels, other.voxels)

    def __repr__(self):
        counts = np.bincount(self.voxels.ravel(order="K"), minlength=4)
        return f"LabelVolume(shape={self.shape}, counts={counts.tolist()}, spacing={self.spacing.as_tuple()})"


class ProbVolume(_Grid):
    """Per-voxel WT/TC/ET region probabilities stored as three float32 grids."""

    __slots__ = ("channels", "spacing")

    def __init__(self, channels, spacing=None):
        if isinstance(channels, Mapping):
            channels = [channels[r] for r in REGIONS]
        chans = tuple(_freeze(c, np.float32) for c in channels)
        if len(chans) != 3:
            raise ValueError(f"expected 3 region channels, got {len(chans)}")
        if len({c.shape for c in chans}) != 1:
            raise GeometryMismatch(f"channel shapes differ: {[c.shape for c in chans]}")
        for c in chans:
            if not np.isfinite(c).all() or c.min(initial=0.0) < 0.0 or c.max(initial=0.0) > 1.0:
                raise ValueError("probabilities must be finite and within [0, 1]")
        self.channels = chans
        self.spacing = _as_spacing(spacing)

    @property
    def voxels(self) -> np.ndarray:
        return self.channels[0]

    def channel(self, region: RegionId) -> np.ndarray:
        return self.channels[REGIONS.index(RegionId(region))]

    def __eq__(self, other):
        if not isinstance(other, ProbVolume):
            return NotImplemented
        return self.same_geometry(other) and all(
            np.array_equal(a, b) for a, b in zip(self.channels, other.channels)
        )

    def __repr__(self):
        return f"ProbVolume(shape={self.shape}, spacing={self.spacing.as_tuple()})"


def require_same_geometry(*volumes) -> None:
    first = volumes[0]
    for v in volumes[1:]:
        if not first.same_geometry(v):
            raise GeometryMismatch(
                f"geometry mismatch: {first.shape}@{first.spacing.as_tuple()} "
                f"vs {v.shape}@{v.spacing.as_tuple()}"
            )


def compose_region(labels: LabelVolume, region: RegionId) -> BinaryMask:
    region = RegionId(region)
    v = labels.voxels
    if region is RegionId.WT:
        mask = v != BACKGROUND
    elif region is RegionId.TC:
        mask = (v == NCR) | (v == ET)
    else:
        mask = v == ET
    return BinaryMask(mask, labels.spacing)


def remap_labels(raw, mapping: Mapping[int, int] | None = None, spacing=None) -> LabelVolume:
    """Translate arbitrary integer codes to canonical ones.

    ``raw`` may be an integer array or a LabelVolume; every code present must
    appear in ``mapping`` (default: identity on 0..3 plus 4 -> 3).
    """
    if isinstance(raw, _Grid):
        spacing = raw.spacing if spacing is None else spacing
        raw = raw.voxels
    raw = np.asarray(raw)
    if mapping is None:
        mapping = DEFAULT_REMAP
    if raw.dtype.kind == "f":
        if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
            raise ValueError("label volume contains non-integral values")
    codes = np.unique(raw).astype(np.int64)
    lut_codes = np.array(sorted(mapping), dtype=np.int64)
    for c in codes:
        if int(c) not in mapping:
            raise UnmappedCode(int(c))
    targets = np.array([mapping[int(c)] for c in lut_codes], dtype=np.int64)
    idx = np.searchsorted(lut_codes, raw.astype(np.int64))
    return LabelVolume(targets[idx].astype(np.uint8), spacing)
