"""3D binary morphology on voxel grids.

Connected components use a two-pass union-find labelling compiled with
numba; the distance transform is the exact separable lower-envelope
algorithm (Felzenszwalb & Huttenlocher) applied axis by axis with the voxel
spacing folded into each pass.

Kernels operate on the C-ordered transpose ``(z, y, x)`` of the x-fastest
volumes, so "raster order" below always means x fastest, then y, then z.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numba
import numpy as np

from .errors import ComponentOverflow, EmptyMask
from .volume import BinaryMask, Dims, Spacing, _as_spacing, voxel_volume_mm3


class Connectivity(enum.IntEnum):
    Face6 = 6
    Edge18 = 18
    Vertex26 = 26


DEFAULT_CONNECTIVITY = Connectivity.Vertex26


def neighbor_offsets(conn: Connectivity) -> np.ndarray:
    """All (dx, dy, dz) offsets of the neighbourhood, excluding the origin."""
    conn = Connectivity(conn)
    offs = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                l1 = abs(dx) + abs(dy) + abs(dz)
                if l1 == 0:
                    continue
                if conn == Connectivity.Face6 and l1 > 1:
                    continue
                if conn == Connectivity.Edge18 and l1 > 2:
                    continue
                offs.append((dx, dy, dz))
    return np.array(offs, dtype=np.int64)


def _causal_offsets_zyx(conn: Connectivity) -> np.ndarray:
    # neighbours already visited in raster order, as (dz, dy, dx)
    out = []
    for dx, dy, dz in neighbor_offsets(conn):
        if dz < 0 or (dz == 0 and dy < 0) or (dz == 0 and dy == 0 and dx < 0):
            out.append((dz, dy, dx))
    return np.array(out, dtype=np.int64)


@numba.njit(cache=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@numba.njit(cache=True)
def _label_kernel(a, offs, n_fg):
    nz, ny, nx = a.shape
    prov = np.zeros(a.shape, np.int64)
    parent = np.zeros(n_fg + 1, np.int64)
    nlab = 0
    noff = offs.shape[0]
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if not a[z, y, x]:
                    continue
                cur = 0
                for k in range(noff):
                    zz = z + offs[k, 0]
                    yy = y + offs[k, 1]
                    xx = x + offs[k, 2]
                    if zz < 0 or yy < 0 or xx < 0 or yy >= ny or xx >= nx:
                        continue
                    lab = prov[zz, yy, xx]
                    if lab == 0:
                        continue
                    if cur == 0:
                        cur = _find(parent, lab)
                    else:
                        r = _find(parent, lab)
                        if r != cur:
                            if r < cur:
                                parent[cur] = r
                                cur = r
                            else:
                                parent[r] = cur
                if cur == 0:
                    nlab += 1
                    parent[nlab] = nlab
                    cur = nlab
                prov[z, y, x] = cur
    final = np.zeros(nlab + 1, np.int64)
    out = np.zeros(a.shape, np.uint32)
    k_count = 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                lab = prov[z, y, x]
                if lab == 0:
                    continue
                r = _find(parent, lab)
                if final[r] == 0:
                    k_count += 1
                    final[r] = k_count
                out[z, y, x] = final[r]
    return out, k_count


@numba.njit(cache=True)
def _stats_kernel(ids, k):
    # ids is (z, y, x); outputs are in (x, y, z) column order
    nz, ny, nx = ids.shape
    counts = np.zeros(k + 1, np.int64)
    lo = np.full((k + 1, 3), np.iinfo(np.int64).max, np.int64)
    hi = np.full((k + 1, 3), -1, np.int64)
    sums = np.zeros((k + 1, 3), np.float64)
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                c = ids[z, y, x]
                if c == 0:
                    continue
                counts[c] += 1
                if x < lo[c, 0]:
                    lo[c, 0] = x
                if y < lo[c, 1]:
                    lo[c, 1] = y
                if z < lo[c, 2]:
                    lo[c, 2] = z
                if x > hi[c, 0]:
                    hi[c, 0] = x
                if y > hi[c, 1]:
                    hi[c, 1] = y
                if z > hi[c, 2]:
                    hi[c, 2] = z
                sums[c, 0] += x
                sums[c, 1] += y
                sums[c, 2] += z
    return counts, lo, hi, sums


@dataclass(frozen=True)
class ComponentStats:
    id: int
    voxel_count: int
    volume_mm3: float
    bbox_min: tuple[int, int, int]
    bbox_max: tuple[int, int, int]  # inclusive
    centroid: tuple[float, float, float]  # voxel index coordinates


class ComponentMap:
    """Component ids (1..K, 0 = background) plus per-component statistics.

    Statistics are kept as arrays indexed by id (row 0 unused) for vectorised
    use; :attr:`stats` offers the same data as records.
    """

    def __init__(self, ids: np.ndarray, spacing: Spacing, n_components: int):
        ids.flags.writeable = False
        self.ids = ids
        self.spacing = spacing
        self.n_components = int(n_components)
        counts, lo, hi, sums = _stats_kernel(ids.T, self.n_components)
        self.counts = counts
        self.bbox_min = lo
        self.bbox_max = hi
        with np.errstate(invalid="ignore", divide="ignore"):
            self.centroids = sums / counts[:, None]

    @property
    def dims(self) -> Dims:
        return Dims(*self.ids.shape)

    def volumes_mm3(self) -> np.ndarray:
        return self.counts * voxel_volume_mm3(self.spacing)

    @cached_property
    def stats(self) -> list[ComponentStats]:
        vv = voxel_volume_mm3(self.spacing)
        return [
            ComponentStats(
                id=i,
                voxel_count=int(self.counts[i]),
                volume_mm3=float(self.counts[i] * vv),
                bbox_min=tuple(int(v) for v in self.bbox_min[i]),
                bbox_max=tuple(int(v) for v in self.bbox_max[i]),
                centroid=tuple(float(v) for v in self.centroids[i]),
            )
            for i in range(1, self.n_components + 1)
        ]

    def mask(self, component_id: int) -> BinaryMask:
        return BinaryMask(self.ids == component_id, self.spacing)

    def __len__(self):
        return self.n_components


def label_array(arr: np.ndarray, conn: Connectivity = DEFAULT_CONNECTIVITY) -> tuple[np.ndarray, int]:
    """Array-level labelling: returns (uint32 ids indexed [x, y, z], K)."""
    arr = np.asarray(arr, dtype=bool)
    n_fg = int(np.count_nonzero(arr))
    if n_fg >= 2**32 - 1:
        raise ComponentOverflow(f"{n_fg} foreground voxels may exceed the uint32 id range")
    zyx = np.ascontiguousarray(arr.T)
    out, k = _label_kernel(zyx, _causal_offsets_zyx(conn), n_fg)
    return np.asfortranarray(out.T), int(k)


def connected_components(mask: BinaryMask, conn: Connectivity = DEFAULT_CONNECTIVITY) -> ComponentMap:
    ids, k = label_array(mask.voxels, conn)
    return ComponentMap(ids, mask.spacing, k)


def box_half_extent(radius_mm: float, spacing: Spacing) -> tuple[int, int, int]:
    # tolerance absorbs float noise such as 0.3 / 0.1
    return tuple(int(np.floor(radius_mm / d + 1e-9)) for d in spacing.as_tuple())


def dilate_array(arr: np.ndarray, half: tuple[int, int, int]) -> np.ndarray:
    out = np.array(arr, dtype=bool, order="F")
    for axis, r in enumerate(half):
        n = out.shape[axis]
        r = min(r, n - 1)
        if r <= 0:
            continue
        src = out.copy(order="F")
        for k in range(1, r + 1):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(0, n - k)
            hi[axis] = slice(k, n)
            out[tuple(lo)] |= src[tuple(hi)]
            out[tuple(hi)] |= src[tuple(lo)]
    return out


def dilate(mask: BinaryMask, radius_mm: float) -> BinaryMask:
    """Box dilation with half-extent floor(radius_mm / spacing) voxels per axis.

    A 1 mm radius on 1 mm voxels is the 3x3x3 kernel.
    """
    if radius_mm < 0:
        raise ValueError(f"radius_mm must be >= 0, got {radius_mm}")
    half = box_half_extent(radius_mm, mask.spacing)
    return BinaryMask(dilate_array(mask.voxels, half), mask.spacing)


def surface_array(arr: np.ndarray) -> np.ndarray:
    """Foreground voxels with a face neighbour that is background or off-grid."""
    arr = np.asarray(arr, dtype=bool)
    p = np.pad(arr, 1, constant_values=False)
    interior = (
        p[:-2, 1:-1, 1:-1] & p[2:, 1:-1, 1:-1]
        & p[1:-1, :-2, 1:-1] & p[1:-1, 2:, 1:-1]
        & p[1:-1, 1:-1, :-2] & p[1:-1, 1:-1, 2:]
    )
    return arr & ~interior


def surface_voxels(mask: BinaryMask) -> np.ndarray:
    """Surface voxel coordinates as an (N, 3) integer array in raster order."""
    s = surface_array(mask.voxels)
    # np.nonzero walks C order; go through the (z, y, x) view for x-fastest order
    z, y, x = np.nonzero(s.T)
    return np.stack([x, y, z], axis=1).astype(np.int64)


def bounding_box(arr: np.ndarray, pad: int = 0):
    """Slices of the tight bounding box of ``arr`` grown by ``pad`` (clipped)."""
    sl = []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        hit = np.flatnonzero(arr.any(axis=other))
        if hit.size == 0:
            return None
        lo = max(int(hit[0]) - pad, 0)
        hi = min(int(hit[-1]) + pad + 1, arr.shape[axis])
        sl.append(slice(lo, hi))
    return tuple(sl)


def interior_holes_array(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=bool)
    holes = np.zeros(arr.shape, dtype=bool, order="F")
    # every hole lies strictly inside the foreground bounding box
    box = bounding_box(arr, pad=1)
    if box is None:
        return holes
    bg = ~arr[box]
    ids, k = label_array(bg, Connectivity.Face6)
    if k == 0:
        return holes
    touching = np.zeros(k + 1, dtype=bool)
    for axis in range(3):
        for idx in (0, -1):
            face = np.take(ids, idx, axis=axis)
            touching[face] = True
    touching[0] = True
    holes[box] = ~touching[ids]
    return holes


def interior_holes(mask: BinaryMask) -> BinaryMask:
    """Background voxels whose face-connected background component misses the border."""
    return BinaryMask(interior_holes_array(mask.voxels), mask.spacing)


def fill_holes(mask: BinaryMask) -> BinaryMask:
    return BinaryMask(mask.voxels | interior_holes_array(mask.voxels), mask.spacing)


@numba.njit(cache=True)
def _envelope_1d(f, d, out, v, zb):
    n = f.shape[0]
    inf = np.inf
    k = -1
    for q in range(n):
        fq = f[q]
        if fq == inf:
            continue
        if k < 0:
            k = 0
            v[0] = q
            zb[0] = -inf
            zb[1] = inf
            continue
        p = v[k]
        s = ((fq + (d * q) ** 2) - (f[p] + (d * p) ** 2)) / (2.0 * d * d * (q - p))
        # zb[0] is -inf, so this stops at k == 0 at the latest
        while s <= zb[k]:
            k -= 1
            p = v[k]
            s = ((fq + (d * q) ** 2) - (f[p] + (d * p) ** 2)) / (2.0 * d * d * (q - p))
        k += 1
        v[k] = q
        zb[k] = s
        zb[k + 1] = inf
    if k < 0:
        for q in range(n):
            out[q] = inf
        return
    j = 0
    for q in range(n):
        while zb[j + 1] < q:
            j += 1
        t = d * (q - v[j])
        out[q] = t * t + f[v[j]]


@numba.njit(cache=True)
def _edt_pass_last(g, d):
    # lower envelope along the last axis of a C-ordered 3D array, in place
    n0, n1, n = g.shape
    f = np.empty(n, np.float64)
    out = np.empty(n, np.float64)
    v = np.empty(n, np.int64)
    zb = np.empty(n + 1, np.float64)
    for i in range(n0):
        for j in range(n1):
            for q in range(n):
                f[q] = g[i, j, q]
            _envelope_1d(f, d, out, v, zb)
            for q in range(n):
                g[i, j, q] = out[q]


def squared_distance_array(arr: np.ndarray, spacing) -> np.ndarray:
    """Squared Euclidean distance (mm^2) from each voxel to the nearest true voxel."""
    dx, dy, dz = _as_spacing(spacing).as_tuple()
    g = np.where(np.asarray(arr, dtype=bool).T, 0.0, np.inf)  # (z, y, x), C-ordered
    g = np.ascontiguousarray(g)
    _edt_pass_last(g, dx)
    g = np.ascontiguousarray(g.transpose(0, 2, 1))  # (z, x, y)
    _edt_pass_last(g, dy)
    g = np.ascontiguousarray(g.transpose(2, 1, 0))  # (y, x, z)
    _edt_pass_last(g, dz)
    return np.asfortranarray(g.transpose(1, 0, 2))  # (x, y, z)


def distance_transform(mask: BinaryMask) -> np.ndarray:
    """Exact Euclidean distance in mm from every voxel to the nearest foreground voxel."""
    if not mask.any():
        raise EmptyMask("distance transform of an empty mask is undefined")
    return np.sqrt(squared_distance_array(mask.voxels, mask.spacing))
