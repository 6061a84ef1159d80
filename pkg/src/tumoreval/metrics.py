"""Legacy and lesion-wise Dice / HD95 for tumour regions.

Lesion-wise scoring: ground-truth lesions are the connected components of
the dilated ground truth, predicted components are matched to every lesion
whose dilated zone they touch, and unmatched lesions (FN) or predicted
components (FP) score Dice 0 and the HD95 penalty.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np

from .morphology import (
    DEFAULT_CONNECTIVITY,
    Connectivity,
    ComponentMap,
    bounding_box,
    connected_components,
    dilate,
    squared_distance_array,
    surface_array,
)
from .volume import (
    REGIONS,
    BinaryMask,
    LabelVolume,
    RegionId,
    Spacing,
    compose_region,
    physical_diagonal,
    require_same_geometry,
)


@dataclass(frozen=True)
class LesionwiseParams:
    dilation_radius_mm: float = 1.0
    connectivity: Connectivity = DEFAULT_CONNECTIVITY
    fn_fp_hd95_penalty_mm: float | None = None  # None: physical diagonal of the volume
    percentile: float = 95.0

    def __post_init__(self):
        if self.dilation_radius_mm < 0:
            raise ValueError("dilation_radius_mm must be >= 0")
        if not 0 < self.percentile <= 100:
            raise ValueError("percentile must be in (0, 100]")
        if self.fn_fp_hd95_penalty_mm is not None and not self.fn_fp_hd95_penalty_mm > 0:
            raise ValueError("penalty must be > 0")
        object.__setattr__(self, "connectivity", Connectivity(self.connectivity))

    def penalty_for(self, mask) -> float:
        if self.fn_fp_hd95_penalty_mm is not None:
            return float(self.fn_fp_hd95_penalty_mm)
        return physical_diagonal(mask.dims, mask.spacing)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["connectivity"] = int(self.connectivity)
        return d


class LesionKind(str, enum.Enum):
    TP = "TP"
    FN = "FN"
    FP = "FP"


@dataclass(frozen=True)
class LesionRecord:
    region: RegionId
    gt_lesion_id: int | None  # None for false-positive records
    gt_voxels: int
    matched_pred_component_ids: tuple[int, ...]
    dice_percent: float
    hd95_mm: float
    kind: LesionKind

    def to_dict(self) -> dict:
        return {
            "region": self.region.value,
            "gt_lesion_id": self.gt_lesion_id,
            "gt_voxels": self.gt_voxels,
            "matched_pred_component_ids": list(self.matched_pred_component_ids),
            "dice_percent": self.dice_percent,
            "hd95_mm": self.hd95_mm,
            "kind": self.kind.value,
        }


@dataclass(frozen=True)
class LesionwiseResult:
    records: tuple[LesionRecord, ...]
    dice: float
    hd95: float

    def count(self, kind: LesionKind) -> int:
        return sum(r.kind is kind for r in self.records)

    @property
    def n_gt_lesions(self) -> int:
        return sum(r.kind is not LesionKind.FP for r in self.records)

    def __iter__(self):
        # allows ``records, lw_dice, lw_hd95 = lesionwise(...)``
        return iter((self.records, self.dice, self.hd95))


@dataclass(frozen=True)
class RegionMetrics:
    region: RegionId
    legacy_dice: float
    legacy_hd95: float
    lesionwise_dice: float
    lesionwise_hd95: float
    lesion_records: tuple[LesionRecord, ...] = ()

    @property
    def n_gt_lesions(self) -> int:
        return sum(r.kind is not LesionKind.FP for r in self.lesion_records)

    def n_kind(self, kind: LesionKind) -> int:
        return sum(r.kind is kind for r in self.lesion_records)


@dataclass(frozen=True)
class CaseMetrics:
    case_id: str
    regions: dict[RegionId, RegionMetrics] = field(default_factory=dict)

    def __getitem__(self, region) -> RegionMetrics:
        return self.regions[RegionId(region)]


def dice_arrays(a: np.ndarray, b: np.ndarray) -> float:
    na = int(np.count_nonzero(a))
    nb = int(np.count_nonzero(b))
    if na + nb == 0:
        return 100.0
    inter = int(np.count_nonzero(a & b))
    return 100.0 * 2.0 * inter / (na + nb)


def dice(pred: BinaryMask, gt: BinaryMask) -> float:
    """Dice overlap in percent; two empty masks agree perfectly (100)."""
    require_same_geometry(pred, gt)
    return dice_arrays(pred.voxels, gt.voxels)


def surface_distances(a: np.ndarray, b: np.ndarray, spacing: Spacing) -> np.ndarray:
    """Pooled directed surface distances S_a -> S_b and S_b -> S_a (both non-empty)."""
    box = bounding_box(a | b, pad=1)
    a, b = a[box], b[box]
    sa, sb = surface_array(a), surface_array(b)
    d_to_b = squared_distance_array(sb, spacing)
    d_to_a = squared_distance_array(sa, spacing)
    return np.sqrt(np.concatenate([d_to_b[sa], d_to_a[sb]]))


def hd95_arrays(a: np.ndarray, b: np.ndarray, spacing: Spacing, percentile: float, penalty: float) -> float:
    ea, eb = not a.any(), not b.any()
    if ea and eb:
        return 0.0
    if ea or eb:
        return float(penalty)
    return float(np.percentile(surface_distances(a, b, spacing), percentile))


def hd95(pred: BinaryMask, gt: BinaryMask, percentile: float = 95.0, penalty: float | None = None) -> float:
    """Percentile (linear interpolation) of the pooled surface-to-surface distances, in mm.

    Both empty gives 0; exactly one empty gives ``penalty`` (default: the
    physical diagonal of the volume).
    """
    require_same_geometry(pred, gt)
    if penalty is None:
        penalty = physical_diagonal(pred.dims, pred.spacing)
    return hd95_arrays(pred.voxels, gt.voxels, pred.spacing, percentile, penalty)


def _union_box(cmap: ComponentMap, ids, extra_lo, extra_hi):
    lo = np.array(extra_lo)
    hi = np.array(extra_hi)
    for j in ids:
        lo = np.minimum(lo, cmap.bbox_min[j])
        hi = np.maximum(hi, cmap.bbox_max[j])
    return tuple(slice(int(l), int(h) + 1) for l, h in zip(lo, hi))


def lesionwise(
    pred: BinaryMask,
    gt: BinaryMask,
    params: LesionwiseParams | None = None,
    region: RegionId = RegionId.WT,
) -> LesionwiseResult:
    params = params or LesionwiseParams()
    require_same_geometry(pred, gt)
    penalty = params.penalty_for(gt)
    p_any, g_any = pred.any(), gt.any()
    if not p_any and not g_any:
        return LesionwiseResult((), 100.0, 0.0)

    zones = connected_components(dilate(gt, params.dilation_radius_mm), params.connectivity)
    comps = connected_components(pred, params.connectivity)
    G, P = zones.ids, comps.ids
    n_zones, n_comps = zones.n_components, comps.n_components

    both = (G > 0) & (P > 0)
    keys = np.unique(G[both].astype(np.int64) * (n_comps + 1) + P[both].astype(np.int64))
    matches: dict[int, list[int]] = {i: [] for i in range(1, n_zones + 1)}
    matched_pred = np.zeros(n_comps + 1, dtype=bool)
    for key in keys.tolist():
        i, j = divmod(key, n_comps + 1)
        matches[i].append(j)
        matched_pred[j] = True

    gt_arr, pred_ids, spacing = gt.voxels, P, gt.spacing
    records: list[LesionRecord] = []
    for i in range(1, n_zones + 1):
        js = matches[i]
        box = _union_box(comps, js, zones.bbox_min[i], zones.bbox_max[i])
        lesion = gt_arr[box] & (G[box] == i)
        n_lesion = int(np.count_nonzero(lesion))
        if not js:
            records.append(LesionRecord(region, i, n_lesion, (), 0.0, penalty, LesionKind.FN))
            continue
        union = np.isin(pred_ids[box], js)
        records.append(
            LesionRecord(
                region,
                i,
                n_lesion,
                tuple(js),
                dice_arrays(union, lesion),
                hd95_arrays(union, lesion, spacing, params.percentile, penalty),
                LesionKind.TP,
            )
        )
    for j in range(1, n_comps + 1):
        if not matched_pred[j]:
            records.append(LesionRecord(region, None, 0, (j,), 0.0, penalty, LesionKind.FP))

    n = len(records)
    lw_dice = sum(r.dice_percent for r in records) / n
    lw_hd95 = sum(r.hd95_mm for r in records) / n
    return LesionwiseResult(tuple(records), lw_dice, lw_hd95)


def evaluate_region(pred: BinaryMask, gt: BinaryMask, region: RegionId, params: LesionwiseParams) -> RegionMetrics:
    penalty = params.penalty_for(gt)
    lw = lesionwise(pred, gt, params, region)
    return RegionMetrics(
        region=region,
        legacy_dice=dice(pred, gt),
        legacy_hd95=hd95(pred, gt, params.percentile, penalty),
        lesionwise_dice=lw.dice,
        lesionwise_hd95=lw.hd95,
        lesion_records=lw.records,
    )


def evaluate_case(pred: LabelVolume, gt: LabelVolume, params: LesionwiseParams | None = None, case_id: str = "") -> CaseMetrics:
    """All four metrics for WT, TC and ET of one case."""
    params = params or LesionwiseParams()
    if not isinstance(pred, LabelVolume) or not isinstance(gt, LabelVolume):
        raise TypeError("evaluate_case expects canonical LabelVolume inputs")
    require_same_geometry(pred, gt)
    regions = {
        r: evaluate_region(compose_region(pred, r), compose_region(gt, r), r, params) for r in REGIONS
    }
    return CaseMetrics(case_id, regions)
