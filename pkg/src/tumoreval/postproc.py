"""Post-processing of region probabilities into BraTS label maps.

Stages, in pipeline order: fold ensembling, threshold composition, small
low-confidence region removal, and ET centre filling.  Default parameters
are the tuned challenge settings: 75 mm^3 floors for NCR/ET, 500 mm^3 for ED,
confidence ceiling 0.9, and thresholds WT 0.5 / TC 0.6 / ET 0.6.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import EmptyEnsemble
from .morphology import DEFAULT_CONNECTIVITY, Connectivity, interior_holes_array, label_array
from .volume import (
    BACKGROUND,
    ED,
    ET,
    NCR,
    REGIONS,
    LabelVolume,
    ProbVolume,
    RegionId,
    compose_region,
    require_same_geometry,
    voxel_volume_mm3,
)

CLASS_NAMES = {NCR: "NCR", ED: "ED", ET: "ET"}
# a class is scored by the tightest region that contains it
CLASS_CONFIDENCE_REGION = {ET: RegionId.ET, NCR: RegionId.TC, ED: RegionId.WT}


def _default_min_volume() -> dict[str, float]:
    return {"NCR": 75.0, "ET": 75.0, "ED": 500.0}


def _default_thresholds() -> dict[str, float]:
    return {"WT": 0.5, "TC": 0.6, "ET": 0.6}


@dataclass(frozen=True)
class PostprocRules:
    min_volume_mm3: dict[str, float] = field(default_factory=_default_min_volume)
    confidence_ceiling: float = 0.9
    thresholds: dict[str, float] = field(default_factory=_default_thresholds)
    center_fill: bool = True
    region_removal: bool = True
    connectivity: Connectivity = DEFAULT_CONNECTIVITY

    def __post_init__(self):
        mins = {k.upper(): float(v) for k, v in self.min_volume_mm3.items()}
        if set(mins) != {"NCR", "ET", "ED"}:
            raise ValueError(f"min_volume_mm3 needs NCR, ET and ED entries, got {sorted(mins)}")
        if any(v < 0 for v in mins.values()):
            raise ValueError("minimum volumes must be >= 0")
        ths = {k.upper(): float(v) for k, v in self.thresholds.items()}
        if set(ths) != {"WT", "TC", "ET"}:
            raise ValueError(f"thresholds need WT, TC and ET entries, got {sorted(ths)}")
        if any(not 0 < v < 1 for v in ths.values()):
            raise ValueError("thresholds must lie in (0, 1)")
        if not 0 <= self.confidence_ceiling <= 1:
            raise ValueError("confidence ceiling must lie in [0, 1]")
        object.__setattr__(self, "min_volume_mm3", mins)
        object.__setattr__(self, "thresholds", ths)
        object.__setattr__(self, "connectivity", Connectivity(self.connectivity))

    def threshold(self, region: RegionId) -> float:
        return self.thresholds[RegionId(region).value]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["connectivity"] = int(self.connectivity)
        return d


def threshold_compose(probs: ProbVolume, rules: PostprocRules | None = None) -> LabelVolume:
    """Hard labels via the cascade ET -> NCR (TC) -> ED (WT) -> background."""
    rules = rules or PostprocRules()
    p_wt, p_tc, p_et = (probs.channel(r) for r in REGIONS)
    out = np.zeros(probs.shape, dtype=np.uint8, order="F")
    out[p_wt >= rules.threshold(RegionId.WT)] = ED
    out[p_tc >= rules.threshold(RegionId.TC)] = NCR
    out[p_et >= rules.threshold(RegionId.ET)] = ET
    return LabelVolume(out, probs.spacing)


def remove_small_regions(labels: LabelVolume, probs: ProbVolume | None = None, rules: PostprocRules | None = None) -> LabelVolume:
    """Drop class components smaller than the class floor *and* below the confidence ceiling.

    Without ``probs`` the confidence clause counts as satisfied, so removal
    is by size alone.
    """
    rules = rules or PostprocRules()
    if probs is not None:
        require_same_geometry(labels, probs)
    vv = voxel_volume_mm3(labels.spacing)
    src = labels.voxels
    out = np.array(src, order="F")
    for code, name in CLASS_NAMES.items():
        floor = rules.min_volume_mm3[name]
        ids, k = label_array(src == code, rules.connectivity)
        if k == 0:
            continue
        flat = ids.ravel(order="F")
        counts = np.bincount(flat, minlength=k + 1)
        small = counts * vv < floor
        small[0] = False
        if not small.any():
            continue
        if probs is not None:
            conf = probs.channel(CLASS_CONFIDENCE_REGION[code]).ravel(order="F").astype(np.float64)
            sums = np.bincount(flat, weights=conf, minlength=k + 1)
            with np.errstate(invalid="ignore", divide="ignore"):
                mean = sums / counts
            small &= mean < rules.confidence_ceiling
        out[small[ids]] = BACKGROUND
    return LabelVolume(out, labels.spacing)


def center_fill(labels: LabelVolume) -> LabelVolume:
    """Relabel every voxel enclosed by enhancing tumour as necrotic core."""
    holes = interior_holes_array(labels.voxels == ET)
    if not holes.any():
        return labels
    out = np.array(labels.voxels, order="F")
    out[holes] = NCR
    return LabelVolume(out, labels.spacing)


def ensemble_mean(inputs: Sequence[ProbVolume]) -> ProbVolume:
    inputs = list(inputs)
    if not inputs:
        raise EmptyEnsemble("ensemble needs at least one probability volume")
    require_same_geometry(*inputs)
    if len(inputs) == 1:
        return inputs[0]
    chans = []
    for c in range(3):
        acc = np.zeros(inputs[0].shape, dtype=np.float64, order="F")
        for p in inputs:
            acc += p.channels[c]
        chans.append(np.clip(acc / len(inputs), 0.0, 1.0))
    return ProbVolume(chans, inputs[0].spacing)


def majority_vote(inputs: Sequence[LabelVolume]) -> LabelVolume:
    """Label-level fusion: a voxel joins a region when a strict majority of inputs agree."""
    inputs = list(inputs)
    if not inputs:
        raise EmptyEnsemble("vote needs at least one label volume")
    require_same_geometry(*inputs)
    n = len(inputs)
    votes = {}
    for r in REGIONS:
        acc = np.zeros(inputs[0].shape, dtype=np.int32, order="F")
        for lab in inputs:
            acc += compose_region(lab, r).voxels
        votes[r] = 2 * acc > n
    out = np.zeros(inputs[0].shape, dtype=np.uint8, order="F")
    out[votes[RegionId.WT]] = ED
    out[votes[RegionId.TC]] = NCR
    out[votes[RegionId.ET]] = ET
    return LabelVolume(out, inputs[0].spacing)


@dataclass(frozen=True)
class PipelineStages:
    ensemble: bool = True  # False: keep only the first fold
    threshold: bool = True  # False: fixed 0.5 thresholds
    region_removal: bool = True
    center_fill: bool = True
    ensemble_mode: str = "mean"  # or "vote"


def _postprocess_one(probs: ProbVolume, rules: PostprocRules, stages: PipelineStages) -> LabelVolume:
    th_rules = rules if stages.threshold else replace(rules, thresholds={"WT": 0.5, "TC": 0.5, "ET": 0.5})
    labels = threshold_compose(probs, th_rules)
    if stages.region_removal and rules.region_removal:
        labels = remove_small_regions(labels, probs, rules)
    if stages.center_fill and rules.center_fill:
        labels = center_fill(labels)
    return labels


def run_pipeline(probs, rules: PostprocRules | None = None, stages: PipelineStages | None = None) -> LabelVolume:
    """ensemble -> threshold -> region removal -> centre fill.

    ``probs`` is a ProbVolume or a list of fold outputs.  With
    ``ensemble_mode="vote"`` each fold is post-processed on its own and the
    resulting label maps are fused by majority vote.
    """
    rules = rules or PostprocRules()
    stages = stages or PipelineStages()
    folds = [probs] if isinstance(probs, ProbVolume) else list(probs)
    if not folds:
        raise EmptyEnsemble("no probability volumes given")
    if len(folds) > 1 and stages.ensemble_mode == "vote":
        require_same_geometry(*folds)
        return majority_vote([_postprocess_one(p, rules, stages) for p in folds])
    if stages.ensemble_mode not in ("mean", "vote"):
        raise ValueError(f"unknown ensemble mode {stages.ensemble_mode!r}")
    merged = ensemble_mean(folds) if stages.ensemble or len(folds) == 1 else folds[0]
    return _postprocess_one(merged, rules, stages)
