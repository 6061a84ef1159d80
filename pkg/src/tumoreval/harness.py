"""Batch evaluation, post-processing and ensembling over directories of NIfTI files."""
from __future__ import annotations

import csv
import json
import logging
import math
import re
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from . import __version__
from .errors import DuplicateCaseId, NoPairsFound
from .metrics import CaseMetrics, LesionKind, LesionwiseParams, evaluate_case
from .nifti import read_label_volume, read_prob_volume, write_label_volume, write_prob_volume
from .postproc import PipelineStages, PostprocRules, ensemble_mean, run_pipeline
from .volume import REGIONS

log = logging.getLogger(__name__)

NIFTI_SUFFIXES = (".nii", ".nii.gz")
METRICS = ("dice", "hd95", "lw_dice", "lw_hd95")
CSV_COLUMNS = ["case_id", "region", "dice", "hd95", "lw_dice", "lw_hd95", "n_gt_lesions", "n_tp", "n_fn", "n_fp", "error"]


def case_id_from_name(name: str, pattern: str | None = None) -> str | None:
    if pattern is None:
        return name.split(".", 1)[0]
    m = re.search(pattern, name)
    if m is None:
        return None
    return m.group(1) if m.groups() else m.group(0)


def _scan(directory: Path, pattern: str | None) -> dict[str, Path]:
    found: dict[str, Path] = {}
    for p in sorted(directory.iterdir()):
        if not p.is_file() or not p.name.endswith(NIFTI_SUFFIXES):
            continue
        cid = case_id_from_name(p.name, pattern)
        if cid is None:
            continue
        if cid in found:
            raise DuplicateCaseId(f"{found[cid].name} and {p.name} both map to case id {cid!r}")
        found[cid] = p
    return found


def pair_cases(pred_dir, gt_dir, pattern: str | None = None) -> list[tuple[str, Path, Path]]:
    """Match prediction and ground-truth files by case id, sorted by id."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise NoPairsFound(f"{d} is not a directory")
    preds = _scan(pred_dir, pattern)
    gts = _scan(gt_dir, pattern)
    common = sorted(set(preds) & set(gts))
    only_pred = sorted(set(preds) - set(gts))
    only_gt = sorted(set(gts) - set(preds))
    if only_pred:
        log.warning("predictions without ground truth: %s", ", ".join(only_pred))
    if only_gt:
        log.warning("ground truth without predictions: %s", ", ".join(only_gt))
    if not common:
        raise NoPairsFound(f"no case ids shared between {pred_dir} and {gt_dir}")
    return [(cid, preds[cid], gts[cid]) for cid in common]


@dataclass
class CaseResult:
    case_id: str
    metrics: CaseMetrics | None = None
    error: str | None = None


def _evaluate_pair(job) -> CaseResult:
    case_id, pred_path, gt_path, params, mapping = job
    try:
        pred = read_label_volume(pred_path, mapping)
        gt = read_label_volume(gt_path, mapping)
        return CaseResult(case_id, evaluate_case(pred, gt, params, case_id=case_id))
    except Exception as exc:  # one bad case must not sink the batch
        return CaseResult(case_id, error=f"{type(exc).__name__}: {exc}")


def run_parallel(fn: Callable, jobs: Sequence, workers: int = 1) -> list:
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if workers == 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def case_rows(result: CaseResult) -> list[dict[str, Any]]:
    rows = []
    for region in REGIONS:
        row: dict[str, Any] = {"case_id": result.case_id, "region": region.value}
        if result.metrics is None:
            row.update({k: None for k in CSV_COLUMNS[2:-1]})
            row["error"] = result.error
        else:
            m = result.metrics[region]
            row.update(
                dice=m.legacy_dice,
                hd95=m.legacy_hd95,
                lw_dice=m.lesionwise_dice,
                lw_hd95=m.lesionwise_hd95,
                n_gt_lesions=m.n_gt_lesions,
                n_tp=m.n_kind(LesionKind.TP),
                n_fn=m.n_kind(LesionKind.FN),
                n_fp=m.n_kind(LesionKind.FP),
                error=None,
            )
        rows.append(row)
    return rows


def _summary(values: list[float]) -> dict[str, float | int | None]:
    if not values:
        return {"n": 0, "mean": None, "median": None, "std": None}
    return {
        "n": len(values),
        "mean": math.fsum(values) / len(values),
        "median": statistics.median(values),
        "std": statistics.pstdev(values),
    }


def aggregate(rows: Iterable[dict[str, Any]]) -> dict[str, dict[str, dict]]:
    """Per-region mean/median/std of every metric over successful rows, plus the
    across-region average of the means ("Avg")."""
    rows = [r for r in rows if not r.get("error")]
    out: dict[str, dict[str, dict]] = {}
    for region in REGIONS:
        sel = [r for r in rows if r["region"] == region.value]
        out[region.value] = {m: _summary([float(r[m]) for r in sel]) for m in METRICS}
    avg = {}
    for m in METRICS:
        means = [out[r.value][m]["mean"] for r in REGIONS]
        avg[m] = {"mean": None if None in means else math.fsum(means) / len(means)}
    out["Avg"] = avg
    return out


@dataclass
class DatasetReport:
    results: list[CaseResult]
    config: dict[str, Any] = field(default_factory=dict)
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    @property
    def rows(self) -> list[dict[str, Any]]:
        return [row for r in self.results for row in case_rows(r)]

    @property
    def aggregates(self) -> dict:
        return aggregate(self.rows)

    @property
    def n_failed(self) -> int:
        return sum(r.error is not None for r in self.results)

    def to_json_dict(self) -> dict[str, Any]:
        cases = []
        for res in self.results:
            entry: dict[str, Any] = {"case_id": res.case_id, "error": res.error, "regions": {}}
            if res.metrics is not None:
                for row in case_rows(res):
                    region = row["region"]
                    entry["regions"][region] = {k: row[k] for k in CSV_COLUMNS[2:-1]}
                    entry["regions"][region]["lesions"] = [
                        rec.to_dict() for rec in res.metrics[region].lesion_records
                    ]
            cases.append(entry)
        return {
            "metadata": {
                "tool": "tumoreval",
                "version": __version__,
                "timestamp": self.timestamp,
                "config": self.config,
            },
            "cases": cases,
            "aggregates": self.aggregates,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, allow_nan=False) + "\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for row in self.rows:
                # repr keeps the shortest round-tripping float text
                w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in row.items()})

    def format_table(self) -> str:
        agg = self.aggregates
        lines = []
        header = f"{'':<10}{'HD95 (mm)':>36}   {'Dice Score (%)':>36}"
        sub = f"{'':<10}" + "".join(f"{c:>9}" for c in ("ET", "TC", "WT", "Avg.")) + "   " + "".join(
            f"{c:>9}" for c in ("ET", "TC", "WT", "Avg.")
        )
        lines += [header, sub]
        for label, hd_key, dice_key in (("Legacy", "hd95", "dice"), ("Lesion", "lw_hd95", "lw_dice")):
            cells = []
            for key in (hd_key, dice_key):
                vals = [agg[r][key]["mean"] for r in ("ET", "TC", "WT")] + [agg["Avg"][key]["mean"]]
                cells.append("".join(f"{'n/a' if v is None else format(v, '.2f'):>9}" for v in vals))
            lines.append(f"{label:<10}{cells[0]}   {cells[1]}")
        lines.append(f"{len(self.results)} cases, {self.n_failed} failed")
        return "\n".join(lines)


def evaluate_dataset(
    pairs: Sequence[tuple[str, Path, Path]],
    params: LesionwiseParams | None = None,
    workers: int = 1,
    mapping: dict[int, int] | None = None,
    config: dict[str, Any] | None = None,
) -> DatasetReport:
    params = params or LesionwiseParams()
    jobs = [(cid, Path(p), Path(g), params, mapping) for cid, p, g in sorted(pairs, key=lambda t: t[0])]
    results = run_parallel(_evaluate_pair, jobs, workers)
    results.sort(key=lambda r: r.case_id)
    return DatasetReport(results, config or {})


def _postprocess_job(job) -> tuple[str, str | None]:
    case_id, inputs, out_path, rules, stages, channel_order = job
    try:
        folds = [read_prob_volume(p, channel_order) for p in inputs]
        labels = run_pipeline(folds, rules, stages)
        write_label_volume(out_path, labels)
        return case_id, None
    except Exception as exc:
        return case_id, f"{type(exc).__name__}: {exc}"


def postprocess_dataset(
    fold_dirs: Sequence[Path],
    out_dir: Path,
    rules: PostprocRules,
    stages: PipelineStages,
    pattern: str | None = None,
    channel_order=("WT", "TC", "ET"),
    workers: int = 1,
) -> list[tuple[str, str | None]]:
    """Post-process every case of the first fold directory, ensembling across folds.

    A case missing from any other fold is reported as an error naming the path.
    """
    fold_dirs = [Path(d) for d in fold_dirs]
    scans = []
    for d in fold_dirs:
        if not d.is_dir():
            raise NoPairsFound(f"{d} is not a directory")
        scans.append(_scan(d, pattern))
    if not scans[0]:
        raise NoPairsFound(f"no NIfTI files found in {fold_dirs[0]}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    errors = []
    for cid in sorted(scans[0]):
        missing = [str(d) for d, s in zip(fold_dirs, scans) if cid not in s]
        if missing:
            errors.append((cid, f"missing input for case {cid!r} in {', '.join(missing)}"))
            continue
        inputs = [s[cid] for s in scans]
        jobs.append((cid, inputs, out_dir / f"{cid}.nii.gz", rules, stages, tuple(channel_order)))
    results = run_parallel(_postprocess_job, jobs, workers) + errors
    return sorted(results)


def ensemble_files(inputs: Sequence, out_path, channel_order=("WT", "TC", "ET")) -> None:
    probs = [read_prob_volume(p, channel_order) for p in inputs]
    write_prob_volume(out_path, ensemble_mean(probs), channel_order)
