"""Command-line entry point: ``tumoreval {evaluate,postprocess,ensemble,fixtures}``.

Exit codes: 0 success, 1 a case or input failed, 2 usage/config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import TumorEvalError
from .fixtures import FixtureSpec, generate
from .harness import ensemble_files, evaluate_dataset, pair_cases, postprocess_dataset
from .metrics import LesionwiseParams
from .morphology import Connectivity
from .nifti import read_prob_volume, write_label_volume, write_prob_volume
from .postproc import PipelineStages, PostprocRules, run_pipeline
from .volume import DEFAULT_REMAP

log = logging.getLogger("tumoreval")


def parse_min_mm3(text) -> dict[str, float]:
    """``"ncr=75,et=75,ed=500"`` (or a dict) -> {"NCR": 75.0, ...}; unspecified classes keep defaults."""
    out = dict(PostprocRules().min_volume_mm3)
    items = text.items() if isinstance(text, dict) else (kv.split("=", 1) for kv in str(text).split(",") if kv.strip())
    for k, v in items:
        key = k.strip().upper()
        if key not in out:
            raise argparse.ArgumentTypeError(f"unknown class {k!r} in --min-mm3 (use ncr, et, ed)")
        try:
            out[key] = float(v)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad volume {v!r} for {k}") from None
    return out


def parse_label_map(text) -> dict[int, int]:
    """``"4:3"`` -> identity on 0..3 plus 4 -> 3."""
    mapping = {c: c for c in range(4)}
    items = text.items() if isinstance(text, dict) else (kv.split(":", 1) for kv in str(text).split(",") if kv.strip())
    try:
        for k, v in items:
            mapping[int(k)] = int(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad label map {text!r}; expected e.g. 4:3") from None
    return mapping


def _channel_order(text) -> tuple[str, ...]:
    parts = tuple(p.strip().upper() for p in (text.split(",") if isinstance(text, str) else text))
    if sorted(parts) != ["ET", "TC", "WT"]:
        raise argparse.ArgumentTypeError(f"channel order must permute WT,TC,ET, got {text!r}")
    return parts


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON document of option defaults; flags override it")
    p.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_lesion_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--connectivity", type=int, choices=(6, 18, 26), default=26)
    p.add_argument("--dilation-mm", type=float, default=1.0)
    p.add_argument("--penalty-mm", type=float, default=None, help="FN/FP HD95 penalty (default: volume diagonal)")
    p.add_argument("--percentile", type=float, default=95.0)


def _add_rule_opts(p: argparse.ArgumentParser) -> None:
    d = PostprocRules()
    p.add_argument("--t-wt", type=float, default=d.thresholds["WT"])
    p.add_argument("--t-tc", type=float, default=d.thresholds["TC"])
    p.add_argument("--t-et", type=float, default=d.thresholds["ET"])
    p.add_argument("--min-mm3", type=parse_min_mm3, default=dict(d.min_volume_mm3), help="e.g. ncr=75,et=75,ed=500")
    p.add_argument("--confidence", type=float, default=d.confidence_ceiling, help="mean-confidence ceiling for removal")
    p.add_argument("--no-center-fill", action="store_true")
    p.add_argument("--no-region-removal", action="store_true")
    p.add_argument("--connectivity", type=int, choices=(6, 18, 26), default=int(d.connectivity))
    p.add_argument("--channel-order", type=_channel_order, default=("WT", "TC", "ET"))


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="tumoreval", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    ev = sub.add_parser("evaluate", help="score predicted label maps against ground truth")
    ev.add_argument("--pred-dir", type=Path)
    ev.add_argument("--gt-dir", type=Path)
    ev.add_argument("--out", type=Path, help="output directory for report.csv / report.json")
    ev.add_argument("--format", choices=("csv", "json", "both"), default="both")
    ev.add_argument("--pattern", default=None, help="regex extracting the case id from file names")
    ev.add_argument("--label-map", type=parse_label_map, default=dict(DEFAULT_REMAP), help="raw:canonical code pairs, e.g. 4:3")
    ev.add_argument("--workers", type=int, default=1)
    _add_lesion_opts(ev)
    _add_common(ev)
    subs["evaluate"] = ev

    pp = sub.add_parser("postprocess", help="turn region probabilities into label maps")
    pp.add_argument("--pred-dir", type=Path, action="append", help="directory of 4D probability maps; repeat per fold")
    pp.add_argument("--input", type=Path, action="append", help="single-case probability file; repeat per fold")
    pp.add_argument("--out", type=Path, help="output directory (with --pred-dir) or file (with --input)")
    pp.add_argument("--pattern", default=None)
    pp.add_argument("--ensemble-mode", choices=("mean", "vote"), default="mean")
    pp.add_argument("--workers", type=int, default=1)
    _add_rule_opts(pp)
    _add_common(pp)
    subs["postprocess"] = pp

    en = sub.add_parser("ensemble", help="average fold probability maps into one 4D file")
    en.add_argument("--input", type=Path, action="append")
    en.add_argument("--out", type=Path)
    en.add_argument("--channel-order", type=_channel_order, default=("WT", "TC", "ET"))
    _add_common(en)
    subs["ensemble"] = en

    fx = sub.add_parser("fixtures", help="write a synthetic case described by a fixture spec")
    fx.add_argument("--spec", type=Path, help="JSON fixture spec")
    fx.add_argument("--out", type=Path, help="output directory")
    fx.add_argument("--name", default="case")
    _add_common(fx)
    subs["fixtures"] = fx
    return parser, subs


def _apply_config(args, argv, parser, subs) -> argparse.Namespace:
    if not args.config:
        return args
    sp = subs[args.command]
    try:
        doc = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        sp.error(f"cannot read config {args.config}: {exc}")
    if not isinstance(doc, dict):
        sp.error("config must be a JSON object")
    known = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("help", "config"):
            sp.error(f"unknown config key {key!r}")
        action = known[dest]
        try:
            if action.type is not None and not isinstance(value, (list, bool)) and action.type is not Path:
                value = action.type(value)
            elif action.type is Path:
                value = [Path(v) for v in value] if isinstance(value, list) else Path(value)
        except (argparse.ArgumentTypeError, TypeError, ValueError) as exc:
            sp.error(f"config key {key!r}: {exc}")
        if isinstance(action, argparse._AppendAction) and not isinstance(value, list):
            value = [value]
        defaults[dest] = value
    sp.set_defaults(**defaults)
    return parser.parse_args(argv)


def _rules(args) -> PostprocRules:
    return PostprocRules(
        min_volume_mm3=args.min_mm3,
        confidence_ceiling=args.confidence,
        thresholds={"WT": args.t_wt, "TC": args.t_tc, "ET": args.t_et},
        center_fill=not args.no_center_fill,
        region_removal=not args.no_region_removal,
        connectivity=Connectivity(args.connectivity),
    )


def _lesion_params(args) -> LesionwiseParams:
    return LesionwiseParams(
        dilation_radius_mm=args.dilation_mm,
        connectivity=Connectivity(args.connectivity),
        fn_fp_hd95_penalty_mm=args.penalty_mm,
        percentile=args.percentile,
    )


def effective_config(args) -> dict:
    if args.command == "evaluate":
        return {
            "command": "evaluate",
            "pred_dir": str(args.pred_dir),
            "gt_dir": str(args.gt_dir),
            "pattern": args.pattern,
            "label_map": {str(k): v for k, v in sorted(args.label_map.items())},
            "workers": args.workers,
            "lesionwise": _lesion_params(args).to_dict(),
        }
    if args.command == "postprocess":
        r = _rules(args)
        return {
            "command": "postprocess",
            "t_wt": r.thresholds["WT"],
            "t_tc": r.thresholds["TC"],
            "t_et": r.thresholds["ET"],
            "min_mm3": r.min_volume_mm3,
            "confidence": r.confidence_ceiling,
            "center_fill": r.center_fill,
            "region_removal": r.region_removal,
            "connectivity": int(r.connectivity),
            "channel_order": list(args.channel_order),
            "ensemble_mode": args.ensemble_mode,
            "workers": args.workers,
        }
    if args.command == "ensemble":
        return {"command": "ensemble", "inputs": [str(p) for p in args.input or []], "channel_order": list(args.channel_order)}
    return {"command": args.command, "spec": str(args.spec)}


def _need(sp, args, *names):
    missing = [n for n in names if getattr(args, n) in (None, [])]
    if missing:
        sp.error("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def cmd_evaluate(args, sp) -> int:
    _need(sp, args, "pred_dir", "gt_dir")
    if args.workers < 1:
        sp.error("--workers must be >= 1")
    if args.out is not None and args.out.resolve() in (args.pred_dir.resolve(), args.gt_dir.resolve()):
        sp.error("--out must differ from the input directories")
    try:
        params = _lesion_params(args)
    except ValueError as exc:
        sp.error(str(exc))
    pairs = pair_cases(args.pred_dir, args.gt_dir, args.pattern)
    report = evaluate_dataset(pairs, params, args.workers, args.label_map, effective_config(args))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        if args.format in ("csv", "both"):
            report.write_csv(args.out / "report.csv")
        if args.format in ("json", "both"):
            report.write_json(args.out / "report.json")
    print(report.format_table())
    for r in report.results:
        if r.error:
            print(f"error: {r.case_id}: {r.error}", file=sys.stderr)
    return 1 if report.n_failed else 0


def cmd_postprocess(args, sp) -> int:
    if args.workers < 1:
        sp.error("--workers must be >= 1")
    try:
        rules = _rules(args)
    except ValueError as exc:
        sp.error(str(exc))
    stages = PipelineStages(ensemble_mode=args.ensemble_mode)
    if args.input:
        _need(sp, args, "out")
        folds = [read_prob_volume(p, args.channel_order) for p in args.input]
        args.out.parent.mkdir(parents=True, exist_ok=True)
        write_label_volume(args.out, run_pipeline(folds, rules, stages))
        return 0
    _need(sp, args, "pred_dir", "out")
    results = postprocess_dataset(args.pred_dir, args.out, rules, stages, args.pattern, args.channel_order, args.workers)
    failed = [(cid, err) for cid, err in results if err]
    for cid, err in failed:
        print(f"error: {cid}: {err}", file=sys.stderr)
    print(f"{len(results) - len(failed)} cases written to {args.out}, {len(failed)} failed")
    return 1 if failed else 0


def cmd_ensemble(args, sp) -> int:
    _need(sp, args, "input", "out")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    ensemble_files(args.input, args.out, args.channel_order)
    return 0


def cmd_fixtures(args, sp) -> int:
    _need(sp, args, "spec", "out")
    try:
        spec = FixtureSpec.from_dict(json.loads(args.spec.read_text()))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        sp.error(f"bad fixture spec {args.spec}: {exc}")
    labels, probs = generate(spec)
    args.out.mkdir(parents=True, exist_ok=True)
    write_label_volume(args.out / f"{args.name}_labels.nii.gz", labels)
    write_prob_volume(args.out / f"{args.name}_probs.nii.gz", probs)
    return 0


COMMANDS = {"evaluate": cmd_evaluate, "postprocess": cmd_postprocess, "ensemble": cmd_ensemble, "fixtures": cmd_fixtures}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    args = _apply_config(args, argv, parser, subs)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.print_config:
        print(json.dumps(effective_config(args), indent=2))
        return 0
    try:
        return COMMANDS[args.command](args, subs[args.command])
    except TumorEvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
