"""Command-line entry point: ``qaa <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data or config error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from threadpoolctl import threadpool_limits

from .checks import SUITES
from .config import load_config
from .exceptions import ConfigError, ContractViolation, NumericError, QAAError
from .fusion import FUSION_KINDS
from .metrics import evaluate, read_eval, write_report
from .model import QAAClassifier, load_checkpoint, save_checkpoint
from .object_map import GridSpec, load_masks, rasterize_instances, read_maps
from .prior import (
    accumulate_counts,
    heatmap_svg,
    normalize_counts,
    read_count_grid,
    threshold_sweep,
    threshold_to_map,
)
from .qtns import write_tensor
from .synth import build_split, read_split, write_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def worker_count() -> int:
    raw = os.environ.get("QAA_THREADS")
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"QAA_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"QAA_THREADS must be a positive integer, got {raw!r}")
    return n


def _thresholds(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise QAAError(f"cannot write {path}: {exc.strerror}") from None


# -- commands ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    d = cfg.data
    splits = {
        split: build_split(split, n, seed=d.seed, image=d.image, grid=d.grid_spec, d_v=d.d_v,
                           noise=d.noise, recall=d.recall)
        for split, n in (("train", d.n_train), ("val", d.n_val))
    }
    manifest = write_dataset(splits, args.out, image=d.image, meta={"config": cfg.to_dict()})
    for split, info in manifest["splits"].items():
        print(f"{split}: {info['records']} records {info['qtypes']}")
    return EXIT_OK


def cmd_rasterize(args) -> int:
    grid = GridSpec.parse(args.grid)
    masks = load_masks(args.masks)
    groups: dict[str, list] = {}
    for m in masks:
        groups.setdefault(m.image_id, []).append(m)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        maps = list(pool.map(lambda ms: rasterize_instances(ms, grid, args.tau, args.min_score), groups.values()))
    lines = [json.dumps({"image_id": image_id, **omap.to_json()}) for image_id, omap in zip(groups, maps)]
    _write_text(args.out, "".join(line + "\n" for line in lines))
    print(f"{len(lines)} object maps from {len(masks)} masks")
    return EXIT_OK


def cmd_prior(args) -> int:
    counts = accumulate_counts(read_maps(args.maps))
    _write_text(args.out, json.dumps(counts.to_json()) + "\n")
    svg = args.svg or str(Path(args.out).with_suffix(".svg"))
    title = f"object presence over {counts.images_seen} images"
    _write_text(svg, heatmap_svg(normalize_counts(counts), counts.grid, title=title))
    print(f"{counts.images_seen} maps accumulated; heatmap {svg}")
    return EXIT_OK


def cmd_prior_map(args) -> int:
    counts = read_count_grid(args.prior)
    omap = threshold_to_map(normalize_counts(counts), counts.grid, args.threshold)
    _write_text(args.out, json.dumps(omap.to_json()) + "\n")
    print(f"threshold {args.threshold}: {omap.selected} of {counts.grid.g} cells selected")
    if args.sweep:
        print("threshold,selected")
        for theta, k in threshold_sweep(normalize_counts(counts), counts.grid, args.sweep):
            print(f"{theta},{k}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    records = read_split(args.data, "train")
    model = QAAClassifier(**cfg.estimator_params())
    model.fit(records, [r.answer for r in records])
    save_checkpoint(model, args.out, extra={"config": cfg.to_dict()})
    print(f"trained on {len(records)} records; loss {model.loss_curve_[0]:.4f} -> {model.loss_curve_[-1]:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    records = read_split(args.data, args.split)
    scores = model.decision_function(records)
    predictions = [model.answers_.answers[i] for i in scores.argmax(axis=1)]
    result = evaluate(predictions, records)
    write_report(result, args.csv, args.svg)
    if args.json:
        _write_text(args.json, json.dumps(result.to_json(), sort_keys=True) + "\n")
    if args.predictions:
        write_tensor(args.predictions, scores)
    print(f"accuracy {result.accuracy:.2f} on {len(records)} {args.split} records")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    if not args.all and not args.fusion:
        raise UsageError("grad-check: give --fusion KIND or --all")
    names = list(SUITES) if args.all else [f"fusion:{args.fusion}"]
    failed = []
    for name in names:
        report = SUITES[name]()
        status = "PASS" if report.passed else "FAIL"
        print(f"{name}: max relative error {report.max_error:.3e} {status}")
        if not report.passed:
            failed.append(name)
    if failed:
        raise ContractViolation(f"gradient check failed for {', '.join(failed)}")
    return EXIT_OK


def cmd_report(args) -> int:
    result = read_eval(args.eval)
    write_report(result, args.csv, args.svg)
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qaa", description="Question-agnostic attention VQA toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic train/val dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("rasterize", help="instance masks (JSONL) to object maps (JSONL)")
    p.add_argument("--masks", required=True)
    p.add_argument("--grid", default="14x14", help="RxC")
    p.add_argument("--tau", type=float, default=0.0, help="occupancy fraction a cell must exceed")
    p.add_argument("--min-score", type=float, default=0.5, help="drop masks scoring below this")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("prior", help="accumulate object maps into a count grid")
    p.add_argument("--maps", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", help="heatmap path (default: --out with .svg suffix)")
    p.set_defaults(func=cmd_prior)

    p = sub.add_parser("prior-map", help="threshold a count grid into a fixed object map")
    p.add_argument("--prior", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--sweep", type=_thresholds,
                   help="also print selected-cell counts for these thresholds, e.g. 0,0.1,0.5")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prior_map)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--csv")
    p.add_argument("--svg")
    p.add_argument("--json", help="also write the full evaluation as JSON")
    p.add_argument("--predictions", help="write answer scores as a QTNS tensor")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference gradient checks")
    p.add_argument("--fusion", choices=FUSION_KINDS)
    p.add_argument("--all", action="store_true", help="every fusion op, attention, encoder and full model")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("report", help="render CSV/SVG from an evaluation JSON")
    p.add_argument("--eval", required=True)
    p.add_argument("--csv")
    p.add_argument("--svg")
    p.set_defaults(func=cmd_report)
    return parser


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        with threadpool_limits(limits=worker_count()):
            return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, ContractViolation, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (QAAError, OSError, ValueError, KeyError) as exc:
        # ValueError/KeyError here come from malformed input files
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
