"""Command-line interface.

Verbs:
    train                 train the micro model, save epoch checkpoints
    evaluate              full pipeline: train/load, score, emit reports
    analyze-checkpoints   accuracy-vs-map-similarity correlation tables
    score-external        score pre-computed maps from container files
    export-maps           run the pipeline and persist all maps

Exit codes: 0 success, 2 config error, 3 every metric cell undefined,
4 I/O or container error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from cose import harness
from cose.harness import ConfigError, ExternalMapsError, RunConfig
from cose.interchange import ContainerError
from cose.metrics import SsimParams

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNDEFINED = 3
EXIT_IO = 4


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=str, default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--methods", type=str, default=None, help="comma-separated method names")
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--ssim-mode", choices=("windowed", "global"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cose", description="Saliency-method reliability benchmark")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("train", "evaluate", "analyze-checkpoints", "export-maps"):
        _add_common(sub.add_parser(verb))
    p = sub.add_parser("score-external")
    _add_common(p)
    p.add_argument("maps_dir", nargs="?", default=None, help="directory of map containers")
    return parser


def load_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.methods is not None:
        overrides["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.threads is not None:
        overrides["threads"] = args.threads
    if getattr(args, "ssim_mode", None):
        overrides["ssim"] = SsimParams(
            c1=config.ssim.c1, c2=config.ssim.c2, window=config.ssim.window, mode=args.ssim_mode
        )
    return replace(config, **overrides) if overrides else config


def _all_cells_undefined(run) -> bool:
    if not run.reports:
        return True
    return all(r.consistency is None and r.sensitivity is None for r in run.reports.values())


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        out_dir = Path(config.out_dir)

        if args.verb == "train":
            data = harness.prepare_dataset(config)
            model, checkpoints = harness.prepare_model(config, data)
            paths = harness.save_checkpoints(checkpoints, out_dir / "checkpoints")
            for cp in checkpoints:
                print(f"epoch {cp.epoch:4d}  test accuracy {cp.test_accuracy:.4f}")
            print(f"saved {len(paths)} checkpoints to {out_dir / 'checkpoints'}")
            return EXIT_OK

        if args.verb == "evaluate":
            run = harness.run_evaluation(config)
        elif args.verb == "analyze-checkpoints":
            run = harness.run_checkpoint_analysis(config)
        elif args.verb == "export-maps":
            run, paths = harness.export_maps(config, out_dir)
            print(f"wrote {len(paths)} containers under {out_dir / 'maps'}")
        elif args.verb == "score-external":
            run = harness.score_external(config, args.maps_dir)
        else:  # pragma: no cover
            raise ConfigError(f"unknown verb {args.verb}")

        files = harness.emit_reports(run, out_dir)
        for name in sorted(files):
            print(f"{name}: {files[name]}")
        for m in sorted(run.reports):
            rep = run.reports[m]
            c = "NA" if rep.consistency is None else f"{rep.consistency:.4f}"
            s = "NA" if rep.sensitivity is None else f"{rep.sensitivity:.4f}"
            cose_s = "NA" if rep.cose is None else f"{rep.cose:.2f}%"
            print(f"{m:24s} consistency {c}  sensitivity {s}  COSE {cose_s}")
        if args.verb in ("evaluate", "score-external") and _all_cells_undefined(run):
            print("every metric cell is undefined", file=sys.stderr)
            return EXIT_UNDEFINED
        return EXIT_OK

    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContainerError, ExternalMapsError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
