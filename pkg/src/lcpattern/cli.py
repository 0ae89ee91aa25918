"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data or schema error, 3 numerical
failure. The default output directory comes from ``LCPATTERN_OUT``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .config import OUT_ENV, PipelineConfig
from .errors import LcPatternError, ValidationError
from .ingest import write_recording
from .kernels import BACKEND
from .synthetic import ScenarioSpec, generate_synthetic, staged_lane_change_spec

logger = logging.getLogger("lcpattern")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        if "-" in text and "," not in text:
            lo, hi = (int(v) for v in text.split("-"))
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected '1-6' or '1,2,3', got {text!r}") from None


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline settings (override the config file)")
    g.add_argument("-c", "--config", help="key = value config file")
    g.add_argument("--input", dest="inputs", action="append", metavar="PATH",
                   help="highD directory or *_tracks.csv file (repeatable)")
    g.add_argument("--synthetic", metavar="SPEC", help="'staged' or a ScenarioSpec JSON file")
    g.add_argument("--synthetic-seed", type=int)
    g.add_argument("--smooth-window", type=int)
    g.add_argument("--type-filter", metavar="EGO,POR,TA",
                   help="vehicle class triple such as PC,PC,PC, or 'any'")
    g.add_argument("--min-frames", type=int)
    g.add_argument("--l", type=int, help="resampled primitive length")
    g.add_argument("--n-max", type=int)
    g.add_argument("--model-selection", choices=("max-ll", "paper-literal", "bic"))
    g.add_argument("--decode", choices=("viterbi", "posterior-argmax"))
    g.add_argument("--n-mix", type=int)
    g.add_argument("--reg", type=float)
    g.add_argument("--hmm-init", choices=("kmeans", "segments", "both"),
                   help="EM starting partition(s); the best fit is kept")
    g.add_argument("--hmm-restarts", type=int, help="number of K-means starts per fit")
    g.add_argument("--k", type=int)
    g.add_argument("--k-range", type=_int_list, metavar="LO-HI")
    g.add_argument("--center", choices=("dba", "medoid", "euclidean"))
    g.add_argument("--max-iters", type=int)
    g.add_argument("--ttc-cap", type=float)
    g.add_argument("--typing-seed", type=int)
    g.add_argument("--hmm-seed", type=int)
    g.add_argument("--cluster-seed", type=int)
    g.add_argument("-o", "--output-dir", help=f"output directory (default ${OUT_ENV} or lcpattern_out)")
    g.add_argument("-j", "--jobs", type=int)
    g.add_argument("--save-config", metavar="PATH", help="write the effective config and continue")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lcpattern", description="Lane-change interaction patterns and risk.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in pipeline.STAGES + ("run",):
        target = "the whole pipeline" if name == "run" else f"stages up to {name}"
        p = sub.add_parser(name, help=f"run {target} (cached stages are reused)")
        _add_config_flags(p)
    p = sub.add_parser("report", help="print counts and per-cluster tables of a finished run")
    p.add_argument("run_dir", nargs="?", help="output directory of a run")
    p = sub.add_parser("synth", help="write a synthetic recording as highD CSV files")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--staged", action="store_true", help="built-in single lane-change scenario")
    src.add_argument("--spec", help="ScenarioSpec JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-std", type=float, help="override the spec's position noise")
    p.add_argument("-o", "--output-dir", required=True)
    return parser


def config_from_args(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    data = cfg.to_dict()
    for key in data:
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if args.type_filter is not None:
        data["type_filter"] = None if args.type_filter == "any" else args.type_filter.split(",")
    if args.inputs:
        data["synthetic"] = None
    elif args.synthetic:
        data["inputs"] = []
    return PipelineConfig.from_dict(data).validate()


def _cmd_pipeline(args) -> int:
    try:
        cfg = config_from_args(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.save_config:
        cfg.save(args.save_config)
    until = "risk" if args.command == "run" else args.command
    res = pipeline.run(cfg, until)
    for stage, hit in res.cache_hits.items():
        print(f"{stage:<8} {'cache hit' if hit else 'done'}")
    print(json.dumps(res.manifest["counts"], sort_keys=True))
    print(f"artifacts in {res.output_dir}")
    return EXIT_OK


def _cmd_report(args) -> int:
    from .config import default_output_dir

    sys.stdout.write(pipeline.report(args.run_dir or default_output_dir()))
    return EXIT_OK


def _cmd_synth(args) -> int:
    spec = staged_lane_change_spec() if args.staged else ScenarioSpec.from_json(args.spec)
    if args.noise_std is not None:
        spec.noise_std = args.noise_std
    syn = generate_synthetic(spec, args.seed)
    out = Path(args.output_dir)
    paths = write_recording(syn.recording, out)
    (out / f"{spec.recording_id}_spec.json").write_text(json.dumps(spec.to_dict(), indent=1))
    for p in paths:
        print(p)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handler = {"report": _cmd_report, "synth": _cmd_synth}.get(args.command, _cmd_pipeline)
    try:
        return handler(args)
    except LcPatternError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
