"""Command-line front end: ``jobclass fit|train|predict|simulate|summarize|synth``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 fit failure.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import PipelineConfig
from .errors import ConfigError, JobClassError
from .pipeline import (
    load_model,
    load_records,
    load_scenario,
    provenance,
    run_fit,
    run_predict,
    run_simulation,
    run_train,
    stage,
    write_fit,
    write_predict,
    write_simulation,
    write_text,
    write_train,
)
from .synthetic import TraceSpec, generate_trace
from .trace import Schema, summarize, write_dataset

log = logging.getLogger("jobclass")


def _add_common(p: argparse.ArgumentParser, grid: bool = False) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--output-dir", type=Path, help="directory for output files")
    p.add_argument("--trace", type=Path, help="trace file (overrides the config)")
    p.add_argument("--schema", type=Path, help="schema file (overrides the config)")
    if grid:
        p.add_argument("--threshold-grid", help="comma-separated mixture thresholds, e.g. 0.3,0.5,0.7")
        p.add_argument("--policy", choices=["youden", "min_error"], help="operating-point policy")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jobclass", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"jobclass {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the runtime mixture model")
    _add_common(p)

    p = sub.add_parser("train", help="label, select variables, sweep thresholds, write the tree")
    _add_common(p, grid=True)
    p.add_argument("--model", type=Path, help="mixture model file (default: <output-dir>/mixture_model.json)")
    p.add_argument("--validation-trace", type=Path, help="held-out trace scored with the final tree")

    p = sub.add_parser("predict", help="classify jobs with a trained tree")
    p.add_argument("--tree", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--trace", type=Path, required=True)
    p.add_argument("--schema", type=Path)
    p.add_argument("--output-dir", type=Path, default=Path("out"))

    p = sub.add_parser("simulate", help="run the queueing scenario")
    p.add_argument("--config", type=Path, required=True, help="scenario file")
    p.add_argument("--seed", type=int, help="first seed (overrides the scenario)")
    p.add_argument("--output-dir", type=Path)

    p = sub.add_parser("summarize", help="category, missing-value and runtime summary of a trace")
    _add_common(p)

    p = sub.add_parser("synth", help="write a synthetic trace with a known class structure")
    p.add_argument("--n", type=int, default=20000, help="number of jobs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="output trace file")
    p.add_argument("--no-signal", action="store_true", help="classes independent of every variable")
    return parser


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    overrides = {
        "seed": args.seed,
        "output_dir": args.output_dir,
        "trace": args.trace,
        "schema": args.schema,
        "threshold_grid": getattr(args, "threshold_grid", None),
        "policy": getattr(args, "policy", None),
        "validation_trace": getattr(args, "validation_trace", None),
    }
    return PipelineConfig.load(args.config, overrides)


def _report(paths: Sequence[Path]) -> None:
    for p in paths:
        print(p)


def cmd_fit(args: argparse.Namespace) -> int:
    cfg = _pipeline_config(args)
    out = run_fit(cfg)
    m = out.model
    log.info("fit: pi=%.4f mu1=%.4f sd1=%.4f mu2=%.4f sd2=%.4f", m.pi, m.mu1, m.sd1, m.mu2, m.sd2)
    _report(write_fit(out, cfg))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _pipeline_config(args)
    model_path = args.model or cfg.output_dir / "mixture_model.json"
    if not Path(model_path).exists():
        raise ConfigError(f"model file does not exist: {model_path}")
    model = load_model(model_path)
    out = run_train(cfg, model)
    op = out.report["operating_point"]
    log.info("train: threshold=%s sensitivity=%s specificity=%s", op["threshold"],
             out.report["training_metrics"]["sensitivity"], out.report["training_metrics"]["specificity"])
    _report(write_train(out, cfg))
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    for name in ("tree", "model", "trace"):
        if not getattr(args, name).exists():
            raise ConfigError(f"{name} file does not exist: {getattr(args, name)}")
    schema = Schema.load(args.schema) if args.schema else Schema()
    out = run_predict(args.tree, args.model, args.trace, schema)
    tree_doc = json.loads(args.tree.read_text(encoding="utf-8"))
    config_hash = tree_doc.get("provenance", {}).get("config_hash", "")
    _report(write_predict(out, args.output_dir, config_hash))
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    if not args.config.exists():
        raise ConfigError(f"scenario file does not exist: {args.config}")
    overrides = {"seed": args.seed}
    if args.output_dir is not None:
        overrides["output_dir"] = str(args.output_dir.resolve())
    sc = load_scenario(args.config, overrides)
    with stage("simulate"):
        rows = run_simulation(sc)
    _report([write_simulation(rows, sc)])
    return 0


def cmd_summarize(args: argparse.Namespace) -> int:
    cfg = _pipeline_config(args)
    cfg.require_paths("trace")
    with stage("parse"):
        records, report = load_records(cfg.trace, cfg.schema, require_finish=False)  # type: ignore[arg-type]
    summary = summarize(records, cfg.include_temporal)
    h = cfg.fingerprint()
    doc = {"provenance": provenance(h), **summary.as_dict()}
    report_lines = [f"{k}: {v}" for k, v in report.as_dict().items()]
    head = f"# jobclass {__version__} config={h}\n"
    paths = {
        "summary.txt": head + summary.to_text(),
        "summary.json": json.dumps(doc, indent=2) + "\n",
        "parse_report.txt": head + "\n".join(report_lines) + "\n",
        "parse_report.json": json.dumps({"provenance": provenance(h), **report.as_dict()}, indent=2) + "\n",
    }
    written = []
    for name, text in paths.items():
        write_text(cfg.output_dir / name, text)
        written.append(cfg.output_dir / name)
    _report(written)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    spec = TraceSpec(informative=(), flip_noise=0.43) if args.no_signal else TraceSpec()
    trace = generate_trace(args.n, args.seed, spec)
    buf = io.StringIO()
    write_dataset(trace.records, buf)
    write_text(args.out, buf.getvalue())
    _report([args.out])
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "train": cmd_train,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "summarize": cmd_summarize,
    "synth": cmd_synth,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except JobClassError as exc:
        print(f"jobclass {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
