"""End-to-end stages behind the command-line tool: fit, train, predict, simulate, summarize."""

from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import __version__
from .cart import DecisionTree, RoutingStats, predict_table
from .config import PipelineConfig
from .errors import ConfigError, DataError, EmptyDataset, IncompatibleArtifact, JobClassError
from .features import candidate_variables, records_table
from .kvfile import read_kv
from .labeling import CLASS_NAMES, certainty_band_select, label_dataset, labels_at
from .mixture import MixtureModel, fit_em, from_sd, normal_logpdf
from .queuesim import METRIC_COLUMNS, Policy, SimJob, arrival_rate_for, gen_workload, metrics_row, simulate
from .selection import (
    ConfusionMetrics,
    band_vs_full_note,
    cross_validate,
    pick_operating_point,
    select_variables,
    sweep_thresholds,
)
from .trace import JobRecord, ParseReport, Schema, parse_trace, runtimes_log2

log = logging.getLogger(__name__)


def provenance(config_hash: str) -> dict:
    return {"tool": "jobclass", "version": __version__, "config_hash": config_hash}


def provenance_comment(config_hash: str) -> str:
    return f"# jobclass {__version__} config={config_hash}\n"


def model_fingerprint(model: MixtureModel) -> str:
    return hashlib.sha256(json.dumps(model.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@contextlib.contextmanager
def stage(name: str) -> Iterator[None]:
    """Prefix errors raised inside a pipeline stage with the stage name."""
    try:
        yield
    except JobClassError as exc:
        if not getattr(exc, "_stage_tagged", False):
            exc.args = (f"[{name}] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            exc._stage_tagged = True  # type: ignore[attr-defined]
        raise


def load_records(path: Path, schema: Schema, require_finish: bool = True) -> tuple[list[JobRecord], ParseReport]:
    records, report = parse_trace(path, schema, require_finish=require_finish)
    if not records:
        raise EmptyDataset(f"no usable records in {path} ({report.as_dict()})")
    return records, report


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def csv_text(header: Sequence[str], rows: Sequence[Mapping[str, object]] | Sequence[Sequence[object]], comment: str = "") -> str:
    buf = io.StringIO()
    buf.write(comment)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([row[h] for h in header] if isinstance(row, Mapping) else row)
    return buf.getvalue()


def _num(x: float | None) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


# ---------------------------------------------------------------- fit


def histogram_rows(y: np.ndarray, model: MixtureModel, bins: int) -> list[dict]:
    """Runtime histogram (log2 scale) with expected per-bin counts under each fitted component."""
    counts, edges = np.histogram(y, bins=bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    n = y.size
    short = n * (1 - model.pi) * np.exp(normal_logpdf(centers, model.mu1, model.var1)) * width
    long = n * model.pi * np.exp(normal_logpdf(centers, model.mu2, model.var2)) * width
    return [
        {
            "bin_left": _num(edges[i]),
            "bin_right": _num(edges[i + 1]),
            "count": int(counts[i]),
            "expected_short": _num(short[i]),
            "expected_long": _num(long[i]),
            "expected_mixture": _num(short[i] + long[i]),
        }
        for i in range(bins)
    ]


HISTOGRAM_COLUMNS = ("bin_left", "bin_right", "count", "expected_short", "expected_long", "expected_mixture")


@dataclass
class FitOutput:
    model: MixtureModel
    histogram: list[dict]
    report: ParseReport


def run_fit(cfg: PipelineConfig) -> FitOutput:
    cfg.require_paths("trace")
    with stage("parse"):
        records, report = load_records(cfg.trace, cfg.schema)  # type: ignore[arg-type]
    y = runtimes_log2(records)
    with stage("fit_em"):
        model = fit_em(y, cfg.em)
    return FitOutput(model, histogram_rows(y, model, cfg.histogram_bins), report)


def write_fit(out: FitOutput, cfg: PipelineConfig) -> list[Path]:
    h = cfg.fingerprint()
    model_path = cfg.output_dir / "mixture_model.json"
    hist_path = cfg.output_dir / "runtime_histogram.csv"
    write_text(model_path, out.model.to_json({"provenance": provenance(h), "parse_report": out.report.as_dict()}))
    write_text(hist_path, csv_text(HISTOGRAM_COLUMNS, out.histogram, provenance_comment(h)))
    return [model_path, hist_path]


def load_model(path: Path) -> MixtureModel:
    try:
        return MixtureModel.from_json(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read model {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise IncompatibleArtifact(f"malformed model file {path}: {exc}") from exc


# ---------------------------------------------------------------- train


@dataclass
class TrainOutput:
    report: dict
    tree: DecisionTree
    threshold: float
    roc_rows: list[dict]
    importance_rows: list[dict]
    model: MixtureModel


ROC_COLUMNS = ("threshold", "sensitivity", "one_minus_specificity", "total_misclassification", "tp", "fn", "fp", "tn")
IMPORTANCE_COLUMNS = ("rank", "variable", "mean_importance", "selected")


def run_train(cfg: PipelineConfig, model: MixtureModel) -> TrainOutput:
    cfg.require_paths("trace")
    schema = cfg.schema
    with stage("parse"):
        records, report = load_records(cfg.trace, schema)  # type: ignore[arg-type]
    variables = cfg.variables or candidate_variables(records, cfg.include_temporal)
    with stage("features"):
        unknown = [v for v in variables if v not in candidate_variables(records, True)]
        if unknown:
            raise ConfigError(f"unknown variables: {unknown}")
        table = records_table(records, variables)
    with stage("label"):
        labeled = label_dataset(model, records, 0.5)
    with stage("certainty_band_select"):
        band = certainty_band_select(model, labeled, cfg.band_k)
    with stage("cross_validate"):
        cv = cross_validate(table.take(band.indices), band.labels, variables, cfg.cv, cfg.grow)
        if not cv.iterations:
            raise DataError("every cross-validation iteration was skipped")
    with stage("select_variables"):
        selection = select_variables(cv, cfg.cv.baseline, cfg.cv.baseline_value)
    with stage("sweep_thresholds"):
        sweep = sweep_thresholds(
            table, labeled.gamma, selection.selected, cfg.threshold_grid, cfg.grow, cfg.prune_folds, cfg.seed
        )
        if not sweep.points:
            raise DataError("no threshold in the grid produced two classes")
    with stage("pick_operating_point"):
        choice = pick_operating_point(sweep.points, cfg.policy, model)
    tree = sweep.trees[choice.threshold]
    final = choice.metrics
    assert isinstance(final, ConfusionMetrics)

    validation: dict | None = None
    if cfg.validation_trace is not None:
        with stage("validate"):
            cfg.require_paths("validation_trace")
            vrecords, vreport = load_records(cfg.validation_trace, schema)
            vtable = records_table(vrecords, selection.selected)
            vlabels = labels_at(label_dataset(model, vrecords, 0.5).gamma, choice.threshold)
            predicted, _ = predict_table(tree, vtable)
            vm = ConfusionMetrics.from_labels(predicted, vlabels)
            validation = {"records": len(vrecords), "parse_report": vreport.as_dict(), "metrics": vm.as_dict()}

    roc_rows = [
        {
            "threshold": _num(p.mixture_threshold),
            "sensitivity": _num(p.sensitivity),
            "one_minus_specificity": _num(1.0 - p.specificity),
            "total_misclassification": _num(p.total_misclassification),
            "tp": p.metrics.tp if p.metrics else "",
            "fn": p.metrics.fn if p.metrics else "",
            "fp": p.metrics.fp if p.metrics else "",
            "tn": p.metrics.tn if p.metrics else "",
        }
        for p in sweep.points
    ]
    importance_rows = [
        {"rank": i + 1, "variable": v, "mean_importance": _num(s), "selected": int(v in selection.selected)}
        for i, (v, s) in enumerate(selection.ranking)
    ]
    h = cfg.fingerprint()
    report_doc = {
        "provenance": provenance(h),
        "parse_report": report.as_dict(),
        "mixture_model": model.to_dict(),
        "model_fingerprint": model_fingerprint(model),
        "candidate_variables": list(variables),
        "certainty_band": {
            "k": band.k,
            "selected": int(band.indices.size),
            "short": band.n_short,
            "long": band.n_long,
            "fraction": band.fraction,
        },
        "cross_validation": {
            "iterations_run": len(cv.iterations),
            "iterations_skipped": cv.skipped,
            "mean_misclassification": cv.mean_misclassification,
        },
        "variable_selection": selection.as_dict(),
        "fallback_variable_selection": selection.fallback,
        "roc": [dict(r) for r in roc_rows],
        "skipped_thresholds": sweep.skipped,
        "roc_evaluation": "resubstitution",
        "policy": cfg.policy.value,
        "operating_point": choice.as_dict(),
        "training_metrics": final.as_dict(),
        "band_vs_full": band_vs_full_note(cv, final.total_misclassification),
        "validation": validation,
        "tree": tree.to_dict(),
    }
    return TrainOutput(report_doc, tree, choice.threshold, roc_rows, importance_rows, model)


def write_train(out: TrainOutput, cfg: PipelineConfig) -> list[Path]:
    h = cfg.fingerprint()
    paths = {
        "report": cfg.output_dir / "report.json",
        "tree": cfg.output_dir / "tree.json",
        "roc": cfg.output_dir / "roc.csv",
        "importance": cfg.output_dir / "importance.csv",
    }
    write_text(paths["report"], json.dumps(out.report, indent=2) + "\n")
    write_text(
        paths["tree"],
        out.tree.to_json(
            {
                "threshold": out.threshold,
                "model_fingerprint": model_fingerprint(out.model),
                "provenance": provenance(h),
            }
        ),
    )
    write_text(paths["roc"], csv_text(ROC_COLUMNS, out.roc_rows, provenance_comment(h)))
    write_text(paths["importance"], csv_text(IMPORTANCE_COLUMNS, out.importance_rows, provenance_comment(h)))
    return list(paths.values())


# ---------------------------------------------------------------- predict


@dataclass
class PredictOutput:
    rows: list[dict]
    columns: tuple[str, ...]
    metrics: ConfusionMetrics | None
    routing: RoutingStats
    labeled_records: int


def load_tree(path: Path) -> tuple[DecisionTree, dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read tree {path}: {exc}") from exc
    except ValueError as exc:
        raise IncompatibleArtifact(f"malformed tree file {path}: {exc}") from exc
    return DecisionTree.from_dict(doc), doc


def run_predict(tree_path: Path, model_path: Path, trace_path: Path, schema: Schema) -> PredictOutput:
    tree, doc = load_tree(tree_path)
    model = load_model(model_path)
    expected = doc.get("model_fingerprint")
    if expected is not None and expected != model_fingerprint(model):
        raise IncompatibleArtifact(
            f"tree was trained against model {expected}, but {model_path} is {model_fingerprint(model)}"
        )
    threshold = float(doc.get("threshold", 0.5))
    with stage("parse"):
        records, _ = load_records(trace_path, schema, require_finish=False)
    table = records_table(records, tree.variables)
    stats = RoutingStats()
    predicted, prob = predict_table(tree, table, stats)
    has_runtime = np.array([r.runtime_log2 is not None for r in records])
    metrics = None
    columns: tuple[str, ...] = ("row", "predicted_class", "prob_long")
    if has_runtime.any():
        columns += ("runtime_log2", "gamma", "mixture_label")
        idx = np.flatnonzero(has_runtime)
        y = np.array([records[i].runtime_log2 for i in idx], dtype=float)
        labeled = label_dataset(model, y, threshold)
        metrics = ConfusionMetrics.from_labels(predicted[idx], labeled.label)
        gamma = np.full(len(records), math.nan)
        lab = np.full(len(records), -1)
        gamma[idx] = labeled.gamma
        lab[idx] = labeled.label
    rows = []
    for i, r in enumerate(records):
        row = {"row": i, "predicted_class": CLASS_NAMES[int(predicted[i])], "prob_long": _num(prob[i])}
        if "gamma" in columns:
            row["runtime_log2"] = _num(r.runtime_log2)
            row["gamma"] = _num(gamma[i])
            row["mixture_label"] = CLASS_NAMES[int(lab[i])] if lab[i] >= 0 else ""
        rows.append(row)
    return PredictOutput(rows, columns, metrics, stats, int(has_runtime.sum()))


def write_predict(out: PredictOutput, output_dir: Path, doc_hash: str) -> list[Path]:
    pred_path = output_dir / "predictions.csv"
    write_text(pred_path, csv_text(out.columns, out.rows, provenance_comment(doc_hash)))
    paths = [pred_path]
    summary: dict = {"provenance": provenance(doc_hash), "records": len(out.rows), "routing": out.routing.as_dict()}
    if out.metrics is not None:
        summary["labeled_records"] = out.labeled_records
        summary["metrics"] = out.metrics.as_dict()
    metrics_path = output_dir / "prediction_summary.json"
    write_text(metrics_path, json.dumps(summary, indent=2) + "\n")
    paths.append(metrics_path)
    return paths


# ---------------------------------------------------------------- simulate


SIM_KEYS = {
    "model",
    "pi",
    "mu1",
    "sd1",
    "mu2",
    "sd2",
    "arrival_rate",
    "utilization",
    "n_jobs",
    "servers",
    "servers_short",
    "misclassification",
    "seeds",
    "seed",
    "policies",
    "jobs_file",
    "output_dir",
}

SIM_COLUMNS = ("policy", "fn_rate", "fp_rate", "seed") + METRIC_COLUMNS


@dataclass
class Scenario:
    model: MixtureModel | None
    arrival_rate: float | None
    utilization: float
    n_jobs: int
    servers: int
    servers_short: int | None
    misclassification: list[tuple[float, float]]
    seeds: list[int]
    policies: list[Policy]
    jobs_file: Path | None
    output_dir: Path
    items: dict[str, str]

    def fingerprint(self) -> str:
        text = "\n".join(f"{k}={v}" for k, v in sorted(self.items.items()) if k not in ("output_dir",))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _parse_misclassification(text: str) -> list[tuple[float, float]]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            fn, fp = (float(x) for x in part.split(":"))
        except ValueError as exc:
            raise ConfigError(f"misclassification entries look like 'fn:fp', got {part!r}") from exc
        if not (0 <= fn <= 1 and 0 <= fp <= 1):
            raise ConfigError(f"misclassification rates must lie in [0, 1]: {part!r}")
        out.append((fn, fp))
    if not out:
        raise ConfigError("empty misclassification grid")
    return out


def load_scenario(path: Path, overrides: Mapping[str, str] | None = None) -> Scenario:
    items = read_kv(path)
    items.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
    unknown = set(items) - SIM_KEYS
    if unknown:
        raise ConfigError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
    base = Path(path).parent

    def rel(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else base / q

    try:
        model = None
        if items.get("model"):
            model = load_model(rel(items["model"]))
        elif all(k in items for k in ("pi", "mu1", "sd1", "mu2", "sd2")):
            model = from_sd(*(float(items[k]) for k in ("pi", "mu1", "sd1", "mu2", "sd2")))
        jobs_file = rel(items["jobs_file"]) if items.get("jobs_file") else None
        if model is None and jobs_file is None:
            raise ConfigError("scenario needs a model (model = file or pi/mu1/sd1/mu2/sd2) or a jobs_file")
        n_seeds = int(items.get("seeds", "1"))
        base_seed = int(items.get("seed", "0"))
        policies = [Policy(p.strip()) for p in items.get("policies", "single_fcfs,two_queue").split(",") if p.strip()]
        servers = int(items.get("servers", "1"))
        if servers < 1:
            raise ConfigError("servers must be >= 1")
        return Scenario(
            model=model,
            arrival_rate=float(items["arrival_rate"]) if items.get("arrival_rate") else None,
            utilization=float(items.get("utilization", "0.8")),
            n_jobs=int(items.get("n_jobs", "10000")),
            servers=servers,
            servers_short=int(items["servers_short"]) if items.get("servers_short") else None,
            misclassification=_parse_misclassification(items.get("misclassification", "0:0")),
            seeds=[base_seed + k for k in range(n_seeds)],
            policies=policies,
            jobs_file=jobs_file,
            output_dir=rel(items["output_dir"]) if items.get("output_dir") else Path("out"),
            items=items,
        )
    except ValueError as exc:
        raise ConfigError(f"bad scenario value: {exc}") from exc


def read_jobs_file(path: Path) -> list[SimJob]:
    names = {"SHORT": 0, "LONG": 1, "0": 0, "1": 1}
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read jobs file {path}: {exc}") from exc
    try:
        jobs = [
            SimJob(
                float(r["arrival_time"]),
                float(r["service_time"]),
                names[r["true_class"].strip().upper()],
                names[r["assigned_class"].strip().upper()],
            )
            for r in rows
        ]
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed jobs file {path}: {exc}") from exc
    return sorted(jobs, key=lambda j: j.arrival_time)


def run_simulation(sc: Scenario) -> list[dict]:
    rows: list[dict] = []
    if sc.jobs_file is not None:
        jobs = read_jobs_file(sc.jobs_file)
        for policy in sc.policies:
            m = simulate(jobs, policy, sc.servers, sc.servers_short)
            rows.append({"policy": policy.value, "fn_rate": "", "fp_rate": "", "seed": "", **metrics_row(m, len(jobs))})
        return rows
    assert sc.model is not None
    rate = sc.arrival_rate or arrival_rate_for(sc.model, sc.utilization, sc.servers)
    for fn, fp in sc.misclassification:
        for seed in sc.seeds:
            jobs = gen_workload(sc.model, rate, sc.n_jobs, (fn, fp), seed)
            for policy in sc.policies:
                m = simulate(jobs, policy, sc.servers, sc.servers_short, short_share=1 - sc.model.pi)
                rows.append({"policy": policy.value, "fn_rate": repr(fn), "fp_rate": repr(fp), "seed": seed, **metrics_row(m, len(jobs))})
    return rows


def write_simulation(rows: list[dict], sc: Scenario) -> Path:
    path = sc.output_dir / "simulation.csv"
    write_text(path, csv_text(SIM_COLUMNS, rows, provenance_comment(sc.fingerprint())))
    return path
