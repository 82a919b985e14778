"""Job-trace ingestion: delimited text -> typed JobRecords, plus summary statistics."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .errors import ConfigError, DataError, EmptyDataset
from .kvfile import read_kv

MISSING = None

# Nine anonymized categorical variables of the production trace.
DEFAULT_CATEGORICALS = ("A1", "A2", "A3", "B1", "B2", "C1", "C2", "C3", "C4")
TEMPORAL_VARIABLES = (
    "submit_day",
    "submit_hour",
    "start_day",
    "start_hour",
    "finish_day",
    "finish_hour",
)

SECONDS_PER_DAY = 86400
SECONDS_PER_HOUR = 3600
RUNTIME_FLOOR_SECONDS = 1.0


@dataclass(frozen=True, slots=True)
class TemporalFeatures:
    submit_day: int
    submit_hour: int
    start_day: int
    start_hour: int
    finish_day: int | None
    finish_hour: int | None

    def as_dict(self) -> dict[str, int | None]:
        return asdict(self)


@dataclass(frozen=True, slots=True)
class JobRecord:
    submit_time: float
    start_time: float
    finish_time: float | None
    iterations: int
    categoricals: Mapping[str, str | None]
    derived: TemporalFeatures
    runtime_log2: float | None

    @property
    def runtime(self) -> float | None:
        if self.finish_time is None:
            return None
        return self.finish_time - self.start_time


@dataclass(frozen=True)
class Schema:
    """Column mapping for a delimited trace file.

    ``categoricals`` maps variable name -> column name, in variable order.
    """

    submit_time: str = "submit_time"
    start_time: str = "start_time"
    finish_time: str = "finish_time"
    iterations: str = "iterations"
    categoricals: Mapping[str, str] = field(
        default_factory=lambda: {v: v for v in DEFAULT_CATEGORICALS}
    )
    delimiter: str = ","

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(self.categoricals)

    @classmethod
    def from_mapping(cls, items: Mapping[str, str]) -> "Schema":
        known = {"submit_time", "start_time", "finish_time", "iterations", "delimiter", "categoricals"}
        kwargs: dict[str, object] = {}
        cats: dict[str, str] = {}
        for key, value in items.items():
            if key.startswith("categorical."):
                var = key.split(".", 1)[1]
                if not var:
                    raise ConfigError(f"empty variable name in schema key {key!r}")
                cats[var] = value
            elif key == "categoricals":
                for var in (v.strip() for v in value.split(",")):
                    if var:
                        cats[var] = var
            elif key == "delimiter":
                kwargs["delimiter"] = _decode_delimiter(value)
            elif key in known:
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown schema key {key!r}")
        if cats:
            kwargs["categoricals"] = cats
        return cls(**kwargs)  # type: ignore[arg-type]

    @classmethod
    def load(cls, path: str | Path) -> "Schema":
        return cls.from_mapping(read_kv(path))


def _decode_delimiter(value: str) -> str:
    named = {"comma": ",", "tab": "\t", "\\t": "\t", "semicolon": ";", "pipe": "|", "space": " "}
    value = named.get(value, value)
    if len(value) != 1:
        raise ConfigError(f"delimiter must be one character, got {value!r}")
    return value


@dataclass
class ParseReport:
    total_rows: int = 0
    accepted: int = 0
    wrong_field_count: int = 0
    bad_timestamp: int = 0
    nonpositive_runtime: int = 0
    bad_iterations: int = 0
    missing_finish: int = 0
    clamped_runtime: int = 0

    REASONS = ("wrong_field_count", "bad_timestamp", "nonpositive_runtime", "bad_iterations", "missing_finish")

    @property
    def rejected(self) -> int:
        return sum(getattr(self, r) for r in self.REASONS)

    def as_dict(self) -> dict[str, int]:
        d = {"total_rows": self.total_rows, "accepted": self.accepted, "rejected": self.rejected}
        d.update({r: getattr(self, r) for r in self.REASONS})
        d["clamped_runtime"] = self.clamped_runtime
        return d


def derive_temporal(submit_time: float, start_time: float, finish_time: float | None) -> TemporalFeatures:
    """Day of week (1 = Sunday .. 7 = Saturday) and hour of day, in UTC."""
    sd, sh = _day_hour(submit_time)
    td, th = _day_hour(start_time)
    if finish_time is None:
        fd = fh = None
    else:
        fd, fh = _day_hour(finish_time)
    return TemporalFeatures(sd, sh, td, th, fd, fh)


def _day_hour(t: float) -> tuple[int, int]:
    secs = math.floor(t)
    days, rem = divmod(secs, SECONDS_PER_DAY)
    # 1970-01-01 was a Thursday (day 5 when Sunday is 1)
    return (days + 4) % 7 + 1, rem // SECONDS_PER_HOUR


def runtime_to_log2(runtime: float) -> float:
    return math.log2(max(runtime, RUNTIME_FLOOR_SECONDS))


def _parse_time(token: str) -> float:
    value = float(token)
    if not math.isfinite(value):
        raise ValueError(token)
    return value


def parse_trace(
    stream: TextIO | str | Path,
    schema: Schema | None = None,
    require_finish: bool = True,
) -> tuple[list[JobRecord], ParseReport]:
    """Parse a header-bearing delimited trace.

    Malformed rows are skipped and counted in the returned report. With
    ``require_finish=False`` the finish column may be absent or empty; such
    records carry no runtime.
    """
    schema = schema or Schema()
    if isinstance(stream, (str, Path)):
        try:
            with open(stream, newline="", encoding="utf-8") as fh:
                return parse_trace(fh, schema, require_finish)
        except OSError as exc:
            raise DataError(f"cannot read trace {stream}: {exc}") from exc

    try:
        reader = csv.reader(stream, delimiter=schema.delimiter)
        header = next(reader, None)
    except (OSError, csv.Error, UnicodeDecodeError) as exc:
        raise DataError(f"unreadable trace: {exc}") from exc
    report = ParseReport()
    if header is None:
        return [], report
    header = [h.strip() for h in header]
    pos = {name: i for i, name in enumerate(header)}

    def col(name: str, optional: bool = False) -> int | None:
        if name not in pos:
            if optional:
                return None
            raise ConfigError(f"schema column {name!r} not found in trace header {header}")
        return pos[name]

    i_submit = col(schema.submit_time)
    i_start = col(schema.start_time)
    i_finish = col(schema.finish_time, optional=not require_finish)
    i_iter = col(schema.iterations)
    cat_cols = [(var, col(c)) for var, c in schema.categoricals.items()]

    records: list[JobRecord] = []
    ncols = len(header)
    try:
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            report.total_rows += 1
            if len(row) != ncols:
                report.wrong_field_count += 1
                continue
            try:
                submit = _parse_time(row[i_submit])
                start = _parse_time(row[i_start])
                finish_tok = row[i_finish].strip() if i_finish is not None else ""
                finish = _parse_time(finish_tok) if finish_tok else None
            except ValueError:
                report.bad_timestamp += 1
                continue
            if finish is None and require_finish:
                report.missing_finish += 1
                continue
            try:
                iters = int(row[i_iter])
            except ValueError:
                report.bad_iterations += 1
                continue
            if iters < 1:
                report.bad_iterations += 1
                continue
            if finish is not None:
                runtime = finish - start
                if runtime <= 0:
                    report.nonpositive_runtime += 1
                    continue
                if runtime < RUNTIME_FLOOR_SECONDS:
                    report.clamped_runtime += 1
                y = runtime_to_log2(runtime)
            else:
                y = None
            cats = {var: (row[i] if row[i] != "" else MISSING) for var, i in cat_cols}
            records.append(
                JobRecord(submit, start, finish, iters, cats, derive_temporal(submit, start, finish), y)
            )
            report.accepted += 1
    except (OSError, csv.Error, UnicodeDecodeError) as exc:
        raise DataError(f"unreadable trace: {exc}") from exc
    return records, report


def format_number(x: float) -> str:
    if float(x).is_integer() and abs(x) < 2**53:
        return str(int(x))
    return repr(float(x))


def canonical_schema(variables: Sequence[str]) -> Schema:
    return Schema(categoricals={v: v for v in variables})


def write_dataset(
    records: Sequence[JobRecord],
    stream: TextIO,
    variables: Sequence[str] | None = None,
    extra_columns: Mapping[str, Sequence[object]] | None = None,
) -> None:
    """Write records in the canonical delimited form (re-parseable with ``canonical_schema``)."""
    if variables is None:
        variables = tuple(records[0].categoricals) if records else DEFAULT_CATEGORICALS
    extra_columns = extra_columns or {}
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["submit_time", "start_time", "finish_time", "iterations", *variables, *extra_columns])
    extras = list(extra_columns.values())
    for i, r in enumerate(records):
        row = [
            format_number(r.submit_time),
            format_number(r.start_time),
            "" if r.finish_time is None else format_number(r.finish_time),
            str(r.iterations),
        ]
        row += ["" if r.categoricals.get(v) is None else r.categoricals[v] for v in variables]
        row += [_format_extra(col[i]) for col in extras]
        writer.writerow(row)


def _format_extra(v: object) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def dataset_to_text(records: Sequence[JobRecord], variables: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    write_dataset(records, buf, variables)
    return buf.getvalue()


def runtimes_log2(records: Iterable[JobRecord]) -> np.ndarray:
    return np.array([r.runtime_log2 for r in records], dtype=float)


@dataclass
class TraceSummary:
    record_count: int
    category_counts: dict[str, dict[str, int]]
    missing_counts: dict[str, int]
    runtime_quantiles: dict[str, float]
    runtime_log2_quantiles: dict[str, float]

    def as_dict(self) -> dict:
        return {
            "record_count": self.record_count,
            "category_counts": self.category_counts,
            "missing_counts": self.missing_counts,
            "runtime_quantiles": self.runtime_quantiles,
            "runtime_log2_quantiles": self.runtime_log2_quantiles,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=False) + "\n"

    def to_text(self) -> str:
        lines = [f"record_count: {self.record_count}"]
        for var, counts in self.category_counts.items():
            lines.append(f"{var}.categories: {len(counts)}")
            lines.append(f"{var}.missing: {self.missing_counts[var]}")
        for name, qs in (("runtime", self.runtime_quantiles), ("runtime_log2", self.runtime_log2_quantiles)):
            for q, v in qs.items():
                lines.append(f"{name}.{q}: {format_number(v)}")
        return "\n".join(lines) + "\n"


SUMMARY_QUANTILES = (("min", 0.0), ("q05", 0.05), ("q25", 0.25), ("median", 0.5), ("q75", 0.75), ("q95", 0.95), ("max", 1.0))


def nearest_rank(sorted_values: Sequence[float], q: float) -> float:
    """Nearest-rank quantile: the ceil(q*n)-th smallest value (q=0 gives the minimum)."""
    n = len(sorted_values)
    if n == 0:
        raise EmptyDataset("quantile of empty sample")
    rank = max(1, math.ceil(q * n))
    return sorted_values[rank - 1]


def summarize(records: Sequence[JobRecord], include_temporal: bool = True) -> TraceSummary:
    if not records:
        raise EmptyDataset("cannot summarize an empty dataset")
    variables = list(records[0].categoricals)
    if include_temporal:
        variables += list(TEMPORAL_VARIABLES)
    cat_counts: dict[str, dict[str, int]] = {}
    missing: dict[str, int] = {}
    for var in variables:
        counter: Counter = Counter()
        n_missing = 0
        for r in records:
            v = variable_value(r, var)
            if v is None:
                n_missing += 1
            else:
                counter[str(v)] += 1
        cat_counts[var] = dict(sorted(counter.items(), key=lambda kv: _category_sort_key(kv[0])))
        missing[var] = n_missing
    rt = sorted(r.runtime for r in records if r.runtime is not None)
    ys = sorted(r.runtime_log2 for r in records if r.runtime_log2 is not None)
    rq = {name: nearest_rank(rt, q) for name, q in SUMMARY_QUANTILES} if rt else {}
    yq = {name: nearest_rank(ys, q) for name, q in SUMMARY_QUANTILES} if ys else {}
    return TraceSummary(len(records), cat_counts, missing, rq, yq)


def _category_sort_key(token: str) -> tuple:
    try:
        return (0, int(token), token)
    except ValueError:
        return (1, 0, token)


def variable_value(record: JobRecord, var: str) -> str | int | None:
    """Value of a predictor variable: a categorical token, a temporal category, or ``iterations``."""
    if var == "iterations":
        return record.iterations
    if var in TEMPORAL_VARIABLES:
        return getattr(record.derived, var)
    return record.categoricals.get(var)
