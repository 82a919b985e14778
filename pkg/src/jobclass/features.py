"""Predictor extraction from JobRecords."""

from __future__ import annotations

from typing import Mapping, Sequence

from .cart import NUMERIC, FeatureTable
from .trace import TEMPORAL_VARIABLES, JobRecord, variable_value

NUMERIC_VARIABLES = ("iterations",)


def candidate_variables(records: Sequence[JobRecord], include_temporal: bool = True) -> tuple[str, ...]:
    """``iterations``, every categorical of the trace, then the six day/hour variables."""
    cats = tuple(records[0].categoricals) if records else ()
    out = ("iterations",) + cats
    if include_temporal:
        out += TEMPORAL_VARIABLES
    return out


def records_table(
    records: Sequence[JobRecord],
    variables: Sequence[str],
    vocab: Mapping[str, Sequence[str]] | None = None,
) -> FeatureTable:
    data = {v: [variable_value(r, v) for r in records] for v in variables}
    kinds = {v: NUMERIC for v in variables if v in NUMERIC_VARIABLES}
    return FeatureTable.from_columns(data, kinds, vocab)


def record_values(record: JobRecord, variables: Sequence[str]) -> dict[str, object]:
    return {v: variable_value(record, v) for v in variables}
