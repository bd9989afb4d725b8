"""CSV serialization of run traces.

All files share the columns ``trial,round,edge_i,edge_j,V,mean_rel_error,epoch``;
ADMM files append ``rho`` and comparison files append ``algorithm,rho``.
Agent indices are 1-based, floats carry 17 significant digits, and missing
values are empty fields.
"""

from __future__ import annotations

import csv
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np

from djam.engine import Trace

TRACE_COLUMNS = ("trial", "round", "edge_i", "edge_j", "V", "mean_rel_error", "epoch")


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def trace_rows(trace: Trace, trial) -> Iterable[list]:
    epoch = trace.epoch_index() if len(trace) else np.zeros(0, dtype=int)
    for k, t in enumerate(trace.rounds):
        yield [
            trial,
            int(t),
            int(trace.edges[k, 0]) + 1,
            int(trace.edges[k, 1]) + 1,
            None if trace.V is None else trace.V[k],
            None if trace.mean_rel_error is None else trace.mean_rel_error[k],
            int(epoch[k]) if epoch[k] else None,
        ]


def aggregate_rows(rounds: np.ndarray, values: np.ndarray) -> Iterable[list]:
    for t, v in zip(rounds, values):
        yield ["mean", int(t), None, None, None, float(v), None]


def per_trial_rows(rounds: np.ndarray, per_trial: np.ndarray, edges: np.ndarray, epochs: Sequence[Sequence[int]]):
    for k in range(per_trial.shape[0]):
        marks = {t: m for m, t in enumerate(epochs[k], start=1)}
        for r, t in enumerate(rounds):
            t = int(t)
            yield [k + 1, t, int(edges[k, r, 0]) + 1, int(edges[k, r, 1]) + 1, None, float(per_trial[k, r]), marks.get(t)]


def write_blocks(path: str | Path, blocks: Iterable[tuple[Iterable[list], Sequence]], extra_columns: Sequence[str] = ()) -> None:
    """Write several row blocks under one header; each block carries its own extra-column values."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*TRACE_COLUMNS, *extra_columns])
        for rows, extra_values in blocks:
            tail = [fmt(v) for v in extra_values]
            for row in rows:
                w.writerow([fmt(v) for v in row] + tail)


def write_rows(path: str | Path, rows: Iterable[list], extra_columns: Sequence[str] = (), extra_values: Sequence = ()) -> None:
    write_blocks(path, [(rows, extra_values)], extra_columns)


def write_trace_csv(path: str | Path, trace: Trace, trial=1, extra_columns=(), extra_values=()) -> None:
    write_rows(path, trace_rows(trace, trial), extra_columns, extra_values)


def read_trace_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
