"""Comparison tables and per-round series computed from a finished run.

Every table is derived from the RoundRecords, the ledger and the test
metrics of an ExperimentResult; nothing is stored only in the exports.
Tables are plain (columns, rows) pairs so CSV and JSON share one source.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .engine import ExperimentResult, RoundRecord
from .nn import EvalMetrics
from .transport import DIRECTIONS, KINDS, TransportLedger, deserialize_model, serialize_model

log = logging.getLogger(__name__)

MB = 1_000_000
TABLES = ("selection", "bandwidth", "test_f1", "work", "rounds", "f1_series")
RESULT_FILE = "result.json"
MODEL_FILE = "final_model.bin"
MANIFEST_FILE = "manifest.json"


@dataclass
class Table:
    columns: list[str]
    rows: list[list] = field(default_factory=list)

    def records(self) -> list[dict]:
        return [dict(zip(self.columns, row)) for row in self.rows]

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        # repr is the shortest string that parses back to the same float
        return repr(float(value))
    return str(value)


def selection_table(result: ExperimentResult) -> Table:
    """Share of training rounds in which each client was given work."""
    rounds = [r for r in result.rounds if not r.terminal]
    n = len(result.client_names)
    counts = np.zeros(n, dtype=np.int64)
    for r in rounds:
        counts[r.selected] += 1
    pct = 100.0 * counts / len(rounds) if rounds else np.zeros(n)
    table = Table(["client_id", "client", "rounds_selected", "rounds", "participation_pct"])
    for i, name in enumerate(result.client_names):
        table.rows.append([i, name, int(counts[i]), len(rounds), float(pct[i])])
    table.rows.append([None, "mean", int(counts.sum()), len(rounds), float(pct.mean()) if n else 0.0])
    return table


def bandwidth_table(result: ExperimentResult) -> Table:
    """Bytes per client by direction and payload kind, as seen by clients."""
    ledger = result.ledger
    pairs = [(d, k) for d in DIRECTIONS for k in KINDS]
    table = Table(["client_id", "client"] + [f"{d}_{k}" for d, k in pairs] + ["total_bytes", "total_mb"])
    sums = np.zeros(len(pairs) + 1, dtype=np.int64)
    for i, name in enumerate(result.client_names):
        values = [ledger.bytes_for(i, d, k) for d, k in pairs]
        values.append(sum(values))
        sums += values
        table.rows.append([i, name] + values + [values[-1] / MB])
    table.rows.append([None, "total"] + [int(v) for v in sums] + [int(sums[-1]) / MB])
    return table


def test_f1_table(result: ExperimentResult) -> Table:
    table = Table(["client_id", "client", "family", "precision", "recall", "f1", "accuracy", "loss"])
    families = result.client_families or ["unknown"] * len(result.client_names)
    for i, (name, m) in enumerate(zip(result.client_names, result.test_metrics)):
        table.rows.append([i, name, families[i], m.precision, m.recall, m.f1, m.accuracy, m.mean_loss])
    ms = result.test_metrics
    table.rows.append([
        None, "mean", None,
        *(float(np.mean([getattr(m, a) for m in ms])) for a in ("precision", "recall", "f1", "accuracy", "mean_loss")),
    ])
    return table


def work_table(result: ExperimentResult) -> Table:
    """Per-client local work: MBGD updates and samples processed."""
    n = len(result.client_names)
    updates = np.zeros(n, dtype=np.int64)
    units = np.zeros(n, dtype=np.int64)
    trained = np.zeros(n, dtype=np.int64)
    for r in result.rounds:
        u = np.asarray(r.num_updates, dtype=np.int64)
        updates += u
        units += u * np.asarray(r.batch_sizes, dtype=np.int64)
        trained += u > 0
    table = Table(["client_id", "client", "rounds_trained", "updates", "work_units"])
    for i, name in enumerate(result.client_names):
        table.rows.append([i, name, int(trained[i]), int(updates[i]), int(units[i])])
    table.rows.append([None, "total", int(trained.sum()), int(updates.sum()), int(units.sum())])
    return table


def rounds_table(result: ExperimentResult) -> Table:
    """One row per round: participants, uploads, work and traffic."""
    table = Table(["round", "selected", "uploaded", "work_units", "bytes_down", "bytes_up",
                   "mean_eval_accuracy", "mean_val_accuracy", "terminal"])
    for r in result.rounds:
        table.rows.append([
            r.round, len(r.selected), len(r.participated), r.work_units, sum(r.bytes_down),
            sum(r.bytes_up), r.mean_eval_accuracy, float(np.mean(r.val_accuracy)), r.terminal,
        ])
    return table


def f1_series(result: ExperimentResult) -> Table:
    """Validation F1 of the aggregated model after each round."""
    table = Table(["round", "mean_f1"] + list(result.client_names))
    for r in result.rounds:
        table.rows.append([r.round, float(np.mean(r.val_f1))] + [float(v) for v in r.val_f1])
    return table


def work_units_total(result: ExperimentResult) -> int:
    return int(sum(r.work_units for r in result.rounds))


BUILDERS = {
    "selection": selection_table,
    "bandwidth": bandwidth_table,
    "test_f1": test_f1_table,
    "work": work_table,
    "rounds": rounds_table,
    "f1_series": f1_series,
}


def build_tables(result: ExperimentResult) -> dict[str, Table]:
    return {name: BUILDERS[name](result) for name in TABLES}


def merge_tables(labelled: list[tuple[dict, Table]]) -> Table:
    """Stack tables with identical columns, prefixing label columns
    (e.g. seed and strategy) taken from each dict."""
    if not labelled:
        return Table([])
    keys = list(labelled[0][0])
    columns = labelled[0][1].columns
    out = Table(keys + columns)
    for labels, table in labelled:
        if table.columns != columns:
            raise ValueError("cannot merge tables with different columns")
        prefix = [labels[k] for k in keys]
        out.rows.extend(prefix + row for row in table.rows)
    return out


# serialization ------------------------------------------------------------

def table_to_csv(table: Table) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def table_to_json(table: Table) -> str:
    return json.dumps(table.records(), indent=1) + "\n"


def read_csv_table(path) -> Table:
    """Parse a table written by ``table_to_csv``; numbers come back as
    int or float, empty cells as None."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        columns = next(reader)
        rows = [[_parse(v) for v in row] for row in reader]
    return Table(columns, rows)


def _parse(text: str):
    if text == "":
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def result_to_dict(result: ExperimentResult) -> dict:
    return {
        "strategy": result.strategy,
        "seed": result.seed,
        "config": result.config,
        "client_names": list(result.client_names),
        "client_families": list(result.client_families),
        "stop_reason": result.stop_reason,
        "best_round": result.best_round,
        "initial_model_hash": result.initial_model_hash,
        "rounds": [r.to_dict() for r in result.rounds],
        "test_metrics": [m.__dict__ for m in result.test_metrics],
        "ledger": {
            "client_side": {f"{c}/{d}/{k}": v for (c, d, k), v in sorted(result.ledger.client_side.items())},
            "server_side": {f"{c}/{d}/{k}": v for (c, d, k), v in sorted(result.ledger.server_side.items())},
        },
    }


def result_from_dict(data: dict, final_params: Optional[np.ndarray] = None) -> ExperimentResult:
    n = len(data["client_names"])
    ledger = TransportLedger(tuple(range(n)))
    for side in ("client_side", "server_side"):
        table = getattr(ledger, side)
        for key, v in data["ledger"][side].items():
            c, d, k = key.split("/")
            table[(int(c), d, k)] = int(v)
    return ExperimentResult(
        strategy=data["strategy"],
        config=data["config"],
        seed=data["seed"],
        client_names=data["client_names"],
        rounds=[RoundRecord(**r) for r in data["rounds"]],
        final_params=final_params,
        test_metrics=[EvalMetrics(**m) for m in data["test_metrics"]],
        stop_reason=data["stop_reason"],
        ledger=ledger,
        initial_model_hash=data["initial_model_hash"],
        best_round=data.get("best_round"),
        client_families=data.get("client_families", []),
    )


def manifest(result: ExperimentResult, fmt: str, files: list[str], extra: Optional[dict] = None) -> dict:
    out = {
        "artifact": "fedsim",
        "version": __version__,
        "strategy": result.strategy,
        "seed": result.seed,
        "config": result.config,
        "format": fmt,
        "rounds": result.num_rounds,
        "stop_reason": result.stop_reason,
        "files": files,
    }
    if extra:
        out.update(extra)
    return out


def fresh_directory(path) -> Path:
    """``path`` if it is absent or empty, else the first free ``path-vN``."""
    path = Path(path)
    candidate, n = path, 1
    while candidate.exists() and (not candidate.is_dir() or any(candidate.iterdir())):
        n += 1
        candidate = path.with_name(f"{path.name}-v{n}")
    try:
        candidate.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {candidate}: {exc.strerror}") from exc
    if candidate != path:
        log.warning("%s already holds files; writing to %s instead", path, candidate)
    return candidate


def write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def export(result: ExperimentResult, fmt: str, path, extra_manifest: Optional[dict] = None) -> Path:
    """Write every table, the raw result and a manifest into a new
    directory (a versioned sibling if ``path`` is taken). Returns the
    directory actually used."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be csv or json, got {fmt!r}")
    out = fresh_directory(path)
    files = []
    for name, table in build_tables(result).items():
        fname = f"{name}.{fmt}"
        write_text(out / fname, table_to_csv(table) if fmt == "csv" else table_to_json(table))
        files.append(fname)
    write_text(out / RESULT_FILE, json.dumps(result_to_dict(result), indent=1) + "\n")
    files.append(RESULT_FILE)
    if result.final_params is not None:
        try:
            (out / MODEL_FILE).write_bytes(serialize_model(result.final_params))
        except OSError as exc:
            raise OSError(f"cannot write {out / MODEL_FILE}: {exc.strerror}") from exc
        files.append(MODEL_FILE)
    write_text(out / MANIFEST_FILE, json.dumps(manifest(result, fmt, files, extra_manifest), indent=1) + "\n")
    return out


def load_result(run_dir) -> ExperimentResult:
    """Rebuild an ExperimentResult from an exported run directory."""
    run_dir = Path(run_dir)
    try:
        data = json.loads((run_dir / RESULT_FILE).read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"cannot read {run_dir / RESULT_FILE}: {exc.strerror}") from exc
    params = None
    model_path = run_dir / MODEL_FILE
    if model_path.exists():
        params = deserialize_model(model_path.read_bytes())
    return result_from_dict(data, params)
