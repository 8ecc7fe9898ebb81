"""Tables and their csv / json-lines / plot-data emitters."""

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field


@dataclass
class ConvergenceTable:
    """Rows keyed by level (or by experiment step) plus run metadata."""

    columns: list
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, **row):
        missing = [c for c in self.columns if c not in row]
        if missing:
            raise ValueError(f"row is missing columns {missing}")
        self.rows.append({c: row[c] for c in self.columns})

    def column(self, name):
        return [row[name] for row in self.rows]

    def __len__(self):
        return len(self.rows)


def _cell(value):
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_csv(table):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_cell(row[c]) for c in table.columns])
    return buf.getvalue()


def to_jsonl(table):
    return "".join(json.dumps(row, sort_keys=False) + "\n" for row in table.rows)


def read_jsonl(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def to_plot_data(table, x="level"):
    """One gnuplot index block per numeric column: ``x value`` lines."""
    blocks = []
    for name in table.columns:
        if name == x:
            continue
        values = table.column(name)
        if not values or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                 for v in values):
            continue
        lines = [f"# {name} vs {x}"]
        lines += [f"{_cell(row[x])} {_cell(row[name])}" for row in table.rows]
        blocks.append("\n".join(lines))
    return "\n\n\n".join(blocks) + ("\n" if blocks else "")


FORMATS = {"csv": (to_csv, ".csv"), "json-lines": (to_jsonl, ".jsonl"),
           "plot-data": (to_plot_data, ".dat")}


def emit(table, fmt, path):
    """Write ``table`` to ``path`` in one of csv, json-lines, plot-data."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}")
    writer, _ = FORMATS[fmt]
    if fmt == "plot-data" and "level" not in table.columns:
        text = to_plot_data(table, x=table.columns[0])
    else:
        text = writer(table)
    _atomic_write(path, text)
    return path


def emit_all(table, stem, formats=("csv",)):
    return [emit(table, fmt, stem + FORMATS[fmt][1]) for fmt in formats]
