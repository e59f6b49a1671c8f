"""CSV metric streams.

Every flush rewrites the whole file through a temp file and a rename, so a
reader never sees a truncated header or a half-written row.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

from ..io import atomic_write_text
from .loop import CSV_FIELDS, TrainingRecord


def format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_to_csv(records, fields=CSV_FIELDS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for rec in records:
        row = rec.as_row() if isinstance(rec, TrainingRecord) else [rec[k] for k in fields]
        w.writerow([format_value(v) for v in row])
    return buf.getvalue()


class CsvLog:
    def __init__(self, path, fields=CSV_FIELDS, flush_every: int = 25):
        self.path = Path(path)
        self.fields = list(fields)
        self.rows: list = []
        self.flush_every = flush_every
        self.flush()

    def append(self, row) -> None:
        self.rows.append(row)
        if self.flush_every and len(self.rows) % self.flush_every == 0:
            self.flush()

    def flush(self) -> None:
        atomic_write_text(self.path, records_to_csv(self.rows, self.fields))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
