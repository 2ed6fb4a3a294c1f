"""Versioned CSV result rows with 17-significant-digit numbers and a round-trip reader."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass
from itertools import groupby
from pathlib import Path

SCHEMA = "# mvrhdg results v1"
NAN = float("nan")


@dataclass
class ResultRow:
    experiment: str
    method: str  # MC-HDG | MC-RB | L-MVR
    replication: str  # index, or "mean" on summary rows
    M: tuple = ()
    N: tuple = ()
    E: float = NAN
    E_err: float = NAN
    E_bound_factor: float = NAN  # a-free CLT factor
    E_bound_rb: float = NAN  # RB contribution (MC-RB only)
    E_bound: float = NAN  # a * factor + RB contribution
    V: float = NAN
    V_err: float = NAN
    V_bound_factor: float = NAN
    V_bound_rb: float = NAN
    V_bound: float = NAN
    V_bias_pred: float = NAN
    a: float = NAN
    full_solves: float = NAN
    t_h: float = NAN
    cost: float = NAN
    speedup: float = NAN


COLUMNS = [f.name for f in dataclasses.fields(ResultRow)]
_NUMERIC = COLUMNS[5:]


def fmt_num(x) -> str:
    if isinstance(x, int) and not isinstance(x, bool):
        return str(x)
    return f"{float(x):.17g}"


def _parse_num(s: str):
    try:
        return int(s)
    except ValueError:
        return float(s)


def _cell(name, value) -> str:
    if name in ("M", "N"):
        return ";".join(fmt_num(v) for v in value)
    if name in ("experiment", "method", "replication"):
        return str(value)
    return fmt_num(value)


def format_rows(rows) -> str:
    buf = io.StringIO()
    buf.write(SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_cell(c, getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def parse_rows(text: str) -> list[ResultRow]:
    lines = text.splitlines()
    if not lines or lines[0] != SCHEMA:
        raise ValueError(f"expected schema line {SCHEMA!r}")
    reader = csv.DictReader(lines[1:])
    if reader.fieldnames != COLUMNS:
        raise ValueError("column set does not match the schema")
    out = []
    for rec in reader:
        kw = {}
        for c in COLUMNS:
            v = rec[c]
            if c in ("M", "N"):
                kw[c] = tuple(_parse_num(x) for x in v.split(";")) if v else ()
            elif c in ("experiment", "method", "replication"):
                kw[c] = v
            else:
                kw[c] = float(v)
        out.append(ResultRow(**kw))
    return out


def write_rows(path, rows) -> None:
    Path(path).write_text(format_rows(rows))


def read_rows(path) -> list[ResultRow]:
    return parse_rows(Path(path).read_text())


def _mean(vals):
    return math.fsum(vals) / len(vals)


def summarize(rows: list[ResultRow]) -> list[ResultRow]:
    """Per (experiment, method, N, schedule position) mean over replications; appended after each group."""
    out = []
    key = lambda r: (r.experiment, r.method, r.N)
    for k, grp in groupby(rows, key=key):
        grp = list(grp)
        out.extend(grp)
        by_rep: dict[str, list] = {}
        for r in grp:
            by_rep.setdefault(r.replication, []).append(r)
        reps = list(by_rep.values())
        for pos in range(min(len(g) for g in reps)):
            members = [g[pos] for g in reps]
            Ms = [m.M for m in members]
            M = tuple(_mean([float(m[i]) for m in Ms]) for i in range(len(Ms[0]))) if all(len(m) == len(Ms[0]) for m in Ms) else ()
            vals = {c: _mean([getattr(m, c) for m in members]) for c in _NUMERIC}
            out.append(ResultRow(k[0], k[1], "mean", M, k[2], **vals))
    return out


def fmt_table_cell(v) -> str:
    if isinstance(v, (tuple, list)):
        return ";".join(fmt_num(x) for x in v)
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return fmt_num(v)
    return str(v)


def format_table(rows: list[dict], schema: str) -> str:
    """Generic table (greedy convergence, level plans, cost curves) with the same number format."""
    if not rows:
        return schema + "\n"
    buf = io.StringIO()
    buf.write(schema + "\n")
    w = csv.writer(buf, lineterminator="\n")
    cols = list(rows[0])
    w.writerow(cols)
    for r in rows:
        w.writerow([fmt_table_cell(r[c]) for c in cols])
    return buf.getvalue()


def parse_table(text: str) -> tuple[str, list[dict]]:
    """(schema line, rows); numeric cells become numbers, one-element sequences read back as scalars."""
    lines = text.splitlines()
    rows = []
    for rec in csv.DictReader(lines[1:]):
        row = {}
        for k, v in rec.items():
            parts = v.split(";") if v else []
            try:
                nums = [_parse_num(p) for p in parts]
                row[k] = nums[0] if len(nums) == 1 and ";" not in v else tuple(nums)
            except ValueError:
                row[k] = v
        rows.append(row)
    return lines[0], rows
