"""Result rows shared by all solvers, and their CSV form."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

METHODS = ("exact", "spin-exact", "transfer", "mc", "mf", "closed-form")


@dataclass(frozen=True)
class SweepRow:
    p: float
    beta: float
    fidelity_per_qubit: float
    log_fidelity: float
    energy_per_qubit: float | None = None
    specific_heat_per_qubit: float | None = None
    err_fidelity: float = 0.0
    err_energy: float = 0.0
    err_specific_heat: float = 0.0
    method: str = "exact"
    graph_descriptor: str = ""
    seed: int | None = None


FIELDS = tuple(f.name for f in fields(SweepRow))
_INT_FIELDS = {"seed"}
_STR_FIELDS = {"method", "graph_descriptor"}


def row_from_log_fidelity(n: int, p: float, beta: float, log_fidelity: float, **kw) -> SweepRow:
    return SweepRow(p, beta, math.exp(log_fidelity / n), log_fidelity, **kw)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    # shortest string that parses back to the same double
    return repr(float(v))


def format_csv(rows: list[SweepRow], metadata: dict[str, object]) -> str:
    buf = io.StringIO()
    for key, value in metadata.items():
        buf.write(f"# {key} = {value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELDS)
    for r in rows:
        w.writerow([_fmt(v) for v in asdict(r).values()])
    return buf.getvalue()


def write_csv(rows: list[SweepRow], metadata: dict[str, object], path: str | Path) -> None:
    text = format_csv(rows, metadata)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc.strerror}") from exc


def _parse(name: str, text: str):
    if text == "":
        return None
    if name in _STR_FIELDS:
        return text
    if name in _INT_FIELDS:
        return int(text)
    return float(text)


def parse_csv(text: str) -> tuple[list[SweepRow], dict[str, str]]:
    """Inverse of format_csv: rows plus the '#' metadata preamble."""
    meta: dict[str, str] = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            meta[key.strip()] = value.strip()
        elif line:
            body.append(line)
    reader = csv.DictReader(body)
    rows = [SweepRow(**{k: _parse(k, v) for k, v in rec.items()}) for rec in reader]
    return rows, meta


def read_csv(path: str | Path) -> tuple[list[SweepRow], dict[str, str]]:
    with open(path) as fh:
        return parse_csv(fh.read())
