"""Deterministic report writing: an aligned text table plus line-delimited records.

Every report starts with a header carrying the config hash and seed. Floats
are rounded before formatting so reruns (and other machines) produce the
same bytes; nothing time-dependent is ever written.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Sequence

JSON_DIGITS = 10
TABLE_DIGITS = 3


def _clean(value: Any) -> Any:
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            return None
        rounded = round(value, JSON_DIGITS)
        return 0.0 if rounded == 0 else rounded
    if isinstance(value, Decimal):
        return str(value)
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item") and callable(value.item):  # numpy scalars
        return _clean(value.item())
    return value


def format_cell(value: Any, digits: int = TABLE_DIGITS) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        if math.isnan(value):
            return "-"
        text = f"{value:.{digits}f}"
        return "0." + "0" * digits if text == "-0." + "0" * digits else text
    return str(value)


def aligned_table(columns: Sequence[str], rows: Sequence[Sequence[Any]], digits: int = TABLE_DIGITS) -> str:
    cells = [[format_cell(v, digits) for v in row] for row in rows]
    widths = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(columns)]

    def line(values: Sequence[str]) -> str:
        parts = [values[0].ljust(widths[0])] + [v.rjust(w) for v, w in zip(values[1:], widths[1:])]
        return "  ".join(parts).rstrip()

    out = [line(list(columns)), line(["-" * w for w in widths])]
    out.extend(line(r) for r in cells)
    return "\n".join(out) + "\n"


@dataclass
class Report:
    name: str
    title: str
    columns: list[str]
    rows: list[list[Any]] = field(default_factory=list)
    records: list[dict[str, Any]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    config_hash: str = ""
    seed: int | None = None
    digits: int = TABLE_DIGITS

    def header(self) -> dict[str, Any]:
        return {"kind": "header", "report": self.name, "config_hash": self.config_hash, "seed": self.seed}

    def text(self) -> str:
        head = f"# {self.title}\n# config_hash: {self.config_hash}  seed: {self.seed}\n\n"
        body = aligned_table(self.columns, self.rows, self.digits)
        tail = "".join(f"\n{n}" for n in self.notes)
        return head + body + (tail + "\n" if tail else "")

    def jsonl(self) -> str:
        lines = [self.header()] + [{"kind": "row", **r} for r in self.records]
        return "".join(json.dumps(_clean(line), sort_keys=True, ensure_ascii=False) + "\n" for line in lines)

    def write(self, directory: str | Path) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        txt, jl = directory / f"{self.name}.txt", directory / f"{self.name}.jsonl"
        txt.write_text(self.text(), encoding="utf-8")
        jl.write_text(self.jsonl(), encoding="utf-8")
        return txt, jl


def read_report_records(path: str | Path) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    return lines[0], lines[1:]
