"""Typed tables: cell values, text normalization, CSV/JSON ingestion.

A table is an ordered list of named columns plus rows of typed values.
Cell text is typed at load time: decimal numerals become ``Num``, the
keywords true/false become ``Bool``, everything else stays ``Str`` with
its original surface preserved.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import CheckError

# Decimal numeral with optional sign and optional "," thousands grouping.
# Unit suffixes, exponents and other mixed text are not numbers.
_NUM_RE = re.compile(
    r"^[+-]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d*)?$|^[+-]?\.\d+$"
)

_WS_RUN_RE = re.compile(r"\s+")
_TERMINAL_PUNCT = ".,;:!?"


def normalize(text: str) -> str:
    """Canonical matching form: lowercase, trimmed, single-spaced,
    terminal punctuation stripped. Idempotent."""
    out = _WS_RUN_RE.sub(" ", text.lower().strip())
    return out.rstrip(_TERMINAL_PUNCT).rstrip()


@dataclass(frozen=True)
class Num:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise CheckError("E_INTERNAL_VALUE", f"non-finite Num {self.value!r}")


@dataclass(frozen=True)
class Str:
    value: str

    @property
    def norm(self) -> str:
        return normalize(self.value)


@dataclass(frozen=True)
class Bool:
    value: bool


Value = Num | Str | Bool


def parse_value(text: str) -> Value:
    """Type a raw cell text. Total: anything that is not a decimal numeral
    or a true/false keyword stays a string."""
    trimmed = text.strip()
    if _NUM_RE.match(trimmed):
        num = float(trimmed.replace(",", ""))
        if math.isfinite(num):
            return Num(num)
        return Str(text)  # numeral too large for a finite float
    low = trimmed.lower()
    if low == "true":
        return Bool(True)
    if low == "false":
        return Bool(False)
    return Str(text)


def format_value(value: Value) -> str:
    """Surface form that parse_value maps back to the same value."""
    match value:
        case Num(v):
            return format_num(v)
        case Str(s):
            return s
        case Bool(b):
            return "true" if b else "false"
    raise CheckError("E_INTERNAL_VALUE", f"unknown value {value!r}")


def format_num(v: float) -> str:
    """Full-precision positional numeral (never exponent notation)."""
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return np.format_float_positional(v, unique=True, trim="0")


@dataclass(frozen=True)
class Table:
    """Immutable table: non-empty column list, rectangular rows.

    Normalized column names must be pairwise distinct because programs
    resolve columns by normalized name.
    """

    columns: tuple[str, ...]
    rows: tuple[tuple[Value, ...], ...] = ()

    def __post_init__(self):
        if not self.columns:
            raise CheckError("E_EMPTY_HEADER", "table has no columns")
        seen: dict[str, str] = {}
        for name in self.columns:
            norm = normalize(name)
            if norm in seen:
                raise CheckError(
                    "E_DUP_COLUMN",
                    f"columns {seen[norm]!r} and {name!r} collide as {norm!r}",
                    name=norm,
                )
            seen[norm] = name
        for i, row in enumerate(self.rows):
            if len(row) != len(self.columns):
                raise CheckError(
                    "E_RAGGED_ROW",
                    f"row {i} has {len(row)} cells, expected {len(self.columns)}",
                    row=i,
                )

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.columns)

    def column_index(self, name: str) -> int | None:
        """Resolve a column by normalized name; None when absent."""
        norm = normalize(name)
        for i, col in enumerate(self.columns):
            if normalize(col) == norm:
                return i
        return None

    def cell(self, row: int, col: int) -> Value:
        return self.rows[row][col]


def load_table_csv(data: bytes) -> Table:
    """Load an RFC-4180 CSV (UTF-8, mandatory header row)."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckError("E_ENCODING", f"not valid UTF-8: {exc}") from exc
    records = list(csv.reader(io.StringIO(text)))
    if not records or not records[0]:
        raise CheckError("E_EMPTY_HEADER", "missing header row")
    header = records[0]
    rows = []
    for line_no, record in enumerate(records[1:], start=2):
        if not record:
            continue  # blank trailing record
        if len(record) != len(header):
            raise CheckError(
                "E_RAGGED_ROW",
                f"record {line_no} has {len(record)} cells, expected {len(header)}",
                line=line_no,
            )
        rows.append(tuple(parse_value(cell) for cell in record))
    return Table(columns=tuple(header), rows=tuple(rows))


def table_to_csv(table: Table) -> bytes:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([format_value(v) for v in row])
    return out.getvalue().encode("utf-8")


def _schema_error(path: str, detail: str) -> CheckError:
    return CheckError("E_SCHEMA", f"bad table JSON at {path}: {detail}", path=path)


def load_table_json(data: bytes) -> Table:
    """Load ``{"columns": [str], "rows": [[str|number|bool]]}``."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckError("E_ENCODING", f"not valid UTF-8: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise _schema_error("$", f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise _schema_error("$", "expected an object")
    if "columns" not in obj or "rows" not in obj:
        raise _schema_error("$", 'expected keys "columns" and "rows"')
    columns = obj["columns"]
    if not isinstance(columns, list) or any(not isinstance(c, str) for c in columns):
        raise _schema_error("$.columns", "expected a list of strings")
    if not columns:
        raise CheckError("E_EMPTY_HEADER", "table has no columns")
    raw_rows = obj["rows"]
    if not isinstance(raw_rows, list):
        raise _schema_error("$.rows", "expected a list of rows")
    rows = []
    for i, raw in enumerate(raw_rows):
        if not isinstance(raw, list):
            raise _schema_error(f"$.rows[{i}]", "expected a list of cells")
        if len(raw) != len(columns):
            raise CheckError(
                "E_RAGGED_ROW",
                f"row {i} has {len(raw)} cells, expected {len(columns)}",
                row=i,
            )
        cells = []
        for j, cell in enumerate(raw):
            if isinstance(cell, bool):
                cells.append(Bool(cell))
            elif isinstance(cell, (int, float)):
                if not math.isfinite(float(cell)):
                    raise _schema_error(f"$.rows[{i}][{j}]", "non-finite number")
                cells.append(Num(float(cell)))
            elif isinstance(cell, str):
                cells.append(parse_value(cell))
            else:
                raise _schema_error(f"$.rows[{i}][{j}]", f"unsupported type {type(cell).__name__}")
        rows.append(tuple(cells))
    return Table(columns=tuple(columns), rows=tuple(rows))


def table_to_json(table: Table) -> bytes:
    def cell_json(v: Value):
        match v:
            case Num(x):
                return int(x) if x.is_integer() and abs(x) < 2**53 else x
            case Str(s):
                return s
            case Bool(b):
                return b

    obj = {
        "columns": list(table.columns),
        "rows": [[cell_json(v) for v in row] for row in table.rows],
    }
    return json.dumps(obj, ensure_ascii=False).encode("utf-8")


def load_table_path(path: str) -> Table:
    """Dispatch on file extension (.csv or .json)."""
    with open(path, "rb") as f:
        data = f.read()
    if path.endswith(".json"):
        return load_table_json(data)
    return load_table_csv(data)
