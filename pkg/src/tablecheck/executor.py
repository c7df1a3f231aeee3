"""Deterministic evaluation of typed programs against a table.

Evaluation is strict bottom-up: partial functions raise immediately and
errors propagate. Candidate search relies on that as a pruning signal,
so nothing here absorbs an error into a default value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import CheckError
from .programs import TypedAst
from .tables import Bool, Num, Str, Table, Value


@dataclass(frozen=True)
class Scalar:
    value: Value


@dataclass(frozen=True)
class View:
    """Subset of table rows in canonical (strictly increasing) order."""

    indices: tuple[int, ...]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise CheckError("E_INTERNAL_VIEW", f"view not strictly increasing: {self.indices}")


@dataclass(frozen=True)
class RowRef:
    index: int


ExecValue = Scalar | View | RowRef

# Column arguments travel through eval_function as plain ints (their
# resolved column index); they are selectors, not runtime values.
Arg = ExecValue | int


def _numeric_error(fn: str, col: str | None = None) -> CheckError:
    where = f" over column {col!r}" if col else ""
    return CheckError("E_NUMERIC", f"{fn} needs numeric operands{where}", fn=fn, col=col)


def _empty_view_error(fn: str) -> CheckError:
    return CheckError("E_EMPTY_VIEW", f"{fn} applied to an empty view", fn=fn)


def values_eq(a: Value, b: Value) -> bool:
    """Equality across cell values: numeric for numbers, normalized for
    strings, plain for bools; mixed types are simply unequal."""
    match (a, b):
        case (Num(x), Num(y)):
            return x == y
        case (Str(), Str()):
            return a.norm == b.norm
        case (Bool(x), Bool(y)):
            return x == y
    return False


def values_cmp(a: Value, b: Value, fn: str, col: str | None = None) -> int:
    """Three-way ordering; only number pairs and string pairs are ordered."""
    match (a, b):
        case (Num(x), Num(y)):
            return (x > y) - (x < y)
        case (Str(), Str()):
            x, y = a.norm, b.norm
            return (x > y) - (x < y)
    raise _numeric_error(fn, col)


def evaluate(ast: TypedAst, table: Table) -> ExecValue:
    """Evaluate a typechecked program; the runtime type of the result
    always matches the static root type."""
    if ast.kind == "lit":
        return Scalar(ast.value)
    if ast.kind == "all_rows":
        return View(tuple(range(table.n_rows)))
    if ast.kind == "col":
        raise CheckError("E_TYPE", "a bare column reference is not a value", fn=None)
    args: list[Arg] = []
    for child in ast.children:
        if child.kind == "col":
            args.append(child.col_index)
        else:
            args.append(evaluate(child, table))
    return eval_function(ast.name, args, table)


def _as_view(arg: Arg, fn: str) -> View:
    if not isinstance(arg, View):
        raise CheckError("E_TYPE", f"{fn} expected a view", fn=fn)
    return arg


def _as_row(arg: Arg, fn: str) -> RowRef:
    if not isinstance(arg, RowRef):
        raise CheckError("E_TYPE", f"{fn} expected a row", fn=fn)
    return arg


def _as_col(arg: Arg, fn: str) -> int:
    if not isinstance(arg, int):
        raise CheckError("E_TYPE", f"{fn} expected a column", fn=fn)
    return arg


def _as_scalar(arg: Arg, fn: str) -> Value:
    if not isinstance(arg, Scalar):
        raise CheckError("E_TYPE", f"{fn} expected a scalar", fn=fn)
    return arg.value


def _as_num(arg: Arg, fn: str) -> float:
    value = _as_scalar(arg, fn)
    if not isinstance(value, Num):
        raise _numeric_error(fn)
    return value.value


def _as_bool(arg: Arg, fn: str) -> bool:
    value = _as_scalar(arg, fn)
    if not isinstance(value, Bool):
        raise CheckError("E_TYPE", f"{fn} expected a bool", fn=fn)
    return value.value


def _num_cells(view: View, col: int, table: Table, fn: str) -> list[float]:
    out = []
    for i in view.indices:
        cell = table.cell(i, col)
        if not isinstance(cell, Num):
            raise _numeric_error(fn, table.columns[col])
        out.append(cell.value)
    return out


def _filter(view: View, col: int, target: Value, table: Table, keep) -> View:
    return View(tuple(i for i in view.indices if keep(table.cell(i, col), target)))


def _extreme_row(view: View, col: int, table: Table, fn: str, want_max: bool) -> int:
    if not view.indices:
        raise _empty_view_error(fn)
    best = view.indices[0]
    for i in view.indices[1:]:
        c = values_cmp(table.cell(i, col), table.cell(best, col), fn, table.columns[col])
        if (c > 0) if want_max else (c < 0):
            best = i  # strict improvement only: ties keep the lowest row
    return best


def _rank_key(view: View, col: int, table: Table, fn: str):
    cells = [table.cell(i, col) for i in view.indices]
    if all(isinstance(c, Num) for c in cells):
        return lambda i: table.cell(i, col).value
    if all(isinstance(c, Str) for c in cells):
        return lambda i: table.cell(i, col).norm
    raise _numeric_error(fn, table.columns[col])


def _nth_row(args: list[Arg], table: Table, fn: str, want_max: bool) -> RowRef:
    view = _as_view(args[0], fn)
    col = _as_col(args[1], fn)
    n = _as_num(args[2], fn)
    if not view.indices:
        raise _empty_view_error(fn)
    if n < 1 or n > len(view.indices) or n != int(n):
        raise CheckError("E_NTH_RANGE", f"{fn} index {n} out of 1..{len(view.indices)}", fn=fn)
    key = _rank_key(view, col, table, fn)
    # Stable sort keeps ties in row order for both directions.
    ranked = sorted(view.indices, key=key, reverse=want_max)
    return RowRef(ranked[int(n) - 1])


def _quantify(args: list[Arg], table: Table, fn: str, pred, mode: str) -> Scalar:
    view = _as_view(args[0], fn)
    col = _as_col(args[1], fn)
    target = _as_scalar(args[2], fn)
    hits = sum(1 for i in view.indices if pred(table.cell(i, col), target, table.columns[col]))
    if mode == "all":
        ok = hits == len(view.indices)  # vacuously true when empty
    else:
        ok = hits * 2 > len(view.indices)  # strictly more than half
    return Scalar(Bool(ok))


def eval_function(name: str, args: list[Arg], table: Table) -> ExecValue:
    """Apply one catalog function to already-evaluated arguments."""
    match name:
        case "filter_eq" | "filter_not_eq":
            view, col = _as_view(args[0], name), _as_col(args[1], name)
            target = _as_scalar(args[2], name)
            want = name == "filter_eq"
            return _filter(view, col, target, table, lambda c, t: values_eq(c, t) == want)
        case "filter_less" | "filter_greater" | "filter_less_eq" | "filter_greater_eq":
            view, col = _as_view(args[0], name), _as_col(args[1], name)
            target = _as_scalar(args[2], name)
            col_name = table.columns[col]
            test = {
                "filter_less": lambda c: c < 0,
                "filter_greater": lambda c: c > 0,
                "filter_less_eq": lambda c: c <= 0,
                "filter_greater_eq": lambda c: c >= 0,
            }[name]
            return _filter(view, col, target, table,
                           lambda c, t: test(values_cmp(c, t, name, col_name)))
        case "argmax" | "argmin":
            view, col = _as_view(args[0], name), _as_col(args[1], name)
            return RowRef(_extreme_row(view, col, table, name, want_max=name == "argmax"))
        case "nth_argmax":
            return _nth_row(args, table, name, want_max=True)
        case "nth_argmin":
            return _nth_row(args, table, name, want_max=False)
        case "hop":
            row, col = _as_row(args[0], name), _as_col(args[1], name)
            return Scalar(table.cell(row.index, col))
        case "count":
            return Scalar(Num(float(len(_as_view(args[0], name).indices))))
        case "sum":
            view, col = _as_view(args[0], name), _as_col(args[1], name)
            return Scalar(Num(math.fsum(_num_cells(view, col, table, name))))
        case "avg":
            view, col = _as_view(args[0], name), _as_col(args[1], name)
            if not view.indices:
                raise _empty_view_error(name)
            cells = _num_cells(view, col, table, name)
            return Scalar(Num(math.fsum(cells) / len(cells)))
        case "max" | "min":
            view, col = _as_view(args[0], name), _as_col(args[1], name)
            if not view.indices:
                raise _empty_view_error(name)
            cells = _num_cells(view, col, table, name)
            return Scalar(Num(max(cells) if name == "max" else min(cells)))
        case "add":
            return Scalar(Num(_as_num(args[0], name) + _as_num(args[1], name)))
        case "diff":
            return Scalar(Num(_as_num(args[0], name) - _as_num(args[1], name)))
        case "eq":
            return Scalar(Bool(values_eq(_as_scalar(args[0], name), _as_scalar(args[1], name))))
        case "not_eq":
            return Scalar(Bool(not values_eq(_as_scalar(args[0], name), _as_scalar(args[1], name))))
        case "less" | "greater" | "less_eq" | "greater_eq":
            c = values_cmp(_as_scalar(args[0], name), _as_scalar(args[1], name), name)
            ok = {"less": c < 0, "greater": c > 0, "less_eq": c <= 0, "greater_eq": c >= 0}[name]
            return Scalar(Bool(ok))
        case "round_eq":
            a, b = _as_num(args[0], name), _as_num(args[1], name)
            return Scalar(Bool(abs(a - b) <= 0.05 * max(1.0, abs(b))))
        case "and":
            return Scalar(Bool(_as_bool(args[0], name) and _as_bool(args[1], name)))
        case "or":
            return Scalar(Bool(_as_bool(args[0], name) or _as_bool(args[1], name)))
        case "not":
            return Scalar(Bool(not _as_bool(args[0], name)))
        case "all_eq" | "most_eq":
            return _quantify(args, table, name, lambda c, t, _col: values_eq(c, t),
                             "all" if name == "all_eq" else "most")
        case "all_less" | "most_less":
            return _quantify(args, table, name,
                             lambda c, t, col: values_cmp(c, t, name, col) < 0,
                             "all" if name == "all_less" else "most")
        case "all_greater" | "most_greater":
            return _quantify(args, table, name,
                             lambda c, t, col: values_cmp(c, t, name, col) > 0,
                             "all" if name == "all_greater" else "most")
        case "only":
            return Scalar(Bool(len(_as_view(args[0], name).indices) == 1))
    raise CheckError("E_UNKNOWN_FN", f"unknown function {name!r}", fn=name)


def exec_value_json(result: ExecValue):
    """JSON shape used by the CLI: {"type": ..., "value": ...}."""
    match result:
        case Scalar(Num(v)):
            return {"type": "num", "value": v}
        case Scalar(Str(s)):
            return {"type": "str", "value": s}
        case Scalar(Bool(b)):
            return {"type": "bool", "value": b}
        case View(indices):
            return {"type": "view", "value": list(indices)}
        case RowRef(index):
            return {"type": "row", "value": index}
    raise CheckError("E_INTERNAL_VALUE", f"unknown exec value {result!r}")
