"""Program language over tables.

Programs are nested applications of catalog functions, written
``fn(arg, ...)`` with quoted string literals, bare numbers, bare column
identifiers and the ``all_rows`` keyword. The same tree has an exactly
equivalent flat form: its preorder action sequence, which is what
grammar-constrained generation operates on.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources

from .errors import CheckError
from .tables import Bool, Num, Str, Table, Value, format_num, normalize


class ValType(Enum):
    VIEW = "view"
    ROW = "row"
    NUM = "num"
    STR = "str"
    BOOL = "bool"
    COL = "col"
    ANY = "any"


_VALUE_TYPES = frozenset({ValType.NUM, ValType.STR, ValType.BOOL})


def slot_accepts(slot: ValType, actual: ValType) -> bool:
    """Slot admission: exact match, except an ``any`` slot takes every
    value type (including ``any`` itself). Never view/row/col into any."""
    if slot == actual:
        return True
    return slot == ValType.ANY and actual in (_VALUE_TYPES | {ValType.ANY})


def value_type(value: Value) -> ValType:
    match value:
        case Num():
            return ValType.NUM
        case Str():
            return ValType.STR
        case Bool():
            return ValType.BOOL
    raise CheckError("E_INTERNAL_VALUE", f"unknown value {value!r}")


@dataclass(frozen=True)
class FunctionSig:
    name: str
    arg_types: tuple[ValType, ...]
    ret: ValType

    @property
    def arity(self) -> int:
        return len(self.arg_types)


class Catalog:
    """Function registry plus the trigger-word lexicon.

    The core catalog ships as a JSON data file; ``restrict`` produces a
    sub-catalog for trigger-pruned search without copying the lexicon.
    """

    def __init__(self, sigs: dict[str, FunctionSig], triggers: dict[str, frozenset[str]]):
        self.sigs = dict(sigs)
        self.triggers = {name: frozenset(triggers.get(name, ())) for name in sigs}

    @staticmethod
    @lru_cache(maxsize=1)
    def core() -> "Catalog":
        raw = resources.files("tablecheck").joinpath("data/catalog.json").read_text("utf-8")
        return Catalog.from_json(raw)

    @staticmethod
    def from_json(text: str) -> "Catalog":
        entries = json.loads(text)
        sigs = {}
        triggers = {}
        for e in entries:
            sig = FunctionSig(
                name=e["name"],
                arg_types=tuple(ValType(t) for t in e["args"]),
                ret=ValType(e["ret"]),
            )
            if sig.ret == ValType.COL:
                raise CheckError("E_INTERNAL_CATALOG", f"{sig.name} returns col")
            if sig.name in sigs:
                raise CheckError("E_INTERNAL_CATALOG", f"duplicate function {sig.name}")
            sigs[sig.name] = sig
            triggers[sig.name] = frozenset(e.get("triggers", ()))
        return Catalog(sigs, triggers)

    def get(self, name: str) -> FunctionSig | None:
        return self.sigs.get(name)

    def __contains__(self, name: str) -> bool:
        return name in self.sigs

    def names(self) -> list[str]:
        return sorted(self.sigs)

    def restrict(self, names) -> "Catalog":
        keep = set(names)
        return Catalog(
            {n: s for n, s in self.sigs.items() if n in keep},
            {n: t for n, t in self.triggers.items() if n in keep},
        )


# ---------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Func:
    name: str
    children: tuple["ProgramAst", ...]


@dataclass(frozen=True)
class Lit:
    value: Value


@dataclass(frozen=True)
class ColRef:
    name: str


@dataclass(frozen=True)
class AllRows:
    pass


ProgramAst = Func | Lit | ColRef | AllRows


def ast_depth(ast: ProgramAst) -> int:
    """Function-nesting depth: leaves are 0, each Func adds one level."""
    if isinstance(ast, Func):
        return 1 + max((ast_depth(c) for c in ast.children), default=0)
    return 0


def ast_size(ast: ProgramAst) -> int:
    if isinstance(ast, Func):
        return 1 + sum(ast_size(c) for c in ast.children)
    return 1


# ---------------------------------------------------------------------------
# Concrete syntax

_KEYWORDS = {"all_rows", "true", "false"}
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"[+-]?(?:\d+\.\d*|\.\d+|\d+)")
_SAFE_COL_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

_OPEN = {"(", "{"}
_CLOSE = {")", "}"}
_SEP = {",", ";"}


@dataclass(frozen=True)
class _Tok:
    kind: str  # "ident" | "number" | "string" | "(" | ")" | "," | "eof"
    text: str
    pos: int
    escaped_start: bool = False


def _syntax_error(pos: int, expected: str) -> CheckError:
    return CheckError("E_SYNTAX", f"expected {expected} at position {pos}", position=pos, expected=expected)


def _lex(text: str) -> list[_Tok]:
    toks = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _OPEN:
            toks.append(_Tok("(", "(", i))
            i += 1
        elif ch in _CLOSE:
            toks.append(_Tok(")", ")", i))
            i += 1
        elif ch in _SEP:
            toks.append(_Tok(",", ",", i))
            i += 1
        elif ch == '"':
            start = i
            i += 1
            out = []
            escaped_start = False
            closed = False
            while i < n:
                c = text[i]
                if c == "\\":
                    if i + 1 >= n:
                        raise _syntax_error(i + 1, "escaped character")
                    if not out:
                        escaped_start = True
                    out.append(text[i + 1])
                    i += 2
                elif c == '"':
                    i += 1
                    closed = True
                    break
                else:
                    out.append(c)
                    i += 1
            if not closed:
                raise _syntax_error(n, 'closing \'"\'')
            toks.append(_Tok("string", "".join(out), start, escaped_start))
        else:
            m = _NUMBER_RE.match(text, i)
            # An identifier char right after digits means this is not a number.
            if m and (m.end() >= n or not (text[m.end()].isalnum() or text[m.end()] == "_")):
                toks.append(_Tok("number", m.group(), i))
                i = m.end()
                continue
            m = _IDENT_RE.match(text, i)
            if m:
                toks.append(_Tok("ident", m.group(), i))
                i = m.end()
                continue
            raise _syntax_error(i, "expression")
    toks.append(_Tok("eof", "", n))
    return toks


class _Parser:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expr(self) -> ProgramAst:
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            return Lit(Num(float(tok.text)))
        if tok.kind == "string":
            self.advance()
            if tok.text.startswith("col:") and not tok.escaped_start:
                return ColRef(tok.text[4:])
            return Lit(Str(tok.text))
        if tok.kind == "ident":
            self.advance()
            if self.peek().kind == "(":
                self.advance()
                children = []
                if self.peek().kind != ")":
                    children.append(self.expr())
                    while self.peek().kind == ",":
                        self.advance()
                        children.append(self.expr())
                closing = self.peek()
                if closing.kind != ")":
                    raise _syntax_error(closing.pos, "',' or ')'")
                self.advance()
                return Func(tok.text, tuple(children))
            if tok.text == "all_rows":
                return AllRows()
            if tok.text == "true":
                return Lit(Bool(True))
            if tok.text == "false":
                return Lit(Bool(False))
            return ColRef(tok.text)
        raise _syntax_error(tok.pos, "expression")


def parse_program(text: str) -> ProgramAst:
    """Parse canonical program text to a structurally valid AST.

    Arity and typing are deliberately not checked here; that is
    ``typecheck``'s job.
    """
    parser = _Parser(_lex(text))
    ast = parser.expr()
    trailing = parser.peek()
    if trailing.kind != "eof":
        raise _syntax_error(trailing.pos, "end of input")
    return ast


def _quote(text: str, force_escape_start: bool = False) -> str:
    escaped = text.replace("\\", "\\\\").replace('"', '\\"')
    if force_escape_start and escaped:
        escaped = "\\" + escaped
    return f'"{escaped}"'


def print_program(ast: ProgramAst) -> str:
    """Canonical text; ``parse_program`` inverts it exactly."""
    match ast:
        case Func(name, children):
            return f"{name}({', '.join(print_program(c) for c in children)})"
        case Lit(Num(v)):
            return format_num(v)
        case Lit(Bool(b)):
            return "true" if b else "false"
        case Lit(Str(s)):
            # A plain string that happens to start with the column marker
            # must escape its first character so it parses back as a string.
            return _quote(s, force_escape_start=s.startswith("col:"))
        case ColRef(name):
            if _SAFE_COL_RE.match(name) and name not in _KEYWORDS:
                return name
            return _quote("col:" + name)
        case AllRows():
            return "all_rows"
    raise CheckError("E_INTERNAL_AST", f"unknown node {ast!r}")


# ---------------------------------------------------------------------------
# Typechecking

_TYPED_FUNC = "func"
_TYPED_LIT = "lit"
_TYPED_COL = "col"
_TYPED_ALL_ROWS = "all_rows"


@dataclass(frozen=True)
class TypedAst:
    kind: str  # "func" | "lit" | "col" | "all_rows"
    vtype: ValType
    name: str = ""
    value: Value | None = None
    col_index: int = -1
    children: tuple["TypedAst", ...] = ()

    def untyped(self) -> ProgramAst:
        if self.kind == _TYPED_FUNC:
            return Func(self.name, tuple(c.untyped() for c in self.children))
        if self.kind == _TYPED_LIT:
            return Lit(self.value)
        if self.kind == _TYPED_COL:
            return ColRef(self.name)
        return AllRows()


def typecheck(ast: ProgramAst, catalog: Catalog, table: Table) -> TypedAst:
    """Check arity/typing against the catalog and resolve column names.

    String literals sitting in a column slot are coerced to column
    references when their normalized text names a real column.
    """
    return _check(ast, catalog, table)


def _resolve_col(name: str, table: Table) -> int:
    idx = table.column_index(name)
    if idx is None:
        raise CheckError("E_NO_COLUMN", f"no column named {name!r}", name=name)
    return idx


def _check(ast: ProgramAst, catalog: Catalog, table: Table) -> TypedAst:
    match ast:
        case Lit(value):
            return TypedAst(kind=_TYPED_LIT, vtype=value_type(value), value=value)
        case ColRef(name):
            return TypedAst(kind=_TYPED_COL, vtype=ValType.COL, name=name,
                            col_index=_resolve_col(name, table))
        case AllRows():
            return TypedAst(kind=_TYPED_ALL_ROWS, vtype=ValType.VIEW)
        case Func(name, children):
            sig = catalog.get(name)
            if sig is None:
                raise CheckError("E_UNKNOWN_FN", f"unknown function {name!r}", fn=name)
            if len(children) != sig.arity:
                raise CheckError(
                    "E_ARITY",
                    f"{name} takes {sig.arity} arguments, got {len(children)}",
                    fn=name, got=len(children), want=sig.arity,
                )
            typed_children = []
            for i, (child, slot) in enumerate(zip(children, sig.arg_types)):
                if slot == ValType.COL:
                    if isinstance(child, ColRef):
                        typed_children.append(_check(child, catalog, table))
                        continue
                    if isinstance(child, Lit) and isinstance(child.value, Str):
                        idx = table.column_index(child.value.value)
                        if idx is not None:
                            typed_children.append(TypedAst(
                                kind=_TYPED_COL, vtype=ValType.COL,
                                name=child.value.value, col_index=idx))
                            continue
                    got = _static_type(child, catalog)
                    raise CheckError(
                        "E_TYPE",
                        f"{name} argument {i} is {got.value}, wants col",
                        fn=name, argpos=i, got=got.value, want="col",
                    )
                typed = _check(child, catalog, table)
                if not slot_accepts(slot, typed.vtype):
                    raise CheckError(
                        "E_TYPE",
                        f"{name} argument {i} is {typed.vtype.value}, wants {slot.value}",
                        fn=name, argpos=i, got=typed.vtype.value, want=slot.value,
                    )
                typed_children.append(typed)
            return TypedAst(kind=_TYPED_FUNC, vtype=sig.ret, name=name,
                            children=tuple(typed_children))
    raise CheckError("E_INTERNAL_AST", f"unknown node {ast!r}")


def _static_type(ast: ProgramAst, catalog: Catalog) -> ValType:
    """Best-effort type of a node without table resolution (error messages)."""
    match ast:
        case Lit(value):
            return value_type(value)
        case ColRef():
            return ValType.COL
        case AllRows():
            return ValType.VIEW
        case Func(name, _):
            sig = catalog.get(name)
            return sig.ret if sig else ValType.ANY
    return ValType.ANY


# ---------------------------------------------------------------------------
# Sequence-to-action form

class ActionKind(Enum):
    APPLY_FUNC = "apply_func"
    GEN_COL = "gen_col"
    GEN_LIT = "gen_lit"
    GEN_ALL_ROWS = "gen_all_rows"


@dataclass(frozen=True)
class Action:
    """One generation step; ``parent`` is the index of the APPLY_FUNC whose
    open slot this action fills (-1 for the root)."""

    kind: ActionKind
    name: str = ""
    value: Value | None = None
    parent: int = -1


@dataclass(frozen=True)
class LitSlot:
    """Template standing for any GEN_LIT of the given value type.

    Literal values are unbounded, so the legal-action oracle abstracts
    them by type.
    """

    vtype: ValType


ActionSeq = tuple[Action, ...]


def ast_to_actions(ast: ProgramAst | TypedAst) -> ActionSeq:
    """Preorder depth-first, left-to-right traversal of the tree."""
    if isinstance(ast, TypedAst):
        ast = ast.untyped()
    actions: list[Action] = []

    def walk(node: ProgramAst, parent: int) -> None:
        idx = len(actions)
        match node:
            case Func(name, children):
                actions.append(Action(ActionKind.APPLY_FUNC, name=name, parent=parent))
                for child in children:
                    walk(child, idx)
            case Lit(value):
                actions.append(Action(ActionKind.GEN_LIT, value=value, parent=parent))
            case ColRef(name):
                actions.append(Action(ActionKind.GEN_COL, name=name, parent=parent))
            case AllRows():
                actions.append(Action(ActionKind.GEN_ALL_ROWS, parent=parent))

    walk(ast, -1)
    return tuple(actions)


class _Frame:
    __slots__ = ("name", "sig", "action_index", "children")

    def __init__(self, name: str, sig: FunctionSig, action_index: int):
        self.name = name
        self.sig = sig
        self.action_index = action_index
        self.children: list[ProgramAst] = []


class _TreeBuilder:
    """Frontier machine shared by actions_to_ast and legal_next_actions.

    Tracks the stack of partially applied functions; the next open slot is
    always the top frame's next missing argument (or the root).
    """

    def __init__(self, catalog: Catalog, root_type: ValType | None):
        self.catalog = catalog
        self.root_type = root_type
        self.stack: list[_Frame] = []
        self.result: ProgramAst | None = None
        self.count = 0

    @property
    def closed(self) -> bool:
        return self.result is not None

    def slot(self) -> tuple[ValType | None, int]:
        """(type required at the open slot or None if unconstrained,
        index of the action that opened it)."""
        if self.stack:
            frame = self.stack[-1]
            return frame.sig.arg_types[len(frame.children)], frame.action_index
        return self.root_type, -1

    def _slot_takes(self, slot: ValType | None, actual: ValType) -> bool:
        if slot is None:
            return True
        if slot == ValType.COL:
            return actual == ValType.COL
        return slot_accepts(slot, actual)

    def _emit(self, node: ProgramAst) -> None:
        while True:
            if not self.stack:
                self.result = node
                return
            frame = self.stack[-1]
            frame.children.append(node)
            if len(frame.children) < frame.sig.arity:
                return
            self.stack.pop()
            node = Func(frame.name, tuple(frame.children))

    def apply(self, action: Action, index: int) -> None:
        if self.closed:
            raise CheckError("E_EXTRA_ACTION", f"action {index} after the tree closed", index=index)
        slot, opener = self.slot()
        if action.parent != opener:
            raise CheckError(
                "E_ILLEGAL_ACTION",
                f"action {index} has parent {action.parent}, slot opened by {opener}",
                index=index,
            )

        def illegal(why: str) -> CheckError:
            return CheckError("E_ILLEGAL_ACTION", f"action {index}: {why}", index=index)

        match action.kind:
            case ActionKind.APPLY_FUNC:
                sig = self.catalog.get(action.name)
                if sig is None:
                    raise illegal(f"unknown function {action.name!r}")
                if not self._slot_takes(slot, sig.ret):
                    raise illegal(f"{action.name} returns {sig.ret.value}, slot wants {slot.value}")
                if sig.arity == 0:
                    self._emit(Func(action.name, ()))
                else:
                    self.stack.append(_Frame(action.name, sig, index))
            case ActionKind.GEN_COL:
                if slot is not None and slot != ValType.COL:
                    raise illegal(f"column reference in a {slot.value} slot")
                self._emit(ColRef(action.name))
            case ActionKind.GEN_LIT:
                vt = value_type(action.value)
                if not self._slot_takes(slot, vt):
                    raise illegal(f"{vt.value} literal in a {slot.value} slot")
                self._emit(Lit(action.value))
            case ActionKind.GEN_ALL_ROWS:
                if not self._slot_takes(slot, ValType.VIEW):
                    raise illegal(f"all_rows in a {slot.value} slot")
                self._emit(AllRows())
        self.count += 1


def actions_to_ast(seq: ActionSeq, catalog: Catalog) -> ProgramAst:
    """Inverse of ast_to_actions; validates structure as it rebuilds."""
    builder = _TreeBuilder(catalog, root_type=None)
    for i, action in enumerate(seq):
        builder.apply(action, i)
    if not builder.closed:
        raise CheckError("E_INCOMPLETE", "action sequence leaves open slots")
    return builder.result


def legal_next_actions(
    prefix: ActionSeq,
    catalog: Catalog,
    table: Table,
    root_type: ValType = ValType.BOOL,
) -> frozenset[Action | LitSlot]:
    """Exactly the actions that keep the prefix extendable to a well-typed
    program of the requested root type. Literal slots are returned as
    type-level ``LitSlot`` templates; the empty set means the tree closed.
    """
    builder = _TreeBuilder(catalog, root_type=root_type)
    for i, action in enumerate(prefix):
        try:
            builder.apply(action, i)
        except CheckError as exc:
            raise CheckError("E_ILLEGAL_PREFIX", f"prefix invalid: {exc}", index=i) from exc
    if builder.closed:
        return frozenset()
    slot, opener = builder.slot()
    out: set[Action | LitSlot] = set()
    for name in catalog.names():
        sig = catalog.sigs[name]
        if builder._slot_takes(slot, sig.ret) and sig.ret != ValType.COL:
            out.add(Action(ActionKind.APPLY_FUNC, name=name, parent=opener))
    if slot == ValType.COL:
        for col in table.columns:
            out.add(Action(ActionKind.GEN_COL, name=col, parent=opener))
    if slot is None or slot == ValType.VIEW:
        out.add(Action(ActionKind.GEN_ALL_ROWS, parent=opener))
    if slot is None or slot == ValType.ANY:
        out.update(LitSlot(t) for t in (ValType.NUM, ValType.STR, ValType.BOOL))
    elif slot in _VALUE_TYPES:
        out.add(LitSlot(slot))
    return frozenset(out)


def is_legal_extension(
    prefix: ActionSeq,
    action: Action,
    catalog: Catalog,
    table: Table,
    root_type: ValType = ValType.BOOL,
) -> bool:
    """Membership of a concrete action in legal_next_actions(prefix)."""
    legal = legal_next_actions(prefix, catalog, table, root_type)
    if action.kind == ActionKind.GEN_LIT:
        return LitSlot(value_type(action.value)) in legal
    if action.kind == ActionKind.GEN_COL:
        # Columns are enumerated with the table's exact surface names.
        return any(
            isinstance(a, Action)
            and a.kind == ActionKind.GEN_COL
            and normalize(a.name) == normalize(action.name)
            and a.parent == action.parent
            for a in legal
        )
    return action in legal
