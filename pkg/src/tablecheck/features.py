"""Instance encoding: statement/table/program to tokens, mask and spans."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CheckError
from .graphs import MaskMatrix, NodeKind, _assemble, build_mask
from .programs import Catalog, TypedAst, parse_program, typecheck
from .tables import Table

LABELS = ("ENTAILED", "REFUTED")


def label_index(label: str) -> int:
    try:
        return LABELS.index(label.upper())
    except ValueError:
        raise CheckError("E_SCHEMA", f"unknown label {label!r}") from None


@dataclass
class PreparedExample:
    """Tokenized instance before vocabulary lookup."""

    tokens: tuple[str, ...]
    mask: np.ndarray  # uint8 (T, T)
    leaf_spans: dict[tuple[int, ...], tuple[int, int]]
    typed_ast: TypedAst | None
    label: int


@dataclass
class EncodedExample:
    token_ids: np.ndarray
    mask: np.ndarray
    leaf_spans: dict[tuple[int, ...], tuple[int, int]]
    typed_ast: TypedAst | None
    label: int


def prepare_example(
    statement: str,
    table: Table,
    program: str | TypedAst | None,
    catalog: Catalog,
    label: str | int | None = None,
    no_graph_mask: bool = False,
) -> PreparedExample:
    typed: TypedAst | None
    if isinstance(program, str):
        typed = typecheck(parse_program(program), catalog, table)
    else:
        typed = program
    graph, layout = _assemble(statement, table, typed)
    mask = MaskMatrix.all_ones(layout.n) if no_graph_mask else build_mask(graph, layout)
    leaf_spans = {
        node.path: layout.spans[node.id]
        for node in graph.nodes
        if node.kind == NodeKind.PROG_ARG
    }
    if isinstance(label, str):
        label = label_index(label)
    return PreparedExample(
        tokens=layout.tokens,
        mask=mask.g,
        leaf_spans=leaf_spans,
        typed_ast=typed,
        label=-1 if label is None else label,
    )
