"""Statement/table/program graph and its token-level attention mask.

Everything is linearized into one token sequence (table, then statement,
then program, then a single summary token). Graph nodes own contiguous
token spans; graph edges say which spans are related context for each
other. The mask is the N x N 0/1 expansion of that relation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import CheckError
from .programs import TypedAst
from .tables import Num, Table, format_value, normalize, parse_value

SUMMARY_TOKEN = "[SUM]"

SEG_TABLE = "TABLE"
SEG_STMT = "STMT"
SEG_PROG = "PROG"
SEG_SUMMARY = "SUMMARY"

_PUNCT = ".,;:!?()\"'"


class NodeKind(Enum):
    STMT_TOK = "stmt_tok"
    COLUMN = "column"
    ROW = "row"
    CELL = "cell"
    PROG_FUNC = "prog_func"
    PROG_ARG = "prog_arg"
    SUMMARY = "summary"


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    text: str
    row: int = -1
    col: int = -1
    tok: int = -1
    path: tuple[int, ...] = ()


@dataclass(frozen=True)
class Link:
    """Statement token range [start, end) matched to a table node."""

    start: int
    end: int
    kind: str  # "cell" | "column"
    row: int = -1
    col: int = -1


@dataclass
class HeteroGraph:
    nodes: list[Node]
    edges: set[tuple[int, int]] = field(default_factory=set)

    def add_edge(self, a: int, b: int) -> None:
        if a == b:
            return  # self-relation is implicit
        self.edges.add((min(a, b), max(a, b)))

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.edges


@dataclass(frozen=True)
class TokenLayout:
    tokens: tuple[str, ...]
    segments: tuple[str, ...]
    spans: dict[int, tuple[int, int]]  # node id -> [start, end)

    @property
    def n(self) -> int:
        return len(self.tokens)


def tokenize_statement(text: str) -> list[str]:
    """Whitespace split with leading/trailing punctuation peeled off into
    separate tokens. Internal punctuation (e.g. "1,204") stays attached."""
    tokens: list[str] = []
    for piece in text.split():
        start, end = 0, len(piece)
        lead = []
        while start < end and piece[start] in _PUNCT:
            lead.append(piece[start])
            start += 1
        trail = []
        while end > start and piece[end - 1] in _PUNCT:
            trail.append(piece[end - 1])
            end -= 1
        tokens.extend(lead)
        if end > start:
            tokens.append(piece[start:end])
        tokens.extend(reversed(trail))
    return tokens


def _token_number(token: str) -> float | None:
    value = parse_value(token.strip(_PUNCT))
    return value.value if isinstance(value, Num) else None


def _cell_tokens(value) -> list[str]:
    return format_value(value).split() or [""]


def link_entities(stmt_tokens: list[str], table: Table) -> list[Link]:
    """Greedy longest-match linking of statement n-grams to cells and
    columns by normalized text; single numeric tokens also match numeric
    cells by value."""
    col_by_norm: dict[str, list[int]] = {}
    for j, name in enumerate(table.columns):
        col_by_norm.setdefault(normalize(name), []).append(j)
    cell_by_norm: dict[str, list[tuple[int, int]]] = {}
    num_cells: dict[float, list[tuple[int, int]]] = {}
    max_len = 1
    for r, row in enumerate(table.rows):
        for c, cell in enumerate(row):
            surface = format_value(cell)
            norm = normalize(surface)
            if norm:
                cell_by_norm.setdefault(norm, []).append((r, c))
                max_len = max(max_len, len(surface.split()))
            if isinstance(cell, Num):
                num_cells.setdefault(cell.value, []).append((r, c))
    for name in table.columns:
        max_len = max(max_len, len(name.split()))

    links: list[Link] = []
    i = 0
    while i < len(stmt_tokens):
        matched_len = 0
        for length in range(min(max_len, len(stmt_tokens) - i), 0, -1):
            cand = normalize(" ".join(stmt_tokens[i:i + length]))
            if not cand:
                continue
            found: list[Link] = []
            for j in col_by_norm.get(cand, ()):
                found.append(Link(i, i + length, "column", col=j))
            cells = list(cell_by_norm.get(cand, ()))
            if length == 1:
                value = _token_number(stmt_tokens[i])
                if value is not None:
                    for rc in num_cells.get(value, ()):
                        if rc not in cells:
                            cells.append(rc)
            for r, c in cells:
                found.append(Link(i, i + length, "cell", row=r, col=c))
            if found:
                links.extend(found)
                matched_len = length
                break
        i += matched_len if matched_len else 1
    return links


def _match_spans(stmt_tokens: list[str], surface: str) -> list[tuple[int, int]]:
    """All statement spans whose normalized text (or numeric value, for
    single tokens) equals the given surface."""
    target_norm = normalize(surface)
    target_num = parse_value(surface.strip()).value if isinstance(parse_value(surface.strip()), Num) else None
    spans = []
    width = max(1, len(surface.split()))
    for i in range(len(stmt_tokens)):
        if i + width <= len(stmt_tokens):
            if target_norm and normalize(" ".join(stmt_tokens[i:i + width])) == target_norm:
                spans.append((i, i + width))
                continue
        if target_num is not None and _token_number(stmt_tokens[i]) == target_num:
            spans.append((i, i + 1))
    return spans


class _Assembler:
    """Builds graph nodes, token layout and edges in one deterministic pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.tokens: list[str] = []
        self.segments: list[str] = []
        self.spans: dict[int, tuple[int, int]] = {}

    def add_node(self, kind: NodeKind, tokens: list[str], segment: str, **loc) -> int:
        node_id = len(self.nodes)
        start = len(self.tokens)
        self.tokens.extend(tokens)
        self.segments.extend([segment] * len(tokens))
        self.spans[node_id] = (start, start + len(tokens))
        self.nodes.append(Node(id=node_id, kind=kind, text=" ".join(tokens), **loc))
        return node_id


def _assemble(
    statement: str,
    table: Table | None,
    typed_ast: TypedAst | None,
) -> tuple[HeteroGraph, TokenLayout]:
    asm = _Assembler()
    stmt_tokens = tokenize_statement(statement)

    col_nodes: list[int] = []
    cell_nodes: dict[tuple[int, int], int] = {}
    if table is not None:
        for j, name in enumerate(table.columns):
            col_nodes.append(asm.add_node(NodeKind.COLUMN, name.split() or [name],
                                          SEG_TABLE, col=j))
        for r in range(table.n_rows):
            row_node = asm.add_node(NodeKind.ROW, [f"[R{r}]"], SEG_TABLE, row=r)
            for c in range(table.n_cols):
                cell_nodes[(r, c)] = asm.add_node(
                    NodeKind.CELL, _cell_tokens(table.cell(r, c)), SEG_TABLE, row=r, col=c)
            # row marker participates like a row-name stand-in
            cell_nodes[(r, -1)] = row_node

    stmt_nodes = [
        asm.add_node(NodeKind.STMT_TOK, [tok], SEG_STMT, tok=k)
        for k, tok in enumerate(stmt_tokens)
    ]

    prog_nodes: dict[tuple[int, ...], int] = {}
    arg_leaves: list[tuple[tuple[int, ...], TypedAst]] = []
    if typed_ast is not None:
        def walk(node: TypedAst, path: tuple[int, ...]) -> None:
            if node.kind == "func":
                prog_nodes[path] = asm.add_node(NodeKind.PROG_FUNC, [node.name], SEG_PROG, path=path)
                for i, child in enumerate(node.children):
                    walk(child, path + (i,))
                return
            if node.kind == "col":
                tokens = node.name.split() or [node.name]
            elif node.kind == "all_rows":
                tokens = ["all_rows"]
            else:
                tokens = _cell_tokens(node.value)
            prog_nodes[path] = asm.add_node(NodeKind.PROG_ARG, tokens, SEG_PROG, path=path)
            arg_leaves.append((path, node))

        walk(typed_ast, ())

    if not asm.tokens:
        raise CheckError("E_EMPTY", "nothing to linearize")
    summary = asm.add_node(NodeKind.SUMMARY, [SUMMARY_TOKEN], SEG_SUMMARY)

    graph = HeteroGraph(nodes=asm.nodes)

    if table is not None:
        for r in range(table.n_rows):
            row_node = cell_nodes[(r, -1)]
            row_cells = [cell_nodes[(r, c)] for c in range(table.n_cols)]
            for c, cell in enumerate(row_cells):
                graph.add_edge(cell, col_nodes[c])   # cell <-> its column
                graph.add_edge(cell, row_node)        # cell <-> its row marker
            for a in range(len(row_cells)):           # same-row cells fully connected
                for b in range(a + 1, len(row_cells)):
                    graph.add_edge(row_cells[a], row_cells[b])

    for a in range(len(stmt_nodes)):  # statement tokens all related
        for b in range(a + 1, len(stmt_nodes)):
            graph.add_edge(stmt_nodes[a], stmt_nodes[b])

    if table is not None and stmt_nodes:
        for link in link_entities(stmt_tokens, table):
            if link.kind == "column":
                target = col_nodes[link.col]
            else:
                target = cell_nodes[(link.row, link.col)]
            for k in range(link.start, link.end):
                graph.add_edge(stmt_nodes[k], target)

    if typed_ast is not None:
        for path, node_id in prog_nodes.items():
            if path:
                parent = prog_nodes[path[:-1]]
                graph.add_edge(node_id, parent)  # program tree structure
        for path, leaf in arg_leaves:
            node_id = prog_nodes[path]
            if leaf.kind == "col":
                if table is not None:
                    if leaf.col_index >= len(col_nodes):
                        raise CheckError("E_BOUNDS", f"column index {leaf.col_index} out of range")
                    graph.add_edge(node_id, col_nodes[leaf.col_index])
                surface = leaf.name
            elif leaf.kind == "lit":
                surface = format_value(leaf.value)
            else:
                continue  # all_rows has no textual origin
            for start, end in _match_spans(stmt_tokens, surface):
                for k in range(start, end):
                    graph.add_edge(stmt_nodes[k], node_id)

    for node in graph.nodes[:-1]:
        graph.add_edge(summary, node.id)

    layout = TokenLayout(tokens=tuple(asm.tokens), segments=tuple(asm.segments),
                         spans=dict(asm.spans))
    return graph, layout


def build_graph(statement: str, table: Table | None, typed_ast: TypedAst | None = None) -> HeteroGraph:
    """Construct the heterogeneous statement/table/program graph."""
    return _assemble(statement, table, typed_ast)[0]


def linearize(
    graph: HeteroGraph,
    statement: str,
    table: Table | None,
    typed_ast: TypedAst | None = None,
) -> TokenLayout:
    """Token layout for a graph built from the same inputs."""
    rebuilt, layout = _assemble(statement, table, typed_ast)
    if len(rebuilt.nodes) != len(graph.nodes):
        raise CheckError("E_BOUNDS", "graph does not match the given inputs")
    return layout


@dataclass(frozen=True)
class MaskMatrix:
    """Symmetric 0/1 attention mask with a guaranteed diagonal and a fully
    connected summary token in the last position."""

    g: np.ndarray

    def __post_init__(self):
        g = self.g
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise CheckError("E_MASK_SHAPE", f"mask must be square, got {g.shape}")
        if not np.array_equal(g, g.T):
            raise CheckError("E_INTERNAL_MASK", "mask not symmetric")
        if not np.all(np.diagonal(g) == 1):
            raise CheckError("E_INTERNAL_MASK", "mask diagonal must be ones")
        if not (np.all(g[-1, :] == 1) and np.all(g[:, -1] == 1)):
            raise CheckError("E_INTERNAL_MASK", "summary row/column must be ones")

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @staticmethod
    def all_ones(n: int) -> "MaskMatrix":
        return MaskMatrix(np.ones((n, n), dtype=np.uint8))


def build_mask(graph: HeteroGraph, layout: TokenLayout) -> MaskMatrix:
    """Expand node spans and edges into the token-level mask."""
    n = layout.n
    g = np.zeros((n, n), dtype=np.uint8)
    for node_id, (start, end) in layout.spans.items():
        g[start:end, start:end] = 1  # positions sharing a node see each other
    for a, b in graph.edges:
        sa, ea = layout.spans[a]
        sb, eb = layout.spans[b]
        g[sa:ea, sb:eb] = 1
        g[sb:eb, sa:ea] = 1
    np.fill_diagonal(g, 1)
    g[-1, :] = 1
    g[:, -1] = 1
    return MaskMatrix(g)


def mask_to_text(mask: MaskMatrix) -> str:
    lines = [f"N={mask.n}"]
    lines.extend("".join("1" if x else "0" for x in row) for row in mask.g)
    return "\n".join(lines) + "\n"


def mask_from_text(text: str) -> MaskMatrix:
    lines = text.strip().split("\n")
    if not lines or not lines[0].startswith("N="):
        raise CheckError("E_SCHEMA", "mask file must start with N=<int>")
    n = int(lines[0][2:])
    if len(lines) != n + 1:
        raise CheckError("E_SCHEMA", f"expected {n} mask rows, got {len(lines) - 1}")
    g = np.array([[1 if ch == "1" else 0 for ch in line] for line in lines[1:]], dtype=np.uint8)
    return MaskMatrix(g)


def graph_to_json(graph: HeteroGraph) -> dict:
    return {
        "nodes": [
            {
                "id": node.id,
                "kind": node.kind.value,
                "text": node.text,
                "row": node.row,
                "col": node.col,
                "tok": node.tok,
                "path": list(node.path),
            }
            for node in graph.nodes
        ],
        "edges": sorted([a, b] for a, b in graph.edges),
    }
