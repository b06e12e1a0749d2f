"""AST for the CSL procedural dialect: expressions, queries, statements.

Nodes compare structurally; source spans are carried but excluded from
equality so a reparsed pretty-print compares equal to the original tree.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Optional, Union


@dataclass(frozen=True)
class Span:
    line: int
    col: int
    end_line: int
    end_col: int

    def to(self, other: "Span") -> "Span":
        return Span(self.line, self.col, other.end_line, other.end_col)


class ScalarType(str, Enum):
    INT = "INT"
    DECIMAL = "DECIMAL"
    VARCHAR = "VARCHAR"
    BOOL = "BOOL"


def _span_field():
    return field(default=None, kw_only=True, compare=False, repr=False)


@dataclass
class Node:
    span: Optional[Span] = _span_field()


# ---------------------------------------------------------------- expressions

@dataclass
class Expr(Node):
    pass


@dataclass
class Const(Expr):
    # python payload: None | bool | int | str | values.Dec
    value: object = None


@dataclass
class VarRef(Expr):
    name: str = ""


@dataclass
class ColRef(Expr):
    name: str = ""
    qualifier: Optional[str] = None


@dataclass
class FetchStatus(Expr):
    """@@FETCH_STATUS: 0 after a successful fetch, -1 past the end."""


@dataclass
class Unary(Expr):
    op: str = ""  # neg | not | isnull | notnull
    operand: Expr = None


@dataclass
class Binary(Expr):
    op: str = ""  # + - * / = <> < <= > >= and or
    left: Expr = None
    right: Expr = None


@dataclass
class FuncCall(Expr):
    name: str = ""  # abs | concat | coalesce | upper
    args: list[Expr] = field(default_factory=list)


@dataclass
class ScalarSubquery(Expr):
    query: "QuerySpec" = None


SCALAR_FUNCS = {"abs", "concat", "coalesce", "upper"}
BUILTIN_AGGS = {"count", "sum", "min", "max", "avg"}


# --------------------------------------------------------------------- query

@dataclass
class AggCall(Node):
    """Aggregate invocation in a select list; star is COUNT(*)."""
    name: str = ""
    args: list[Expr] = field(default_factory=list)
    aliases: tuple[str, ...] = ()
    star: bool = False


@dataclass
class SelectItem(Node):
    expr: Union[Expr, AggCall, None] = None  # None means bare *
    alias: Optional[str] = None

    @property
    def is_star(self) -> bool:
        return self.expr is None

    @property
    def is_aggregate(self) -> bool:
        return isinstance(self.expr, AggCall)


@dataclass
class FromItem(Node):
    # exactly one of table/query is set; is_local marks a @table variable
    table: Optional[str] = None
    query: Optional["QuerySpec"] = None
    alias: Optional[str] = None
    is_local: bool = False


@dataclass
class Cte(Node):
    """WITH name AS (base UNION ALL recursive)."""
    name: str = ""
    base: "QuerySpec" = None
    recursive: "QuerySpec" = None


@dataclass
class QuerySpec(Node):
    select_items: list[SelectItem] = field(default_factory=list)
    from_items: list[FromItem] = field(default_factory=list)
    where: Optional[Expr] = None
    # pre-aggregation sort (SORTED BY): feeds order-sensitive aggregates
    pre_sort: list[tuple[Expr, str]] = field(default_factory=list)
    group_by: list[Expr] = field(default_factory=list)
    order_by: list[tuple[Expr, str]] = field(default_factory=list)
    top: Optional[int] = None
    cte: Optional[Cte] = None

    @property
    def projections(self) -> list[SelectItem]:
        return [it for it in self.select_items if not it.is_aggregate]

    @property
    def aggregates(self) -> list[AggCall]:
        return [it.expr for it in self.select_items if it.is_aggregate]

    @property
    def has_aggregation(self) -> bool:
        return bool(self.group_by) or any(it.is_aggregate for it in self.select_items)


# ---------------------------------------------------------------- statements

@dataclass
class Stmt(Node):
    pass


@dataclass
class Declare(Stmt):
    name: str = ""
    type: ScalarType = ScalarType.INT
    init: Optional[Expr] = None


@dataclass
class DeclareTable(Stmt):
    name: str = ""
    columns: list[tuple[str, ScalarType]] = field(default_factory=list)


@dataclass
class Assign(Stmt):
    name: str = ""
    expr: Expr = None


@dataclass
class AssignFromQuery(Stmt):
    """SELECT @a = e1, @b = e2 FROM ...; assigns the last row, nothing on empty."""
    targets: list[str] = field(default_factory=list)
    query: QuerySpec = None


@dataclass
class If(Stmt):
    cond: Expr = None
    then: list[Stmt] = field(default_factory=list)
    orelse: list[Stmt] = field(default_factory=list)


@dataclass
class While(Stmt):
    cond: Expr = None
    body: list[Stmt] = field(default_factory=list)


@dataclass
class For(Stmt):
    init: Assign = None
    cond: Expr = None
    incr: Assign = None
    body: list[Stmt] = field(default_factory=list)


@dataclass
class CursorDeclare(Stmt):
    name: str = ""
    query: QuerySpec = None


@dataclass
class CursorOpen(Stmt):
    name: str = ""


@dataclass
class Fetch(Stmt):
    cursor: str = ""
    targets: list[str] = field(default_factory=list)


@dataclass
class CursorClose(Stmt):
    name: str = ""


@dataclass
class CursorDeallocate(Stmt):
    name: str = ""


@dataclass
class InsertLocal(Stmt):
    table: str = ""
    values: list[Expr] = field(default_factory=list)


@dataclass
class PersistentDml(Stmt):
    """DML against a catalog table; parsed only on request, and always a
    reason to leave the enclosing loop alone."""
    kind: str = ""  # insert | update | delete
    table: str = ""
    values: list[Expr] = field(default_factory=list)
    set_col: Optional[str] = None
    set_expr: Optional[Expr] = None
    where: Optional[Expr] = None


@dataclass
class Return(Stmt):
    expr: Optional[Expr] = None


@dataclass
class Skip(Stmt):
    pass


@dataclass
class Param(Node):
    name: str = ""
    type: ScalarType = ScalarType.INT
    default: Optional[Expr] = None


@dataclass
class Program(Node):
    name: str = ""
    params: list[Param] = field(default_factory=list)
    return_type: Optional[ScalarType] = None
    body: list[Stmt] = field(default_factory=list)
    is_function: bool = True


# ---------------------------------------------------------------- traversals

def expr_vars(e: Optional[Expr]) -> list[str]:
    """Variable names read by e, in evaluation (reading) order, duplicates kept."""
    out: list[str] = []
    _expr_vars(e, out)
    return out


def _expr_vars(e, out):
    if e is None:
        return
    if isinstance(e, VarRef):
        out.append(e.name)
    elif isinstance(e, Unary):
        _expr_vars(e.operand, out)
    elif isinstance(e, Binary):
        _expr_vars(e.left, out)
        _expr_vars(e.right, out)
    elif isinstance(e, FuncCall):
        for a in e.args:
            _expr_vars(a, out)
    elif isinstance(e, ScalarSubquery):
        _query_vars(e.query, out)
    elif isinstance(e, AggCall):
        for a in e.args:
            _expr_vars(a, out)


def query_vars(q: Optional[QuerySpec]) -> list[str]:
    """Outer variables a query reads (correlated constants), reading order."""
    out: list[str] = []
    _query_vars(q, out)
    return out


def _query_vars(q, out):
    if q is None:
        return
    if q.cte is not None:
        _query_vars(q.cte.base, out)
        _query_vars(q.cte.recursive, out)
    for it in q.select_items:
        _expr_vars(it.expr, out)
    for fi in q.from_items:
        if fi.query is not None:
            _query_vars(fi.query, out)
    _expr_vars(q.where, out)
    for e, _ in q.pre_sort:
        _expr_vars(e, out)
    for e in q.group_by:
        _expr_vars(e, out)
    for e, _ in q.order_by:
        _expr_vars(e, out)


def stmt_reads(s: Stmt) -> list[str]:
    """Variables read by the statement itself (not nested blocks), in order."""
    if isinstance(s, Declare):
        return expr_vars(s.init)
    if isinstance(s, Assign):
        return expr_vars(s.expr)
    if isinstance(s, AssignFromQuery):
        return query_vars(s.query)
    if isinstance(s, (If, While)):
        return expr_vars(s.cond)
    if isinstance(s, CursorDeclare):
        return query_vars(s.query)
    if isinstance(s, InsertLocal):
        out: list[str] = []
        for e in s.values:
            _expr_vars(e, out)
        return out
    if isinstance(s, PersistentDml):
        out = []
        for e in s.values:
            _expr_vars(e, out)
        _expr_vars(s.set_expr, out)
        _expr_vars(s.where, out)
        return out
    if isinstance(s, Return):
        return expr_vars(s.expr)
    return []


def stmt_writes(s: Stmt) -> list[str]:
    """Variables the statement itself defines."""
    if isinstance(s, Declare):
        return [s.name]
    if isinstance(s, Assign):
        return [s.name]
    if isinstance(s, AssignFromQuery):
        return list(s.targets)
    if isinstance(s, Fetch):
        return list(s.targets)
    return []


def block_statements(block: list[Stmt]):
    """Yield every statement in a block, depth-first, pre-order."""
    for s in block:
        yield s
        if isinstance(s, If):
            yield from block_statements(s.then)
            yield from block_statements(s.orelse)
        elif isinstance(s, While):
            yield from block_statements(s.body)
        elif isinstance(s, For):
            yield s.init
            yield s.incr
            yield from block_statements(s.body)


def block_reads_in_order(block: list[Stmt]) -> list[str]:
    """Variable reads across a block in execution-reading order (dups kept)."""
    out: list[str] = []
    for s in block:
        if isinstance(s, If):
            out.extend(expr_vars(s.cond))
            out.extend(block_reads_in_order(s.then))
            out.extend(block_reads_in_order(s.orelse))
        elif isinstance(s, While):
            out.extend(expr_vars(s.cond))
            out.extend(block_reads_in_order(s.body))
        elif isinstance(s, For):
            out.extend(expr_vars(s.init.expr))
            out.extend(expr_vars(s.cond))
            out.extend(block_reads_in_order(s.body))
            out.extend(expr_vars(s.incr.expr))
        else:
            out.extend(stmt_reads(s))
    return out


def block_writes(block: list[Stmt]) -> set[str]:
    out: set[str] = set()
    for s in block_statements(block):
        out.update(stmt_writes(s))
    return out
