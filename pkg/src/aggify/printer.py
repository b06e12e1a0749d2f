"""Canonical pretty-printer. parse(print(ast)) reproduces the tree, so the
printed form is the byte-comparison currency used by transform outputs."""
from __future__ import annotations

from .astnodes import (
    AggCall, Assign, AssignFromQuery, Binary, ColRef, Const, CursorClose,
    CursorDeallocate, CursorDeclare, CursorOpen, Declare, DeclareTable, Expr,
    Fetch, FetchStatus, For, FromItem, FuncCall, If, InsertLocal, Param,
    PersistentDml, Program, QuerySpec, Return, ScalarSubquery, SelectItem,
    Skip, Stmt, Unary, VarRef, While,
)
from .values import Dec, dec_to_string

_INDENT = "    "

# precedence: higher binds tighter
_PREC = {"or": 1, "and": 2, "not": 3,
         "=": 4, "<>": 4, "<": 4, "<=": 4, ">": 4, ">=": 4,
         "+": 5, "-": 5, "*": 6, "/": 6,
         "neg": 7, "isnull": 8, "notnull": 8}


def print_expr(e: Expr) -> str:
    return _expr(e, 0)


def _expr(e: Expr, parent_prec: int, right_side: bool = False) -> str:
    if isinstance(e, Const):
        return _const(e.value)
    if isinstance(e, VarRef):
        return f"@{e.name}"
    if isinstance(e, ColRef):
        return f"{e.qualifier}.{e.name}" if e.qualifier else e.name
    if isinstance(e, FetchStatus):
        return "@@FETCH_STATUS"
    if isinstance(e, Unary):
        if e.op == "not":
            prec = _PREC["not"]
            inner = _expr(e.operand, prec)
            text = f"NOT {inner}"
        elif e.op == "neg":
            prec = _PREC["neg"]
            inner = _expr(e.operand, prec)
            if inner.startswith("-"):
                inner = f"({inner})"  # avoid lexing as a -- comment
            text = f"-{inner}"
        else:
            prec = _PREC["isnull"]
            suffix = "IS NULL" if e.op == "isnull" else "IS NOT NULL"
            text = f"{_expr(e.operand, prec)} {suffix}"
        return f"({text})" if prec < parent_prec or (prec == parent_prec and right_side) else text
    if isinstance(e, Binary):
        prec = _PREC[e.op]
        op = e.op.upper() if e.op in ("and", "or") else e.op
        left = _expr(e.left, prec)
        right = _expr(e.right, prec, right_side=True)
        text = f"{left} {op} {right}"
        if prec < parent_prec or (prec == parent_prec and right_side):
            return f"({text})"
        # comparisons are non-associative: a = b = c never prints bare
        if prec == 4 and parent_prec == 4:
            return f"({text})"
        return text
    if isinstance(e, FuncCall):
        args = ", ".join(_expr(a, 0) for a in e.args)
        return f"{e.name}({args})"
    if isinstance(e, ScalarSubquery):
        return f"({print_query(e.query)})"
    if isinstance(e, AggCall):
        return _agg_call(e)
    raise TypeError(f"cannot print {e!r}")


def _const(v) -> str:
    if v is None:
        return "NULL"
    if isinstance(v, bool):
        return "TRUE" if v else "FALSE"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, Dec):
        return dec_to_string(v)
    if isinstance(v, str):
        return "'" + v.replace("'", "''") + "'"
    raise TypeError(f"cannot print constant {v!r}")


def _agg_call(a: AggCall) -> str:
    name = a.name
    inner = "*" if a.star else ", ".join(_expr(x, 0) for x in a.args)
    return f"{name}({inner})"


def _select_item(it: SelectItem) -> str:
    if it.is_star:
        return "*"
    if isinstance(it.expr, AggCall):
        text = _agg_call(it.expr)
        if len(it.expr.aliases) > 1:
            return f"{text} AS ({', '.join(it.expr.aliases)})"
        if len(it.expr.aliases) == 1:
            return f"{text} AS {it.expr.aliases[0]}"
        return text
    text = _expr(it.expr, 0)
    if it.alias:
        return f"{text} AS {it.alias}"
    return text


def _from_item(fi: FromItem) -> str:
    if fi.query is not None:
        return f"({print_query(fi.query)}) AS {fi.alias}"
    base = f"@{fi.table}" if fi.is_local else fi.table
    if fi.alias:
        return f"{base} {fi.alias}"
    return base


def _sort_list(keys) -> str:
    parts = []
    for e, direction in keys:
        text = _expr(e, 0)
        if direction == "desc":
            text += " DESC"
        parts.append(text)
    return ", ".join(parts)


def print_query(q: QuerySpec) -> str:
    parts: list[str] = []
    if q.cte is not None:
        parts.append(f"WITH {q.cte.name} AS ({print_query(q.cte.base)} "
                     f"UNION ALL {print_query(q.cte.recursive)})")
    head = "SELECT"
    if q.top is not None:
        head += f" TOP {q.top}"
    parts.append(head + " " + ", ".join(_select_item(it) for it in q.select_items))
    parts.extend(_query_tail(q))
    return " ".join(parts)


def _query_tail(q: QuerySpec) -> list[str]:
    parts: list[str] = []
    if q.from_items:
        parts.append("FROM " + ", ".join(_from_item(fi) for fi in q.from_items))
    if q.where is not None:
        parts.append("WHERE " + _expr(q.where, 0))
    if q.pre_sort:
        parts.append(f"SORTED BY ({_sort_list(q.pre_sort)})")
    if q.group_by:
        parts.append("GROUP BY " + ", ".join(_expr(e, 0) for e in q.group_by))
    if q.order_by:
        parts.append("ORDER BY " + _sort_list(q.order_by))
    return parts


def print_stmt(s: Stmt, depth: int = 0) -> str:
    pad = _INDENT * depth
    if isinstance(s, Declare):
        text = f"DECLARE @{s.name} {s.type.value}"
        if s.init is not None:
            text += f" = {_expr(s.init, 0)}"
        return f"{pad}{text};"
    if isinstance(s, DeclareTable):
        cols = ", ".join(f"{c} {t.value}" for c, t in s.columns)
        return f"{pad}DECLARE @{s.name} TABLE({cols});"
    if isinstance(s, Assign):
        return f"{pad}SET @{s.name} = {_expr(s.expr, 0)};"
    if isinstance(s, AssignFromQuery):
        pairs = ", ".join(
            f"@{t} = {_expr(it.expr, 0) if not isinstance(it.expr, AggCall) else _agg_call(it.expr)}"
            for t, it in zip(s.targets, s.query.select_items))
        tail = _query_tail(s.query)
        text = f"SELECT {pairs}"
        if tail:
            text += " " + " ".join(tail)
        return f"{pad}{text};"
    if isinstance(s, If):
        out = [f"{pad}IF ({_expr(s.cond, 0)})", _print_block(s.then, depth)]
        if s.orelse:
            out.append(f"{pad}ELSE")
            out.append(_print_block(s.orelse, depth))
        return "\n".join(out)
    if isinstance(s, While):
        return "\n".join([f"{pad}WHILE {_expr(s.cond, 0)}",
                          _print_block(s.body, depth)])
    if isinstance(s, For):
        header = (f"{pad}FOR (@{s.init.name} = {_expr(s.init.expr, 0)}; "
                  f"{_expr(s.cond, 0)}; "
                  f"@{s.incr.name} = {_expr(s.incr.expr, 0)})")
        return "\n".join([header, _print_block(s.body, depth)])
    if isinstance(s, CursorDeclare):
        return f"{pad}DECLARE {s.name} CURSOR FOR {print_query(s.query)};"
    if isinstance(s, CursorOpen):
        return f"{pad}OPEN {s.name};"
    if isinstance(s, Fetch):
        targets = ", ".join(f"@{t}" for t in s.targets)
        return f"{pad}FETCH NEXT FROM {s.cursor} INTO {targets};"
    if isinstance(s, CursorClose):
        return f"{pad}CLOSE {s.name};"
    if isinstance(s, CursorDeallocate):
        return f"{pad}DEALLOCATE {s.name};"
    if isinstance(s, InsertLocal):
        vals = ", ".join(_expr(e, 0) for e in s.values)
        return f"{pad}INSERT INTO @{s.table} VALUES ({vals});"
    if isinstance(s, PersistentDml):
        if s.kind == "insert":
            vals = ", ".join(_expr(e, 0) for e in s.values)
            return f"{pad}INSERT INTO {s.table} VALUES ({vals});"
        if s.kind == "update":
            text = f"UPDATE {s.table} SET {s.set_col} = {_expr(s.set_expr, 0)}"
            if s.where is not None:
                text += f" WHERE {_expr(s.where, 0)}"
            return f"{pad}{text};"
        text = f"DELETE FROM {s.table}"
        if s.where is not None:
            text += f" WHERE {_expr(s.where, 0)}"
        return f"{pad}{text};"
    if isinstance(s, Return):
        if s.expr is None:
            return f"{pad}RETURN;"
        return f"{pad}RETURN {_expr(s.expr, 0)};"
    if isinstance(s, Skip):
        return f"{pad};"
    raise TypeError(f"cannot print {s!r}")


def _print_block(stmts: list[Stmt], depth: int) -> str:
    pad = _INDENT * depth
    lines = [f"{pad}BEGIN"]
    for s in stmts:
        lines.append(print_stmt(s, depth + 1))
    lines.append(f"{pad}END")
    return "\n".join(lines)


def print_stmt_block(stmts: list[Stmt], depth: int = 0) -> str:
    """Statements one per line, no surrounding BEGIN/END."""
    return "\n".join(print_stmt(s, depth) for s in stmts)


def _param(p: Param) -> str:
    text = f"@{p.name} {p.type.value}"
    if p.default is not None:
        text += f" = {_expr(p.default, 0)}"
    return text


def print_program(p: Program) -> str:
    kind = "FUNCTION" if p.is_function else "PROCEDURE"
    header = f"CREATE {kind} {p.name}({', '.join(_param(x) for x in p.params)})"
    lines = [header]
    if p.return_type is not None:
        lines.append(f"RETURNS {p.return_type.value}")
    lines.append("AS")
    lines.append("BEGIN")
    for s in p.body:
        lines.append(print_stmt(s, 1))
    lines.append("END")
    return "\n".join(lines) + "\n"
