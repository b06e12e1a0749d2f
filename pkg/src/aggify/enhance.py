"""Optional rewrites that widen the reach of the cursor transform.

Two passes live here.  Code motion pulls row-level computation out of a
loop body and into the cursor query as extra projected columns, so the
synthesized aggregate does less per-row work and often carries fewer
outer parameters.  FOR conversion lowers a counted loop to a cursor
over a recursive iteration-space query, after which the main pass can
treat it like any other cursor loop.
"""
from __future__ import annotations

import copy

from .aggregates import declared_types
from .astnodes import (AggCall, Assign, Binary, ColRef, Const, CursorClose,
                       CursorDeallocate, CursorDeclare, CursorOpen, Cte,
                       Declare, DeclareTable, Expr, Fetch, FetchStatus, For,
                       FromItem,
                       FuncCall, If, InsertLocal, Program, QuerySpec,
                       ScalarSubquery, ScalarType, SelectItem, Stmt, Unary,
                       VarRef, While, block_statements, block_writes,
                       expr_vars)
from .dataflow import analyze_program
from .errors import NotConvertible
from .evalexpr import infer_type
from .graphs import CursorLoopRegion, build_cfg


# ------------------------------------------------------------- code motion

def subst_var(e: Expr | None, name: str, replacement: Expr) -> Expr | None:
    """Copy of e with every read of @name replaced by a copy of replacement."""
    if e is None:
        return None

    def walk(node):
        if isinstance(node, VarRef):
            return copy.deepcopy(replacement) if node.name == name else node
        if isinstance(node, Unary):
            node.operand = walk(node.operand)
        elif isinstance(node, Binary):
            node.left = walk(node.left)
            node.right = walk(node.right)
        elif isinstance(node, FuncCall):
            node.args = [walk(a) for a in node.args]
        return node

    return walk(copy.deepcopy(e))


def _pure_rowlevel(e: Expr, blocked: set[str]) -> bool:
    """True when the query can evaluate e once per fetched row.

    Division is excluded: whether it faults depends on whether the body
    actually reaches the expression, and the query evaluates every row.
    Subqueries are excluded because they may observe local tables the
    body mutates.  Anything reading a variable written inside the loop
    is not row-level.
    """
    if isinstance(e, Const):
        return True
    if isinstance(e, VarRef):
        return e.name not in blocked
    if isinstance(e, Unary):
        return _pure_rowlevel(e.operand, blocked)
    if isinstance(e, Binary):
        return (e.op != "/"
                and _pure_rowlevel(e.left, blocked)
                and _pure_rowlevel(e.right, blocked))
    if isinstance(e, FuncCall):
        return all(_pure_rowlevel(a, blocked) for a in e.args)
    return False  # ScalarSubquery, FetchStatus


class _Motion:
    def __init__(self, program: Program, region: CursorLoopRegion):
        self.region = region
        self.blocked = (block_writes(region.delta)
                        | block_writes(region.gap_stmts))
        self.vartypes = declared_types(program)
        self.taken = set(self.vartypes) | _all_read_names(program)
        # (original body-side expr, alias, inferred type)
        self.hoists: list[tuple[Expr, str, ScalarType]] = []

    def rewrite(self, e: Expr | None) -> Expr | None:
        if e is None or isinstance(e, (Const, VarRef)):
            return e
        if (isinstance(e, (Unary, Binary, FuncCall))
                and expr_vars(e)
                and _pure_rowlevel(e, self.blocked)):
            ty = infer_type(e, None, self.vartypes)
            if ty is not None:
                return VarRef(name=self._alias_for(e, ty), span=e.span)
        if isinstance(e, Unary):
            e.operand = self.rewrite(e.operand)
        elif isinstance(e, Binary):
            e.left = self.rewrite(e.left)
            e.right = self.rewrite(e.right)
        elif isinstance(e, FuncCall):
            e.args = [self.rewrite(a) for a in e.args]
        return e

    def _alias_for(self, e: Expr, ty: ScalarType) -> str:
        for prior, name, _ in self.hoists:
            if prior == e:
                return name
        k = len(self.hoists) + 1
        name = f"hoisted{k}"
        while name in self.taken:
            k += 1
            name = f"hoisted{k}"
        self.taken.add(name)
        self.hoists.append((copy.deepcopy(e), name, ty))
        return name

    def rewrite_stmt(self, s: Stmt):
        if isinstance(s, Assign):
            s.expr = self.rewrite(s.expr)
        elif isinstance(s, Declare):
            s.init = self.rewrite(s.init)
        elif isinstance(s, If):
            s.cond = self.rewrite(s.cond)
            for t in s.then:
                self.rewrite_stmt(t)
            for t in s.orelse:
                self.rewrite_stmt(t)
        elif isinstance(s, While):
            s.cond = self.rewrite(s.cond)
            for t in s.body:
                self.rewrite_stmt(t)
        elif isinstance(s, For):
            s.init.expr = self.rewrite(s.init.expr)
            s.cond = self.rewrite(s.cond)
            s.incr.expr = self.rewrite(s.incr.expr)
            for t in s.body:
                self.rewrite_stmt(t)
        elif isinstance(s, InsertLocal):
            s.values = [self.rewrite(v) for v in s.values]
        # queries and cursor plumbing are already row-level; Return and
        # persistent DML belong to loops the transform rejects anyway


def _all_read_names(program: Program) -> set[str]:
    names: set[str] = set()
    for s in block_statements(program.body):
        for attr in ("expr", "cond", "init"):
            v = getattr(s, attr, None)
            if isinstance(v, Expr):
                names.update(expr_vars(v))
        for v in getattr(s, "values", []) or []:
            if isinstance(v, Expr):
                names.update(expr_vars(v))
    return names


def acyclic_code_motion(program: Program, region: CursorLoopRegion) -> bool:
    """Hoist maximal row-level subexpressions of the loop body into the
    cursor query as extra projected columns, each fetched through a new
    variable.  The program is modified in place; True means something
    moved and the region should be re-derived.

    A hoisted expression may read fetched variables (they become the
    matching projection expressions of the query) and variables the loop
    never writes; everything else stays in the body.
    """
    q = region.query
    if q.group_by or any(isinstance(it.expr, AggCall) for it in q.select_items):
        return False  # projections of an aggregated query are not per-row

    m = _Motion(program, region)
    for s in region.delta:
        m.rewrite_stmt(s)
    if not m.hoists:
        return False

    row_expr = {v: q.select_items[i].expr
                for i, v in enumerate(region.priming.targets)}
    decl_at = region.block.index(region.decl)
    for e, name, ty in m.hoists:
        proj = e
        for var, col in row_expr.items():
            proj = subst_var(proj, var, col)
        q.select_items.append(SelectItem(expr=proj, alias=name))
        region.priming.targets.append(name)
        region.tail.targets.append(name)
        region.block.insert(decl_at, Declare(name=name, type=ty))
        decl_at += 1
    return True


# ---------------------------------------------------------- FOR conversion

def _has_subquery(e: Expr | None) -> bool:
    if e is None:
        return False
    if isinstance(e, ScalarSubquery):
        return True
    if isinstance(e, Unary):
        return _has_subquery(e.operand)
    if isinstance(e, Binary):
        return _has_subquery(e.left) or _has_subquery(e.right)
    if isinstance(e, FuncCall):
        return any(_has_subquery(a) for a in e.args)
    return False


def _taken_names(program: Program) -> tuple[set[str], set[str]]:
    cursors: set[str] = set()
    tables: set[str] = set()
    for s in block_statements(program.body):
        if isinstance(s, CursorDeclare):
            cursors.add(s.name)
            if s.query is not None and s.query.cte is not None:
                tables.add(s.query.cte.name)
        elif isinstance(s, DeclareTable):
            tables.add(s.name)
    return cursors, tables


def for_to_cursor(program: Program, stmt: For, cfg=None, facts=None,
                  seq: int = 1) -> list[Stmt]:
    """Lower FOR(init; cond; incr) { body } to a cursor loop over a
    recursive query enumerating exactly the induction values for which
    the body runs, in order.

    base:      SELECT init AS i WHERE cond[i := init]
    recursive: SELECT incr[i := i] AS i FROM iter WHERE cond[i := incr[i]]

    The condition is applied to the initial and to each incremented
    value, so the row count equals the iteration count.  Raises
    NotConvertible when the shape does not guarantee equivalence; in
    particular the converted loop leaves the induction variable at the
    last value that passed the condition rather than the first that
    failed it, so the variable must be dead after the loop.
    """
    i = stmt.init.name
    if stmt.incr.name != i:
        raise NotConvertible(
            f"initialises @{i} but increments @{stmt.incr.name}")
    body_writes = block_writes(stmt.body)
    if i in body_writes:
        raise NotConvertible(f"body writes the induction variable @{i}")
    carried = set(expr_vars(stmt.cond)) | set(expr_vars(stmt.incr.expr))
    clash = (carried - {i}) & body_writes
    if clash:
        raise NotConvertible(
            "condition or increment reads body-written "
            + ", ".join("@" + v for v in sorted(clash)))
    if i not in expr_vars(stmt.cond):
        raise NotConvertible(
            f"loop condition does not test the induction variable @{i}")
    for e in (stmt.init.expr, stmt.cond, stmt.incr.expr):
        if _has_subquery(e):
            raise NotConvertible("iteration bounds contain a subquery")

    if cfg is None:
        cfg = build_cfg(program)
    if facts is None:
        facts = analyze_program(program, cfg)
    cond_node = cfg.stmt_node.get(id(stmt))
    if cond_node is None:
        raise NotConvertible("loop is unreachable")
    exit_nodes = [e.dst for e in cfg.succ[cond_node] if e.label == "false"]
    if any(i in facts.live_in[x] for x in exit_nodes):
        raise NotConvertible(f"@{i} is read after the loop")

    cursors, tables = _taken_names(program)
    n = seq
    while f"c_iter{n}" in cursors or f"iter{n}" in tables:
        n += 1
    cte_name, cursor = f"iter{n}", f"c_iter{n}"

    base = QuerySpec(
        select_items=[SelectItem(expr=copy.deepcopy(stmt.init.expr), alias=i)],
        where=subst_var(stmt.cond, i, stmt.init.expr))
    step = subst_var(stmt.incr.expr, i, ColRef(name=i))
    recursive = QuerySpec(
        select_items=[SelectItem(expr=step, alias=i)],
        from_items=[FromItem(table=cte_name)],
        where=subst_var(stmt.cond, i, step))
    query = QuerySpec(
        cte=Cte(name=cte_name, base=base, recursive=recursive),
        select_items=[SelectItem(expr=ColRef(name=i))],
        from_items=[FromItem(table=cte_name)])

    return [
        CursorDeclare(name=cursor, query=query, span=stmt.span),
        CursorOpen(name=cursor),
        Fetch(cursor=cursor, targets=[i]),
        While(cond=Binary(op="=", left=FetchStatus(), right=Const(value=0)),
              body=[*stmt.body, Fetch(cursor=cursor, targets=[i])],
              span=stmt.span),
        CursorClose(name=cursor),
        CursorDeallocate(name=cursor),
    ]


def _find_for(block: list[Stmt], skip: set[int]):
    for idx, s in enumerate(block):
        if isinstance(s, For) and id(s) not in skip:
            return block, idx, s
        if isinstance(s, If):
            hit = _find_for(s.then, skip) or _find_for(s.orelse, skip)
            if hit:
                return hit
        elif isinstance(s, (While, For)):
            hit = _find_for(s.body, skip)
            if hit:
                return hit
    return None


def convert_for_loops(program: Program) -> int:
    """Convert every FOR loop that for_to_cursor accepts, in place.
    Unconvertible loops are left alone.  Returns how many converted."""
    converted = 0
    skip: set[int] = set()
    while True:
        hit = _find_for(program.body, skip)
        if hit is None:
            return converted
        block, idx, stmt = hit
        cfg = build_cfg(program)
        facts = analyze_program(program, cfg)
        try:
            block[idx:idx + 1] = for_to_cursor(program, stmt, cfg, facts,
                                               seq=converted + 1)
        except NotConvertible:
            skip.add(id(stmt))
        else:
            converted += 1
