"""Statement interpreter and differential runner.

Execution model:
  - scalar variables live in a procedure-wide scope; DECLARE (re)initializes
    its variable each time it executes, so loop-carried state must be
    assigned, never implied
  - cursors materialize their query at DECLARE; OPEN only rewinds
  - client mode charges each successful FETCH and each query-assignment
    result row against the byte-width table, except inside aggregate bodies,
    which run engine-side
  - custom aggregate bodies execute in a frame whose lookup order is
    locals, then fields, then params; writing a param shadows it with a local

The differential runner executes two programs over copies of the same
catalog and compares return value, shared scalars, local tables, and final
persistent state; matching error classes also count as agreement.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

from .aggregates import AggregateSpec, declared_types
from .astnodes import (
    Assign, AssignFromQuery, CursorClose, CursorDeallocate, CursorDeclare,
    CursorOpen, Declare, DeclareTable, Expr, Fetch, For, If, InsertLocal,
    PersistentDml, Program, Return, ScalarType, Skip, Stmt, While,
    block_statements,
)
from .errors import AggifyError, CslRuntimeError, CslTypeError
from .evalexpr import FETCH_STATUS_KEY, compile_expr
from .query import EngineContext, ExecStats, eval_query
from .relation import Catalog, Column, Relation
from .values import coerce_value, sort_key


class ReturnSignal(Exception):
    def __init__(self, value):
        self.value = value


class Scopes:
    """Layered name lookup. layers[0] is innermost and always writable;
    a write that lands on a read-only layer shadows into layers[0]."""

    def __init__(self, layers):
        # layers: list of (values: dict, types: dict, writable: bool)
        self.layers = layers

    def get(self, name: str):
        for values, _, _ in self.layers:
            if name in values:
                return values[name]
        raise CslRuntimeError(f"unknown variable @{name}")

    def declare(self, name: str, t: ScalarType, value):
        values, types, _ = self.layers[0]
        values[name] = coerce_value(value, t)
        types[name] = t

    def set(self, name: str, value):
        for values, types, writable in self.layers:
            if name in values:
                v = coerce_value(value, types[name]) if name in types else value
                if writable:
                    values[name] = v
                else:
                    lv, lt, _ = self.layers[0]
                    lv[name] = v
                    if name in types:
                        lt[name] = types[name]
                return
        raise CslRuntimeError(f"assignment to undeclared variable @{name}")

    def snapshot(self) -> dict:
        out: dict = {}
        for values, _, _ in reversed(self.layers):
            out.update(values)
        return out


@dataclass
class _Cursor:
    rel: Relation
    pos: int | None = None  # None until OPEN


@dataclass
class _Frame:
    scopes: Scopes
    cursors: dict[str, _Cursor] = dc_field(default_factory=dict)
    fetch_status: int = -1

    def getv(self, name: str):
        if name == FETCH_STATUS_KEY:
            return self.fetch_status
        return self.scopes.get(name)


@dataclass
class RunResult:
    value: object = None
    vars: dict = dc_field(default_factory=dict)
    tables: dict[str, Relation] = dc_field(default_factory=dict)
    catalog: Catalog | None = None
    stats: ExecStats = dc_field(default_factory=ExecStats)
    error: str | None = None
    error_message: str | None = None


class Interpreter:
    def __init__(self, catalog: Catalog,
                 registry: dict[str, AggregateSpec] | None = None,
                 client_mode: bool = False, depth_cap: int = 1_000_000,
                 step_budget: int = 10_000_000):
        self.catalog = catalog
        self.registry = registry or {}
        self.client_mode = client_mode
        self.depth_cap = depth_cap
        self.step_budget = step_budget
        self.stats = ExecStats()

    # ------------------------------------------------------------ public

    def run(self, program: Program, args: dict | None = None) -> RunResult:
        self._steps = 0
        self._agg_depth = 0
        self._expr_cache: dict[int, object] = {}

        types = declared_types(program)
        values: dict = {}
        for p in program.params:
            if args and p.name in args:
                values[p.name] = coerce_value(args[p.name], p.type)
            elif p.default is not None:
                values[p.name] = self._literal(p.default, p.type)
            else:
                values[p.name] = None
        for name, t in types.items():
            values.setdefault(name, None)

        self.tables: dict[str, Relation] = {}
        for s in block_statements(program.body):
            if isinstance(s, DeclareTable):
                self.tables[s.name] = Relation(
                    [Column(n, t) for n, t in s.columns], [])

        self.ctx = EngineContext(
            catalog=self.catalog, tables=self.tables, registry=self.registry,
            stats=self.stats, vartypes=types, depth_cap=self.depth_cap)
        self.ctx.run_accumulate = self._run_accumulate

        frame = _Frame(Scopes([(values, types, True)]))
        result = RunResult(stats=self.stats, catalog=self.catalog)
        try:
            self._exec_block(program.body, frame)
        except ReturnSignal as r:
            v = r.value
            if program.return_type is not None and v is not None:
                v = coerce_value(v, program.return_type)
            result.value = v
        except AggifyError as e:
            result.error = type(e).__name__
            result.error_message = e.format() if hasattr(e, "format") else str(e)
        result.vars = frame.scopes.snapshot()
        result.tables = self.tables
        return result

    # ------------------------------------------------------- statements

    def _exec_block(self, stmts: list[Stmt], frame: _Frame):
        for s in stmts:
            self._exec_stmt(s, frame)

    def _exec_stmt(self, s: Stmt, frame: _Frame):
        self._steps += 1
        if self._steps > self.step_budget:
            raise CslRuntimeError("statement budget exceeded", s.span)

        if isinstance(s, Assign):
            frame.scopes.set(s.name, self._eval(s.expr, frame))
        elif isinstance(s, If):
            if self._eval(s.cond, frame) is True:
                self._exec_block(s.then, frame)
            else:
                self._exec_block(s.orelse, frame)
        elif isinstance(s, While):
            while self._eval(s.cond, frame) is True:
                self._exec_block(s.body, frame)
                self._steps += 1
                if self._steps > self.step_budget:
                    raise CslRuntimeError("statement budget exceeded", s.span)
        elif isinstance(s, Fetch):
            self._fetch(s, frame)
        elif isinstance(s, Declare):
            v = self._eval(s.init, frame) if s.init is not None else None
            frame.scopes.declare(s.name, s.type, v)
        elif isinstance(s, AssignFromQuery):
            self._assign_from_query(s, frame)
        elif isinstance(s, CursorDeclare):
            rel = eval_query(s.query, frame.getv, self.ctx)
            frame.cursors[s.name] = _Cursor(rel)
            self.stats.cursor_materializations += 1
            self.stats.materialized_rows += len(rel.rows)
        elif isinstance(s, CursorOpen):
            cur = frame.cursors.get(s.name)
            if cur is None:
                raise CslRuntimeError(f"cursor {s.name} is not declared", s.span)
            cur.pos = 0
        elif isinstance(s, CursorClose):
            cur = frame.cursors.get(s.name)
            if cur is None:
                raise CslRuntimeError(f"cursor {s.name} is not declared", s.span)
            cur.pos = None
        elif isinstance(s, CursorDeallocate):
            frame.cursors.pop(s.name, None)
        elif isinstance(s, For):
            self._exec_stmt(s.init, frame)
            while self._eval(s.cond, frame) is True:
                self._exec_block(s.body, frame)
                self._exec_stmt(s.incr, frame)
        elif isinstance(s, InsertLocal):
            self._insert_local(s, frame)
        elif isinstance(s, DeclareTable):
            self.tables[s.name] = Relation(
                [Column(n, t) for n, t in s.columns], [])
        elif isinstance(s, PersistentDml):
            self._persistent_dml(s, frame)
        elif isinstance(s, Return):
            raise ReturnSignal(
                self._eval(s.expr, frame) if s.expr is not None else None)
        elif isinstance(s, Skip):
            pass
        else:
            raise CslRuntimeError(f"cannot execute {type(s).__name__}", s.span)

    def _fetch(self, s: Fetch, frame: _Frame):
        cur = frame.cursors.get(s.cursor)
        if cur is None:
            raise CslRuntimeError(f"cursor {s.cursor} is not declared", s.span)
        if cur.pos is None:
            raise CslRuntimeError(f"cursor {s.cursor} is not open", s.span)
        if cur.pos >= len(cur.rel.rows):
            frame.fetch_status = -1
            return
        row = cur.rel.rows[cur.pos]
        cur.pos += 1
        frame.fetch_status = 0
        if len(s.targets) != cur.rel.arity:
            raise CslTypeError(
                f"FETCH into {len(s.targets)} variables from "
                f"{cur.rel.arity} columns", s.span)
        for name, v in zip(s.targets, row):
            frame.scopes.set(name, v)
        if self.client_mode and self._agg_depth == 0:
            self.stats.rows_moved_to_client += 1
            self.stats.bytes_moved_to_client += cur.rel.row_width()

    def _assign_from_query(self, s: AssignFromQuery, frame: _Frame):
        rel = eval_query(s.query, frame.getv, self.ctx)
        if self.client_mode and self._agg_depth == 0:
            self.stats.rows_moved_to_client += len(rel.rows)
            self.stats.bytes_moved_to_client += rel.row_width() * len(rel.rows)
        if not rel.rows:
            return
        if len(s.targets) != rel.arity:
            raise CslTypeError(
                f"SELECT assigns {rel.arity} columns to {len(s.targets)} "
                f"variables", s.span)
        for name, v in zip(s.targets, rel.rows[-1]):
            frame.scopes.set(name, v)

    def _insert_local(self, s: InsertLocal, frame: _Frame):
        rel = self.tables.get(s.table)
        if rel is None:
            raise CslRuntimeError(f"unknown table variable @{s.table}", s.span)
        if len(s.values) != rel.arity:
            raise CslTypeError(
                f"INSERT of {len(s.values)} values into {rel.arity} columns",
                s.span)
        row = tuple(
            coerce_value(self._eval(e, frame), col.type)
            for e, col in zip(s.values, rel.columns))
        rel.rows.append(row)

    def _persistent_dml(self, s: PersistentDml, frame: _Frame):
        rel = self.catalog.get(s.table)
        if rel is None:
            raise CslRuntimeError(f"unknown table {s.table}", s.span)
        if s.kind == "insert":
            if len(s.values) != rel.arity:
                raise CslTypeError(
                    f"INSERT of {len(s.values)} values into {rel.arity} "
                    f"columns", s.span)
            rel.rows.append(tuple(
                coerce_value(self._eval(e, frame), col.type)
                for e, col in zip(s.values, rel.columns)))
            return
        colmap = {c.name: i for i, c in enumerate(rel.columns)}
        cond = (compile_expr(s.where, colmap, set(), self._subq)
                if s.where is not None else None)
        if s.kind == "delete":
            rel.rows = [r for r in rel.rows
                        if not (cond is None or cond(r, frame.getv) is True)]
            return
        idx = colmap.get(s.set_col)
        if idx is None:
            raise CslTypeError(f"unknown column {s.set_col}", s.span)
        setter = compile_expr(s.set_expr, colmap, set(), self._subq)
        t = rel.columns[idx].type
        out = []
        for r in rel.rows:
            if cond is None or cond(r, frame.getv) is True:
                r = r[:idx] + (coerce_value(setter(r, frame.getv), t),) \
                    + r[idx + 1:]
            out.append(r)
        rel.rows = out

    # ------------------------------------------------------ expressions

    def _eval(self, e: Expr, frame: _Frame):
        fn = self._expr_cache.get(id(e))
        if fn is None:
            fn = compile_expr(e, None, set(), self._subq)
            self._expr_cache[id(e)] = fn
        return fn(None, frame.getv)

    def _subq(self, q):
        def run(getv):
            rel = eval_query(q, getv, self.ctx)
            if rel.arity != 1:
                raise CslTypeError("scalar subquery must produce one column",
                                   q.span)
            if len(rel.rows) > 1:
                raise CslRuntimeError(
                    "scalar subquery produced more than one row")
            return rel.rows[0][0] if rel.rows else None
        return run

    def _literal(self, e: Expr, t: ScalarType):
        fn = compile_expr(e, None, set(), None)
        return coerce_value(fn(None, lambda n: None), t)

    # ------------------------------------------------------- aggregates

    def _run_accumulate(self, spec: AggregateSpec, state: dict, params: dict):
        ptypes = {p.name: p.type for p in spec.params}
        scopes = Scopes([
            ({}, {}, True),
            (state, spec.field_types, True),
            (params, ptypes, False),
        ])
        frame = _Frame(scopes)
        self._agg_depth += 1
        try:
            self._exec_block(spec.accumulate_body, frame)
        except ReturnSignal:
            raise CslRuntimeError(
                f"RETURN inside aggregate {spec.name}")
        finally:
            self._agg_depth -= 1


# -------------------------------------------------------------- differential

@dataclass
class DiffResult:
    equal: bool
    mismatches: list[str]
    left: RunResult
    right: RunResult


def _rows_key(rel: Relation):
    return sorted(tuple(sort_key(v) for v in r) for r in rel.rows)


def _values_equal(a, b) -> bool:
    if type(a) is not type(b):
        return False
    return a == b


def run_differential(left: Program, right: Program, catalog: Catalog,
                     args: dict | None = None,
                     left_registry: dict | None = None,
                     right_registry: dict | None = None,
                     client_mode: bool = False,
                     shuffle_seed: int | None = None,
                     ignore_vars: set[str] | frozenset = frozenset()
                     ) -> DiffResult:
    if shuffle_seed is not None:
        catalog = catalog.shuffled(shuffle_seed)
    lcat = catalog.copy()
    rcat = catalog.copy()
    lres = Interpreter(lcat, left_registry, client_mode).run(left, args)
    rres = Interpreter(rcat, right_registry, client_mode).run(right, args)

    mismatches: list[str] = []
    if lres.error or rres.error:
        if lres.error != rres.error:
            mismatches.append(
                f"error: {lres.error or 'none'} vs {rres.error or 'none'}")
        return DiffResult(not mismatches, mismatches, lres, rres)

    if not _values_equal(lres.value, rres.value):
        mismatches.append(f"return: {lres.value!r} vs {rres.value!r}")

    shared = (set(lres.vars) & set(rres.vars)) - set(ignore_vars)
    for name in sorted(shared):
        if not _values_equal(lres.vars[name], rres.vars[name]):
            mismatches.append(
                f"@{name}: {lres.vars[name]!r} vs {rres.vars[name]!r}")

    ltabs, rtabs = lres.tables, rres.tables
    if set(ltabs) != set(rtabs):
        mismatches.append(
            f"table sets differ: {sorted(ltabs)} vs {sorted(rtabs)}")
    else:
        for name in sorted(ltabs):
            if _rows_key(ltabs[name]) != _rows_key(rtabs[name]):
                mismatches.append(f"@{name}: row multisets differ")

    for tname in sorted(set(lcat.names()) | set(rcat.names())):
        lt, rt = lcat.get(tname), rcat.get(tname)
        if lt is None or rt is None or _rows_key(lt) != _rows_key(rt):
            mismatches.append(f"persistent {tname}: contents differ")

    return DiffResult(not mismatches, mismatches, lres, rres)
