"""In-memory query evaluation.

Deterministic nested-loop semantics: FROM items join left to right in row
order, WHERE filters under three-valued logic, SORTED BY orders the feed
before aggregation, grouping preserves first-appearance order. Custom
aggregates fold their statement body over each group through a callback
supplied by the statement interpreter.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field

from .aggregates import AggregateSpec
from .astnodes import (
    AggCall, ColRef, Cte, Expr, QuerySpec, ScalarType, SelectItem,
)
from .errors import (
    CslRuntimeError, CslTypeError, DepthExceeded, UnknownAggregate,
)
from .evalexpr import compile_expr, infer_type
from .relation import Catalog, Column, Relation
from .values import arith, coerce_value, compare, sort_key


@dataclass
class ExecStats:
    cursor_materializations: int = 0
    materialized_rows: int = 0
    rows_moved_to_client: int = 0
    bytes_moved_to_client: int = 0
    accumulate_calls: int = 0

    def as_dict(self) -> dict:
        return {
            "cursor_materializations": self.cursor_materializations,
            "materialized_rows": self.materialized_rows,
            "rows_moved_to_client": self.rows_moved_to_client,
            "bytes_moved_to_client": self.bytes_moved_to_client,
            "accumulate_calls": self.accumulate_calls,
        }


@dataclass
class EngineContext:
    catalog: Catalog
    tables: dict[str, Relation] = dc_field(default_factory=dict)
    registry: dict[str, AggregateSpec] = dc_field(default_factory=dict)
    stats: ExecStats = dc_field(default_factory=ExecStats)
    vartypes: dict[str, ScalarType] = dc_field(default_factory=dict)
    depth_cap: int = 1_000_000
    # run_accumulate(spec, state, params): executes the body with writes
    # landing in state; None supports pure-query use without an interpreter
    run_accumulate = None


class _Schema:
    """Combined FROM schema: flat column list plus name->index maps."""

    def __init__(self):
        self.columns: list[Column] = []
        self.qualified: dict[str, int] = {}
        self.bare_counts: dict[str, int] = {}
        self.bare: dict[str, int] = {}

    def add_source(self, alias: str, rel: Relation, span):
        if any(k.startswith(alias + ".") for k in self.qualified):
            raise CslTypeError(f"duplicate table alias {alias}", span)
        base = len(self.columns)
        for i, col in enumerate(rel.columns):
            self.columns.append(col)
            self.qualified[f"{alias}.{col.name}"] = base + i
            n = self.bare_counts.get(col.name, 0)
            self.bare_counts[col.name] = n + 1
            if n == 0:
                self.bare[col.name] = base + i

    @property
    def colmap(self) -> dict[str, int]:
        m = dict(self.qualified)
        m.update(self.bare)
        return m

    @property
    def ambiguous(self) -> set[str]:
        return {n for n, c in self.bare_counts.items() if c > 1}

    @property
    def coltypes(self) -> dict[str, ScalarType | None]:
        t: dict[str, ScalarType | None] = {}
        for key, idx in self.colmap.items():
            t[key] = self.columns[idx].type
        return t


def _resolve_from(q: QuerySpec, getv, ctx: EngineContext,
                  cte_env: dict[str, Relation]):
    schema = _Schema()
    sources: list[Relation] = []
    for fi in q.from_items:
        if fi.query is not None:
            rel = eval_query(fi.query, getv, ctx, cte_env)
        elif fi.is_local:
            if fi.table not in ctx.tables:
                raise CslRuntimeError(f"unknown table variable @{fi.table}",
                                      fi.span)
            live = ctx.tables[fi.table]
            # snapshot: statements run by a custom aggregate may insert into
            # this table while the query is still being consumed
            rel = Relation(live.columns, list(live.rows))
        else:
            name = fi.table
            if name in cte_env:
                rel = cte_env[name]
            elif name in ctx.catalog:
                rel = ctx.catalog[name]
            else:
                raise CslRuntimeError(f"unknown table {name}", fi.span)
        alias = fi.alias or fi.table
        schema.add_source(alias, rel, fi.span)
        sources.append(rel)
    return schema, sources


def _is_custom_agg(it: SelectItem, ctx: EngineContext) -> bool:
    return (isinstance(it.expr, AggCall)
            and it.expr.name in ctx.registry)


def _output_name(it: SelectItem, i: int) -> str:
    if it.alias:
        return it.alias
    if isinstance(it.expr, ColRef):
        return it.expr.name
    return f"col{i + 1}"


def _sort_rows(rows: list[tuple], keys, colmap, ambiguous, subq, getv):
    compiled = [(compile_expr(e, colmap, ambiguous, subq), direction)
                for e, direction in keys]
    for fn, direction in reversed(compiled):
        rows.sort(key=lambda r: sort_key(fn(r, getv)),
                  reverse=(direction == "desc"))
    return rows


def eval_query(q: QuerySpec, getv, ctx: EngineContext,
               cte_env: dict[str, Relation] | None = None) -> Relation:
    cte_env = dict(cte_env) if cte_env else {}
    if q.cte is not None:
        cte_env[q.cte.name] = _eval_cte(q.cte, getv, ctx, cte_env)

    schema, sources = _resolve_from(q, getv, ctx, cte_env)
    colmap, ambiguous = schema.colmap, schema.ambiguous

    def subq(sub: QuerySpec):
        def run(inner_getv):
            rel = eval_query(sub, inner_getv, ctx, cte_env)
            if rel.arity != 1:
                raise CslTypeError("scalar subquery must produce one column",
                                   sub.span if hasattr(sub, "span") else None)
            if len(rel.rows) > 1:
                raise CslRuntimeError("scalar subquery produced more than one row")
            return rel.rows[0][0] if rel.rows else None
        return run

    if q.from_items:
        row_iter = (tuple(itertools.chain.from_iterable(combo))
                    for combo in itertools.product(*[s.rows for s in sources]))
    else:
        row_iter = iter([()])

    if q.where is not None:
        where_fn = compile_expr(q.where, colmap, ambiguous, subq)
        rows = [r for r in row_iter if where_fn(r, getv) is True]
    else:
        rows = list(row_iter)

    if q.pre_sort:
        _sort_rows(rows, q.pre_sort, colmap, ambiguous, subq, getv)

    if q.has_aggregation:
        out = _eval_aggregated(q, rows, schema, subq, getv, ctx)
    else:
        if q.order_by:
            _sort_rows(rows, q.order_by, colmap, ambiguous, subq, getv)
        out = _project(q, rows, schema, subq, getv, ctx)

    if q.top is not None:
        out = Relation(out.columns, out.rows[:q.top])
    return out


def _project(q: QuerySpec, rows, schema: _Schema, subq, getv,
             ctx: EngineContext) -> Relation:
    colmap, ambiguous, coltypes = schema.colmap, schema.ambiguous, schema.coltypes
    out_cols: list[Column] = []
    parts = []  # "star" | compiled fn
    for i, it in enumerate(q.select_items):
        if it.is_star:
            out_cols.extend(schema.columns)
            parts.append("star")
            continue
        fn = compile_expr(it.expr, colmap, ambiguous, subq)
        t = infer_type(it.expr, coltypes, ctx.vartypes, ctx.registry)
        out_cols.append(Column(_output_name(it, i), t))
        parts.append(fn)
    out_rows = []
    for r in rows:
        acc: list = []
        for p in parts:
            if p == "star":
                acc.extend(r)
            else:
                acc.append(p(r, getv))
        out_rows.append(tuple(acc))
    return Relation(out_cols, out_rows)


def _builtin_fold(name: str, star: bool, arg_fn, rows, getv):
    if name == "count":
        if star:
            return len(rows)
        return sum(1 for r in rows if arg_fn(r, getv) is not None)
    vals = [v for r in rows if (v := arg_fn(r, getv)) is not None]
    if not vals:
        return None
    if name == "sum" or name == "avg":
        total = vals[0]
        for v in vals[1:]:
            total = arith("+", total, v)
        if name == "sum":
            return total
        return arith("/", total, len(vals))
    best = vals[0]
    for v in vals[1:]:
        c = compare(v, best)
        if c is not None and ((name == "min" and c < 0)
                              or (name == "max" and c > 0)):
            best = v
    return best


def _custom_fold(spec: AggregateSpec, arg_fns, rows, getv,
                 ctx: EngineContext):
    if ctx.run_accumulate is None:
        raise CslRuntimeError(
            f"aggregate {spec.name} needs a statement interpreter")
    state: dict[str, object] = {n: None for n, _ in spec.fields}
    state[spec.init_flag] = False
    ftypes = spec.field_types
    for r in rows:
        pvals = {}
        for p, fn in zip(spec.params, arg_fns):
            pvals[p.name] = coerce_value(fn(r, getv), p.type)
        if state[spec.init_flag] is False:
            for f, pn in spec.init_set:
                state[f] = coerce_value(pvals[pn], ftypes[f])
            state[spec.init_flag] = True
        ctx.run_accumulate(spec, state, pvals)
        ctx.stats.accumulate_calls += 1
    return tuple(coerce_value(state[v], ftypes[v]) for v in spec.terminate_set)


def _eval_aggregated(q: QuerySpec, rows, schema: _Schema, subq, getv,
                     ctx: EngineContext) -> Relation:
    colmap, ambiguous, coltypes = schema.colmap, schema.ambiguous, schema.coltypes

    group_fns = [compile_expr(e, colmap, ambiguous, subq) for e in q.group_by]
    groups: dict[tuple, list] = {}
    for r in rows:
        key = tuple(sort_key(fn(r, getv)) for fn in group_fns)
        groups.setdefault(key, []).append(r)

    any_custom = any(_is_custom_agg(it, ctx) for it in q.select_items)
    if not q.group_by and not groups:
        if any_custom:
            groups = {}  # a fold over nothing yields nothing
        else:
            groups = {(): []}

    # compile select items once
    plans = []  # (kind, payload)
    out_cols: list[Column] = []
    for i, it in enumerate(q.select_items):
        e = it.expr
        if isinstance(e, AggCall):
            if e.name in ctx.registry:
                spec = ctx.registry[e.name]
                if spec.order_sensitive and not q.pre_sort:
                    raise CslRuntimeError(
                        f"aggregate {spec.name} is order-sensitive and needs "
                        f"a SORTED BY feed", e.span)
                if len(e.args) != len(spec.params):
                    raise CslTypeError(
                        f"aggregate {spec.name} takes {len(spec.params)} "
                        f"arguments, got {len(e.args)}", e.span)
                arg_fns = [compile_expr(a, colmap, ambiguous, subq)
                           for a in e.args]
                names = list(e.aliases) if e.aliases else [it.alias or "aggVal"]
                if len(names) != len(spec.terminate_set):
                    raise CslTypeError(
                        f"aggregate {spec.name} produces "
                        f"{len(spec.terminate_set)} members", e.span)
                for n, t in zip(names, spec.terminate_types):
                    out_cols.append(Column(n, t))
                plans.append(("custom", (spec, arg_fns)))
            elif e.star:
                out_cols.append(Column(it.alias or "cnt", ScalarType.INT))
                plans.append(("builtin", (e.name, True, None)))
            else:
                if e.name not in ("count", "sum", "min", "max", "avg"):
                    raise UnknownAggregate(f"unknown aggregate {e.name}", e.span)
                arg_fn = compile_expr(e.args[0], colmap, ambiguous, subq)
                t = (ScalarType.INT if e.name == "count"
                     else infer_type(e.args[0], coltypes, ctx.vartypes,
                                     ctx.registry))
                out_cols.append(Column(_output_name(it, i), t))
                plans.append(("builtin", (e.name, False, arg_fn)))
        else:
            if it.is_star:
                raise CslTypeError("SELECT * cannot mix with aggregates",
                                   q.span if hasattr(q, "span") else None)
            fn = compile_expr(e, colmap, ambiguous, subq)
            t = infer_type(e, coltypes, ctx.vartypes, ctx.registry)
            out_cols.append(Column(_output_name(it, i), t))
            plans.append(("plain", fn))

    out_rows = []
    for key, grows in groups.items():
        acc: list = []
        for kind, payload in plans:
            if kind == "plain":
                acc.append(payload(grows[0], getv) if grows else None)
            elif kind == "builtin":
                name, star, arg_fn = payload
                acc.append(_builtin_fold(name, star, arg_fn, grows, getv))
            else:
                spec, arg_fns = payload
                acc.extend(_custom_fold(spec, arg_fns, grows, getv, ctx))
        out_rows.append(tuple(acc))

    if q.order_by:
        out_map = {c.name: i for i, c in enumerate(out_cols)}
        counts: dict[str, int] = {}
        for c in out_cols:
            counts[c.name] = counts.get(c.name, 0) + 1
        amb = {n for n, c in counts.items() if c > 1}
        _sort_rows(out_rows, q.order_by, out_map, amb, subq, getv)
    return Relation(out_cols, out_rows)


def _eval_cte(cte: Cte, getv, ctx: EngineContext,
              cte_env: dict[str, Relation]) -> Relation:
    base = eval_query(cte.base, getv, ctx, cte_env)
    if cte.recursive is None:
        return base
    all_rows = list(base.rows)
    level = base
    iterations = 0
    while level.rows:
        iterations += 1
        if iterations > ctx.depth_cap:
            raise DepthExceeded(
                f"recursive CTE {cte.name} exceeded {ctx.depth_cap} iterations")
        env = dict(cte_env)
        env[cte.name] = level
        nxt = eval_query(cte.recursive, getv, ctx, env)
        if nxt.arity != base.arity:
            raise CslTypeError(
                f"recursive arm of {cte.name} produces {nxt.arity} columns, "
                f"base produces {base.arity}")
        all_rows.extend(nxt.rows)
        level = nxt
    return Relation(base.columns, all_rows)
