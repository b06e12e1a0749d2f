"""Cursor-loop to aggregate-query rewriting.

transform_program walks cursor loops innermost-first. For each applicable
loop it synthesizes a custom aggregate from the body, replaces the whole
DECLARE/OPEN/FETCH/WHILE idiom with one query assignment at the point where
the cursor used to materialize, and drops variable declarations the rewrite
orphaned. Loops that fail the applicability gate stay byte-identical and
are reported with a structured reason.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field as dc_field

from .aggregates import (
    AggregateSpec, build_aggregate, compute_accum_params, compute_fields,
    compute_init_set, compute_terminate_set, declared_types, delta_census,
)
from .astnodes import (
    AggCall, AssignFromQuery, ColRef, Declare, Expr, For, FromItem, If,
    InsertLocal, PersistentDml, Program, QuerySpec, Return, SelectItem, Span,
    Stmt, VarRef, While, block_statements, block_writes, query_vars,
    stmt_reads, stmt_writes,
)
from .dataflow import Facts, analyze_program
from .errors import EmptyTerminate
from .graphs import (
    Cfg, CursorLoopRegion, build_cfg, find_cursor_loops, query_local_tables,
)

REJECTION_REASONS = (
    "persistent-dml", "unsupported-stmt", "fetch-var-live",
    "empty-terminate", "preloop-value-live", "gap-interference",
)


@dataclass
class Rejection:
    cursor: str
    reason: str
    detail: str
    span: Span | None = None

    def as_dict(self) -> dict:
        d = {"cursor": self.cursor, "reason": self.reason,
             "detail": self.detail}
        if self.span is not None:
            d["line"] = self.span.line
        return d


@dataclass
class RewritePlan:
    cursor: str
    aggregate: AggregateSpec
    rewritten_query: QuerySpec
    result_bindings: list[tuple[str, str]]  # (local variable, record member)
    removed_declarations: list[str]
    # variables the loop used to mutate whose final values nothing reads;
    # the rewrite leaves them at their pre-loop values on purpose
    stale_vars: list[str] = dc_field(default_factory=list)
    sets: dict = dc_field(default_factory=dict)

    def as_dict(self) -> dict:
        from .printer import print_query
        return {
            "cursor": self.cursor,
            "aggregate": self.aggregate.to_dict(),
            "rewritten_query": print_query(self.rewritten_query),
            "result_bindings": [list(b) for b in self.result_bindings],
            "removed_declarations": list(self.removed_declarations),
            "sets": self.sets,
        }


@dataclass
class TransformResult:
    program: Program
    plans: list[RewritePlan]
    rejections: list[Rejection]

    @property
    def registry(self) -> dict[str, AggregateSpec]:
        return {p.aggregate.name: p.aggregate for p in self.plans}

    @property
    def stale_vars(self) -> set[str]:
        out: set[str] = set()
        for p in self.plans:
            out |= set(p.stale_vars)
        return out


def check_applicability(region: CursorLoopRegion, program: Program,
                        facts: Facts) -> Rejection | None:
    name = region.cursor_name
    for s in block_statements(region.delta):
        if isinstance(s, PersistentDml):
            return Rejection(name, "persistent-dml",
                             f"{s.kind.upper()} against table {s.table}",
                             s.span)
        if isinstance(s, Return):
            return Rejection(name, "unsupported-stmt",
                             "RETURN leaves the loop early", s.span)

    if list(region.priming.targets) != list(region.tail.targets):
        return Rejection(name, "unsupported-stmt",
                         "priming and advancing FETCH target different "
                         "variables", region.tail.span)
    if any(it.is_star for it in region.query.select_items):
        return Rejection(name, "unsupported-stmt",
                         "cursor query projects *", region.decl.span)

    live_after = facts.live_in.get(region.exit_node, frozenset())
    live_fetch = sorted(set(region.fetch_vars) & set(live_after))
    if live_fetch:
        return Rejection(name, "fetch-var-live",
                         f"fetch variables read after the loop: "
                         f"{', '.join('@' + v for v in live_fetch)}",
                         region.while_stmt.span)

    # the rewrite evaluates the query and runs the whole fold at the old
    # DECLARE position; statements that used to run between DECLARE and the
    # loop must not feed the query or observe the loop's results
    hazard_reads = set(query_vars(region.query))
    q_tables: set[str] = set()
    query_local_tables(region.query, q_tables)
    for g in region.gap_stmts:
        writes = set(stmt_writes(g))
        if writes & hazard_reads:
            return Rejection(
                name, "gap-interference",
                f"statement before the loop writes "
                f"{', '.join('@' + v for v in sorted(writes & hazard_reads))} "
                f"read by the cursor query", g.span)
        if isinstance(g, InsertLocal) and g.table in q_tables:
            return Rejection(
                name, "gap-interference",
                f"statement before the loop inserts into @{g.table} read by "
                f"the cursor query", g.span)
    return None


def _gap_result_hazard(region: CursorLoopRegion, vterm: list[str],
                       outer_sources: set[str]) -> Rejection | None:
    observed = set(vterm)
    for g in region.gap_stmts:
        reads = set(stmt_reads(g))
        if reads & observed:
            bad = ", ".join("@" + v for v in sorted(reads & observed))
            return Rejection(region.cursor_name, "gap-interference",
                             f"statement before the loop reads {bad}, "
                             f"assigned by the rewrite", g.span)
        writes = set(stmt_writes(g))
        if writes & outer_sources:
            bad = ", ".join("@" + v for v in sorted(writes & outer_sources))
            return Rejection(region.cursor_name, "gap-interference",
                             f"statement before the loop writes {bad}, "
                             f"passed to the aggregate", g.span)
    return None


def _preloop_value_hazard(region: CursorLoopRegion, facts: Facts,
                          vterm: list[str], init_fields: set[str],
                          cfg: Cfg) -> Rejection | None:
    """A result field not covered by V_init starts as NULL inside the
    aggregate. That only matches the original when the variable was still
    NULL at loop entry."""
    for v in vterm:
        if v in init_fields:
            continue
        for d in facts.reach_in.get(region.header_node, frozenset()):
            if d.variable != v or d.node in region.loop_node_ids:
                continue
            if d.origin == "uninitialized":
                continue
            if d.origin == "local-init":
                stmt = cfg.nodes[d.node].stmt
                if isinstance(stmt, Declare) and stmt.init is None:
                    continue
            return Rejection(
                region.cursor_name, "preloop-value-live",
                f"@{v} may hold a pre-loop value the aggregate cannot see",
                region.while_stmt.span)
    return None


def _output_names(q: QuerySpec) -> list[str]:
    names = []
    for i, it in enumerate(q.select_items):
        if it.alias:
            names.append(it.alias)
        elif isinstance(it.expr, ColRef):
            names.append(it.expr.name)
        else:
            names.append(f"col{i + 1}")
    return names


def _ensure_named_outputs(q: QuerySpec) -> list[str]:
    """Give every projection of Q a unique referable name, aliasing where
    the derived name is missing or duplicated."""
    names = _output_names(q)
    seen: set[str] = set()
    for i, it in enumerate(q.select_items):
        name = names[i]
        if name in seen or (it.alias is None
                            and not isinstance(it.expr, ColRef)):
            k = i + 1
            name = f"c{k}"
            while name in seen:
                k += 1
                name = f"c{k}"
            q.select_items[i] = SelectItem(expr=it.expr, alias=name,
                                           span=it.span)
        seen.add(name)
        names[i] = name
    return names


def _sort_alias(i: int, taken: set[str]) -> str:
    name = f"__s{i + 1}"
    while name in taken:
        name = "_" + name
    return name


def rewrite_query(region: CursorLoopRegion, spec: AggregateSpec) -> QuerySpec:
    q = copy.deepcopy(region.query)
    out_names = _ensure_named_outputs(q)
    col_of_fetch = {v: out_names[i]
                    for i, v in enumerate(region.priming.targets)}

    pre_sort: list[tuple[Expr, bool]] = []
    if q.order_by:
        taken = set(out_names)
        for i, (key, desc) in enumerate(q.order_by):
            alias = _sort_alias(i, taken)
            taken.add(alias)
            q.select_items.append(SelectItem(expr=copy.deepcopy(key),
                                             alias=alias))
            pre_sort.append((ColRef(alias), desc))
        if q.top is None:
            # no TOP: the materialized order was only consumed by the fold,
            # so the inner sort can be dropped in favor of the outer one
            q.order_by = []

    args: list[Expr] = []
    for p in spec.params:
        if p.source == "query-attribute":
            args.append(ColRef(col_of_fetch[p.variable]))
        else:
            args.append(VarRef(p.variable))

    sub = FromItem(table=None, query=q, alias="sub")
    members = list(spec.terminate_set)
    if len(members) == 1:
        call = AggCall(name=spec.name, args=args)
        return QuerySpec(select_items=[SelectItem(expr=call, alias="aggVal")],
                         from_items=[sub], pre_sort=pre_sort)
    call = AggCall(name=spec.name, args=args, aliases=tuple(members))
    inner = QuerySpec(select_items=[SelectItem(expr=call)],
                      from_items=[sub], pre_sort=pre_sort)
    outer_items = [SelectItem(expr=ColRef(m)) for m in members]
    return QuerySpec(select_items=outer_items,
                     from_items=[FromItem(table=None, query=inner,
                                          alias="agg_result")])


def _replace_region(region: CursorLoopRegion, new_stmts: list[Stmt]):
    block = region.block
    claimed = {id(s) for s in region.claimed_statements()}
    claimed.add(id(region.tail))
    pos = next(i for i, s in enumerate(block) if s is region.decl)
    kept_before = block[:pos]
    kept_after = [s for s in block[pos:] if id(s) not in claimed]
    block[:] = kept_before + new_stmts + kept_after


def _used_variables(program: Program) -> set[str]:
    used: set[str] = set()
    for s in block_statements(program.body):
        if isinstance(s, Declare):
            if s.init is not None:
                used |= set(stmt_reads(s))
            continue
        used |= set(stmt_reads(s)) | set(stmt_writes(s))
    return used


def _remove_declares(block: list[Stmt], names: set[str]):
    block[:] = [s for s in block
                if not (isinstance(s, Declare) and s.name in names)]
    for s in block:
        if isinstance(s, If):
            _remove_declares(s.then, names)
            _remove_declares(s.orelse, names)
        elif isinstance(s, (While, For)):
            _remove_declares(s.body, names)


def _find_region(program: Program, while_id: int,
                 convert_for: bool = False):
    cfg = build_cfg(program)
    facts = analyze_program(program, cfg)
    regions = find_cursor_loops(program, cfg)
    for r in regions:
        if id(r.while_stmt) == while_id:
            return cfg, facts, r
    return cfg, facts, None


def transform_program(program: Program, enable_motion: bool = False,
                      convert_for: bool = False) -> TransformResult:
    prog = copy.deepcopy(program)
    if convert_for:
        from .enhance import convert_for_loops
        convert_for_loops(prog)

    plans: list[RewritePlan] = []
    rejections: list[Rejection] = []
    rejected: set[int] = set()
    agg_index = 0

    while True:
        cfg = build_cfg(prog)
        facts = analyze_program(prog, cfg)
        regions = [r for r in find_cursor_loops(prog, cfg)
                   if id(r.while_stmt) not in rejected]
        if not regions:
            break
        region = regions[0]  # innermost-first ordering

        rej = check_applicability(region, prog, facts)
        if rej is None and enable_motion:
            from .enhance import acyclic_code_motion
            if acyclic_code_motion(prog, region):
                cfg, facts, region = _find_region(prog, id(region.while_stmt))
                rej = check_applicability(region, prog, facts)

        plan_or_rej = None
        if rej is None:
            plan_or_rej = _plan_region(prog, cfg, facts, region, agg_index)
        if rej is None and isinstance(plan_or_rej, Rejection):
            rej = plan_or_rej
        if rej is not None:
            rejections.append(rej)
            rejected.add(id(region.while_stmt))
            continue

        plan = plan_or_rej
        agg_index += 1
        plans.append(plan)

    return TransformResult(prog, plans, rejections)


def _plan_region(prog: Program, cfg: Cfg, facts: Facts,
                 region: CursorLoopRegion, agg_index: int):
    vf = compute_fields(region, facts, prog)
    params = compute_accum_params(region, facts, prog)
    init_set = compute_init_set(params, region.fetch_vars)
    try:
        vterm = compute_terminate_set(region, facts, vf)
    except EmptyTerminate as e:
        return Rejection(region.cursor_name, "empty-terminate",
                         "no field is read after the loop", e.span)

    rej = _preloop_value_hazard(region, facts, vterm,
                                {f for f, _ in init_set}, cfg)
    if rej is not None:
        return rej
    outer_sources = {p.variable for p in params
                     if p.source == "outer-variable"}
    rej = _gap_result_hazard(region, vterm, outer_sources)
    if rej is not None:
        return rej

    name = f"{prog.name}_{agg_index + 1}_agg"
    spec = build_aggregate(name, region, prog, vf, params, init_set, vterm)
    rewritten = rewrite_query(region, spec)

    # declarations that lived inside the removed body must come back for
    # the assignment targets to remain declared
    inner_types = {s.name: s.type for s in block_statements(region.delta)
                   if isinstance(s, Declare)}
    readds = [Declare(name=v, type=inner_types[v])
              for v in vterm if v in inner_types]

    assign = AssignFromQuery(targets=list(vterm), query=rewritten)
    _replace_region(region, readds + [assign])

    used = _used_variables(prog)
    dead = {v for v in region.fetch_vars if v not in used}
    if dead:
        _remove_declares(prog.body, dead)

    delta_writes = block_writes(region.delta)
    stale = sorted((set(v for v, _ in spec.fields) & delta_writes
                    | set(region.fetch_vars)) - set(vterm))

    members = (["aggVal"] if len(vterm) == 1 else list(vterm))
    v_delta, v_local = delta_census(region, facts)
    return RewritePlan(
        cursor=region.cursor_name,
        aggregate=spec,
        rewritten_query=rewritten,
        result_bindings=list(zip(vterm, members)),
        removed_declarations=sorted(dead),
        stale_vars=stale,
        sets={
            "V_delta": sorted(v_delta),
            "V_fetch": list(region.fetch_vars),
            "V_local": sorted(v_local),
            "V_F": [n for n, _ in spec.fields],
            "P_accum": [p.name for p in spec.params],
            "V_init": [f for f, _ in init_set],
            "V_term": list(vterm),
        })
