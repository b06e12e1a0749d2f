"""Custom-aggregate synthesis from a cursor loop region.

The four variable sets drive everything:
  fields    V_F    = (V_delta - (V_fetch | V_local)) | {isInitialized}
  params    P_acc  = vars used in the loop with a reaching def outside it
  init set  V_init = P_acc - V_fetch
  results   V_term = fields live at the loop's exit, declaration order

Initialization is deferred: Init() only clears the flag, and each
Accumulate call starts with a guard that copies the init params into their
fields on the first row. The guard is driven by init_set pairs rather than
inlined as statements, since a pair like (cumulativeROI field, cumulativeROI
param) cannot be expressed as an assignment once fields shadow params. The
loop body itself is carried over verbatim; fetch-target references inside it
resolve to the same-named aggregate parameters at run time.
"""
from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field

from .astnodes import (
    Declare, Program, ScalarType, Stmt, block_reads_in_order,
    block_statements,
)
from .dataflow import Facts, UseSite
from .errors import EmptyTerminate
from .graphs import CursorLoopRegion


@dataclass
class AggregateParam:
    name: str                 # parameter identifier inside the aggregate
    type: ScalarType
    source: str               # "query-attribute" | "outer-variable"
    variable: str             # program variable it carries


@dataclass
class AggregateSpec:
    name: str
    fields: list[tuple[str, ScalarType]]   # V_F in declaration order, flag last
    init_flag: str
    params: list[AggregateParam]           # P_accum in first-use order
    init_set: list[tuple[str, str]]        # (field, param) pairs = V_init
    accumulate_body: list[Stmt]            # the loop body, verbatim
    terminate_set: list[str]               # V_term in declaration order
    order_sensitive: bool = False

    @property
    def field_types(self) -> dict[str, ScalarType]:
        return dict(self.fields)

    @property
    def terminate_types(self) -> list[ScalarType]:
        ft = self.field_types
        return [ft[v] for v in self.terminate_set]

    @property
    def return_type(self):
        """Scalar for single-member results, list of types otherwise."""
        ts = self.terminate_types
        return ts[0] if len(ts) == 1 else ts

    def to_dict(self) -> dict:
        from .printer import print_stmt_block
        return {
            "name": self.name,
            "fields": [[n, t.value] for n, t in self.fields],
            "init_flag": self.init_flag,
            "params": [
                {"name": p.name, "type": p.type.value, "source": p.source,
                 "variable": p.variable}
                for p in self.params
            ],
            "init_set": [[f, p] for f, p in self.init_set],
            "accumulate": print_stmt_block(self.accumulate_body),
            "terminate": list(self.terminate_set),
            "order_sensitive": self.order_sensitive,
        }

    @staticmethod
    def from_dict(d: dict) -> "AggregateSpec":
        from .parser import parse_statements
        return AggregateSpec(
            name=d["name"],
            fields=[(n, ScalarType(t)) for n, t in d["fields"]],
            init_flag=d["init_flag"],
            params=[AggregateParam(p["name"], ScalarType(p["type"]),
                                   p["source"], p["variable"])
                    for p in d["params"]],
            init_set=[(f, p) for f, p in d["init_set"]],
            accumulate_body=parse_statements(d["accumulate"]),
            terminate_set=list(d["terminate"]),
            order_sensitive=d["order_sensitive"],
        )


def declaration_order(program: Program) -> list[str]:
    """Parameters first, then DECLAREs in textual order."""
    order = [p.name for p in program.params]
    for s in block_statements(program.body):
        if isinstance(s, Declare) and s.name not in order:
            order.append(s.name)
    return order


def declared_types(program: Program) -> dict[str, ScalarType]:
    types = {p.name: p.type for p in program.params}
    for s in block_statements(program.body):
        if isinstance(s, Declare):
            types.setdefault(s.name, s.type)
    return types


def delta_census(region: CursorLoopRegion,
                 facts: Facts) -> tuple[set[str], set[str]]:
    """(V_delta, V_local): everything the body touches, and the subset
    declared inside it that nothing reads after the loop."""
    from .astnodes import stmt_reads, stmt_writes
    v_delta: set[str] = set()
    declared_inside: set[str] = set()
    for s in block_statements(region.delta):
        v_delta |= set(stmt_reads(s)) | set(stmt_writes(s))
        if isinstance(s, Declare):
            declared_inside.add(s.name)
    live_after = facts.live_in.get(region.exit_node, frozenset())
    # a variable declared inside the body is only private to the aggregate
    # if nothing reads it after the loop
    v_local = {v for v in declared_inside if v not in live_after}
    return v_delta, v_local


def compute_fields(region: CursorLoopRegion, facts: Facts,
                   program: Program) -> list[str]:
    """Eq. 1, ordered by declaration. The flag is appended by the builder."""
    v_delta, v_local = delta_census(region, facts)
    vf = v_delta - (set(region.fetch_vars) | v_local)
    order = declaration_order(program)
    return sorted(vf, key=lambda v: order.index(v) if v in order else len(order))


def reaches_from_outside(v: str, region: CursorLoopRegion,
                         facts: Facts) -> bool:
    """Eq. 2: some use of v inside the loop sees a def from outside it.
    Synthetic uninitialized-use defs do not count."""
    for n in region.loop_node_ids:
        if v not in facts.graph.uses.get(n, ()):
            continue
        for d in facts.ud.get(UseSite(n, v), ()):
            if d.node not in region.loop_node_ids and d.origin != "uninitialized":
                return True
    return False


_ACRONYM = re.compile(r"[A-Z]{2}")


def param_display_name(variable: str, is_fetch: bool, taken: set[str]) -> str:
    """Fetch-sourced params keep the variable's name; outer variables are
    prefixed to read as parameters, unless the name already carries an
    acronym and renaming would mangle it."""
    if is_fetch or _ACRONYM.search(variable):
        name = variable
    else:
        name = "p" + variable[0].upper() + variable[1:]
    base, k = name, 2
    while name in taken:
        name = f"{base}{k}"
        k += 1
    return name


def compute_accum_params(region: CursorLoopRegion, facts: Facts,
                         program: Program) -> list[AggregateParam]:
    """Eq. 3: used-in-loop variables with an outside reaching def, in
    first-use order."""
    types = declared_types(program)
    fetch = set(region.fetch_vars)
    seen: set[str] = set()
    taken: set[str] = set()
    params: list[AggregateParam] = []
    for v in block_reads_in_order(region.delta):
        if v in seen:
            continue
        seen.add(v)
        if not reaches_from_outside(v, region, facts):
            continue
        is_fetch = v in fetch
        name = param_display_name(v, is_fetch, taken)
        taken.add(name)
        params.append(AggregateParam(
            name=name, type=types[v],
            source="query-attribute" if is_fetch else "outer-variable",
            variable=v))
    return params


def compute_init_set(params: list[AggregateParam],
                     fetch_vars: list[str]) -> list[tuple[str, str]]:
    """Eq. 4 in variable space: (field, param) initializer pairs."""
    return [(p.variable, p.name) for p in params
            if p.variable not in set(fetch_vars)]


def compute_terminate_set(region: CursorLoopRegion, facts: Facts,
                          vf: list[str]) -> list[str]:
    live_after = facts.live_in.get(region.exit_node, frozenset())
    vterm = [v for v in vf if v in live_after]
    if not vterm:
        raise EmptyTerminate(
            f"loop over {region.cursor_name} leaves no live result",
            region.while_stmt.span)
    return vterm


def pick_flag_name(program: Program) -> str:
    used = set(declaration_order(program))
    name, k = "isInitialized", 2
    while name in used:
        name = f"isInitialized{k}"
        k += 1
    return name


def build_aggregate(name: str, region: CursorLoopRegion, program: Program,
                    vf: list[str], params: list[AggregateParam],
                    init_set: list[tuple[str, str]],
                    vterm: list[str]) -> AggregateSpec:
    types = declared_types(program)
    flag = pick_flag_name(program)
    fields = [(v, types[v]) for v in vf] + [(flag, ScalarType.BOOL)]
    return AggregateSpec(
        name=name, fields=fields, init_flag=flag, params=params,
        init_set=init_set, accumulate_body=copy.deepcopy(region.delta),
        terminate_set=vterm, order_sensitive=bool(region.query.order_by))


def render_template(spec: AggregateSpec) -> str:
    """Readable rendering of the full aggregate, guard included."""
    from .printer import print_stmt_block
    lines = [f"AGGREGATE {spec.name}"]
    for n, t in spec.fields:
        lines.append(f"    FIELD @{n} {t.value}")
    sig = ", ".join(f"@{p.name} {p.type.value}" for p in spec.params)
    lines.append(f"    INIT() SET @{spec.init_flag} = FALSE")
    lines.append(f"    ACCUMULATE({sig})")
    lines.append(f"        IF (NOT @{spec.init_flag})")
    lines.append("        BEGIN")
    for f, p in spec.init_set:
        lines.append(f"            SET @{f} = param @{p};")
    lines.append(f"            SET @{spec.init_flag} = TRUE;")
    lines.append("        END")
    body = print_stmt_block(spec.accumulate_body)
    for ln in body.splitlines():
        lines.append("        " + ln if ln else "")
    members = ", ".join("@" + v for v in spec.terminate_set)
    lines.append(f"    TERMINATE() RETURN ({members})")
    return "\n".join(lines) + "\n"
