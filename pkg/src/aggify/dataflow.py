"""Iterative dataflow over flow graphs: reaching definitions, live
variables, use-def/def-use chains.

The solver is a round-robin fixpoint over a fixed node order (reverse
post-order forward, its reverse backward), so the pass count is bounded by
nodes x variables + 1 for these union lattices.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .astnodes import Declare, Fetch


@dataclass(frozen=True)
class DefSite:
    node: int
    variable: str
    origin: str  # param-default | local-init | assignment | fetch | uninitialized


@dataclass(frozen=True)
class UseSite:
    node: int
    variable: str


@dataclass
class FlowGraph:
    """Minimal structure the solver needs; tests build these directly."""
    node_ids: list[int]
    entry: int
    exit: int
    succs: dict[int, list[int]]
    preds: dict[int, list[int]]
    defs: dict[int, list[str]]
    uses: dict[int, list[str]]
    def_origins: dict[tuple[int, str], str] = field(default_factory=dict)

    def origin(self, node: int, var: str) -> str:
        return self.def_origins.get((node, var), "assignment")

    def rpo(self) -> list[int]:
        seen: set[int] = set()
        order: list[int] = []

        def dfs(n: int):
            seen.add(n)
            for m in self.succs.get(n, []):
                if m not in seen:
                    dfs(m)
            order.append(n)

        dfs(self.entry)
        order.reverse()
        # keep unreachable ids stable at the tail (they stay bottom)
        order.extend(n for n in self.node_ids if n not in seen)
        return order


def from_cfg(cfg) -> FlowGraph:
    node_ids = sorted(cfg.nodes)
    succs = {n: [e.dst for e in cfg.succ[n]] for n in node_ids}
    preds = {n: [e.src for e in cfg.pred[n]] for n in node_ids}
    defs = {n: cfg.node_defs(n) for n in node_ids}
    uses = {n: cfg.node_uses(n) for n in node_ids}
    origins: dict[tuple[int, str], str] = {}
    for n in node_ids:
        stmt = cfg.nodes[n].stmt
        for v in defs[n]:
            if isinstance(stmt, Declare):
                origins[(n, v)] = "local-init"
            elif isinstance(stmt, Fetch):
                origins[(n, v)] = "fetch"
            else:
                origins[(n, v)] = "assignment"
    return FlowGraph(node_ids, cfg.entry, cfg.exit, succs, preds, defs, uses,
                     origins)


def _solve(graph: FlowGraph, transfer, forward: bool, boundary: frozenset):
    order = graph.rpo()
    if not forward:
        order = list(reversed(order))
    in_map = {n: frozenset() for n in graph.node_ids}
    out_map = {n: frozenset() for n in graph.node_ids}
    passes = 0
    changed = True
    while changed:
        changed = False
        passes += 1
        for n in order:
            if forward:
                acc = boundary if n == graph.entry else frozenset()
                for p in graph.preds.get(n, []):
                    acc = acc | out_map[p]
                new_out = transfer(n, acc)
                if acc != in_map[n] or new_out != out_map[n]:
                    in_map[n], out_map[n] = acc, new_out
                    changed = True
            else:
                acc = boundary if n == graph.exit else frozenset()
                for s in graph.succs.get(n, []):
                    acc = acc | in_map[s]
                new_in = transfer(n, acc)
                if acc != out_map[n] or new_in != in_map[n]:
                    out_map[n], in_map[n] = acc, new_in
                    changed = True
    return in_map, out_map, passes


def reaching_definitions(graph: FlowGraph, entry_defs: list[DefSite]):
    """Forward may-analysis; returns (reach_in, reach_out, passes)."""
    gen = {
        n: frozenset(DefSite(n, v, graph.origin(n, v)) for v in graph.defs.get(n, []))
        for n in graph.node_ids
    }
    killed_vars = {n: set(graph.defs.get(n, [])) for n in graph.node_ids}

    def transfer(n, inp):
        kv = killed_vars[n]
        if not kv:
            return inp | gen[n]
        return gen[n] | frozenset(d for d in inp if d.variable not in kv)

    return _solve(graph, transfer, forward=True, boundary=frozenset(entry_defs))


def live_variables(graph: FlowGraph):
    """Backward may-analysis; returns (live_in, live_out, passes)."""
    use = {n: frozenset(graph.uses.get(n, [])) for n in graph.node_ids}
    defs = {n: frozenset(graph.defs.get(n, [])) for n in graph.node_ids}

    def transfer(n, outp):
        return use[n] | (outp - defs[n])

    in_map, out_map, passes = _solve(graph, transfer, forward=False,
                                     boundary=frozenset())
    return in_map, out_map, passes


def reaching_uses(cfg) -> dict[int, frozenset[tuple[int, str]]]:
    """Exposed reads reaching each node's entry (feeds anti-dependences).
    A read escapes its node only if the node does not also write the
    variable (reads happen before writes within a statement)."""
    graph = from_cfg(cfg)
    gen = {}
    for n in graph.node_ids:
        writes = set(graph.defs.get(n, []))
        gen[n] = frozenset((n, v) for v in graph.uses.get(n, []) if v not in writes)
    killed = {n: set(graph.defs.get(n, [])) for n in graph.node_ids}

    def transfer(n, inp):
        kv = killed[n]
        if kv:
            inp = frozenset(p for p in inp if p[1] not in kv)
        return inp | gen[n]

    in_map, _, _ = _solve(graph, transfer, forward=True, boundary=frozenset())
    return in_map


def build_chains(graph: FlowGraph, reach_in):
    """ud[use] = defs of the variable reaching the node; du is the inverse."""
    ud: dict[UseSite, frozenset[DefSite]] = {}
    du: dict[DefSite, set[UseSite]] = {}
    for n in graph.node_ids:
        for v in graph.uses.get(n, []):
            use = UseSite(n, v)
            defs = frozenset(d for d in reach_in[n] if d.variable == v)
            ud[use] = defs
            for d in defs:
                du.setdefault(d, set()).add(use)
    return ud, {d: frozenset(us) for d, us in du.items()}


@dataclass
class Facts:
    graph: FlowGraph
    reach_in: dict[int, frozenset[DefSite]]
    reach_out: dict[int, frozenset[DefSite]]
    live_in: dict[int, frozenset[str]]
    live_out: dict[int, frozenset[str]]
    ud: dict[UseSite, frozenset[DefSite]]
    du: dict[DefSite, frozenset[UseSite]]
    warnings: list[str]
    passes: int


def analyze_graph(graph: FlowGraph, entry_defs: list[DefSite]) -> Facts:
    reach_in, reach_out, p1 = reaching_definitions(graph, entry_defs)
    ud, _ = build_chains(graph, reach_in)
    warnings: list[str] = []
    extra: list[DefSite] = []
    seen_vars: set[str] = set()
    for use, defs in sorted(ud.items(), key=lambda kv: (kv[0].node, kv[0].variable)):
        if not defs and use.variable not in seen_vars:
            seen_vars.add(use.variable)
            warnings.append(
                f"@{use.variable} may be read before any definition "
                f"(node {use.node})")
            extra.append(DefSite(graph.entry, use.variable, "uninitialized"))
    if extra:
        reach_in, reach_out, p1b = reaching_definitions(graph, entry_defs + extra)
        p1 += p1b
    ud, du = build_chains(graph, reach_in)
    live_in, live_out, p2 = live_variables(graph)
    return Facts(graph, reach_in, reach_out, live_in, live_out, ud, du,
                 warnings, p1 + p2)


def analyze_cfg(cfg, entry_params: list[str]) -> Facts:
    graph = from_cfg(cfg)
    entry_defs = [DefSite(cfg.entry, p, "param-default") for p in entry_params]
    return analyze_graph(graph, entry_defs)


def analyze_program(program, cfg) -> Facts:
    return analyze_cfg(cfg, [p.name for p in program.params])


def dump_facts(cfg, facts: Facts) -> dict:
    """JSON-ready per-node dump for --emit-facts."""
    nodes = {}
    for n in sorted(cfg.nodes):
        nodes[str(n)] = {
            "label": cfg.nodes[n].label(),
            "defs": sorted(set(cfg.node_defs(n))),
            "uses": sorted(set(cfg.node_uses(n))),
            "reach_in": _dump_defs(facts.reach_in[n]),
            "reach_out": _dump_defs(facts.reach_out[n]),
            "live_in": sorted(facts.live_in[n]),
            "live_out": sorted(facts.live_out[n]),
        }
    return {"entry": cfg.entry, "exit": cfg.exit, "nodes": nodes,
            "warnings": list(facts.warnings)}


def _dump_defs(defs: frozenset[DefSite]) -> list[dict]:
    return [{"node": d.node, "var": d.variable, "origin": d.origin}
            for d in sorted(defs, key=lambda d: (d.node, d.variable, d.origin))]
