"""Control-flow graph, data-dependence edges, cursor-loop regions.

One statement per node; IF/WHILE contribute a condition node, FOR three
header nodes. Edges carry a branch label. A fall edge that targets a loop
header is relabeled loop-back; a branch edge keeps its true/false label
even when it closes a loop.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .astnodes import (
    Assign, AssignFromQuery, CursorClose, CursorDeallocate, CursorDeclare,
    CursorOpen, Declare, DeclareTable, Fetch, FetchStatus, For, FromItem, If,
    Program, QuerySpec, Return, Binary, Const,
    Skip, Stmt, While, block_statements, stmt_reads, stmt_writes,
)
from .errors import MalformedCursorUse


@dataclass
class CfgNode:
    id: int
    stmt: Stmt | None
    role: str  # entry|exit|stmt|if-cond|while-cond|for-init|for-cond|for-incr

    def label(self) -> str:
        from .printer import print_expr, print_stmt
        if self.role == "entry":
            return "ENTRY"
        if self.role == "exit":
            return "EXIT"
        if self.role in ("if-cond", "while-cond", "for-cond"):
            return f"{self.role}: {print_expr(self.stmt.cond)}"
        if self.role == "for-init":
            return f"for-init: @{self.stmt.name} = {print_expr(self.stmt.expr)}"
        if self.role == "for-incr":
            return f"for-incr: @{self.stmt.name} = {print_expr(self.stmt.expr)}"
        return print_stmt(self.stmt).strip()


@dataclass(frozen=True)
class CfgEdge:
    src: int
    dst: int
    label: str  # fall|true|false|loop-back


class Cfg:
    def __init__(self):
        self.nodes: dict[int, CfgNode] = {}
        self.edges: list[CfgEdge] = []
        self.entry: int = 0
        self.exit: int = 0
        # statement identity -> node id (If/While map to their cond node)
        self.stmt_node: dict[int, int] = {}

    # successor/pred maps are rebuilt after pruning
    def finish(self):
        self.succ: dict[int, list[CfgEdge]] = {n: [] for n in self.nodes}
        self.pred: dict[int, list[CfgEdge]] = {n: [] for n in self.nodes}
        for e in self.edges:
            self.succ[e.src].append(e)
            self.pred[e.dst].append(e)

    def successors(self, n: int) -> list[int]:
        return [e.dst for e in self.succ[n]]

    def predecessors(self, n: int) -> list[int]:
        return [e.src for e in self.pred[n]]

    def node_defs(self, n: int) -> list[str]:
        node = self.nodes[n]
        if node.stmt is None:
            return []
        if node.role in ("if-cond", "while-cond", "for-cond"):
            return []
        return stmt_writes(node.stmt)

    def node_uses(self, n: int) -> list[str]:
        node = self.nodes[n]
        if node.stmt is None:
            return []
        if node.role in ("if-cond", "while-cond", "for-cond"):
            from .astnodes import expr_vars
            return expr_vars(node.stmt.cond)
        if node.role in ("for-init", "for-incr"):
            from .astnodes import expr_vars
            return expr_vars(node.stmt.expr)
        return stmt_reads(node.stmt)

    def rpo(self) -> list[int]:
        """Reverse post-order from entry."""
        seen: set[int] = set()
        order: list[int] = []

        def dfs(n: int):
            seen.add(n)
            for e in self.succ[n]:
                if e.dst not in seen:
                    dfs(e.dst)
            order.append(n)

        dfs(self.entry)
        order.reverse()
        return order

    def to_dot(self, dep_edges: list["DepEdge"] | None = None) -> str:
        lines = ["digraph cfg {", '    node [shape=box, fontname="monospace"];']
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            text = node.label().replace("\\", "\\\\").replace('"', '\\"')
            lines.append(f'    n{nid} [label="{nid}: {text}"];')
        for e in sorted(self.edges, key=lambda e: (e.src, e.dst, e.label)):
            lines.append(f'    n{e.src} -> n{e.dst} [label="{e.label}"];')
        for d in sorted(dep_edges or [], key=lambda d: (d.src, d.dst, d.kind, d.var)):
            lines.append(f'    n{d.src} -> n{d.dst} '
                         f'[label="{d.kind}:{d.var}", style=dashed, color=gray40];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_cfg(program: Program) -> Cfg:
    cfg = Cfg()
    counter = 0

    def new_node(stmt, role) -> int:
        nonlocal counter
        nid = counter
        counter += 1
        cfg.nodes[nid] = CfgNode(nid, stmt, role)
        return nid

    cfg.entry = new_node(None, "entry")
    cfg.exit = new_node(None, "exit")
    loop_headers: set[int] = set()

    def wire(dangling: list[tuple[int, str]], target: int):
        for src, label in dangling:
            if target in loop_headers and label == "fall":
                label = "loop-back"
            cfg.edges.append(CfgEdge(src, target, label))

    def build_block(stmts: list[Stmt]) -> tuple[int | None, list[tuple[int, str]]]:
        first: int | None = None
        dangling: list[tuple[int, str]] = []

        def attach(node_id: int):
            nonlocal first
            if first is None:
                first = node_id
            wire(dangling, node_id)

        for idx, s in enumerate(stmts):
            if isinstance(s, If):
                cond = new_node(s, "if-cond")
                cfg.stmt_node[id(s)] = cond
                attach(cond)
                tfirst, tdang = build_block(s.then)
                if tfirst is not None:
                    cfg.edges.append(CfgEdge(cond, tfirst, "true"))
                else:
                    tdang = [(cond, "true")]
                efirst, edang = build_block(s.orelse)
                if efirst is not None:
                    cfg.edges.append(CfgEdge(cond, efirst, "false"))
                else:
                    edang = [(cond, "false")]
                dangling = tdang + edang
            elif isinstance(s, While):
                cond = new_node(s, "while-cond")
                cfg.stmt_node[id(s)] = cond
                loop_headers.add(cond)
                attach(cond)
                bfirst, bdang = build_block(s.body)
                if bfirst is not None:
                    cfg.edges.append(CfgEdge(cond, bfirst, "true"))
                    wire(bdang, cond)
                else:
                    cfg.edges.append(CfgEdge(cond, cond, "loop-back"))
                dangling = [(cond, "false")]
            elif isinstance(s, For):
                init = new_node(s.init, "for-init")
                cfg.stmt_node[id(s.init)] = init
                attach(init)
                cond = new_node(s, "for-cond")
                cfg.stmt_node[id(s)] = cond
                loop_headers.add(cond)
                cfg.edges.append(CfgEdge(init, cond, "fall"))
                incr = new_node(s.incr, "for-incr")
                cfg.stmt_node[id(s.incr)] = incr
                bfirst, bdang = build_block(s.body)
                if bfirst is not None:
                    cfg.edges.append(CfgEdge(cond, bfirst, "true"))
                    wire(bdang, incr)
                else:
                    cfg.edges.append(CfgEdge(cond, incr, "true"))
                cfg.edges.append(CfgEdge(incr, cond, "loop-back"))
                dangling = [(cond, "false")]
            elif isinstance(s, Return):
                node = new_node(s, "stmt")
                cfg.stmt_node[id(s)] = node
                attach(node)
                cfg.edges.append(CfgEdge(node, cfg.exit, "fall"))
                # nothing can follow; the remainder is built so every
                # statement owns a node, then pruned as unreachable
                build_block(stmts[idx + 1:])
                return first, []
            else:
                node = new_node(s, "stmt")
                cfg.stmt_node[id(s)] = node
                attach(node)
                dangling = [(node, "fall")]
        return first, dangling

    first, dangling = build_block(program.body)
    if first is not None:
        cfg.edges.append(CfgEdge(cfg.entry, first, "fall"))
        wire(dangling, cfg.exit)
    else:
        cfg.edges.append(CfgEdge(cfg.entry, cfg.exit, "fall"))

    _prune_unreachable(cfg)
    cfg.finish()
    return cfg


def _prune_unreachable(cfg: Cfg):
    succ: dict[int, list[int]] = {}
    for e in cfg.edges:
        succ.setdefault(e.src, []).append(e.dst)
    seen = {cfg.entry}
    stack = [cfg.entry]
    while stack:
        n = stack.pop()
        for m in succ.get(n, []):
            if m not in seen:
                seen.add(m)
                stack.append(m)
    seen.add(cfg.exit)
    cfg.nodes = {k: v for k, v in cfg.nodes.items() if k in seen}
    cfg.edges = [e for e in cfg.edges if e.src in seen and e.dst in seen]
    cfg.stmt_node = {k: v for k, v in cfg.stmt_node.items() if v in seen}


# ------------------------------------------------------------ dependence edges

@dataclass(frozen=True)
class DepEdge:
    src: int
    dst: int
    kind: str  # flow|anti|output
    var: str


def build_ddg(cfg: Cfg, facts=None) -> list[DepEdge]:
    """Flow, anti and output dependences between statement nodes.
    Entry-synthesized definitions (parameters, uninitialized reads) do not
    produce edges; the graph relates statements."""
    from .dataflow import analyze_cfg, reaching_uses
    if facts is None:
        facts = analyze_cfg(cfg, entry_params=[])
    edges: set[DepEdge] = set()
    for use, defs in facts.ud.items():
        for d in defs:
            if d.node != cfg.entry:
                edges.add(DepEdge(d.node, use.node, "flow", use.variable))
    reach_uses_in = reaching_uses(cfg)
    for n in cfg.nodes:
        defs_here = set(cfg.node_defs(n))
        if not defs_here:
            continue
        for (m, var) in reach_uses_in[n]:
            if var in defs_here and m != cfg.entry:
                edges.add(DepEdge(m, n, "anti", var))
        # a statement reading then writing the same variable depends on itself
        for var in set(cfg.node_uses(n)) & defs_here:
            edges.add(DepEdge(n, n, "anti", var))
        for d in facts.reach_in[n]:
            if d.variable in defs_here and d.node != cfg.entry:
                edges.add(DepEdge(d.node, n, "output", d.variable))
    return sorted(edges, key=lambda e: (e.src, e.dst, e.kind, e.var))


# ------------------------------------------------------------- cursor regions

@dataclass
class CursorLoopRegion:
    cursor_name: str
    query: QuerySpec
    fetch_vars: list[str]
    body_nodes: set[int]
    enclosing: "CursorLoopRegion | None" = None
    # structural handles used by the rewrite
    block: list[Stmt] = field(default_factory=list)
    decl: CursorDeclare = None
    open_stmt: CursorOpen = None
    priming: Fetch = None
    while_stmt: While = None
    tail: Fetch = None
    close_stmt: CursorClose | None = None
    dealloc_stmt: CursorDeallocate | None = None
    delta: list[Stmt] = field(default_factory=list)
    gap_stmts: list[Stmt] = field(default_factory=list)
    loop_node_ids: set[int] = field(default_factory=set)
    header_node: int = -1
    exit_node: int = -1
    depth: int = 0

    def claimed_statements(self) -> list[Stmt]:
        out = [self.decl, self.open_stmt, self.priming, self.while_stmt]
        if self.close_stmt is not None:
            out.append(self.close_stmt)
        if self.dealloc_stmt is not None:
            out.append(self.dealloc_stmt)
        return out


def _is_fetch_status_loop(cond) -> bool:
    return (isinstance(cond, Binary) and cond.op == "="
            and isinstance(cond.left, FetchStatus)
            and isinstance(cond.right, Const) and cond.right.value == 0)


def query_local_tables(q: QuerySpec | None, out: set[str]):
    if q is None:
        return
    if q.cte is not None:
        query_local_tables(q.cte.base, out)
        query_local_tables(q.cte.recursive, out)
    for fi in q.from_items:
        if fi.is_local:
            out.add(fi.table)
        elif fi.query is not None:
            query_local_tables(fi.query, out)
    from .astnodes import ScalarSubquery, Unary, Binary as _B, FuncCall, AggCall

    def from_expr(e):
        if isinstance(e, ScalarSubquery):
            query_local_tables(e.query, out)
        elif isinstance(e, Unary):
            from_expr(e.operand)
        elif isinstance(e, _B):
            from_expr(e.left)
            from_expr(e.right)
        elif isinstance(e, (FuncCall, AggCall)):
            for a in e.args:
                from_expr(a)

    for it in q.select_items:
        if it.expr is not None:
            from_expr(it.expr)
    for e in [q.where] + [x for x, _ in q.pre_sort] + list(q.group_by) \
            + [x for x, _ in q.order_by]:
        if e is not None:
            from_expr(e)


def find_cursor_loops(program: Program, cfg: Cfg) -> list[CursorLoopRegion]:
    """Recognize DECLARE/OPEN/FETCH/WHILE(@@FETCH_STATUS)/CLOSE idioms.
    Returns regions innermost-first; cursor statements outside a recognized
    idiom raise MalformedCursorUse."""
    regions: list[CursorLoopRegion] = []
    claimed: set[int] = set()

    def scan_block(block: list[Stmt], depth: int):
        for idx, s in enumerate(block):
            if isinstance(s, If):
                scan_block(s.then, depth)
                scan_block(s.orelse, depth)
            elif isinstance(s, While):
                scan_block(s.body, depth + 1)
            elif isinstance(s, For):
                scan_block(s.body, depth + 1)
            elif isinstance(s, CursorDeclare):
                region = _recognize(block, idx, s, depth)
                if region is not None:
                    regions.append(region)

    def _recognize(block: list[Stmt], decl_idx: int, decl: CursorDeclare,
                   depth: int) -> CursorLoopRegion:
        name = decl.name
        open_stmt = priming = while_stmt = None
        open_idx = -1
        for j in range(decl_idx + 1, len(block)):
            s = block[j]
            if isinstance(s, CursorOpen) and s.name == name:
                open_stmt, open_idx = s, j
                break
            if _mentions_cursor(s, name):
                raise MalformedCursorUse(
                    f"cursor {name} used before OPEN", s.span)
        if open_stmt is None:
            raise MalformedCursorUse(f"cursor {name} is never opened", decl.span)
        fetch_idx = -1
        for j in range(open_idx + 1, len(block)):
            s = block[j]
            if isinstance(s, Fetch) and s.cursor == name:
                priming, fetch_idx = s, j
                break
            if isinstance(s, Fetch):
                raise MalformedCursorUse(
                    f"fetch of another cursor between OPEN {name} and its "
                    f"priming fetch", s.span)
            if _mentions_cursor(s, name):
                raise MalformedCursorUse(
                    f"cursor {name} used before its priming fetch", s.span)
        if priming is None:
            raise MalformedCursorUse(
                f"cursor {name} opened but never fetched", open_stmt.span)
        k = fetch_idx + 1
        while k < len(block) and isinstance(block[k], Skip):
            k += 1
        if k >= len(block) or not isinstance(block[k], While) \
                or not _is_fetch_status_loop(block[k].cond):
            raise MalformedCursorUse(
                f"fetch of {name} is not followed by a WHILE @@FETCH_STATUS = 0 "
                f"loop", priming.span)
        while_stmt = block[k]
        body = while_stmt.body
        if not body or not isinstance(body[-1], Fetch) or body[-1].cursor != name:
            raise MalformedCursorUse(
                f"loop over {name} does not end with an advancing fetch",
                while_stmt.span)
        tail = body[-1]
        delta = body[:-1]
        for inner in block_statements(delta):
            if _mentions_cursor(inner, name):
                raise MalformedCursorUse(
                    f"cursor {name} used inside its own loop body", inner.span)
        close_stmt = dealloc_stmt = None
        for j in range(k + 1, len(block)):
            s = block[j]
            if isinstance(s, CursorClose) and s.name == name and close_stmt is None:
                close_stmt = s
            elif isinstance(s, CursorDeallocate) and s.name == name \
                    and dealloc_stmt is None:
                dealloc_stmt = s
        fetch_vars = list(priming.targets)
        for t in tail.targets:
            if t not in fetch_vars:
                fetch_vars.append(t)

        if (id(while_stmt) not in cfg.stmt_node
                or id(tail) not in cfg.stmt_node
                or any(id(s) not in cfg.stmt_node
                       for s in block_statements(delta))):
            # unreachable code, either a whole loop after a RETURN or a tail
            # fetch cut off by one inside the body: leave untouched, claim
            # the statements so the leftover-check stays quiet
            for s in [decl, open_stmt, priming, while_stmt, tail,
                      close_stmt, dealloc_stmt]:
                if s is not None:
                    claimed.add(id(s))
            return None

        # statements sitting between the declaration and the loop run before
        # the first iteration; the rewrite replays query evaluation at the
        # declaration's position, so writes here matter to applicability
        gap = [g for g in block[decl_idx + 1:k]
               if g is not open_stmt and g is not priming]

        body_nodes = {cfg.stmt_node[id(s)] for s in block_statements(delta)}
        header = cfg.stmt_node[id(while_stmt)]
        loop_ids = body_nodes | {header, cfg.stmt_node[id(tail)]}
        exit_node = next(e.dst for e in cfg.succ[header] if e.label == "false")

        region = CursorLoopRegion(
            cursor_name=name, query=decl.query, fetch_vars=fetch_vars,
            body_nodes=body_nodes, block=block, decl=decl, open_stmt=open_stmt,
            priming=priming, while_stmt=while_stmt, tail=tail,
            close_stmt=close_stmt, dealloc_stmt=dealloc_stmt, delta=delta,
            gap_stmts=gap, loop_node_ids=loop_ids, header_node=header,
            exit_node=exit_node, depth=depth)
        for s in region.claimed_statements():
            claimed.add(id(s))
        claimed.add(id(tail))
        return region

    scan_block(program.body, 0)

    # nesting: a region whose declaration sits inside another's loop body
    for r in regions:
        for other in regions:
            if other is r:
                continue
            if any(s is r.decl for s in block_statements(other.delta)):
                if r.enclosing is None or other.depth > r.enclosing.depth:
                    r.enclosing = other
    regions.sort(key=lambda r: -r.depth)

    for s in block_statements(program.body):
        if isinstance(s, (CursorDeclare, CursorOpen, Fetch, CursorClose,
                          CursorDeallocate)) and id(s) not in claimed:
            raise MalformedCursorUse(
                "cursor statement outside a recognized cursor loop", s.span)
    return regions


def _mentions_cursor(s: Stmt, name: str) -> bool:
    if isinstance(s, (CursorOpen, CursorClose, CursorDeallocate)):
        return s.name == name
    if isinstance(s, Fetch):
        return s.cursor == name
    if isinstance(s, CursorDeclare):
        return s.name == name
    return False
