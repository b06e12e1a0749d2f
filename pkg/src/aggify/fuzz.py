"""Randomized differential testing of the cursor-loop transform.

Programs are generated applicable by construction: accumulators either
read themselves (so they land in the init set) or are declared without
an initializer (so deferred initialization is observably equivalent),
fetch variables are never read after the loop, and nothing between the
cursor declaration and the loop touches the query's inputs.  Each case
runs the original and the transformed program on the same generated
catalog; any divergence is shrunk to a minimal failing program and
written out as a repro bundle.
"""
from __future__ import annotations

import copy
import json
import random
import time
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path

from .astnodes import ScalarType, While
from .errors import AggifyError
from .interp import run_differential
from .parser import parse_program
from .printer import print_program
from .relation import Catalog, Column, Relation, save_catalog
from .transform import transform_program
from .values import Dec, dec_from_string

_WORDS = ["ash", "birch", "cedar", "elm", "fir", "oak", "pine", "yew"]


@dataclass
class FuzzCase:
    seed: int
    index: int
    source: str
    tables: dict[str, Relation]
    args: dict[str, object]
    motion: bool = False
    nested: bool = False

    def catalog(self) -> Catalog:
        cat = Catalog()
        for name, rel in self.tables.items():
            cat.add(name, Relation(rel.columns, list(rel.rows)))
        return cat


@dataclass
class FuzzOutcome:
    status: str  # equal | rejected | mismatch | error
    detail: str
    case: FuzzCase


@dataclass
class FuzzReport:
    cases: int = 0
    equal: int = 0
    rejected: int = 0
    failures: list[FuzzOutcome] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.failures and self.rejected == 0

    def summary(self) -> str:
        return (f"{self.cases} cases: {self.equal} equal, "
                f"{self.rejected} rejected, {len(self.failures)} failing "
                f"({self.elapsed:.1f}s)")


# ---------------------------------------------------------------- generator

def _dec(rng: random.Random) -> str:
    return f"{rng.randint(-999, 999) / 100:.2f}"


def _rows_t0(rng: random.Random, n: int) -> list[tuple]:
    rows = []
    for _ in range(n):
        v = None if rng.random() < 0.10 else rng.randint(-9, 9)
        w = None if rng.random() < 0.10 else dec_from_string(_dec(rng))
        s = None if rng.random() < 0.10 else rng.choice(_WORDS)
        rows.append((rng.randint(0, 3), v, w, s))
    return rows


def gen_case(seed: int, index: int) -> FuzzCase:
    rng = random.Random(f"{seed}:{index}")
    nested = rng.random() < 0.22
    logtab = rng.random() < 0.18
    motion = rng.random() < 0.30

    nrows = 0 if rng.random() < 0.10 else rng.randint(1, 12)
    tables = {"t0": Relation([Column("k", ScalarType.INT),
                              Column("v", ScalarType.INT),
                              Column("w", ScalarType.DECIMAL),
                              Column("s", ScalarType.VARCHAR)],
                             _rows_t0(rng, nrows))}
    if nested:
        tables["t1"] = Relation(
            [Column("j", ScalarType.INT), Column("x", ScalarType.INT)],
            [(rng.randint(0, 3), rng.randint(-5, 5))
             for _ in range(rng.randint(0, 6))])

    params, args = [], {}
    if rng.random() < 0.6:
        params.append("@p0 INT")
        args["p0"] = rng.randint(0, 3)
    if rng.random() < 0.4:
        params.append("@p1 DECIMAL")
        args["p1"] = dec_from_string(_dec(rng))

    cols = rng.sample(["k", "v", "w", "s"], rng.randint(1, 3))
    if nested and "k" not in cols:
        cols.append("k")
    rng.shuffle(cols)
    fetch = {c: f"@f{c}" for c in cols}
    ftype = {"k": "INT", "v": "INT", "w": "DECIMAL", "s": "VARCHAR"}

    def int_op() -> str:
        pool = [str(rng.randint(-3, 3))]
        for c in ("k", "v"):
            if c in fetch:
                pool.append(fetch[c])
        if "p0" in args:
            pool.append("@p0")
        return rng.choice(pool)

    def dec_op() -> str:
        pool = [_dec(rng)]
        if "w" in fetch:
            pool.append(fetch["w"])
        if "p1" in args:
            pool.append("@p1")
        return rng.choice(pool)

    def str_op() -> str:
        pool = [f"'{rng.choice(_WORDS)}'"]
        if "s" in fetch:
            pool.append(fetch["s"])
            pool.append(f"UPPER({fetch['s']})")
        return rng.choice(pool)

    def cond() -> str:
        picks = [f"{int_op()} >= {rng.randint(-2, 2)}",
                 f"@a0 <> {rng.randint(0, 5)}"]
        if "w" in fetch:
            picks.append(f"{fetch['w']} < {_dec(rng)}")
        if "s" in fetch:
            picks.append(f"{fetch['s']} = '{rng.choice(_WORDS)}'")
        return rng.choice(picks)

    decls = [f"    DECLARE {fetch[c]} {ftype[c]};" for c in cols]
    decls.append(f"    DECLARE @a0 INT = {rng.randint(-2, 2)};")
    accs = {"a0": "INT"}
    use_dec = rng.random() < 0.5
    use_str = rng.random() < 0.5
    use_wo = rng.random() < 0.25
    if use_dec:
        decls.append("    DECLARE @a1 DECIMAL = 0.00;")
        accs["a1"] = "DECIMAL"
    if use_str:
        decls.append("    DECLARE @a2 VARCHAR = '';")
        accs["a2"] = "VARCHAR"
    if use_wo:
        # write-only: must start NULL so deferred init cannot be observed
        decls.append("    DECLARE @wo VARCHAR;")
    if logtab:
        decls.append("    DECLARE @log TABLE(lx INT, ls VARCHAR);")

    body = [f"        SET @a0 = @a0 + {int_op()};"]
    if use_dec:
        if rng.random() < 0.5:
            body.append(f"        SET @a1 = @a1 + {dec_op()};")
        else:
            op = dec_op()
            body.append(f"        IF ({op} > @a1)\n        BEGIN\n"
                        f"            SET @a1 = {op};\n        END")
    if use_str:
        body.append(f"        SET @a2 = CONCAT(@a2, {str_op()});")
    if use_wo:
        body.append(f"        IF ({int_op()} > {rng.randint(-1, 2)})\n"
                    f"        BEGIN\n            SET @wo = {str_op()};\n"
                    f"        END")
    if logtab:
        body.append(f"        INSERT INTO @log VALUES({int_op()}, {str_op()});")
    if nested:
        where = f" WHERE j = {fetch['k']}" if rng.random() < 0.7 else ""
        body.append("\n".join([
            "        DECLARE @ia INT = 0;",
            "        DECLARE @jx INT;",
            f"        DECLARE c_in CURSOR FOR SELECT x FROM t1{where};",
            "        OPEN c_in;",
            "        FETCH NEXT FROM c_in INTO @jx;",
            "        WHILE @@FETCH_STATUS = 0",
            "        BEGIN",
            "            SET @ia = @ia + @jx;",
            "            FETCH NEXT FROM c_in INTO @jx;",
            "        END",
            "        CLOSE c_in;",
            "        DEALLOCATE c_in;",
            "        SET @a0 = @a0 + @ia;",
        ]))
    if rng.random() < 0.4:
        wrapped = body.pop(0)
        alt = f"            SET @a0 = @a0 - {rng.randint(1, 3)};"
        block = (f"        IF ({cond()})\n        BEGIN\n    {wrapped}\n"
                 f"        END")
        if rng.random() < 0.5:
            block += f"\n        ELSE\n        BEGIN\n{alt}\n        END"
        body.insert(0, block)
    rng.shuffle(body)

    where = ""
    r = rng.random()
    if r < 0.08:
        where = " WHERE v > 99"
    elif r < 0.5:
        choices = ["v >= 0", f"w < {_dec(rng)}", "s <> 'oak'"]
        if "p0" in args:
            choices.append("k = @p0")
        where = f" WHERE {rng.choice(choices)}"
    order = ""
    if rng.random() < 0.5:
        order = " ORDER BY k DESC" if rng.random() < 0.4 else " ORDER BY k"
        if rng.random() < 0.3:
            order += ", s"
    top = f"TOP {rng.randint(1, 5)} " if rng.random() < 0.2 else ""

    ret_pool = ["@a0"]
    if use_dec:
        ret_pool += ["@a1", "@a0 + @a1"]
    if use_str:
        ret_pool.append("@a2")
    if use_wo:
        ret_pool.append("@wo")
    ret = rng.choice(ret_pool)
    rtype = ("VARCHAR" if ret in ("@a2", "@wo")
             else "INT" if ret == "@a0" else "DECIMAL")

    source = "\n".join([
        f"CREATE FUNCTION fuzz{index}({', '.join(params)})",
        f"RETURNS {rtype}",
        "AS",
        "BEGIN",
        *decls,
        f"    DECLARE c0 CURSOR FOR SELECT {top}{', '.join(cols)} "
        f"FROM t0{where}{order};",
        "    OPEN c0;",
        f"    FETCH NEXT FROM c0 INTO {', '.join(fetch[c] for c in cols)};",
        "    WHILE @@FETCH_STATUS = 0",
        "    BEGIN",
        *body,
        f"        FETCH NEXT FROM c0 INTO {', '.join(fetch[c] for c in cols)};",
        "    END",
        "    CLOSE c0;",
        "    DEALLOCATE c0;",
        f"    RETURN {ret};",
        "END",
    ])
    return FuzzCase(seed, index, source, tables, args,
                    motion=motion, nested=nested)


# ------------------------------------------------------------------ checker

def run_case(case: FuzzCase) -> FuzzOutcome:
    try:
        prog = parse_program(case.source)
        res = transform_program(prog, enable_motion=case.motion)
        if not res.plans:
            why = "; ".join(f"{r.reason}: {r.detail}" for r in res.rejections)
            return FuzzOutcome("rejected", why or "no cursor loop found", case)
        diff = run_differential(prog, res.program, case.catalog(), case.args,
                                right_registry=res.registry,
                                ignore_vars=res.stale_vars)
        if diff.equal:
            return FuzzOutcome("equal", "", case)
        return FuzzOutcome("mismatch", "; ".join(diff.mismatches), case)
    except (AggifyError, RecursionError):
        return FuzzOutcome("error", traceback.format_exc(limit=6), case)


def _main_loop(prog) -> While | None:
    for s in prog.body:
        if isinstance(s, While):
            return s
    return None


def shrink_case(case: FuzzCase, budget: int = 200) -> FuzzCase:
    """Greedily drop loop-body statements, then table rows, keeping the
    case failing. Returns the smallest failing variant found."""

    def fails(c: FuzzCase) -> bool:
        return run_case(c).status in ("mismatch", "error")

    changed = True
    while changed and budget > 0:
        changed = False
        try:
            prog = parse_program(case.source)
        except AggifyError:
            return case
        loop = _main_loop(prog)
        n = len(loop.body) - 1 if loop else 0  # keep the tail fetch
        for i in range(n):
            budget -= 1
            trial_prog = copy.deepcopy(prog)
            del _main_loop(trial_prog).body[i]
            trial = replace(case, source=print_program(trial_prog))
            if fails(trial):
                case, changed = trial, True
                break
        if changed:
            continue
        for name, rel in case.tables.items():
            for i in range(len(rel.rows)):
                budget -= 1
                smaller = dict(case.tables)
                smaller[name] = Relation(rel.columns,
                                         rel.rows[:i] + rel.rows[i + 1:])
                trial = replace(case, tables=smaller)
                if fails(trial):
                    case, changed = trial, True
                    break
            if changed:
                break
    return case


def write_repro(out_dir: str | Path, outcome: FuzzOutcome) -> Path:
    case = outcome.case
    root = Path(out_dir) / f"case{case.index}"
    root.mkdir(parents=True, exist_ok=True)
    (root / "program.csl").write_text(case.source + "\n")
    (root / "args.json").write_text(json.dumps(
        {k: str(v) if isinstance(v, Dec) else v
         for k, v in case.args.items()}, indent=2) + "\n")
    save_catalog(case.catalog(), root / "data")
    (root / "report.txt").write_text(
        f"seed={case.seed} index={case.index} status={outcome.status}\n"
        f"{outcome.detail}\n")
    return root


def run_fuzz(seed: int, cases: int, out_dir: str | Path | None = None,
             shrink: bool = True) -> FuzzReport:
    report = FuzzReport(cases=cases)
    t0 = time.monotonic()
    for index in range(cases):
        outcome = run_case(gen_case(seed, index))
        if outcome.status == "equal":
            report.equal += 1
            continue
        if outcome.status == "rejected":
            report.rejected += 1
            report.failures.append(outcome)
            continue
        if shrink:
            smaller = run_case(shrink_case(outcome.case))
            if smaller.status in ("mismatch", "error"):
                outcome = smaller
        report.failures.append(outcome)
        if out_dir is not None:
            write_repro(out_dir, outcome)
    report.elapsed = time.monotonic() - t0
    return report
