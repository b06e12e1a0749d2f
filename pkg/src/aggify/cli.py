"""Command-line surface: transform, run, diff, analyze, fuzz.

Exit codes: 0 success, 1 semantic failure (differential mismatch, fuzz
failure, runtime error), 2 usage or parse failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .astnodes import Program, ScalarType, While, block_statements
from .dataflow import analyze_program, dump_facts
from .errors import AggifyError
from .fuzz import FuzzCase, run_case, run_fuzz, shrink_case, write_repro
from .graphs import build_cfg, build_ddg, find_cursor_loops
from .interp import Interpreter, run_differential
from .parser import parse_program
from .printer import print_program
from .relation import Catalog, load_catalog, save_catalog
from .transform import transform_program
from .values import Dec, dec_from_string

DEFAULT_SEED = 42


def _fail(msg: str, code: int = 2) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _load_program(path: str) -> Program:
    return parse_program(Path(path).read_text(), allow_persistent_dml=True)


def _load_data(path: str | None) -> Catalog:
    return load_catalog(path) if path else Catalog()


def _json_value(v):
    if isinstance(v, Dec):
        return str(v)
    if isinstance(v, ScalarType):
        return v.value
    return v


def _coerce_args(program: Program, raw: dict) -> dict:
    """JSON argument values to engine values, guided by parameter types.
    Decimals travel as strings to keep them exact."""
    types = {p.name: p.type for p in program.params}
    out = {}
    for name, v in raw.items():
        if name not in types:
            raise AggifyError(f"no parameter @{name}")
        if types[name] == ScalarType.DECIMAL and isinstance(v, str):
            out[name] = dec_from_string(v)
        elif isinstance(v, float):
            raise AggifyError(
                f"@{name}: pass decimals as strings, floats are inexact")
        else:
            out[name] = v
    return out


def _read_argsets(spec: str | None, program: Program) -> list[dict]:
    """--args is a path to a JSON file (or an inline JSON text) holding
    one argument object or a list of them."""
    if not spec:
        return [{}]
    text = Path(spec).read_text() if Path(spec).exists() else spec
    data = json.loads(text)
    if isinstance(data, dict):
        data = [data]
    return [_coerce_args(program, d) for d in data]


def _emit_debug(ns, prog: Program, out: Path, stem: str):
    if getattr(ns, "emit_cfg", False):
        cfg = build_cfg(prog)
        facts = analyze_program(prog, cfg)
        path = out / f"{stem}.cfg.dot"
        path.write_text(cfg.to_dot(build_ddg(cfg, facts)))
        print(f"wrote {path}")
    if getattr(ns, "emit_facts", False):
        cfg = build_cfg(prog)
        facts = analyze_program(prog, cfg)
        path = out / f"{stem}.facts.json"
        path.write_text(json.dumps(dump_facts(cfg, facts), indent=2) + "\n")
        print(f"wrote {path}")


# ----------------------------------------------------------------- commands

def cmd_transform(ns) -> int:
    try:
        prog = _load_program(ns.file)
    except (AggifyError, OSError) as e:
        return _fail(str(e))
    res = transform_program(prog, enable_motion=ns.enable_motion,
                            convert_for=ns.convert_for)
    for plan in res.plans:
        print(f"cursor {plan.cursor}: transformed -> {plan.aggregate.name}")
    for rej in res.rejections:
        print(f"cursor {rej.cursor}: rejected ({rej.reason}): {rej.detail}")
    if not res.plans and not res.rejections:
        print("no cursor loops found; output is an unchanged copy")

    out = Path(ns.out) if ns.out else Path(ns.file).parent
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(ns.file).stem
    target = out / f"{stem}.aggified.csl"
    target.write_text(print_program(res.program))
    sidecar = out / f"{stem}.aggify.json"
    sidecar.write_text(json.dumps({
        "source": Path(ns.file).name,
        "plans": [p.as_dict() for p in res.plans],
        "rejections": [r.as_dict() for r in res.rejections],
        "registry": {name: spec.to_dict()
                     for name, spec in res.registry.items()},
    }, indent=2, default=_json_value) + "\n")
    print(f"wrote {target}")
    print(f"wrote {sidecar}")
    _emit_debug(ns, prog, out, stem)
    return 0


def cmd_run(ns) -> int:
    try:
        prog = _load_program(ns.file)
        catalog = _load_data(ns.data)
        args = _read_argsets(ns.args, prog)[0]
        registry = _load_registry(ns.registry)
    except (AggifyError, OSError, json.JSONDecodeError) as e:
        return _fail(str(e))
    interp = Interpreter(catalog, registry, client_mode=ns.client_mode)
    result = interp.run(prog, args)
    print(f"return: {result.value!r}")
    print(json.dumps(result.stats.as_dict(), indent=2))
    if result.error:
        print(f"error: {result.error}: {result.error_message}",
              file=sys.stderr)
        return 1
    return 0


def _load_registry(path: str | None) -> dict:
    if not path:
        return {}
    from .aggregates import AggregateSpec
    data = json.loads(Path(path).read_text())
    if "registry" in data:  # whole transform sidecar is accepted
        data = data["registry"]
    return {name: AggregateSpec.from_dict(d) for name, d in data.items()}


def cmd_diff(ns) -> int:
    try:
        prog = _load_program(ns.file)
        catalog = _load_data(ns.data)
        argsets = _read_argsets(ns.args, prog)
    except (AggifyError, OSError, json.JSONDecodeError) as e:
        return _fail(str(e))
    res = transform_program(prog, enable_motion=ns.enable_motion,
                            convert_for=ns.convert_for)
    print(f"{len(res.plans)} loop(s) transformed, "
          f"{len(res.rejections)} rejected")

    failed = False
    for i, args in enumerate(argsets):
        diff = run_differential(
            prog, res.program, catalog, args,
            right_registry=res.registry, client_mode=ns.client_mode,
            shuffle_seed=ns.shuffle_seed, ignore_vars=res.stale_vars)
        ls, rs = diff.left.stats, diff.right.stats
        verdict = "equal" if diff.equal else "UNEQUAL"
        print(f"args[{i}] {args}: {verdict}; materializations "
              f"{ls.cursor_materializations} -> {rs.cursor_materializations}, "
              f"rows moved {ls.rows_moved_to_client} -> "
              f"{rs.rows_moved_to_client}, bytes "
              f"{ls.bytes_moved_to_client} -> {rs.bytes_moved_to_client}")
        if not diff.equal:
            failed = True
            for m in diff.mismatches:
                print(f"  {m}")
            out = Path(ns.out) if ns.out else Path("diff_failures")
            case = FuzzCase(seed=0, index=i, source=print_program(prog),
                            tables=dict(catalog.tables), args=args)
            small = shrink_case(case)
            write_repro(out, run_case(small))
            print(f"  repro bundle under {out}/case{i}")
    return 1 if failed else 0


def cmd_analyze(ns) -> int:
    root = Path(ns.path)
    files = sorted(root.glob("*.csl")) if root.is_dir() else [root]
    totals = {"files": 0, "while_loops": 0, "cursor_loops": 0,
              "aggifyable": 0}
    rows = []
    code = 0
    out = Path(ns.out) if ns.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    for f in files:
        try:
            prog = parse_program(f.read_text(), allow_persistent_dml=True)
        except AggifyError as e:
            print(f"{f}: parse error: {e}", file=sys.stderr)
            code = 2
            continue
        cfg = build_cfg(prog)
        whiles = sum(isinstance(s, While)
                     for s in block_statements(prog.body))
        regions = find_cursor_loops(prog, cfg)
        plans = transform_program(prog).plans
        rows.append({"file": f.name, "while_loops": whiles,
                     "cursor_loops": len(regions),
                     "aggifyable": len(plans)})
        totals["files"] += 1
        totals["while_loops"] += whiles
        totals["cursor_loops"] += len(regions)
        totals["aggifyable"] += len(plans)
        print(f"{f.name}: {whiles} while loop(s), {len(regions)} cursor "
              f"loop(s), {len(plans)} aggifyable")
        if out:
            _emit_debug(ns, prog, out, f.stem)
    print(f"total: {totals['while_loops']} while loop(s), "
          f"{totals['cursor_loops']} cursor loop(s), "
          f"{totals['aggifyable']} aggifyable")
    report = json.dumps({"totals": totals, "files": rows}, indent=2)
    print(report)
    if out:
        (out / "analyze.json").write_text(report + "\n")
    return code


def cmd_fuzz(ns) -> int:
    if ns.cases <= 0:
        print("0 cases: nothing to do")
        return 0
    report = run_fuzz(seed=ns.seed, cases=ns.cases,
                      out_dir=ns.out or "fuzz_failures")
    print(report.summary())
    for f in report.failures:
        print(f"case {f.case.index}: {f.status}: {f.detail.splitlines()[0] if f.detail else ''}")
    return 0 if report.ok else 1


# -------------------------------------------------------------------- main

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="aggify",
        description="Rewrite cursor loops into queries over synthesized "
                    "custom aggregates, and check the rewrite.")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("transform", help="rewrite a .csl file")
    t.add_argument("file")
    t.add_argument("--out", help="output directory (default: beside input)")
    t.add_argument("--enable-motion", action="store_true")
    t.add_argument("--convert-for", action="store_true")
    t.add_argument("--emit-cfg", action="store_true",
                   help="also write a DOT dump of the CFG and flow edges")
    t.add_argument("--emit-facts", action="store_true",
                   help="also write dataflow facts as JSON keyed by node id")
    t.set_defaults(fn=cmd_transform)

    r = sub.add_parser("run", help="execute a .csl file on CSV data")
    r.add_argument("file")
    r.add_argument("--data", help="directory of <table>.csv files")
    r.add_argument("--args", help="JSON file or inline JSON object")
    r.add_argument("--registry",
                   help="aggregate definitions JSON (a transform sidecar)")
    r.add_argument("--client-mode", action="store_true",
                   help="count rows and bytes crossing to the client")
    r.set_defaults(fn=cmd_run)

    d = sub.add_parser("diff",
                       help="transform, then compare against the original")
    d.add_argument("file")
    d.add_argument("--data")
    d.add_argument("--args", help="JSON object or list of objects")
    d.add_argument("--out", help="repro bundle directory on mismatch")
    d.add_argument("--enable-motion", action="store_true")
    d.add_argument("--convert-for", action="store_true")
    d.add_argument("--client-mode", action="store_true")
    d.add_argument("--shuffle-seed", type=int, default=None,
                   help="shuffle base table rows before both runs")
    d.set_defaults(fn=cmd_diff)

    a = sub.add_parser("analyze",
                       help="count loops and applicability over .csl files")
    a.add_argument("path", help=".csl file or a directory of them")
    a.add_argument("--out", help="directory for analyze.json and dumps")
    a.add_argument("--emit-cfg", action="store_true")
    a.add_argument("--emit-facts", action="store_true")
    a.set_defaults(fn=cmd_analyze)

    f = sub.add_parser("fuzz", help="randomized differential testing")
    f.add_argument("--seed", type=int, default=DEFAULT_SEED)
    f.add_argument("--cases", type=int, default=500)
    f.add_argument("--out", help="directory for failing-case bundles")
    f.set_defaults(fn=cmd_fuzz)
    return ap


def main(argv: list[str] | None = None) -> int:
    ns = _parser().parse_args(argv)
    return ns.fn(ns)


if __name__ == "__main__":
    sys.exit(main())
