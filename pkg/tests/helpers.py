"""Shared test plumbing: fixture loading, argument coercion, a small
program builder, and the differential harness most suites lean on."""
from __future__ import annotations

import json
from pathlib import Path

from aggify import parse_program, transform_program
from aggify.astnodes import ScalarType
from aggify.interp import run_differential
from aggify.relation import Catalog, Column, Relation, load_catalog
from aggify.values import dec_from_string

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
DATA_DIR = FIXTURES / "data"

# fixtures exercising an optional rewrite need its flag switched on
FIXTURE_FLAGS = {
    "for_sum": {"convert_for": True},
    "motion_bool": {"enable_motion": True},
}


def fixture_names() -> list[str]:
    return sorted(p.stem for p in FIXTURES.glob("*.csl"))


def fixture_source(name: str) -> str:
    return (FIXTURES / f"{name}.csl").read_text()


def coerce_args(prog, raw: dict) -> dict:
    """JSON argsets carry decimals as strings; give them their real type."""
    types = {p.name: p.type for p in prog.params}
    out = {}
    for k, v in raw.items():
        if types.get(k) == ScalarType.DECIMAL and isinstance(v, str):
            out[k] = dec_from_string(v)
        else:
            out[k] = v
    return out


def load_fixture(name: str):
    """Returns (program, argsets, flags) for one .csl fixture."""
    prog = parse_program(fixture_source(name), allow_persistent_dml=True)
    args_path = FIXTURES / f"{name}.args.json"
    raw = json.loads(args_path.read_text()) if args_path.exists() else [{}]
    return prog, [coerce_args(prog, a) for a in raw], FIXTURE_FLAGS.get(name, {})


def fresh_catalog() -> Catalog:
    return load_catalog(DATA_DIR)


def table(cols: list[tuple[str, ScalarType]], rows: list[tuple]) -> Relation:
    return Relation([Column(n, t) for n, t in cols], [tuple(r) for r in rows])


def catalog_of(**tables) -> Catalog:
    cat = Catalog()
    for name, rel in tables.items():
        cat.add(name, rel)
    return cat


def diff_fixture(name: str, shuffle_seed=None, client_mode=False):
    """Transform one fixture and run the differential over every argset.
    Returns the list of DiffResults, one per argset."""
    prog, argsets, flags = load_fixture(name)
    res = transform_program(prog, **flags)
    out = []
    for args in argsets:
        out.append(run_differential(
            prog, res.program, fresh_catalog(), args,
            right_registry=res.registry, client_mode=client_mode,
            shuffle_seed=shuffle_seed, ignore_vars=res.stale_vars))
    return res, out
