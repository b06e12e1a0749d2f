"""In-memory relations and the CSV-backed catalog.

CSV header cells are name:TYPE. A field spelled NULL is null; an empty
field is the empty string for VARCHAR and null for every other type.
"""
from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field
from pathlib import Path

from .astnodes import ScalarType
from .errors import DuplicateTable, SchemaError
from .values import BYTE_WIDTHS, Dec, dec_from_string, dec_to_string


@dataclass(frozen=True)
class Column:
    name: str
    type: ScalarType


@dataclass
class Relation:
    columns: list[Column]
    rows: list[tuple] = field(default_factory=list)

    @property
    def arity(self) -> int:
        return len(self.columns)

    def index_of(self, name: str) -> int | None:
        name = name.lower()
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        return None

    def row_width(self) -> int:
        width = 0
        for c in self.columns:
            if c.type is None:
                raise SchemaError(
                    f"column {c.name} has no inferable type, cannot size it")
            width += BYTE_WIDTHS[c.type]
        return width


class Catalog:
    """Maps lowercase table names to relations."""

    def __init__(self, tables: dict[str, Relation] | None = None):
        self.tables: dict[str, Relation] = dict(tables or {})

    def add(self, name: str, rel: Relation) -> None:
        key = name.lower()
        if key in self.tables:
            raise DuplicateTable(f"table {key!r} defined twice")
        self.tables[key] = rel

    def get(self, name: str) -> Relation | None:
        return self.tables.get(name.lower())

    def __contains__(self, name: str) -> bool:
        return name.lower() in self.tables

    def __getitem__(self, name: str) -> Relation:
        return self.tables[name.lower()]

    def names(self) -> list[str]:
        return sorted(self.tables)

    def copy(self) -> "Catalog":
        """Independent row lists; rows themselves are immutable tuples."""
        return Catalog({n: Relation(list(r.columns), list(r.rows))
                        for n, r in self.tables.items()})

    def shuffled(self, seed: int) -> "Catalog":
        """Same tables, base row order permuted. For order-sensitivity checks."""
        rng = random.Random(seed)
        out = Catalog()
        for name in sorted(self.tables):
            rel = self.tables[name]
            rows = list(rel.rows)
            rng.shuffle(rows)
            out.tables[name] = Relation(list(rel.columns), rows)
        return out


def _parse_header_cell(cell: str, table: str) -> Column:
    if ":" not in cell:
        raise SchemaError(f"{table}: header cell {cell!r} is not name:TYPE")
    name, type_name = cell.split(":", 1)
    name = name.strip().lower()
    type_name = type_name.strip().upper()
    if not name:
        raise SchemaError(f"{table}: empty column name in {cell!r}")
    try:
        ctype = ScalarType(type_name)
    except ValueError:
        raise SchemaError(f"{table}: unknown type {type_name!r}") from None
    return Column(name, ctype)


def parse_field(text: str, ctype: ScalarType, table: str):
    if text == "NULL":
        return None
    if text == "":
        return "" if ctype == ScalarType.VARCHAR else None
    try:
        if ctype == ScalarType.INT:
            return int(text)
        if ctype == ScalarType.DECIMAL:
            return dec_from_string(text)
        if ctype == ScalarType.BOOL:
            low = text.lower()
            if low in ("true", "1"):
                return True
            if low in ("false", "0"):
                return False
            raise ValueError(text)
        return text
    except Exception:
        raise SchemaError(f"{table}: bad {ctype.value} field {text!r}") from None


def render_field(v) -> str:
    if v is None:
        return "NULL"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, Dec):
        return dec_to_string(v)
    return str(v)


def load_table(path: Path) -> Relation:
    name = path.stem
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{name}: empty file") from None
        columns = [_parse_header_cell(c, name) for c in header]
        rows: list[tuple] = []
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(columns):
                raise SchemaError(
                    f"{name}:{lineno}: expected {len(columns)} fields, got {len(raw)}")
            rows.append(tuple(parse_field(cell, col.type, name)
                              for cell, col in zip(raw, columns)))
    return Relation(columns, rows)


def load_catalog(directory: str | Path) -> Catalog:
    directory = Path(directory)
    if not directory.is_dir():
        raise SchemaError(f"data directory {directory} does not exist")
    catalog = Catalog()
    for path in sorted(directory.glob("*.csv")):
        catalog.add(path.stem, load_table(path))
    return catalog


def save_catalog(catalog: Catalog, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in sorted(catalog.tables):
        rel = catalog.tables[name]
        with open(directory / f"{name}.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow([f"{c.name}:{c.type.value}" for c in rel.columns])
            for row in rel.rows:
                writer.writerow([render_field(v) for v in row])
