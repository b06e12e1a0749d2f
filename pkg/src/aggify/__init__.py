"""Cursor loops to custom aggregates: source-to-source transform for a
procedural SQL dialect, plus the interpreter used to check it."""

from .aggregates import AggregateSpec
from .errors import AggifyError
from .interp import DiffResult, Interpreter, RunResult, run_differential
from .parser import parse_program
from .printer import print_program
from .relation import Catalog, Column, Relation, load_catalog, save_catalog
from .transform import Rejection, RewritePlan, TransformResult, transform_program

__version__ = "0.1.0"

__all__ = [
    "AggregateSpec", "AggifyError", "Catalog", "Column", "DiffResult",
    "Interpreter", "Rejection", "Relation", "RewritePlan", "RunResult",
    "TransformResult", "load_catalog", "parse_program", "print_program",
    "run_differential", "save_catalog", "transform_program", "__version__",
]
