"""Expression compilation to closures.

Each expression compiles once per context to a fn(row, getv) closure; rows
are tuples from the enclosing query (None in statement context) and getv
resolves @variables. Column positions bind at compile time, so unknown or
ambiguous columns fail before any row is touched.
"""
from __future__ import annotations

from .astnodes import (
    AggCall, Binary, ColRef, Const, Expr, FetchStatus, FuncCall,
    ScalarSubquery, ScalarType, Unary, VarRef,
)
from .errors import CslTypeError
from .values import (
    SCALAR_FUNC_IMPLS, and3, arith, compare_op, negate, not3, or3,
    Dec,
)

FETCH_STATUS_KEY = "@@FETCH_STATUS"


def resolve_column(e: ColRef, cols: dict[str, int] | None,
                   ambiguous: set[str]) -> int:
    if cols is None:
        raise CslTypeError(f"column {e.name} referenced outside a query", e.span)
    key = f"{e.qualifier}.{e.name}" if e.qualifier else e.name
    if e.qualifier is None and key in ambiguous:
        raise CslTypeError(f"ambiguous column {e.name}", e.span)
    if key not in cols:
        raise CslTypeError(f"unknown column {key}", e.span)
    return cols[key]


def compile_expr(e: Expr, cols: dict[str, int] | None, ambiguous: set[str],
                 subq):
    """subq(query) -> fn(getv) evaluating a scalar subquery; may be None."""
    if isinstance(e, Const):
        v = e.value
        return lambda row, getv: v
    if isinstance(e, VarRef):
        name = e.name
        return lambda row, getv: getv(name)
    if isinstance(e, ColRef):
        idx = resolve_column(e, cols, ambiguous)
        return lambda row, getv: row[idx]
    if isinstance(e, FetchStatus):
        return lambda row, getv: getv(FETCH_STATUS_KEY)
    if isinstance(e, Unary):
        f = compile_expr(e.operand, cols, ambiguous, subq)
        if e.op == "neg":
            return lambda row, getv: negate(f(row, getv))
        if e.op == "not":
            return lambda row, getv: not3(f(row, getv))
        if e.op == "isnull":
            return lambda row, getv: f(row, getv) is None
        if e.op == "notnull":
            return lambda row, getv: f(row, getv) is not None
        raise CslTypeError(f"unknown unary operator {e.op}", e.span)
    if isinstance(e, Binary):
        left = compile_expr(e.left, cols, ambiguous, subq)
        right = compile_expr(e.right, cols, ambiguous, subq)
        op = e.op
        if op == "and":
            def _and(row, getv):
                lv = left(row, getv)
                if lv is False:
                    return False
                return and3(lv, right(row, getv))
            return _and
        if op == "or":
            def _or(row, getv):
                lv = left(row, getv)
                if lv is True:
                    return True
                return or3(lv, right(row, getv))
            return _or
        if op in ("+", "-", "*", "/"):
            return lambda row, getv: arith(op, left(row, getv), right(row, getv))
        if op in ("=", "<>", "<", "<=", ">", ">="):
            return lambda row, getv: compare_op(op, left(row, getv), right(row, getv))
        raise CslTypeError(f"unknown operator {op}", e.span)
    if isinstance(e, FuncCall):
        impl = SCALAR_FUNC_IMPLS[e.name]
        arg_fns = [compile_expr(a, cols, ambiguous, subq) for a in e.args]
        return lambda row, getv: impl([f(row, getv) for f in arg_fns])
    if isinstance(e, ScalarSubquery):
        if subq is None:
            raise CslTypeError("subquery not allowed here", e.span)
        run = subq(e.query)
        return lambda row, getv: run(getv)
    raise CslTypeError(f"cannot evaluate {type(e).__name__}", e.span)


_NUMERIC = (ScalarType.INT, ScalarType.DECIMAL)


def infer_type(e: Expr, coltypes: dict[str, ScalarType | None] | None,
               vartypes: dict[str, ScalarType] | None,
               registry: dict | None = None) -> ScalarType | None:
    """Best-effort static type; None means unknown."""
    if isinstance(e, Const):
        v = e.value
        if v is None:
            return None
        if isinstance(v, bool):
            return ScalarType.BOOL
        if isinstance(v, int):
            return ScalarType.INT
        if isinstance(v, Dec):
            return ScalarType.DECIMAL
        return ScalarType.VARCHAR
    if isinstance(e, VarRef):
        return (vartypes or {}).get(e.name)
    if isinstance(e, ColRef):
        if coltypes is None:
            return None
        key = f"{e.qualifier}.{e.name}" if e.qualifier else e.name
        return coltypes.get(key)
    if isinstance(e, FetchStatus):
        return ScalarType.INT
    if isinstance(e, Unary):
        if e.op in ("not", "isnull", "notnull"):
            return ScalarType.BOOL
        return infer_type(e.operand, coltypes, vartypes, registry)
    if isinstance(e, Binary):
        if e.op in ("and", "or", "=", "<>", "<", "<=", ">", ">="):
            return ScalarType.BOOL
        lt = infer_type(e.left, coltypes, vartypes, registry)
        rt = infer_type(e.right, coltypes, vartypes, registry)
        if lt is None or rt is None:
            return None
        if lt == ScalarType.DECIMAL or rt == ScalarType.DECIMAL:
            return ScalarType.DECIMAL
        if lt == ScalarType.INT and rt == ScalarType.INT:
            return ScalarType.INT
        return None
    if isinstance(e, FuncCall):
        if e.name in ("concat", "upper"):
            return ScalarType.VARCHAR
        if e.name == "abs":
            return infer_type(e.args[0], coltypes, vartypes, registry)
        if e.name == "coalesce":
            for a in e.args:
                t = infer_type(a, coltypes, vartypes, registry)
                if t is not None:
                    return t
            return None
        return None
    if isinstance(e, ScalarSubquery):
        return None
    if isinstance(e, AggCall):
        if e.name == "count":
            return ScalarType.INT
        if e.name in ("sum", "min", "max", "avg"):
            return infer_type(e.args[0], coltypes, vartypes, registry)
        spec = (registry or {}).get(e.name)
        if spec is not None and len(spec.terminate_set) == 1:
            return dict(spec.fields).get(spec.terminate_set[0])
        return None
    return None
