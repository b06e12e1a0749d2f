"""Runtime values and their semantics.

Values are plain python objects: None (NULL), bool, int, str, and Dec for
exact fixed-point decimals. Arithmetic stays inside signed 64-bit range;
comparisons are three-valued (None = unknown).
"""
from __future__ import annotations

from dataclasses import dataclass

from .astnodes import ScalarType
from .errors import ArithmeticOverflow, CslRuntimeError, CslTypeError

I64_MIN = -(2**63)
I64_MAX = 2**63 - 1

DEC_SCALE = 6
DEC_UNIT = 10**DEC_SCALE

BYTE_WIDTHS = {
    ScalarType.INT: 4,
    ScalarType.DECIMAL: 9,
    ScalarType.VARCHAR: 25,
    ScalarType.BOOL: 1,
}


@dataclass(frozen=True, slots=True)
class Dec:
    """DECIMAL value: integer count of 10^-6 units."""
    scaled: int

    def __post_init__(self):
        if not isinstance(self.scaled, int) or isinstance(self.scaled, bool):
            raise TypeError(f"Dec wants a scaled int, got "
                            f"{type(self.scaled).__name__}; "
                            f"use dec_from_string for text")

    def __str__(self):
        return dec_to_string(self)

    def __repr__(self):
        return f"Dec({dec_to_string(self)})"


def check_i64(n: int) -> int:
    if n < I64_MIN or n > I64_MAX:
        raise ArithmeticOverflow(f"value {n} outside 64-bit range")
    return n


def dec_from_string(text: str) -> Dec:
    neg = text.startswith("-")
    if neg:
        text = text[1:]
    if "." in text:
        whole, frac = text.split(".", 1)
    else:
        whole, frac = text, ""
    if len(frac) > DEC_SCALE:
        raise CslRuntimeError(f"decimal literal {text!r} exceeds scale {DEC_SCALE}")
    whole = whole or "0"
    scaled = int(whole) * DEC_UNIT + int((frac or "0").ljust(DEC_SCALE, "0"))
    if neg:
        scaled = -scaled
    return Dec(check_i64(scaled))


def dec_to_string(d: Dec) -> str:
    n = d.scaled
    sign = "-" if n < 0 else ""
    n = abs(n)
    whole, frac = divmod(n, DEC_UNIT)
    frac_s = f"{frac:0{DEC_SCALE}d}".rstrip("0") or "0"
    return f"{sign}{whole}.{frac_s}"


def dec_from_int(i: int) -> Dec:
    return Dec(check_i64(i * DEC_UNIT))


def _div_round_half_away(n: int, d: int) -> int:
    sign = -1 if (n < 0) != (d < 0) else 1
    n, d = abs(n), abs(d)
    q, r = divmod(n, d)
    if 2 * r >= d:
        q += 1
    return sign * q


def type_of_value(v) -> ScalarType | None:
    if v is None:
        return None
    if isinstance(v, bool):
        return ScalarType.BOOL
    if isinstance(v, int):
        return ScalarType.INT
    if isinstance(v, Dec):
        return ScalarType.DECIMAL
    if isinstance(v, str):
        return ScalarType.VARCHAR
    raise CslTypeError(f"unknown runtime value {v!r}")


def _numeric_pair(a, b, op):
    """Promote to a common numeric representation; bools are not numbers."""
    if isinstance(a, bool) or isinstance(b, bool):
        raise CslTypeError(f"operator {op} on BOOL operand")
    if isinstance(a, int) and isinstance(b, int):
        return a, b, False
    if isinstance(a, Dec) and isinstance(b, Dec):
        return a.scaled, b.scaled, True
    if isinstance(a, Dec) and isinstance(b, int):
        return a.scaled, check_i64(b * DEC_UNIT), True
    if isinstance(a, int) and isinstance(b, Dec):
        return check_i64(a * DEC_UNIT), b.scaled, True
    raise CslTypeError(f"operator {op} on {type_of_value(a)} and {type_of_value(b)}")


def arith(op: str, a, b):
    """+ - * / with NULL propagation, int/decimal promotion, overflow checks."""
    if a is None or b is None:
        return None
    x, y, is_dec = _numeric_pair(a, b, op)
    if op == "+":
        r = x + y
    elif op == "-":
        r = x - y
    elif op == "*":
        if is_dec:
            r = _div_round_half_away(x * y, DEC_UNIT)
        else:
            r = x * y
    elif op == "/":
        if y == 0:
            raise CslRuntimeError("division by zero")
        if is_dec:
            r = _div_round_half_away(x * DEC_UNIT, y)
        else:
            # integer division truncates toward zero
            r = abs(x) // abs(y)
            if (x < 0) != (y < 0):
                r = -r
    else:
        raise CslTypeError(f"unknown arithmetic operator {op}")
    check_i64(r)
    return Dec(r) if is_dec else r


def negate(a):
    if a is None:
        return None
    if isinstance(a, bool):
        raise CslTypeError("unary minus on BOOL")
    if isinstance(a, int):
        return check_i64(-a)
    if isinstance(a, Dec):
        return Dec(check_i64(-a.scaled))
    raise CslTypeError(f"unary minus on {type_of_value(a)}")


def compare(a, b) -> int | None:
    """-1/0/1, or None when either side is NULL."""
    if a is None or b is None:
        return None
    if isinstance(a, bool) or isinstance(b, bool):
        if isinstance(a, bool) and isinstance(b, bool):
            return (a > b) - (a < b)
        raise CslTypeError("comparison of BOOL with non-BOOL")
    if isinstance(a, str) or isinstance(b, str):
        if isinstance(a, str) and isinstance(b, str):
            return (a > b) - (a < b)
        raise CslTypeError("comparison of VARCHAR with non-VARCHAR")
    x, y, _ = _numeric_pair(a, b, "cmp")
    return (x > y) - (x < y)


_CMP_OPS = {
    "=": lambda c: c == 0,
    "<>": lambda c: c != 0,
    "<": lambda c: c < 0,
    "<=": lambda c: c <= 0,
    ">": lambda c: c > 0,
    ">=": lambda c: c >= 0,
}


def compare_op(op: str, a, b):
    c = compare(a, b)
    if c is None:
        return None
    return _CMP_OPS[op](c)


def and3(a, b):
    if a is False or b is False:
        return False
    if a is None or b is None:
        return None
    _require_bool(a), _require_bool(b)
    return True


def or3(a, b):
    if a is True or b is True:
        return True
    if a is None or b is None:
        return None
    _require_bool(a), _require_bool(b)
    return False


def not3(a):
    if a is None:
        return None
    _require_bool(a)
    return not a


def _require_bool(v):
    if not isinstance(v, bool):
        raise CslTypeError(f"expected BOOL, got {type_of_value(v)}")


def truthy(v) -> bool:
    """Condition semantics: unknown filters/skips like false."""
    if v is None:
        return False
    _require_bool(v)
    return v


def coerce_value(v, t: ScalarType):
    """Assignment/fetch/insert coercion. INT widens to DECIMAL; nothing narrows."""
    if v is None:
        return None
    if t == ScalarType.INT:
        if isinstance(v, bool) or not isinstance(v, int):
            raise CslRuntimeError(f"cannot store {type_of_value(v)} in INT")
        return v
    if t == ScalarType.DECIMAL:
        if isinstance(v, Dec):
            return v
        if isinstance(v, int) and not isinstance(v, bool):
            return dec_from_int(v)
        raise CslRuntimeError(f"cannot store {type_of_value(v)} in DECIMAL")
    if t == ScalarType.VARCHAR:
        if isinstance(v, str):
            return v
        raise CslRuntimeError(f"cannot store {type_of_value(v)} in VARCHAR")
    if t == ScalarType.BOOL:
        if isinstance(v, bool):
            return v
        raise CslRuntimeError(f"cannot store {type_of_value(v)} in BOOL")
    raise CslRuntimeError(f"unknown type {t}")


# ------------------------------------------------------------ scalar builtins

def fn_abs(args):
    (a,) = args
    if a is None:
        return None
    if isinstance(a, bool):
        raise CslTypeError("abs on BOOL")
    if isinstance(a, int):
        return check_i64(abs(a))
    if isinstance(a, Dec):
        return Dec(check_i64(abs(a.scaled)))
    raise CslTypeError(f"abs on {type_of_value(a)}")


def fn_concat(args):
    parts = []
    for a in args:
        if a is None:
            return None
        if not isinstance(a, str):
            raise CslTypeError(f"concat on {type_of_value(a)}")
        parts.append(a)
    return "".join(parts)


def fn_coalesce(args):
    for a in args:
        if a is not None:
            return a
    return None


def fn_upper(args):
    (a,) = args
    if a is None:
        return None
    if not isinstance(a, str):
        raise CslTypeError(f"upper on {type_of_value(a)}")
    return a.upper()


SCALAR_FUNC_IMPLS = {
    "abs": fn_abs,
    "concat": fn_concat,
    "coalesce": fn_coalesce,
    "upper": fn_upper,
}


def sort_key(v):
    """Total order for ORDER BY. NULL ranks lowest, so a descending pass
    (reverse=True) puts NULLs last."""
    if v is None:
        return (0, 0)
    if isinstance(v, bool):
        return (1, int(v))
    if isinstance(v, Dec):
        return (1, v.scaled)
    if isinstance(v, int):
        return (1, v * DEC_UNIT)
    return (1, v)
