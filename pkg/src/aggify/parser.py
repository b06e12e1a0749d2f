"""Recursive-descent parser producing the AST in astnodes.

parse_program rejects persistent-table DML by default; the transform
pipeline parses with allow_persistent_dml=True so such loops can be
counted and rejected individually instead of failing the whole file.
"""
from __future__ import annotations

from .astnodes import (
    AggCall, Assign, AssignFromQuery, BUILTIN_AGGS, ColRef, Const, Cte,
    CursorClose, CursorDeallocate, CursorDeclare, CursorOpen, Declare,
    DeclareTable, Expr, Fetch, FetchStatus, For, FromItem, FuncCall, If,
    InsertLocal, Param, PersistentDml, Program, QuerySpec, Return,
    SCALAR_FUNCS, ScalarSubquery, ScalarType, SelectItem, Skip, Span, Stmt,
    Unary, VarRef, While, Binary,
)
from .errors import ParseError, UnsupportedConstruct
from .lexer import Token, tokenize
from .values import Dec, dec_from_string

_TYPE_TOKENS = {"INT": ScalarType.INT, "DECIMAL": ScalarType.DECIMAL,
                "VARCHAR": ScalarType.VARCHAR, "BOOL": ScalarType.BOOL}

_REJECTED_KEYWORDS = {"BREAK", "CONTINUE", "TRY", "CATCH", "GOTO"}

_CMP_TOKENS = {"EQ": "=", "NEQ": "<>", "LT": "<", "LE": "<=", "GT": ">", "GE": ">="}


class _Parser:
    def __init__(self, tokens: list[Token], allow_persistent_dml: bool):
        self.toks = tokens
        self.pos = 0
        self.allow_dml = allow_persistent_dml

    # ------------------------------------------------------------- plumbing

    def peek(self, ahead: int = 0) -> Token:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def at(self, *kinds: str) -> bool:
        return self.peek().kind in kinds

    def take(self) -> Token:
        tok = self.toks[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def expect(self, kind: str) -> Token:
        tok = self.peek()
        if tok.kind != kind:
            raise ParseError(f"expected {kind}, found {tok.kind} {tok.text!r}", tok.span)
        return self.take()

    def error(self, message: str) -> ParseError:
        return ParseError(message, self.peek().span)

    # -------------------------------------------------------------- program

    def program(self) -> Program:
        start = self.expect("CREATE").span
        if self.at("FUNCTION"):
            self.take()
            is_function = True
        elif self.at("PROCEDURE"):
            self.take()
            is_function = False
        else:
            raise self.error("expected FUNCTION or PROCEDURE")
        name = self.expect("IDENT").text
        self.expect("LPAREN")
        params: list[Param] = []
        if not self.at("RPAREN"):
            params.append(self.param())
            while self.at("COMMA"):
                self.take()
                params.append(self.param())
        self.expect("RPAREN")
        return_type = None
        if self.at("RETURNS"):
            self.take()
            return_type = self.type_name()
        self.expect("AS")
        body = self.block()
        self.expect("EOF")
        return Program(name=name, params=params, return_type=return_type,
                       body=body, is_function=is_function, span=start)

    def param(self) -> Param:
        tok = self.expect("VAR")
        ptype = self.type_name()
        default = None
        if self.at("EQ"):
            self.take()
            default = self.literal_expr()
        return Param(name=tok.text, type=ptype, default=default, span=tok.span)

    def type_name(self) -> ScalarType:
        tok = self.peek()
        if tok.kind not in _TYPE_TOKENS:
            raise self.error("expected a type (INT, DECIMAL, VARCHAR, BOOL)")
        self.take()
        return _TYPE_TOKENS[tok.kind]

    def literal_expr(self) -> Expr:
        # parameter defaults: optionally signed literal
        tok = self.peek()
        if tok.kind in ("INTNUM", "DECNUM", "STRING", "TRUE", "FALSE", "NULL", "MINUS"):
            return self.unary()
        raise self.error("expected a literal default")

    # ------------------------------------------------------------ statements

    def block(self) -> list[Stmt]:
        self.expect("BEGIN")
        stmts: list[Stmt] = []
        while not self.at("END"):
            if self.at("EOF"):
                raise self.error("unexpected end of input inside block")
            stmts.append(self.statement())
        self.take()
        return stmts

    def block_or_stmt(self) -> list[Stmt]:
        if self.at("BEGIN"):
            return self.block()
        return [self.statement()]

    def statement(self) -> Stmt:
        tok = self.peek()
        if tok.kind in _REJECTED_KEYWORDS:
            raise UnsupportedConstruct(f"{tok.kind} is outside the dialect", tok.span)
        if tok.kind == "DECLARE":
            return self.declare_stmt()
        if tok.kind == "SET":
            self.take()
            name = self.expect("VAR")
            self.expect("EQ")
            expr = self.expr()
            self.expect("SEMI")
            return Assign(name=name.text, expr=expr, span=tok.span)
        if tok.kind == "SELECT":
            return self.assign_from_query()
        if tok.kind == "IF":
            self.take()
            cond = self.expr()
            then = self.block_or_stmt()
            orelse: list[Stmt] = []
            if self.at("ELSE"):
                self.take()
                orelse = self.block_or_stmt()
            return If(cond=cond, then=then, orelse=orelse, span=tok.span)
        if tok.kind == "WHILE":
            self.take()
            cond = self.expr()
            body = self.block_or_stmt()
            return While(cond=cond, body=body, span=tok.span)
        if tok.kind == "FOR":
            return self.for_stmt()
        if tok.kind == "OPEN":
            self.take()
            name = self.expect("IDENT").text
            self.expect("SEMI")
            return CursorOpen(name=name, span=tok.span)
        if tok.kind == "FETCH":
            self.take()
            self.expect("NEXT")
            self.expect("FROM")
            cursor = self.expect("IDENT").text
            self.expect("INTO")
            targets = [self.expect("VAR").text]
            while self.at("COMMA"):
                self.take()
                targets.append(self.expect("VAR").text)
            self.expect("SEMI")
            return Fetch(cursor=cursor, targets=targets, span=tok.span)
        if tok.kind == "CLOSE":
            self.take()
            name = self.expect("IDENT").text
            self.expect("SEMI")
            return CursorClose(name=name, span=tok.span)
        if tok.kind == "DEALLOCATE":
            self.take()
            name = self.expect("IDENT").text
            self.expect("SEMI")
            return CursorDeallocate(name=name, span=tok.span)
        if tok.kind == "INSERT":
            return self.insert_stmt()
        if tok.kind == "UPDATE":
            return self.update_stmt()
        if tok.kind == "DELETE":
            return self.delete_stmt()
        if tok.kind == "RETURN":
            self.take()
            expr = None
            if not self.at("SEMI"):
                expr = self.expr()
            self.expect("SEMI")
            return Return(expr=expr, span=tok.span)
        if tok.kind == "SEMI":
            self.take()
            return Skip(span=tok.span)
        raise self.error(f"unexpected {tok.kind} {tok.text!r} at statement start")

    def declare_stmt(self) -> Stmt:
        start = self.take().span  # DECLARE
        if self.at("IDENT"):
            name = self.take().text
            self.expect("CURSOR")
            self.expect("FOR")
            query = self.query()
            self.expect("SEMI")
            return CursorDeclare(name=name, query=query, span=start)
        name = self.expect("VAR").text
        if self.at("TABLE"):
            self.take()
            self.expect("LPAREN")
            cols: list[tuple[str, ScalarType]] = []
            cols.append((self.expect("IDENT").text.lower(), self.type_name()))
            while self.at("COMMA"):
                self.take()
                cols.append((self.expect("IDENT").text.lower(), self.type_name()))
            self.expect("RPAREN")
            self.expect("SEMI")
            return DeclareTable(name=name, columns=cols, span=start)
        vtype = self.type_name()
        init = None
        if self.at("EQ"):
            self.take()
            init = self.expr()
        self.expect("SEMI")
        return Declare(name=name, type=vtype, init=init, span=start)

    def assign_from_query(self) -> AssignFromQuery:
        start = self.expect("SELECT").span
        targets: list[str] = []
        items: list[SelectItem] = []
        while True:
            var = self.expect("VAR")
            self.expect("EQ")
            item = self.select_item_expr()
            targets.append(var.text)
            items.append(SelectItem(expr=item, alias=None, span=var.span))
            if self.at("COMMA"):
                self.take()
                continue
            break
        query = self.query_tail(items, cte=None)
        self.expect("SEMI")
        return AssignFromQuery(targets=targets, query=query, span=start)

    def for_stmt(self) -> For:
        start = self.take().span  # FOR
        self.expect("LPAREN")
        ivar = self.expect("VAR")
        self.expect("EQ")
        init = Assign(name=ivar.text, expr=self.expr(), span=ivar.span)
        self.expect("SEMI")
        cond = self.expr()
        self.expect("SEMI")
        uvar = self.expect("VAR")
        self.expect("EQ")
        incr = Assign(name=uvar.text, expr=self.expr(), span=uvar.span)
        self.expect("RPAREN")
        body = self.block_or_stmt()
        return For(init=init, cond=cond, incr=incr, body=body, span=start)

    def insert_stmt(self) -> Stmt:
        start = self.take().span  # INSERT
        self.expect("INTO")
        if self.at("VAR"):
            table = self.take().text
            local = True
        else:
            table = self.expect("IDENT").text
            local = False
        self.expect("VALUES")
        self.expect("LPAREN")
        values = [self.expr()]
        while self.at("COMMA"):
            self.take()
            values.append(self.expr())
        self.expect("RPAREN")
        self.expect("SEMI")
        if local:
            return InsertLocal(table=table, values=values, span=start)
        if not self.allow_dml:
            raise UnsupportedConstruct(
                f"INSERT into persistent table {table!r}", start)
        return PersistentDml(kind="insert", table=table, values=values, span=start)

    def update_stmt(self) -> Stmt:
        start = self.take().span
        if self.at("VAR"):
            raise UnsupportedConstruct("UPDATE on a local table variable", start)
        table = self.expect("IDENT").text
        self.expect("SET")
        col = self.expect("IDENT").text
        self.expect("EQ")
        set_expr = self.expr()
        where = None
        if self.at("WHERE"):
            self.take()
            where = self.expr()
        self.expect("SEMI")
        if not self.allow_dml:
            raise UnsupportedConstruct(f"UPDATE on persistent table {table!r}", start)
        return PersistentDml(kind="update", table=table, set_col=col,
                             set_expr=set_expr, where=where, span=start)

    def delete_stmt(self) -> Stmt:
        start = self.take().span
        self.expect("FROM")
        if self.at("VAR"):
            raise UnsupportedConstruct("DELETE on a local table variable", start)
        table = self.expect("IDENT").text
        where = None
        if self.at("WHERE"):
            self.take()
            where = self.expr()
        self.expect("SEMI")
        if not self.allow_dml:
            raise UnsupportedConstruct(f"DELETE on persistent table {table!r}", start)
        return PersistentDml(kind="delete", table=table, where=where, span=start)

    # --------------------------------------------------------------- queries

    def query(self) -> QuerySpec:
        cte = None
        if self.at("WITH"):
            start = self.take().span
            name = self.expect("IDENT").text
            self.expect("AS")
            self.expect("LPAREN")
            base = self.query()
            self.expect("UNION")
            self.expect("ALL")
            recursive = self.query()
            self.expect("RPAREN")
            cte = Cte(name=name, base=base, recursive=recursive, span=start)
        start_tok = self.expect("SELECT")
        top = None
        if self.at("TOP"):
            self.take()
            top = int(self.expect("INTNUM").text)
        if self.at("DISTINCT"):
            raise UnsupportedConstruct("DISTINCT is outside the dialect",
                                       self.peek().span)
        items = [self.select_item()]
        while self.at("COMMA"):
            self.take()
            items.append(self.select_item())
        q = self.query_tail(items, cte)
        q.top = top
        q.span = start_tok.span
        return q

    def query_tail(self, items: list[SelectItem], cte) -> QuerySpec:
        from_items: list[FromItem] = []
        if self.at("FROM"):
            self.take()
            from_items.append(self.from_item())
            while self.at("COMMA"):
                self.take()
                from_items.append(self.from_item())
        where = None
        if self.at("WHERE"):
            self.take()
            where = self.expr()
        pre_sort: list[tuple[Expr, str]] = []
        if self.at("SORTED"):
            self.take()
            self.expect("BY")
            self.expect("LPAREN")
            pre_sort = self.sort_list()
            self.expect("RPAREN")
        group_by: list[Expr] = []
        if self.at("GROUP"):
            self.take()
            self.expect("BY")
            group_by.append(self.expr())
            while self.at("COMMA"):
                self.take()
                group_by.append(self.expr())
        order_by: list[tuple[Expr, str]] = []
        if self.at("ORDER"):
            self.take()
            self.expect("BY")
            order_by = self.sort_list()
        return QuerySpec(select_items=items, from_items=from_items, where=where,
                         pre_sort=pre_sort, group_by=group_by, order_by=order_by,
                         cte=cte)

    def sort_list(self) -> list[tuple[Expr, str]]:
        out = [self.sort_item()]
        while self.at("COMMA"):
            self.take()
            out.append(self.sort_item())
        return out

    def sort_item(self) -> tuple[Expr, str]:
        e = self.expr()
        direction = "asc"
        if self.at("ASC"):
            self.take()
        elif self.at("DESC"):
            self.take()
            direction = "desc"
        return (e, direction)

    def select_item(self) -> SelectItem:
        tok = self.peek()
        if tok.kind == "STAR":
            self.take()
            return SelectItem(expr=None, alias=None, span=tok.span)
        expr = self.select_item_expr()
        alias = None
        if self.at("AS"):
            self.take()
            if isinstance(expr, AggCall):
                expr.aliases = self.alias_spec()
                if len(expr.aliases) == 1:
                    alias = expr.aliases[0]
            else:
                alias = self.expect("IDENT").text
        return SelectItem(expr=expr, alias=alias, span=tok.span)

    def alias_spec(self) -> tuple[str, ...]:
        if self.at("LPAREN"):
            self.take()
            names = [self.expect("IDENT").text]
            while self.at("COMMA"):
                self.take()
                names.append(self.expect("IDENT").text)
            self.expect("RPAREN")
            return tuple(names)
        return (self.expect("IDENT").text,)

    def select_item_expr(self):
        # aggregate calls are recognized only at select-item level
        tok = self.peek()
        if tok.kind == "IDENT" and self.peek(1).kind == "LPAREN":
            name = tok.text
            lname = name.lower()
            if lname in BUILTIN_AGGS or (lname not in SCALAR_FUNCS and self._looks_like_call(name)):
                self.take()
                self.take()  # LPAREN
                if self.at("STAR"):
                    self.take()
                    self.expect("RPAREN")
                    return AggCall(name=lname, args=[], star=True, span=tok.span)
                args = [self.expr()]
                while self.at("COMMA"):
                    self.take()
                    args.append(self.expr())
                self.expect("RPAREN")
                agg_name = lname if lname in BUILTIN_AGGS else name
                return AggCall(name=agg_name, args=args, span=tok.span)
        return self.expr()

    def _looks_like_call(self, name: str) -> bool:
        # unknown-function select items are custom aggregate invocations
        return True

    def from_item(self) -> FromItem:
        tok = self.peek()
        if tok.kind == "VAR":
            self.take()
            alias = self.opt_alias()
            return FromItem(table=tok.text, alias=alias, is_local=True, span=tok.span)
        if tok.kind == "IDENT":
            self.take()
            alias = self.opt_alias()
            return FromItem(table=tok.text.lower(), alias=alias, span=tok.span)
        if tok.kind == "LPAREN":
            self.take()
            q = self.query()
            self.expect("RPAREN")
            if self.at("AS"):
                self.take()
            alias_tok = self.peek()
            if alias_tok.kind != "IDENT":
                raise self.error("subquery in FROM requires an alias")
            self.take()
            return FromItem(query=q, alias=alias_tok.text, span=tok.span)
        raise self.error("expected table, @table or subquery in FROM")

    def opt_alias(self):
        if self.at("AS"):
            self.take()
            return self.expect("IDENT").text
        if self.at("IDENT"):
            return self.take().text
        return None

    # ----------------------------------------------------------- expressions

    def expr(self) -> Expr:
        return self.or_expr()

    def or_expr(self) -> Expr:
        left = self.and_expr()
        while self.at("OR"):
            tok = self.take()
            left = Binary(op="or", left=left, right=self.and_expr(), span=tok.span)
        return left

    def and_expr(self) -> Expr:
        left = self.not_expr()
        while self.at("AND"):
            tok = self.take()
            left = Binary(op="and", left=left, right=self.not_expr(), span=tok.span)
        return left

    def not_expr(self) -> Expr:
        if self.at("NOT"):
            tok = self.take()
            return Unary(op="not", operand=self.not_expr(), span=tok.span)
        return self.cmp_expr()

    def cmp_expr(self) -> Expr:
        left = self.add_expr()
        if self.peek().kind in _CMP_TOKENS:
            tok = self.take()
            right = self.add_expr()
            return Binary(op=_CMP_TOKENS[tok.kind], left=left, right=right, span=tok.span)
        return left

    def add_expr(self) -> Expr:
        left = self.mul_expr()
        while self.at("PLUS", "MINUS"):
            tok = self.take()
            op = "+" if tok.kind == "PLUS" else "-"
            left = Binary(op=op, left=left, right=self.mul_expr(), span=tok.span)
        return left

    def mul_expr(self) -> Expr:
        left = self.unary()
        while self.at("STAR", "SLASH"):
            tok = self.take()
            op = "*" if tok.kind == "STAR" else "/"
            left = Binary(op=op, left=left, right=self.unary(), span=tok.span)
        return left

    def unary(self) -> Expr:
        if self.at("MINUS"):
            tok = self.take()
            inner = self.unary()
            # fold a sign applied directly to a numeric literal
            if isinstance(inner, Const) and isinstance(inner.value, int) \
                    and not isinstance(inner.value, bool):
                return Const(value=-inner.value, span=tok.span)
            if isinstance(inner, Const) and isinstance(inner.value, Dec):
                return Const(value=Dec(-inner.value.scaled), span=tok.span)
            return Unary(op="neg", operand=inner, span=tok.span)
        return self.postfix()

    def postfix(self) -> Expr:
        e = self.primary()
        while self.at("IS"):
            tok = self.take()
            if self.at("NOT"):
                self.take()
                self.expect("NULL")
                e = Unary(op="notnull", operand=e, span=tok.span)
            else:
                self.expect("NULL")
                e = Unary(op="isnull", operand=e, span=tok.span)
        return e

    def primary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "INTNUM":
            self.take()
            return Const(value=int(tok.text), span=tok.span)
        if tok.kind == "DECNUM":
            self.take()
            return Const(value=dec_from_string(tok.text), span=tok.span)
        if tok.kind == "STRING":
            self.take()
            return Const(value=tok.text, span=tok.span)
        if tok.kind == "TRUE":
            self.take()
            return Const(value=True, span=tok.span)
        if tok.kind == "FALSE":
            self.take()
            return Const(value=False, span=tok.span)
        if tok.kind == "NULL":
            self.take()
            return Const(value=None, span=tok.span)
        if tok.kind == "VAR":
            self.take()
            return VarRef(name=tok.text, span=tok.span)
        if tok.kind == "FETCH_STATUS":
            self.take()
            return FetchStatus(span=tok.span)
        if tok.kind == "IDENT":
            self.take()
            if self.at("LPAREN"):
                lname = tok.text.lower()
                if lname not in SCALAR_FUNCS:
                    raise ParseError(f"unknown function {tok.text!r}", tok.span)
                self.take()
                args: list[Expr] = []
                if not self.at("RPAREN"):
                    args.append(self.expr())
                    while self.at("COMMA"):
                        self.take()
                        args.append(self.expr())
                self.expect("RPAREN")
                return FuncCall(name=lname, args=args, span=tok.span)
            if self.at("DOT"):
                self.take()
                col = self.expect("IDENT")
                return ColRef(name=col.text.lower(), qualifier=tok.text.lower(),
                              span=tok.span)
            return ColRef(name=tok.text.lower(), span=tok.span)
        if tok.kind == "LPAREN":
            self.take()
            if self.at("SELECT", "WITH"):
                q = self.query()
                self.expect("RPAREN")
                return ScalarSubquery(query=q, span=tok.span)
            e = self.expr()
            self.expect("RPAREN")
            return e
        if tok.kind in _REJECTED_KEYWORDS:
            raise UnsupportedConstruct(f"{tok.kind} is outside the dialect", tok.span)
        raise self.error(f"unexpected {tok.kind} {tok.text!r} in expression")


# ------------------------------------------------------------------ validation

def _validate(program: Program) -> None:
    seen: dict[str, str] = {}  # name -> kind (var | table | cursor)
    for p in program.params:
        if p.name in seen:
            raise ParseError(f"duplicate parameter @{p.name}", p.span)
        seen[p.name] = "var"

    def check_expr_vars(e, span):
        for v in _vars_of(e):
            if seen.get(v) != "var":
                raise ParseError(f"undeclared variable @{v}", span)

    def check_query(q: QuerySpec, span, ctes: frozenset[str]):
        if q is None:
            return
        scoped = ctes
        if q.cte is not None:
            check_query(q.cte.base, span, scoped)
            scoped = scoped | {q.cte.name.lower()}
            check_query(q.cte.recursive, span, scoped)
        for it in q.select_items:
            if it.expr is not None:
                check_expr_vars(it.expr, it.span or span)
                _check_subqueries(it.expr, span, scoped)
        for fi in q.from_items:
            if fi.is_local:
                if seen.get(fi.table) != "table":
                    raise ParseError(f"undeclared table variable @{fi.table}",
                                     fi.span or span)
            elif fi.query is not None:
                check_query(fi.query, fi.span or span, scoped)
        for e in [q.where] + [x for x, _ in q.pre_sort] + list(q.group_by) \
                + [x for x, _ in q.order_by]:
            if e is not None:
                check_expr_vars(e, span)
                _check_subqueries(e, span, scoped)

    def _check_subqueries(e, span, ctes):
        for sub in _subqueries_of(e):
            check_query(sub, span, ctes)

    def fetch_arity(query: QuerySpec) -> int | None:
        n = 0
        for it in query.select_items:
            if it.is_star:
                return None
            if isinstance(it.expr, AggCall) and len(it.expr.aliases) > 1:
                n += len(it.expr.aliases)
            else:
                n += 1
        return n

    cursor_queries: dict[str, QuerySpec] = {}

    def walk(stmts: list[Stmt]):
        for s in stmts:
            if isinstance(s, Declare):
                if s.init is not None:
                    check_expr_vars(s.init, s.span)
                    _check_subqueries(s.init, s.span, frozenset())
                if s.name in seen:
                    raise ParseError(f"duplicate declaration @{s.name}", s.span)
                seen[s.name] = "var"
            elif isinstance(s, DeclareTable):
                if s.name in seen:
                    raise ParseError(f"duplicate declaration @{s.name}", s.span)
                seen[s.name] = "table"
            elif isinstance(s, Assign):
                if seen.get(s.name) != "var":
                    raise ParseError(f"undeclared variable @{s.name}", s.span)
                check_expr_vars(s.expr, s.span)
                _check_subqueries(s.expr, s.span, frozenset())
            elif isinstance(s, AssignFromQuery):
                for t in s.targets:
                    if seen.get(t) != "var":
                        raise ParseError(f"undeclared variable @{t}", s.span)
                check_query(s.query, s.span, frozenset())
            elif isinstance(s, If):
                check_expr_vars(s.cond, s.span)
                _check_subqueries(s.cond, s.span, frozenset())
                walk(s.then)
                walk(s.orelse)
            elif isinstance(s, While):
                check_expr_vars(s.cond, s.span)
                _check_subqueries(s.cond, s.span, frozenset())
                walk(s.body)
            elif isinstance(s, For):
                for a in (s.init, s.incr):
                    if seen.get(a.name) != "var":
                        raise ParseError(f"undeclared variable @{a.name}", a.span)
                    check_expr_vars(a.expr, a.span)
                check_expr_vars(s.cond, s.span)
                walk(s.body)
            elif isinstance(s, CursorDeclare):
                if s.name in cursor_queries:
                    raise ParseError(f"duplicate cursor {s.name}", s.span)
                check_query(s.query, s.span, frozenset())
                cursor_queries[s.name] = s.query
            elif isinstance(s, (CursorOpen, CursorClose, CursorDeallocate)):
                if s.name not in cursor_queries:
                    raise ParseError(f"undeclared cursor {s.name}", s.span)
            elif isinstance(s, Fetch):
                if s.cursor not in cursor_queries:
                    raise ParseError(f"undeclared cursor {s.cursor}", s.span)
                for t in s.targets:
                    if seen.get(t) != "var":
                        raise ParseError(f"undeclared variable @{t}", s.span)
                arity = fetch_arity(cursor_queries[s.cursor])
                if arity is not None and arity != len(s.targets):
                    raise ParseError(
                        f"FETCH INTO arity {len(s.targets)} does not match "
                        f"cursor query arity {arity}", s.span)
            elif isinstance(s, InsertLocal):
                if seen.get(s.table) != "table":
                    raise ParseError(f"undeclared table variable @{s.table}", s.span)
                for e in s.values:
                    check_expr_vars(e, s.span)
                    _check_subqueries(e, s.span, frozenset())
            elif isinstance(s, PersistentDml):
                for e in s.values:
                    check_expr_vars(e, s.span)
                if s.set_expr is not None:
                    check_expr_vars(s.set_expr, s.span)
                if s.where is not None:
                    check_expr_vars(s.where, s.span)
            elif isinstance(s, Return):
                if s.expr is not None:
                    check_expr_vars(s.expr, s.span)
                    _check_subqueries(s.expr, s.span, frozenset())

    walk(program.body)


def _vars_of(e) -> list[str]:
    from .astnodes import expr_vars
    return expr_vars(e)


def _subqueries_of(e):
    out: list[QuerySpec] = []

    def go(x):
        if x is None:
            return
        if isinstance(x, ScalarSubquery):
            out.append(x.query)
        elif isinstance(x, Unary):
            go(x.operand)
        elif isinstance(x, Binary):
            go(x.left)
            go(x.right)
        elif isinstance(x, (FuncCall, AggCall)):
            for a in x.args:
                go(a)

    go(e)
    return out


# -------------------------------------------------------------------- entries

def parse_program(source: str, allow_persistent_dml: bool = False) -> Program:
    """Parse and validate a whole procedure/function definition."""
    p = _Parser(tokenize(source), allow_persistent_dml)
    program = p.program()
    _validate(program)
    return program


def parse_query(source: str) -> QuerySpec:
    """Parse a standalone query (tests and sidecar plumbing)."""
    p = _Parser(tokenize(source), False)
    q = p.query()
    p.expect("EOF")
    return q


def parse_statements(source: str, allow_persistent_dml: bool = True) -> list[Stmt]:
    """Parse a bare statement list (aggregate bodies in plan sidecars)."""
    p = _Parser(tokenize(source), allow_persistent_dml)
    stmts: list[Stmt] = []
    while not p.at("EOF"):
        stmts.append(p.statement())
    return stmts
