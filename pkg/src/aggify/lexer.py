"""Tokenizer for the procedural dialect.

Keywords are case-insensitive and lex to their own token kind; identifiers,
@variables and literals carry their text. -- and /* */ comments are skipped.
"""
from __future__ import annotations

from dataclasses import dataclass

from .astnodes import Span
from .errors import LexError

KEYWORDS = {
    "CREATE", "FUNCTION", "PROCEDURE", "RETURNS", "AS", "BEGIN", "END",
    "DECLARE", "SET", "IF", "ELSE", "WHILE", "FOR", "RETURN",
    "CURSOR", "OPEN", "FETCH", "NEXT", "FROM", "INTO", "CLOSE", "DEALLOCATE",
    "INSERT", "VALUES", "TABLE", "UPDATE", "DELETE",
    "SELECT", "WHERE", "GROUP", "ORDER", "SORTED", "BY", "ASC", "DESC",
    "TOP", "WITH", "UNION", "ALL", "DISTINCT",
    "AND", "OR", "NOT", "IS", "NULL", "TRUE", "FALSE",
    "INT", "DECIMAL", "VARCHAR", "BOOL",
    "BREAK", "CONTINUE", "TRY", "CATCH", "GOTO",
}

_PUNCT = {
    "<>": "NEQ", "!=": "NEQ", "<=": "LE", ">=": "GE",
    "=": "EQ", "<": "LT", ">": "GT",
    "+": "PLUS", "-": "MINUS", "*": "STAR", "/": "SLASH",
    "(": "LPAREN", ")": "RPAREN", ",": "COMMA", ";": "SEMI", ".": "DOT",
}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    span: Span

    def __repr__(self):
        return f"{self.kind}({self.text!r})"


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    i, n = 0, len(source)

    def span_from(l0, c0):
        return Span(l0, c0, line, col)

    def advance(k: int):
        nonlocal i, line, col
        for _ in range(k):
            if i < n and source[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = source[i]
        if ch in " \t\r\n":
            advance(1)
            continue
        if source.startswith("--", i):
            while i < n and source[i] != "\n":
                advance(1)
            continue
        if source.startswith("/*", i):
            l0, c0 = line, col
            advance(2)
            while i < n and not source.startswith("*/", i):
                advance(1)
            if i >= n:
                raise LexError("unterminated block comment", Span(l0, c0, line, col))
            advance(2)
            continue
        l0, c0 = line, col
        if source.startswith("@@", i):
            j = i + 2
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            word = source[i:j]
            if word.upper() != "@@FETCH_STATUS":
                raise LexError(f"unknown system variable {word}", Span(l0, c0, line, col + (j - i)))
            advance(j - i)
            tokens.append(Token("FETCH_STATUS", word, span_from(l0, c0)))
            continue
        if ch == "@":
            j = i + 1
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            if j == i + 1:
                raise LexError("bare @", Span(l0, c0, line, col + 1))
            name = source[i + 1:j]
            advance(j - i)
            tokens.append(Token("VAR", name, span_from(l0, c0)))
            continue
        if ch.isalpha() or ch == "_":
            j = i + 1
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            word = source[i:j]
            advance(j - i)
            upper = word.upper()
            if upper in KEYWORDS:
                tokens.append(Token(upper, word, span_from(l0, c0)))
            else:
                tokens.append(Token("IDENT", word, span_from(l0, c0)))
            continue
        if ch.isdigit():
            j = i
            while j < n and source[j].isdigit():
                j += 1
            is_dec = False
            if j < n and source[j] == "." and j + 1 < n and source[j + 1].isdigit():
                is_dec = True
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            word = source[i:j]
            advance(j - i)
            tokens.append(Token("DECNUM" if is_dec else "INTNUM", word, span_from(l0, c0)))
            continue
        if ch == "'":
            j = i + 1
            buf = []
            while True:
                if j >= n:
                    raise LexError("unterminated string literal", Span(l0, c0, line, col))
                if source[j] == "'":
                    if j + 1 < n and source[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    j += 1
                    break
                buf.append(source[j])
                j += 1
            advance(j - i)
            tokens.append(Token("STRING", "".join(buf), span_from(l0, c0)))
            continue
        two = source[i:i + 2]
        if two in _PUNCT:
            advance(2)
            tokens.append(Token(_PUNCT[two], two, span_from(l0, c0)))
            continue
        if ch in _PUNCT:
            advance(1)
            tokens.append(Token(_PUNCT[ch], ch, span_from(l0, c0)))
            continue
        raise LexError(f"unexpected character {ch!r}", Span(l0, c0, line, col + 1))

    tokens.append(Token("EOF", "", Span(line, col, line, col)))
    return tokens
