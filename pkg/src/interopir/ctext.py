"""Tokenizer and cursor shared by the IDL and C-header readers."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .diagnostics import Diagnostic, ParseError, SourceSpan, error

_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r\n]+)"
    r"|(?P<comment>//[^\n]*|/\*.*?\*/)"
    r"|(?P<pp>^[ \t]*\#[^\n]*)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<int>0[xX][0-9a-fA-F]+|\d+)"
    r"|(?P<punct>\.\.\.|[\[\](){};,*:=])",
    re.S | re.M,
)


@dataclass(frozen=True)
class CToken:
    kind: str
    text: str
    span: SourceSpan


def tokenize_c(text: str, file: str = "<input>") -> list[CToken]:
    out: list[CToken] = []
    pos = 0
    line, col = 1, 1

    def advance(s: str) -> None:
        nonlocal line, col
        nl = s.count("\n")
        if nl:
            line += nl
            col = len(s) - s.rfind("\n")
        else:
            col += len(s)

    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError([error(f"unexpected character {text[pos]!r}",
                                    SourceSpan(file, line, col, line, col + 1))])
        kind = m.lastgroup
        s = m.group()
        if kind == "pp":
            raise ParseError([error("unsupported construct: preprocessor directive",
                                    SourceSpan(file, line, col, line, col + len(s.strip())))])
        if kind not in ("ws", "comment"):
            out.append(CToken(kind, s, SourceSpan(file, line, col, line, col + len(s))))
        advance(s)
        pos = m.end()
    out.append(CToken("eof", "", SourceSpan(file, line, col, line, col)))
    return out


class CCursor:
    def __init__(self, text: str, file: str = "<input>"):
        self.file = file
        self.toks = tokenize_c(text, file)
        self.i = 0
        self.diags: list[Diagnostic] = []

    @property
    def tok(self) -> CToken:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> CToken:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind != "eof"

    def accept(self, text: str) -> Optional[CToken]:
        if self.at(text):
            t = self.tok
            self.i += 1
            return t
        return None

    def fail(self, msg: str, tok: Optional[CToken] = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(self.diags + [error(msg, tok.span)])

    def expect(self, text: str) -> CToken:
        t = self.accept(text)
        if t is None:
            found = self.tok.text or "end of input"
            raise self.fail(f"expected {text!r}, found {found!r}")
        return t

    def ident(self, what: str = "identifier") -> CToken:
        if self.tok.kind != "ident":
            found = self.tok.text or "end of input"
            raise self.fail(f"expected {what}, found {found!r}")
        t = self.tok
        self.i += 1
        return t

    def int_lit(self) -> int:
        if self.tok.kind != "int":
            raise self.fail(f"expected an integer, found {self.tok.text!r}")
        t = self.tok
        self.i += 1
        return int(t.text, 0)

    def at_eof(self) -> bool:
        return self.tok.kind == "eof"

    def skip_to(self, *texts: str) -> None:
        while not self.at_eof() and self.tok.text not in texts:
            self.i += 1
        if not self.at_eof():
            self.i += 1


# Scalar spellings accepted by both readers.
_SCALAR_WORDS = {"char", "short", "int", "long", "signed", "unsigned"}


def read_scalar(cur: CCursor):
    """Parse a scalar C type spelling; return a layout CType or None."""
    from .layout import CChar, CInt, CLong, CShort

    words = []
    while cur.tok.kind == "ident" and cur.tok.text in _SCALAR_WORDS:
        words.append(cur.tok.text)
        cur.i += 1
    if not words:
        return None
    signed = "unsigned" not in words
    base = [w for w in words if w not in ("signed", "unsigned")]
    if base == ["char"]:
        return CChar(signed)
    if base == ["short"] or base == ["short", "int"]:
        return CShort(signed)
    if base in ([], ["int"]):
        return CInt(signed)
    if base in (["long"], ["long", "int"]):
        return CLong(signed)
    raise cur.fail(f"unsupported construct: type {' '.join(words)}")
