"""The textual module format (MBX): parser, ANF normalizer and printer.

The surface syntax follows the listings the IR was designed around::

    typedef char = enum(0,255)
    typedef string = ptr(struct 8:4 (0: int, 4: string_data))
    type String = prim string
    external addr(data) getenv (addr(data))
    val length : String -> Int =
        fun len (s : string, _ : exn_handler) { let n : int = s#0 return n }

Argument positions may hold nested expressions; ``normalize`` binds every
intermediate result (literals included) to a fresh ``_t<N>`` variable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Union

from .diagnostics import Diagnostic, ParseError, SourceSpan, error
from .ir import (
    ADDR,
    DEFAULT_TARGET,
    EXN,
    INT32,
    NIL,
    AddrData,
    Arg,
    CallExpr,
    CFun,
    EnumRange,
    ExnHandler,
    External,
    FunBinding,
    FunDef,
    If,
    IntN,
    IRType,
    LetAlloc,
    LetCall,
    LetCCall,
    LetLit,
    LetPrim,
    LetSelect,
    LetStackAlloc,
    Lit,
    ModuleInterface,
    NameSupply,
    PrimExpr,
    PrimOp,
    Ptr,
    Return,
    SelectExpr,
    StructLayout,
    StructParam,
    TargetConfig,
    Term,
    TypeBinding,
    Vector,
    Void,
    byte_size,
    show_type,
)

MBI_VERSION = 1


@dataclass(frozen=True)
class MbiDocument:
    module: ModuleInterface
    target: TargetConfig = DEFAULT_TARGET
    version: int = MBI_VERSION


# ---------------------------------------------------------------------------
# Lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*|\(\*.*?\*\))
  | (?P<int>0[xX][0-9a-fA-F]+|\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<arrow>->)
  | (?P<punct>[(){}\[\],:=\#;.*\-])
    """,
    re.VERBOSE | re.DOTALL,
)

KEYWORDS = {
    "typedef", "type", "prim", "val", "fun", "external", "extern", "module",
    "let", "ccall", "alloc", "stackalloc", "if", "then", "else", "return", "nil",
}
DECL_KEYWORDS = {"typedef", "type", "val", "external", "extern", "module"}


@dataclass
class Token:
    kind: str  # int, ident, kw, punct, eof
    text: str
    line: int
    col: int
    pos: int
    end: int


def tokenize(text: str, file: str = "<input>") -> list[Token]:
    toks: list[Token] = []
    pos = 0
    line, col = 1, 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            span = SourceSpan(file, line, col, line, col + 1)
            raise ParseError([error(f"unexpected character {text[pos]!r}", span)])
        kind = m.lastgroup
        s = m.group()
        if kind not in ("ws", "comment"):
            if kind == "ident" and s in KEYWORDS:
                kind = "kw"
            elif kind == "arrow":
                kind = "punct"
            toks.append(Token(kind, s, line, col, pos, m.end()))
        nl = s.count("\n")
        if nl:
            line += nl
            col = len(s) - s.rfind("\n")
        else:
            col += len(s)
        pos = m.end()
    toks.append(Token("eof", "", line, col, pos, pos))
    return toks


# ---------------------------------------------------------------------------
# Parser

PRIMOPS = {op.value: op for op in PrimOp}


def _builtin_type(name: str) -> Optional[IRType]:
    if name == "int":
        return INT32
    m = re.fullmatch(r"int(8|16|32|64)", name)
    if m:
        return IntN(int(m.group(1)))
    if name == "lvalue":
        return ADDR
    if name == "void":
        return Void()
    if name == "exn_handler":
        return EXN
    return None


class _Parser:
    def __init__(self, text: str, file: str, typedefs: Mapping[str, IRType], target: TargetConfig):
        self.text = text
        self.file = file
        self.toks = tokenize(text, file)
        self.i = 0
        self.imported = dict(typedefs)
        self.local_typedefs: list[tuple[str, IRType]] = []
        self.target = target
        self.diags: list[Diagnostic] = []

    # -- token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("punct", "kw") and t.text == text

    def advance(self) -> Token:
        t = self.tok
        if t.kind != "eof":
            self.i += 1
        return t

    def span_from(self, start: Token) -> SourceSpan:
        last = self.toks[max(self.i - 1, 0)]
        end_line, end_col = last.line, last.col + len(last.text)
        if (end_line, end_col) < (start.line, start.col):
            end_line, end_col = start.line, start.col
        return SourceSpan(self.file, start.line, start.col, end_line, end_col)

    def fail(self, msg: str, tok: Optional[Token] = None) -> "ParseError":
        tok = tok or self.tok
        span = SourceSpan(self.file, tok.line, tok.col, tok.line, tok.col + max(len(tok.text), 1))
        return ParseError([error(msg, span)])

    def expect(self, text: str) -> Token:
        if not self.at(text):
            shown = self.tok.text or "end of input"
            raise self.fail(f"expected {text!r}, found {shown!r}")
        return self.advance()

    def ident(self) -> str:
        t = self.tok
        if t.kind != "ident":
            raise self.fail(f"expected identifier, found {t.text or 'end of input'!r}")
        self.advance()
        return t.text

    def integer(self) -> int:
        neg = False
        if self.at("-"):
            self.advance()
            neg = True
        t = self.tok
        if t.kind != "int":
            raise self.fail(f"expected integer, found {t.text or 'end of input'!r}")
        self.advance()
        v = int(t.text, 0)
        return -v if neg else v

    def skip_semis(self) -> None:
        while self.at(";"):
            self.advance()

    # -- types
    def typedef_lookup(self, name: str) -> Optional[IRType]:
        for n, t in reversed(self.local_typedefs):
            if n == name:
                return t
        return self.imported.get(name)

    def parse_type(self) -> IRType:
        t = self.tok
        if t.kind not in ("ident", "kw"):
            raise self.fail(f"expected a type, found {t.text or 'end of input'!r}")
        name = t.text
        self.advance()
        if name == "enum":
            self.expect("(")
            lo = self.integer()
            self.expect(",")
            hi = self.integer()
            self.expect(")")
            return EnumRange(lo, hi)
        if name == "ptr":
            self.expect("(")
            inner = self.parse_type()
            self.expect(")")
            return Ptr(inner)
        if name == "vector":
            if self.at("["):
                self.advance()
                n = self.integer()
                self.expect("]")
                self.expect("(")
                el = self.parse_type()
                self.expect(")")
                return Vector(n, el)
            self.expect("(")
            esz_tok = self.tok
            esz = self.integer()
            self.expect(",")
            el = self.parse_type()
            self.expect(")")
            if esz != byte_size(el, self.target):
                raise self.fail(f"vector element size {esz} does not match {show_type(el)}", esz_tok)
            return Vector(None, el)
        if name == "struct":
            size = self.integer()
            self.expect(":")
            align = self.integer()
            self.expect("(")
            fields = []
            while not self.at(")"):
                off = self.integer()
                self.expect(":")
                fields.append((off, self.parse_type()))
                if not self.at(")"):
                    self.expect(",")
            self.expect(")")
            return StructLayout(size, align, tuple(fields))
        if name == "addr":
            self.expect("(")
            self.ident()
            self.expect(")")
            return ADDR
        if name == "cfun":
            self.expect("(")
            params = self.type_list(")")
            self.expect("->")
            return CFun(tuple(params), self.parse_type())
        if name == "sparam":
            self.expect("(")
            inner = self.parse_type()
            self.expect(")")
            if not isinstance(inner, StructLayout):
                raise self.fail("sparam expects a struct layout", t)
            return StructParam(inner)
        b = _builtin_type(name)
        if b is not None:
            return b
        found = self.typedef_lookup(name)
        if found is not None:
            return found
        if self.at("("):
            raise self.fail(f"unknown type constructor {name!r}", t)
        raise self.fail(f"unknown type name {name!r}", t)

    def type_list(self, close: str) -> list[IRType]:
        out = []
        while not self.at(close):
            out.append(self.parse_type())
            if not self.at(close):
                self.expect(",")
        self.expect(close)
        return out

    # -- high-level type text (carried opaquely)
    def hl_text(self, stop: Callable[[Token], bool]) -> str:
        depth = 0
        start = self.tok
        last = None
        while True:
            t = self.tok
            if t.kind == "eof":
                break
            if depth == 0 and stop(t):
                break
            if t.text in ("(", "[", "{"):
                depth += 1
            elif t.text in (")", "]", "}"):
                if depth == 0:
                    break
                depth -= 1
            last = self.advance()
        if last is None:
            raise self.fail("expected a type expression", start)
        return " ".join(self.text[start.pos:last.end].split())

    # -- declarations
    def parse_file(self, default_name: str) -> ModuleInterface:
        name = default_name
        prefix = ""
        if self.at("module") and self._single_module():
            self.advance()
            name = self.ident()
            self.expect("{")
            acc = self.decls(prefix, closing=True)
            self.expect("}")
        else:
            acc = self.decls(prefix, closing=False)
        self.skip_semis()
        if self.tok.kind != "eof":
            raise self.fail(f"unexpected {self.tok.text!r} at top level")
        typedefs = tuple(self.local_typedefs)
        m = ModuleInterface(name, typedefs, tuple(acc["types"]), tuple(acc["vals"]), tuple(acc["externs"]))
        for dup in m.duplicate_names():
            self.diags.append(error(f"duplicate binding {dup}", SourceSpan(self.file, 1, 1, 1, 1)))
        return m

    def _single_module(self) -> bool:
        depth = 0
        j = self.i
        while j < len(self.toks):
            t = self.toks[j]
            if t.text == "{" and t.kind == "punct":
                depth += 1
            elif t.text == "}" and t.kind == "punct":
                depth -= 1
                if depth == 0:
                    rest = [x for x in self.toks[j + 1:] if x.text != ";"]
                    return rest[0].kind == "eof"
            j += 1
        return False

    def decls(self, prefix: str, closing: bool) -> dict:
        acc: dict[str, list] = {"types": [], "vals": [], "externs": []}
        while True:
            self.skip_semis()
            if self.tok.kind == "eof" or (closing and self.at("}")):
                return acc
            self.decl(prefix, acc)

    def decl(self, prefix: str, acc: dict) -> None:
        t = self.tok
        if self.at("typedef"):
            self.advance()
            name = self.ident()
            self.expect("=")
            self.local_typedefs.append((name, self.parse_type()))
        elif self.at("type"):
            self.advance()
            name = self.ident()
            params: tuple[str, ...] = ()
            if self.at("("):
                self.advance()
                ps = []
                while not self.at(")"):
                    ps.append(self.ident())
                    if not self.at(")"):
                        self.expect(",")
                self.expect(")")
                params = tuple(ps)
            rhs: Union[IRType, str, None] = None
            if self.at("="):
                self.advance()
                if self.at("prim"):
                    self.advance()
                    rhs = self.parse_type()
                else:
                    rhs = self.hl_text(lambda tk: (tk.kind == "kw" and tk.text in DECL_KEYWORDS) or tk.text == ";")
            acc["types"].append(TypeBinding(prefix + name, rhs, params))
        elif self.at("val"):
            self.advance()
            name = self.ident()
            self.expect(":")
            hl = self.hl_text(lambda tk: tk.kind == "punct" and tk.text == "=")
            self.expect("=")
            fd = self.fundef()
            acc["vals"].append(FunBinding(prefix + name, hl, fd))
        elif self.at("external") or self.at("extern"):
            self.advance()
            res = self.parse_type()
            cname = self.ident()
            self.expect("(")
            params = self.type_list(")")
            acc["externs"].append(External(cname, CFun(tuple(params), res)))
        elif self.at("module"):
            self.advance()
            name = self.ident()
            self.expect("{")
            inner = self.decls(prefix + name + ".", closing=True)
            self.expect("}")
            for k in acc:
                acc[k].extend(inner[k])
        else:
            raise self.fail(f"expected a declaration, found {t.text or 'end of input'!r}")

    def fundef(self) -> FunDef:
        start = self.expect("fun")
        name = self.ident()
        self.expect("(")
        params = []
        while not self.at(")"):
            pname = self.ident()
            self.expect(":")
            params.append((pname, self.parse_type()))
            if not self.at(")"):
                self.expect(",")
        self.expect(")")
        result = None
        if self.at(":"):
            self.advance()
            if self.at("("):
                self.advance()
                result = tuple(self.type_list(")"))
            else:
                result = (self.parse_type(),)
        self.expect("{")
        body = self.body()
        self.expect("}")
        return FunDef(name, tuple(params), body, result, span=self.span_from(start))

    # -- terms
    def body(self) -> Term:
        """Parse statements up to and including a terminal (return / if)."""
        wrappers: list[Callable[[Term], Term]] = []
        while True:
            self.skip_semis()
            t = self.tok
            if self.at("return"):
                term = self.ret()
                break
            if self.at("if"):
                term = self.ifte()
                break
            if self.at("let"):
                wrappers.append(self.let())
            elif self.at("stackalloc"):
                wrappers.extend(self.stackalloc())
            elif self.at("ccall"):
                self.advance()
                callee = self.ident()
                args = self.arg_list()
                sp = self.span_from(t)
                wrappers.append(lambda b, c=callee, a=args, s=sp: LetCCall(None, c, a, b, span=s))
            elif t.kind == "ident":
                e = self.expr()
                sp = self.span_from(t)
                if isinstance(e, CallExpr):
                    wrappers.append(lambda b, e=e, s=sp: LetCall((), e.fn, e.args, b, span=s))
                elif isinstance(e, PrimExpr) and e.op.is_store:
                    wrappers.append(lambda b, e=e, s=sp: LetPrim(None, e.op, e.args, b, span=s))
                else:
                    raise self.fail("only calls and stores may be used as statements", t)
            else:
                raise self.fail(f"expected a statement, found {t.text or 'end of input'!r}")
        for w in reversed(wrappers):
            term = w(term)
        return term

    def ret(self) -> Return:
        start = self.expect("return")
        if self.at("("):
            # "return (a, b)" or "return ()" -- but "return (x)#0" is an expression
            save = self.i
            self.advance()
            items = []
            while not self.at(")"):
                items.append(self.expr())
                if not self.at(")"):
                    self.expect(",")
            self.expect(")")
            if self.at("#"):
                self.i = save
                return Return((self.expr(),), span=self.span_from(start))
            return Return(tuple(items), span=self.span_from(start))
        return Return((self.expr(),), span=self.span_from(start))

    def ifte(self) -> If:
        start = self.expect("if")
        cond = self.expr()
        self.expect("then")
        then = self.branch()
        self.skip_semis()
        self.expect("else")
        orelse = self.branch()
        return If(cond, then, orelse, span=self.span_from(start))

    def branch(self) -> Term:
        if self.at("{"):
            self.advance()
            b = self.body()
            self.skip_semis()
            self.expect("}")
            return b
        return self.body()

    def stackalloc(self) -> list[Callable[[Term], Term]]:
        start = self.expect("stackalloc")
        out = []
        while True:
            name = self.ident()
            self.expect("[")
            size = self.integer()
            if self.at(":"):
                self.advance()
            else:
                self.expect(",")
            align = self.integer()
            self.expect("]")
            sp = self.span_from(start)
            out.append(lambda b, n=name, s=size, a=align, sp=sp: LetStackAlloc(n, s, a, b, span=sp))
            if not self.at(","):
                return out
            self.advance()

    def let(self) -> Callable[[Term], Term]:
        start = self.expect("let")
        if self.at("("):
            self.advance()
            names = []
            while not self.at(")"):
                names.append(self.ident())
                if not self.at(")"):
                    self.expect(",")
            self.expect(")")
            self.expect("=")
            rhs_tok = self.tok
            e = self.expr()
            if not isinstance(e, CallExpr):
                raise self.fail("a tuple binding needs a function call", rhs_tok)
            sp = self.span_from(start)
            return lambda b: LetCall(tuple(names), e.fn, e.args, b, span=sp)
        var = self.ident()
        ty = None
        if self.at(":"):
            self.advance()
            ty = self.parse_type()
        self.expect("=")
        if self.at("ccall"):
            self.advance()
            callee = self.ident()
            args = self.arg_list()
            sp = self.span_from(start)
            return lambda b: LetCCall(var, callee, args, b, ty, span=sp)
        if self.at("alloc"):
            self.advance()
            args = self.arg_list()
            sp = self.span_from(start)
            return lambda b: LetAlloc(var, args, b, ty, span=sp)
        rhs_tok = self.tok
        e = self.expr()
        sp = self.span_from(start)
        if isinstance(e, Lit):
            lty = ty if ty is not None else e.ty
            return lambda b: LetLit(var, e.value, b, lty, span=sp)
        if isinstance(e, PrimExpr):
            if e.op.is_store:
                raise self.fail(f"{e.op.value} produces no value", rhs_tok)
            return lambda b: LetPrim(var, e.op, e.args, b, ty, span=sp)
        if isinstance(e, SelectExpr):
            return lambda b: LetSelect(var, e.src, e.index, b, ty, span=sp)
        if isinstance(e, CallExpr):
            return lambda b: LetCall((var,), e.fn, e.args, b, span=sp)
        raise self.fail("a variable cannot be rebound to another variable", rhs_tok)

    def arg_list(self) -> tuple[Arg, ...]:
        self.expect("(")
        out = []
        while not self.at(")"):
            out.append(self.expr())
            if not self.at(")"):
                self.expect(",")
        self.expect(")")
        return tuple(out)

    def expr(self) -> Arg:
        e = self.atom()
        while self.at("#"):
            self.advance()
            e = SelectExpr(e, self.integer())
        return e

    def atom(self) -> Arg:
        t = self.tok
        if t.kind == "int" or (self.at("-") and self.peek().kind == "int"):
            return Lit(self.integer())
        if self.at("nil"):
            self.advance()
            return NIL
        if self.at("("):
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "ident":
            name = self.ident()
            while self.at(".") and self.peek().kind == "ident":
                self.advance()
                name += "." + self.ident()
            if self.at("("):
                args = self.arg_list()
                if name in PRIMOPS:
                    op = PRIMOPS[name]
                    if len(args) != op.arity:
                        raise self.fail(f"{name} expects {op.arity} argument(s), got {len(args)}", t)
                    return PrimExpr(op, args)
                return CallExpr(name, args)
            return name
        raise self.fail(f"expected an expression, found {t.text or 'end of input'!r}")


def parse_mbx(text: str, file: str = "<input>", module_name: Optional[str] = None,
              typedefs: Optional[Mapping[str, IRType]] = None,
              target: TargetConfig = DEFAULT_TARGET) -> MbiDocument:
    """Parse MBX text.  ``typedefs`` supplies IR type names imported from the
    compilation environment (by default the prelude's).  Raises ParseError."""
    if typedefs is None:
        typedefs = prelude_typedefs(target)
    if module_name is None:
        module_name = Path(file).stem if file not in ("<input>", "-") else "main"
    p = _Parser(text, file, typedefs, target)
    m = p.parse_file(module_name)
    if p.diags:
        raise ParseError(p.diags)
    return MbiDocument(m, target)


# ---------------------------------------------------------------------------
# Normalization


def _flatten(a: Arg, supply: NameSupply, out: list[Callable[[Term], Term]]) -> str:
    if isinstance(a, str):
        return a
    v = supply.fresh()
    if isinstance(a, Lit):
        out.append(lambda b, v=v, a=a: LetLit(v, a.value, b, a.ty))
    elif isinstance(a, PrimExpr):
        if a.op.is_store:
            raise ValueError(f"{a.op.value} used as a value")
        args = tuple(_flatten(x, supply, out) for x in a.args)
        out.append(lambda b, v=v, a=a, args=args: LetPrim(v, a.op, args, b))
    elif isinstance(a, SelectExpr):
        src = _flatten(a.src, supply, out)
        out.append(lambda b, v=v, a=a, src=src: LetSelect(v, src, a.index, b))
    elif isinstance(a, CallExpr):
        args = tuple(_flatten(x, supply, out) for x in a.args)
        out.append(lambda b, v=v, a=a, args=args: LetCall((v,), a.fn, args, b))
    else:
        raise TypeError(f"not an argument: {a!r}")
    return v


def _wrap(ws: list[Callable[[Term], Term]], t: Term) -> Term:
    for w in reversed(ws):
        t = w(t)
    return t


def normalize(t: Term, supply: Optional[NameSupply] = None) -> Term:
    """Bind every intermediate result to a fresh variable, left to right."""
    if supply is None:
        supply = NameSupply.avoiding(t)
    ws: list[Callable[[Term], Term]] = []
    if isinstance(t, Return):
        args = tuple(_flatten(a, supply, ws) for a in t.args)
        return _wrap(ws, Return(args, span=t.span))
    if isinstance(t, If):
        c = _flatten(t.cond, supply, ws)
        return _wrap(ws, If(c, normalize(t.then, supply), normalize(t.orelse, supply), span=t.span))
    if isinstance(t, LetPrim):
        args = tuple(_flatten(a, supply, ws) for a in t.args)
        return _wrap(ws, LetPrim(t.var, t.op, args, normalize(t.body, supply), t.ty, span=t.span))
    if isinstance(t, LetAlloc):
        args = tuple(_flatten(a, supply, ws) for a in t.args)
        return _wrap(ws, LetAlloc(t.var, args, normalize(t.body, supply), t.ty, span=t.span))
    if isinstance(t, LetSelect):
        src = _flatten(t.src, supply, ws)
        return _wrap(ws, LetSelect(t.var, src, t.index, normalize(t.body, supply), t.ty, span=t.span))
    if isinstance(t, LetCCall):
        args = tuple(_flatten(a, supply, ws) for a in t.args)
        return _wrap(ws, LetCCall(t.var, t.callee, args, normalize(t.body, supply), t.ty, span=t.span))
    if isinstance(t, LetCall):
        args = tuple(_flatten(a, supply, ws) for a in t.args)
        return _wrap(ws, LetCall(t.vars, t.fn, args, normalize(t.body, supply), span=t.span))
    if isinstance(t, LetStackAlloc):
        return LetStackAlloc(t.var, t.size, t.align, normalize(t.body, supply), span=t.span)
    if isinstance(t, LetLit):
        return LetLit(t.var, t.value, normalize(t.body, supply), t.ty, span=t.span)
    raise TypeError(f"not a term: {t!r}")


def normalize_fundef(f: FunDef) -> FunDef:
    supply = NameSupply.avoiding(f)
    return FunDef(f.name, f.params, normalize(f.body, supply), f.result, span=f.span)


def normalize_module(m: ModuleInterface) -> ModuleInterface:
    vals = tuple(FunBinding(b.name, b.hl_type, normalize_fundef(b.fundef)) for b in m.fun_bindings)
    return ModuleInterface(m.name, m.typedefs, m.type_bindings, vals, m.externals)


def normalize_document(doc: MbiDocument) -> MbiDocument:
    return MbiDocument(normalize_module(doc.module), doc.target, doc.version)


# ---------------------------------------------------------------------------
# Printing


class _Printer:
    def __init__(self, names: Iterable[tuple[str, IRType]]):
        self.names: list[tuple[str, IRType]] = list(names)

    def ty(self, t: IRType, top: bool = True) -> str:
        if not isinstance(t, (IntN, AddrData, Void, ExnHandler)):
            for n, nt in reversed(self.names):
                if nt == t:
                    return n
        if isinstance(t, Ptr):
            return f"ptr({self.ty(t.target)})"
        if isinstance(t, Vector):
            if t.count is None:
                return f"vector({byte_size(t.element)}, {self.ty(t.element)})"
            return f"vector[{t.count}]({self.ty(t.element)})"
        if isinstance(t, StructLayout):
            fs = ", ".join(f"{o}: {self.ty(f)}" for o, f in t.fields)
            return f"struct {t.size}:{t.align} ({fs})"
        if isinstance(t, CFun):
            return f"cfun({', '.join(self.ty(p) for p in t.params)}) -> {self.ty(t.result)}"
        if isinstance(t, StructParam):
            return f"sparam({self.ty(t.layout)})"
        return show_type(t)

    def arg(self, a: Arg) -> str:
        if isinstance(a, str):
            return a
        if isinstance(a, Lit):
            return self.lit(a)
        if isinstance(a, PrimExpr):
            return f"{a.op.value}({', '.join(self.arg(x) for x in a.args)})"
        if isinstance(a, CallExpr):
            return f"{a.fn}({', '.join(self.arg(x) for x in a.args)})"
        if isinstance(a, SelectExpr):
            src = self.arg(a.src)
            if not isinstance(a.src, (str, SelectExpr)):
                src = f"({src})"
            return f"{src}#{a.index}"
        raise TypeError(a)

    def lit(self, a: Lit) -> str:
        if a == NIL:
            return "nil"
        return str(a.value)

    def args(self, xs) -> str:
        return f"({', '.join(self.arg(x) for x in xs)})"

    def term(self, t: Term, ind: str, out: list[str]) -> None:
        while True:
            if isinstance(t, Return):
                if len(t.args) == 1:
                    out.append(f"{ind}return {self.arg(t.args[0])}")
                else:
                    out.append(f"{ind}return {self.args(t.args)}")
                return
            if isinstance(t, If):
                out.append(f"{ind}if {self.arg(t.cond)} then {{")
                self.term(t.then, ind + "  ", out)
                out.append(f"{ind}}} else {{")
                self.term(t.orelse, ind + "  ", out)
                out.append(f"{ind}}}")
                return
            ann = f" : {self.ty(t.ty)}" if getattr(t, "ty", None) is not None and not isinstance(t, LetLit) else ""
            if isinstance(t, LetPrim):
                rhs = f"{t.op.value}{self.args(t.args)}"
                out.append(f"{ind}{rhs}" if t.var is None else f"{ind}let {t.var}{ann} = {rhs}")
            elif isinstance(t, LetAlloc):
                out.append(f"{ind}let {t.var}{ann} = alloc{self.args(t.args)}")
            elif isinstance(t, LetSelect):
                out.append(f"{ind}let {t.var}{ann} = {self.arg(SelectExpr(t.src, t.index))}")
            elif isinstance(t, LetCCall):
                rhs = f"ccall {t.callee}{self.args(t.args)}"
                out.append(f"{ind}{rhs}" if t.var is None else f"{ind}let {t.var}{ann} = {rhs}")
            elif isinstance(t, LetCall):
                rhs = f"{t.fn}{self.args(t.args)}"
                if not t.vars:
                    out.append(f"{ind}{rhs}")
                elif len(t.vars) == 1:
                    out.append(f"{ind}let {t.vars[0]} = {rhs}")
                else:
                    out.append(f"{ind}let ({', '.join(t.vars)}) = {rhs}")
            elif isinstance(t, LetStackAlloc):
                out.append(f"{ind}stackalloc {t.var}[{t.size}:{t.align}]")
            elif isinstance(t, LetLit):
                lit = Lit(t.value, t.ty)
                if lit == NIL or t.ty == INT32:
                    out.append(f"{ind}let {t.var} = {self.lit(lit)}")
                else:
                    out.append(f"{ind}let {t.var} : {self.ty(t.ty)} = {t.value}")
            else:
                raise TypeError(t)
            t = t.body

    def fundef(self, f: FunDef, ind: str, out: list[str]) -> None:
        ps = ", ".join(f"{n} : {self.ty(t)}" for n, t in f.params)
        res = ""
        if f.result is not None:
            res = " : (" + ", ".join(self.ty(t) for t in f.result) + ")"
        out.append(f"{ind}fun {f.name} ({ps}){res} {{")
        self.term(f.body, ind + "  ", out)
        out.append(f"{ind}}}")


def render_term(t: Term, indent: str = "") -> str:
    out: list[str] = []
    _Printer(prelude_typedefs().items()).term(t, indent, out)
    return "\n".join(out)


def render_fundef(f: FunDef, typedefs: Optional[Mapping[str, IRType]] = None) -> str:
    out: list[str] = []
    names = (typedefs if typedefs is not None else prelude_typedefs()).items()
    _Printer(names).fundef(f, "", out)
    return "\n".join(out)


def render_mbx(m: Union[ModuleInterface, MbiDocument], imported: Optional[Mapping[str, IRType]] = None) -> str:
    """Render a module as MBX text that ``parse_mbx`` reads back to the same module."""
    if isinstance(m, MbiDocument):
        m = m.module
    if imported is None:
        imported = prelude_typedefs()
    pr = _Printer(imported.items())
    out = [f"module {m.name} {{"]
    for name, t in m.typedefs:
        out.append(f"  typedef {name} = {pr.ty(t)}")
        pr.names.append((name, t))
    for tb in m.type_bindings:
        params = f"({', '.join(tb.params)})" if tb.params else ""
        if tb.rhs is None:
            out.append(f"  type {tb.name}{params}")
        elif isinstance(tb.rhs, str):
            out.append(f"  type {tb.name}{params} = {tb.rhs}")
        else:
            out.append(f"  type {tb.name}{params} = prim {pr.ty(tb.rhs)}")
    for e in m.externals:
        ps = ", ".join(pr.ty(p) for p in e.sig.params)
        out.append(f"  external {pr.ty(e.sig.result)} {e.cname} ({ps})")
    current: list[str] = []
    for fb in m.fun_bindings:
        *path, short = fb.name.split(".")
        while current and current != path[:len(current)]:
            current.pop()
            out.append("  " * (len(current) + 1) + "}")
        while len(current) < len(path):
            out.append("  " * (len(current) + 1) + f"module {path[len(current)]} {{")
            current.append(path[len(current)])
        ind = "  " * (len(current) + 1)
        out.append(f"{ind}val {short} : {fb.hl_type} =")
        pr.fundef(fb.fundef, ind + "  ", out)
    while current:
        current.pop()
        out.append("  " * (len(current) + 1) + "}")
    out.append("}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Prelude: the primitive string and integer representations.

_PRELUDE_TEMPLATE = """\
module prelude {{
  typedef char = enum(0,255)
  typedef string_data = ptr(vector(1, char))
  typedef string = ptr(struct {size}:{align} (0: int, {data}: string_data))
  type Int = prim int
  type Bool = prim int
  type String = prim string
  val length : String -> Int =
    fun len (s : string, _ : exn_handler) {{
      let n : int = s#0
      return n
    }}
}}
"""

_CACHE: dict[tuple, MbiDocument] = {}


def prelude_text(target: TargetConfig = DEFAULT_TARGET) -> str:
    w = target.word_bytes
    data = max(4, w)
    return _PRELUDE_TEMPLATE.format(size=data + w, align=w, data=data)


def prelude(target: TargetConfig = DEFAULT_TARGET) -> MbiDocument:
    key = ("prelude", target)
    if key not in _CACHE:
        _CACHE[key] = parse_mbx(prelude_text(target), "<prelude>", typedefs={}, target=target)
    return _CACHE[key]


def prelude_typedefs(target: TargetConfig = DEFAULT_TARGET) -> dict[str, IRType]:
    return prelude(target).module.typedef_map()


def asset_path(name: str) -> Path:
    return Path(__file__).with_name("assets") / name


def load_asset(name: str, target: TargetConfig = DEFAULT_TARGET) -> MbiDocument:
    """Parse a bundled MBX asset against the prelude."""
    key = (name, target)
    if key not in _CACHE:
        path = asset_path(name)
        _CACHE[key] = parse_mbx(path.read_text(encoding="utf-8"), name, target=target)
    return _CACHE[key]
