"""Annotated-IDL front end and copy-in/copy-out stub generator.

Supported subset: ``typedef [attrs] char *Name;``, ``typedef struct [tag]
{ scalar fields } name;`` and prototypes whose parameters carry direction
attributes (``in``, ``out``, ``ref``) and value attributes (``string``,
``unique``) over char*, int, long and struct typedefs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .ctext import CCursor, read_scalar
from .diagnostics import Diagnostic, ParseError, SourceSpan, error
from .ir import (
    ADDR,
    DEFAULT_TARGET,
    EXN,
    NIL,
    CFun,
    External,
    FunBinding,
    FunDef,
    If,
    IRType,
    LetAlloc,
    LetCCall,
    LetPrim,
    LetSelect,
    LetStackAlloc,
    Lit,
    ModuleInterface,
    PrimExpr,
    PrimOp,
    Return,
    TargetConfig,
    Term,
    TypeBinding,
    Void,
)
from .layout import (
    CChar,
    CInt,
    CLong,
    CNamed,
    CPtrTo,
    CStructDef,
    CType,
    CVoid,
    layout_of,
    promote_param,
    promote_result,
    resolve,
)
from .mbx import MbiDocument, normalize, prelude_typedefs

DIRECTIONS = frozenset({"in", "out", "ref"})
VALUE_ATTRS = frozenset({"string", "unique"})
ATTRIBUTES = DIRECTIONS | VALUE_ATTRS


@dataclass(frozen=True)
class IdlTypedef:
    name: str
    attrs: frozenset
    ctype: CType
    span: Optional[SourceSpan] = None

    @property
    def is_struct(self) -> bool:
        return isinstance(self.ctype, CStructDef)


@dataclass(frozen=True)
class IdlParam:
    name: str
    attrs: frozenset
    ctype: CType
    span: Optional[SourceSpan] = None

    @property
    def is_out(self) -> bool:
        return "out" in self.attrs


@dataclass(frozen=True)
class IdlFunction:
    name: str
    result: CType
    params: tuple[IdlParam, ...]
    span: Optional[SourceSpan] = None


IdlDecl = Union[IdlTypedef, IdlFunction]


class MarshalError(ParseError):
    pass


# ---------------------------------------------------------------------------
# Parsing


class _IdlParser:
    def __init__(self, text: str, file: str):
        self.c = CCursor(text, file)
        self.names: dict[str, IdlTypedef] = {}

    def attrs(self) -> frozenset:
        out = set()
        if not self.c.accept("["):
            return frozenset()
        while True:
            tok = self.c.ident("attribute")
            if tok.text not in ATTRIBUTES:
                self.c.diags.append(error(f"unknown attribute {tok.text}", tok.span))
            out.add(tok.text)
            if self.c.accept("]"):
                return frozenset(out)
            self.c.expect(",")

    def base_type(self) -> CType:
        t = read_scalar(self.c)
        if t is not None:
            return t
        if self.c.accept("void"):
            return CVoid()
        if self.c.at("struct"):
            return self.struct_body()
        tok = self.c.ident("type name")
        if tok.text not in self.names:
            self.c.diags.append(error(f"unknown type {tok.text}", tok.span))
        return CNamed(tok.text)

    def struct_body(self) -> CStructDef:
        start = self.c.expect("struct")
        tag = ""
        if self.c.tok.kind == "ident":
            tag = self.c.ident().text
        self.c.expect("{")
        fields = []
        while not self.c.accept("}"):
            ft = self.base_type()
            while self.c.accept("*"):
                ft = CPtrTo(ft)
            name = self.c.ident("field name")
            if self.c.at(":") or self.c.at("["):
                raise self.c.fail("unsupported construct in struct field", self.c.tok)
            fields.append((name.text, ft))
            self.c.expect(";")
        if not fields:
            raise self.c.fail("struct has no fields", start)
        return CStructDef(tag, tuple(fields))

    def declarator(self, base: CType) -> tuple[CType, str, SourceSpan]:
        t = base
        while self.c.accept("*"):
            t = CPtrTo(t)
        name = self.c.ident("name")
        return t, name.text, name.span

    def decl(self) -> IdlDecl:
        if self.c.accept("typedef"):
            attrs = self.attrs()
            base = self.base_type()
            t, name, span = self.declarator(base)
            if isinstance(t, CStructDef) and not t.tag:
                t = CStructDef(name, t.fields)
            self.c.expect(";")
            td = IdlTypedef(name, attrs, t, span)
            self.names[name] = td
            return td
        start = self.c.tok
        res = self.base_type()
        rt, name, span = self.declarator(res)
        self.c.expect("(")
        params = []
        if self.c.at("void") and self.c.peek().text == ")":
            self.c.i += 1
        while not self.c.accept(")"):
            if self.c.at("..."):
                raise self.c.fail("unsupported construct: varargs")
            a = self.attrs()
            pt, pname, pspan = self.declarator(self.base_type())
            params.append(IdlParam(pname, a, pt, pspan))
            if not self.c.at(")"):
                self.c.expect(",")
        self.c.expect(";")
        return IdlFunction(name, rt, tuple(params), span or start.span)

    def parse(self) -> list[IdlDecl]:
        out = []
        while not self.c.at_eof():
            out.append(self.decl())
        return out


def parse_idl(text: str, file: str = "<input>") -> list[IdlDecl]:
    """Parse IDL text.  Raises ``ParseError`` carrying every diagnostic."""
    p = _IdlParser(text, file)
    decls = p.parse()
    diags = p.c.diags + validate(decls)
    if diags:
        raise ParseError(diags)
    return decls


def _typedefs(decls: list[IdlDecl]) -> dict[str, IdlTypedef]:
    return {d.name: d for d in decls if isinstance(d, IdlTypedef)}


def _ctypes(decls: list[IdlDecl]) -> dict[str, CType]:
    return {d.name: d.ctype for d in decls if isinstance(d, IdlTypedef)}


def _is_pointer(t: CType, decls) -> bool:
    try:
        return isinstance(resolve(t, _ctypes(decls)), CPtrTo)
    except Exception:
        return False


def validate(decls: list[IdlDecl]) -> list[Diagnostic]:
    out = []
    for d in decls:
        if isinstance(d, IdlTypedef):
            bad = d.attrs & DIRECTIONS
            if bad - {"ref"}:
                out.append(error(f"typedef {d.name}: direction attribute on a type", d.span))
            continue
        for p in d.params:
            dirs = p.attrs & DIRECTIONS
            if not dirs:
                out.append(error(f"parameter {p.name} has no direction attribute", p.span))
            if {"in", "out"} <= dirs:
                out.append(error(f"parameter {p.name}: combined in/out direction is unsupported", p.span))
            if "out" in dirs and not _is_pointer(p.ctype, decls):
                out.append(error(f"out-parameter {p.name} is not a pointer", p.span))
    return out


# ---------------------------------------------------------------------------
# Type mapping


def _value_attrs(t: CType, attrs: frozenset, tds: dict[str, IdlTypedef]) -> tuple[CType, frozenset]:
    """Follow typedef names, accumulating their attributes."""
    attrs = set(attrs)
    seen = set()
    while isinstance(t, CNamed) and t.name in tds and t.name not in seen:
        seen.add(t.name)
        td = tds[t.name]
        attrs |= td.attrs
        if isinstance(td.ctype, CStructDef):
            return t, frozenset(attrs)
        t = td.ctype
    return t, frozenset(attrs)


def _is_char_ptr(t: CType) -> bool:
    return isinstance(t, CPtrTo) and isinstance(t.target, CChar)


def _struct_of(t: CType, tds: dict[str, IdlTypedef]) -> Optional[IdlTypedef]:
    if isinstance(t, CNamed) and t.name in tds and tds[t.name].is_struct:
        return tds[t.name]
    return None


def datatype_name(name: str) -> str:
    return name[:1].upper() + name[1:]


def _hl_scalar(t: CType) -> Optional[str]:
    if isinstance(t, (CInt, CLong, CChar)):
        return "Int"
    return None


def _hl_value(t: CType, attrs: frozenset, tds, where: str, span) -> str:
    """High-level type of a value crossing the boundary by copy."""
    t, attrs = _value_attrs(t, attrs, tds)
    if "string" in attrs:
        if not _is_char_ptr(t):
            raise MarshalError([error(f"{where}: string attribute on a non-char* type", span)])
        return "Option(String)" if "unique" in attrs else "String"
    s = _hl_scalar(t)
    if s is not None:
        return s
    st = _struct_of(t, tds)
    if st is not None:
        return datatype_name(st.name)
    raise MarshalError([error(f"{where}: unsupported type for marshaling", span)])


def _tuple(items: list[str]) -> str:
    if len(items) == 1:
        return items[0]
    return "(" + ", ".join(items) + ")"


def _struct_fields(td: IdlTypedef, tds) -> list[str]:
    out = []
    for fname, ft in td.ctype.fields:
        s = _hl_scalar(resolve(ft, {k: v.ctype for k, v in tds.items()}) if isinstance(ft, CNamed) else ft)
        if s is None:
            raise MarshalError([error(f"struct {td.name}: field {fname} has an unsupported type for marshaling",
                                      td.span)])
        out.append(s)
    return out


def _fun_signature(f: IdlFunction, tds) -> str:
    ins = []
    outs = []
    if not isinstance(f.result, CVoid):
        outs.append(_hl_value(f.result, frozenset(), tds, f"{f.name} result", f.span))
    for p in f.params:
        if p.is_out:
            assert isinstance(p.ctype, CPtrTo)
            outs.append(_hl_value(p.ctype.target, frozenset(), tds, f"parameter {p.name}", p.span))
        else:
            ins.append(_hl_value(p.ctype, p.attrs, tds, f"parameter {p.name}", p.span))
    params = _tuple(ins) if ins else "()"
    result = _tuple(outs) if outs else "()"
    return f"{params} -> {result}"


def gen_signature(decls: list[IdlDecl]) -> str:
    """The high-level interface text for the declarations."""
    tds = _typedefs(decls)
    lines = []
    for d in decls:
        if isinstance(d, IdlTypedef) and d.is_struct:
            fields = _struct_fields(d, tds)
            lines.append(f"datatype {datatype_name(d.name)} {{ {d.name.upper()} of {_tuple(fields) if len(fields) > 1 else fields[0]} }}")
    for d in decls:
        if isinstance(d, IdlFunction):
            lines.append(f"val {d.name} : {_fun_signature(d, tds)}")
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Stub generation


_LOADS = {1: PrimOp.AdrLoadU8, 4: PrimOp.AdrLoadI32, 8: PrimOp.AdrLoadI64}


def _load(addr, off: int, size: int, span):
    op = _LOADS.get(size)
    if op is None:
        raise MarshalError([error(f"no {size}-byte load for marshaling", span)])
    src = addr if off == 0 else PrimExpr(PrimOp.AdrAdd, (addr, Lit(off)))
    return PrimExpr(op, (src,))


def _ir_param(t: CType, attrs: frozenset, tds, target: TargetConfig) -> IRType:
    t, attrs = _value_attrs(t, attrs, tds)
    if "string" in attrs:
        return prelude_typedefs(target)["string"]
    return promote_param(t, target, {k: v.ctype for k, v in tds.items()})


def gen_stub(f: IdlFunction, decls: list[IdlDecl], target: TargetConfig = DEFAULT_TARGET) -> tuple[FunBinding, External]:
    tds = _typedefs(decls)
    ctypes = _ctypes(decls)
    sig = _fun_signature(f, tds)
    # C-side signature: pointers and promoted scalars
    cparams = tuple(promote_param(p.ctype, target, ctypes) for p in f.params)
    cres = promote_result(f.result, target, ctypes)
    ext = External(f.name, CFun(cparams, cres))

    params: list[tuple[str, IRType]] = []
    pre: list = []      # binders before the call, as (kind, data)
    cargs: list[str] = []
    post: list = []
    results: list[str] = []

    for p in f.params:
        if p.is_out:
            pointee = p.ctype.target
            lay = layout_of(pointee, target, ctypes)
            pre.append(("stack", p.name, lay.size, lay.align))
            cargs.append(p.name)
            st = _struct_of(pointee, tds)
            if st is not None:
                loads = []
                for (fname, off), (_, ft) in zip(lay.field_offsets, st.ctype.fields):
                    loads.append(_load(p.name, off, layout_of(ft, target, ctypes).size, p.span))
                post.append(("alloc", f"{p.name}2", loads))
                results.append(f"{p.name}2")
            else:
                _hl_value(pointee, frozenset(), tds, f"parameter {p.name}", p.span)
                post.append(("load", f"{p.name}2", _load(p.name, 0, lay.size, p.span)))
                results.append(f"{p.name}2")
        else:
            ptype = _ir_param(p.ctype, p.attrs, tds, target)
            params.append((p.name, ptype))
            _, attrs = _value_attrs(p.ctype, p.attrs, tds)
            if "string" in attrs:
                pre.append(("data", f"c_{p.name}", p.name))
                cargs.append(f"c_{p.name}")
            else:
                _hl_value(p.ctype, p.attrs, tds, f"parameter {p.name}", p.span)
                cargs.append(p.name)
    params.append(("_", EXN))

    rt, rattrs = _value_attrs(f.result, frozenset(), tds)
    void = isinstance(cres, Void)
    if not void:
        _hl_value(f.result, frozenset(), tds, f"{f.name} result", f.span)
    string_res = "string" in rattrs
    cvar = None if void else ("c_res" if string_res else "res")

    def tail() -> Term:
        t: Term = Return(tuple(results))
        for kind, var, data in reversed(post):
            if kind == "alloc":
                t = LetAlloc(var, tuple(data), t)
            else:
                t = _bind_expr(var, data, t)
        return t

    if not void:
        results.insert(0, "res")
    if string_res and "unique" in rattrs:
        if post:
            raise MarshalError([error(f"{f.name}: a unique string result with out-parameters is unsupported",
                                      f.span)])
        some: Term = LetCCall("res_str", "MOBY_AllocCString", ("c_res",),
                              LetAlloc("res", ("res_str",), tail()))
        body_after: Term = If(PrimExpr(PrimOp.AdrEq, ("c_res", NIL)), Return((Lit(0),)), some)
    elif string_res:
        body_after = LetCCall("res", "MOBY_AllocCString", ("c_res",), tail())
    else:
        body_after = tail()

    t = LetCCall(cvar, f.name, tuple(cargs), body_after)
    for item in reversed(pre):
        if item[0] == "stack":
            _, var, size, align = item
            t = LetStackAlloc(var, size, align, t)
        else:
            _, var, src = item
            t = LetSelect(var, src, 1, t)
    fd = FunDef(f.name, tuple(params), normalize(t))
    return FunBinding(f.name, sig, fd), ext


def _bind_expr(var: str, expr: PrimExpr, body: Term) -> Term:
    return LetPrim(var, expr.op, expr.args, body)


def gen_stubs(decls: list[IdlDecl], target: TargetConfig = DEFAULT_TARGET, module_name: str = "stubs") -> MbiDocument:
    """An MBI document with one stub and one external per prototype."""
    tds = _typedefs(decls)
    types = []
    for d in decls:
        if isinstance(d, IdlTypedef) and d.is_struct:
            fields = _struct_fields(d, tds)
            rhs = f"{d.name.upper()} of {_tuple(fields) if len(fields) > 1 else fields[0]}"
            types.append(TypeBinding(datatype_name(d.name), rhs))
    funs = []
    exts = []
    need_alloc = False
    for d in decls:
        if isinstance(d, IdlFunction):
            fb, ext = gen_stub(d, decls, target)
            funs.append(fb)
            exts.append(ext)
            if "MOBY_AllocCString" in _ccallees(fb.fundef.body):
                need_alloc = True
    if need_alloc:
        exts.append(External("MOBY_AllocCString", CFun((ADDR,), ADDR)))
    m = ModuleInterface(module_name, (), tuple(types), tuple(funs), tuple(exts))
    return MbiDocument(m, target)


def _ccallees(t: Term) -> set[str]:
    out = set()
    stack = [t]
    while stack:
        t = stack.pop()
        if isinstance(t, LetCCall):
            out.add(t.callee)
        if isinstance(t, If):
            stack.extend((t.then, t.orelse))
        elif not isinstance(t, Return):
            stack.append(t.body)
    return out
