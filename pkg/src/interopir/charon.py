"""C-header embedding generator: phantom types, field accessors, sizeOf and
thin extern wrappers, plus the generic C-interface library module.

At the IR level every C location or pointer is an untyped address; the
high-level interface text carries the phantom-type discipline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .ctext import CCursor, CToken, read_scalar
from .diagnostics import ParseError, SourceSpan, error
from .ir import (
    ADDR,
    DEFAULT_TARGET,
    EXN,
    LVALUE,
    VOID,
    External,
    FunBinding,
    FunDef,
    IRType,
    LetCCall,
    LetLit,
    LetPrim,
    Lit,
    ModuleInterface,
    PrimOp,
    Return,
    StructParam,
    TargetConfig,
    TypeBinding,
    Void,
)
from .layout import (
    CChar,
    CInt,
    CLong,
    CNamed,
    CPtrTo,
    CShort,
    CStructDef,
    CType,
    CVoid,
    CFunType,
    LayoutError,
    cfun_signature,
    layout_of,
)
from .mbx import MbiDocument, normalize, normalize_document, parse_mbx


@dataclass(frozen=True)
class HStruct:
    tag: str
    fields: tuple[tuple[str, CType], ...]
    span: Optional[SourceSpan] = None

    def ctype(self) -> CStructDef:
        return CStructDef(self.tag, self.fields)


@dataclass(frozen=True)
class HTypedef:
    name: str
    ctype: CType
    span: Optional[SourceSpan] = None


@dataclass(frozen=True)
class HExtern:
    name: str
    result: CType
    params: tuple[tuple[Optional[str], CType], ...]
    span: Optional[SourceSpan] = None


@dataclass
class HeaderUnit:
    structs: list[HStruct] = field(default_factory=list)
    typedefs: list[HTypedef] = field(default_factory=list)
    externs: list[HExtern] = field(default_factory=list)

    def ctypes(self) -> dict[str, CType]:
        """Name environment for the layout functions: ``struct T`` and typedef names."""
        out: dict[str, CType] = {f"struct {s.tag}": s.ctype() for s in self.structs}
        for t in self.typedefs:
            out[t.name] = t.ctype
        return out

    def struct(self, tag: str) -> Optional[HStruct]:
        for s in self.structs:
            if s.tag == tag:
                return s
        return None


# ---------------------------------------------------------------------------
# Header parsing

_UNSUPPORTED_WORDS = {"const", "volatile", "union", "enum", "static", "inline", "register", "restrict"}


class _HeaderParser:
    def __init__(self, text: str, file: str):
        self.c = CCursor(text, file)
        self.unit = HeaderUnit()
        self.uses: list[tuple[str, SourceSpan]] = []
        self._anon = 0

    def unsupported(self, what: str, tok: Optional[CToken] = None) -> ParseError:
        return self.c.fail(f"unsupported construct: {what}", tok)

    def check_word(self) -> None:
        if self.c.tok.text in _UNSUPPORTED_WORDS:
            raise self.unsupported(self.c.tok.text)

    def base_type(self) -> CType:
        self.check_word()
        t = read_scalar(self.c)
        if t is not None:
            return t
        if self.c.accept("void"):
            return CVoid()
        if self.c.at("struct"):
            start = self.c.expect("struct")
            if self.c.at("{"):
                return self.struct_def("", start)
            tag = self.c.ident("struct tag")
            if self.c.at("{"):
                return self.struct_def(tag.text, start)
            self.uses.append((f"struct {tag.text}", tag.span))
            return CNamed(f"struct {tag.text}")
        tok = self.c.ident("type")
        self.uses.append((tok.text, tok.span))
        return CNamed(tok.text)

    def struct_def(self, tag: str, start: CToken) -> CType:
        self.c.expect("{")
        fields: list[tuple[str, CType]] = []
        while not self.c.accept("}"):
            base = self.base_type()
            while True:
                ft, name = self.declarator(base)
                fields.append((name.text, ft))
                if not self.c.accept(","):
                    break
            self.c.expect(";")
        if not fields:
            raise self.c.fail("struct has no fields", start)
        names = [n for n, _ in fields]
        if len(set(names)) != len(names):
            raise self.c.fail("duplicate field name", start)
        if not tag:
            self._anon += 1
            tag = f"anon{self._anon}"
        if self.unit.struct(tag) is not None:
            raise self.c.fail(f"struct {tag} defined twice", start)
        self.unit.structs.append(HStruct(tag, tuple(fields), start.span))
        return CNamed(f"struct {tag}")

    def declarator(self, base: CType) -> tuple[CType, CToken]:
        t = base
        while self.c.accept("*"):
            self.check_word()
            t = CPtrTo(t)
        if self.c.at("("):
            raise self.unsupported("function pointer")
        name = self.c.ident("declarator name")
        if self.c.at(":"):
            raise self.unsupported("bitfield")
        if self.c.at("["):
            raise self.unsupported("array declarator")
        return t, name

    def params(self) -> tuple[tuple[Optional[str], CType], ...]:
        self.c.expect("(")
        out: list[tuple[Optional[str], CType]] = []
        if self.c.at("void") and self.c.peek().text == ")":
            self.c.i += 1
        while not self.c.accept(")"):
            if self.c.at("..."):
                raise self.unsupported("varargs")
            t = self.base_type()
            while self.c.accept("*"):
                t = CPtrTo(t)
            name = None
            if self.c.tok.kind == "ident":
                name = self.c.ident().text
            if self.c.at("[") or self.c.at("("):
                raise self.unsupported("array or function parameter")
            out.append((name, t))
            if not self.c.at(")"):
                self.c.expect(",")
        return tuple(out)

    def decl(self) -> None:
        if self.c.accept("typedef"):
            base = self.base_type()
            while True:
                t, name = self.declarator(base)
                self.unit.typedefs.append(HTypedef(name.text, t, name.span))
                if not self.c.accept(","):
                    break
            self.c.expect(";")
            return
        self.c.accept("extern")
        base = self.base_type()
        if self.c.accept(";"):
            return  # a bare struct definition
        t, name = self.declarator(base)
        if not self.c.at("("):
            raise self.unsupported("global variable", name)
        ps = self.params()
        self.c.expect(";")
        self.unit.externs.append(HExtern(name.text, t, ps, name.span))

    def parse(self) -> HeaderUnit:
        while not self.c.at_eof():
            self.decl()
        self.check()
        return self.unit

    def check(self) -> None:
        diags = []
        env = self.unit.ctypes()
        seen: dict[str, SourceSpan] = {}
        for n, span in ([(f"struct {s.tag}", s.span) for s in self.unit.structs]
                        + [(t.name, t.span) for t in self.unit.typedefs]
                        + [(e.name, e.span) for e in self.unit.externs]):
            if n in seen:
                diags.append(error(f"{n} is declared twice", span))
            seen[n] = span
        for n, span in self.uses:
            if n not in env:
                diags.append(error(f"unknown type {n}", span))
        if not diags:
            for s in self.unit.structs:
                try:
                    _by_value_cycle(s.tag, env)
                except LayoutError as e:
                    diags.append(error(str(e), s.span))
        if diags:
            raise ParseError(diags)


def _by_value_cycle(tag: str, env: dict[str, CType], stack: tuple[str, ...] = ()) -> None:
    if tag in stack:
        raise LayoutError(f"struct {tag} contains itself by value")
    s = env[f"struct {tag}"]
    for _, ft in s.fields:
        while isinstance(ft, CNamed) and ft.name in env and not ft.name.startswith("struct "):
            ft = env[ft.name]
        if isinstance(ft, CNamed) and ft.name.startswith("struct "):
            _by_value_cycle(ft.name[7:], env, stack + (tag,))


def parse_header(text: str, file: str = "<input>") -> HeaderUnit:
    """Parse a (post-preprocessor) C header subset."""
    return _HeaderParser(text, file).parse()


# ---------------------------------------------------------------------------
# High-level interface text


def struct_type_name(tag: str) -> str:
    return f"Struct_{tag}"


def typedef_type_name(name: str) -> str:
    return f"Def_{name}"


def struct_module_name(tag: str) -> str:
    return f"S{tag}"


def wrapper_name(cname: str) -> str:
    return cname[:1].lower() + cname[1:]


def _scalar_name(t: CType) -> Optional[str]:
    sign = "S" if getattr(t, "signed", True) else "U"
    if isinstance(t, CChar):
        return f"{sign}Char"
    if isinstance(t, CShort):
        return f"{sign}Short"
    if isinstance(t, CInt):
        return f"{sign}Int"
    if isinstance(t, CLong):
        return f"{sign}Long"
    return None


def hl_ctype(t: CType) -> str:
    """The abstract high-level name for a C type (as stored in a location)."""
    s = _scalar_name(t)
    if s is not None:
        return s
    if isinstance(t, CNamed):
        if t.name.startswith("struct "):
            return struct_type_name(t.name[7:])
        return typedef_type_name(t.name)
    if isinstance(t, CPtrTo):
        return f"CPtr({hl_ctype(t.target)})"
    if isinstance(t, CVoid):
        return "Void"
    raise LayoutError(f"no high-level name for {t!r}")


def _resolve_named(t: CType, env: dict[str, CType]) -> CType:
    while isinstance(t, CNamed) and not t.name.startswith("struct ") and t.name in env:
        t = env[t.name]
    return t


def _hl_arg(t: CType, env) -> str:
    r = _resolve_named(t, env)
    if isinstance(r, (CChar, CShort, CInt, CLong)):
        return "Int"
    return hl_ctype(t)


def _hl_result(t: CType, env) -> str:
    r = _resolve_named(t, env)
    if isinstance(r, CVoid):
        return "()"
    if isinstance(r, (CChar, CShort, CInt, CLong)):
        return "Int"
    if isinstance(t, CNamed) and not t.name.startswith("struct "):
        return f"LValue({hl_ctype(t)})"
    return hl_ctype(t)


def _hl_params(ps: list[str]) -> str:
    if not ps:
        return "()"
    if len(ps) == 1:
        return ps[0]
    return "(" + ", ".join(ps) + ")"


def gen_interface(h: HeaderUnit) -> str:
    """The high-level interface the generated MBI implements."""
    env = h.ctypes()
    blocks: list[list[str]] = []
    types = [f"type {struct_type_name(s.tag)}" for s in h.structs]
    types += [f"type {typedef_type_name(t.name)} = {hl_ctype(t.ctype)}" for t in h.typedefs]
    if types:
        blocks.append(types)
    for s in h.structs:
        names = [n for n, _ in s.fields] + ["sizeOf"]
        width = max(len(n) for n in names)
        st = struct_type_name(s.tag)
        lines = [f"module {struct_module_name(s.tag)} {{"]
        for n, ft in s.fields:
            lines.append(f"  val {n.ljust(width)} : LValue({st}) -> LValue({hl_ctype(ft)})")
        lines.append(f"  val {'sizeOf'.ljust(width)} : () -> SizeOf({st})")
        lines.append("}")
        blocks.append(lines)
    vals = []
    for e in h.externs:
        ps = _hl_params([_hl_arg(t, env) for _, t in e.params])
        vals.append(f"val {wrapper_name(e.name)} : {ps} -> {_hl_result(e.result, env)}")
    if vals:
        blocks.append(vals)
    return "\n\n".join("\n".join(b) for b in blocks) + ("\n" if blocks else "")


# ---------------------------------------------------------------------------
# IR implementation


def _mbi_result(t: CType, env) -> str:
    r = _resolve_named(t, env)
    if isinstance(r, CVoid):
        return "()"
    if isinstance(r, (CChar, CShort, CInt, CLong)):
        return "Int"
    return hl_ctype(r)


def gen_impl(h: HeaderUnit, target: TargetConfig = DEFAULT_TARGET, module_name: str = "header") -> MbiDocument:
    """Implementation module: phantom types, accessors, sizeOf and wrappers."""
    env = h.ctypes()
    typedefs = []
    types = [TypeBinding(struct_type_name(s.tag), VOID) for s in h.structs]
    for t in h.typedefs:
        r = _resolve_named(t.ctype, env)
        name = typedef_type_name(t.name)
        if isinstance(r, CPtrTo):
            ir_name = f"def_{t.name}"
            typedefs.append((ir_name, ADDR))
            types.append(TypeBinding(name, ADDR))
        else:
            types.append(TypeBinding(name, hl_ctype(t.ctype)))
    funs: list[FunBinding] = []
    for s in h.structs:
        lay = layout_of(s.ctype(), target, env)
        st = struct_type_name(s.tag)
        mod = struct_module_name(s.tag)
        for (fname, off), (_, ft) in zip(lay.field_offsets, s.fields):
            if off == 0:
                body = Return(("p",))
            else:
                body = normalize(LetPrim("q", PrimOp.AdrAdd, ("p", Lit(off)), Return(("q",))))
            fd = FunDef("fld", (("p", LVALUE), ("_", EXN)), body)
            funs.append(FunBinding(f"{mod}.{fname}", f"LValue({st}) -> LValue({hl_ctype(ft)})", fd))
        fd = FunDef("sz", (("_", EXN),), LetLit("n", lay.size, Return(("n",))))
        funs.append(FunBinding(f"{mod}.sizeOf", f"() -> SizeOf({st})", fd))
    externs = []
    for e in h.externs:
        sig = cfun_signature(CFunType(tuple(t for _, t in e.params), e.result), target, env)
        externs.append(External(e.name, sig))
        names = []
        for i, (n, _) in enumerate(e.params):
            n = n or ("arg" if len(e.params) == 1 else f"arg{i + 1}")
            names.append(n)
        params = tuple(zip(names, (_repr(p) for p in sig.params)))
        if isinstance(sig.result, Void):
            body = LetCCall(None, e.name, tuple(names), Return(()))
        else:
            body = LetCCall("result", e.name, tuple(names), Return(("result",)), _repr(sig.result))
        fd = FunDef(wrapper_name(e.name), params + (("_", EXN),), body)
        hl = f"{_hl_params([_hl_arg(t, env) for _, t in e.params])} -> {_mbi_result(e.result, env)}"
        funs.append(FunBinding(wrapper_name(e.name), hl, fd))
    m = ModuleInterface(module_name, tuple(typedefs), tuple(types), tuple(funs), tuple(externs))
    return MbiDocument(m, target)


def _repr(t: IRType) -> IRType:
    # struct-by-value crosses as the address of the struct
    return ADDR if isinstance(t, StructParam) else t


# ---------------------------------------------------------------------------
# The generic C-interface library

_CINTERFACE = """\
module CInterface {{
  external addr(data) malloc (int)
  external void free (addr(data))
  val isNull : [t] CPtr(t) -> Bool =
    fun isNull (p : addr(data), _ : exn_handler) {{ let b = AdrEq(p, nil) return b }}
  val deref : [t] CPtr(t) -> LValue(t) =
    fun deref (p : addr(data), _ : exn_handler) {{ return p }}
  val getPtr : [t] LValue(CPtr(t)) -> CPtr(t) =
    fun getPtr (lv : lvalue, _ : exn_handler) {{ let p = AdrLoadAdr(lv) return p }}
  val setPtr : [t] (LValue(CPtr(t)), CPtr(t)) -> () =
    fun setPtr (lv : lvalue, p : addr(data), _ : exn_handler) {{ AdrStoreAdr(lv, p) return () }}
  val malloc : [t] SizeOf(t) -> CPtr(t) =
    fun malloc (n : int, _ : exn_handler) {{ let p = ccall malloc(n) return p }}
  val free : [t] CPtr(t) -> () =
    fun free (p : addr(data), _ : exn_handler) {{ ccall free(p) return () }}
  val getSInt : LValue(SInt) -> Int =
    fun getSInt (lv : lvalue, _ : exn_handler) {{ let x = AdrLoadI32(lv) return x }}
  val setSInt : (LValue(SInt), Int) -> () =
    fun setSInt (lv : lvalue, x : int, _ : exn_handler) {{ AdrStoreI32(lv, x) return () }}
  val sizeOfSInt : () -> SizeOf(SInt) =
    fun sz (_ : exn_handler) {{ let n = 4 return n }}
  val getUChar : LValue(UChar) -> Int =
    fun getUChar (lv : lvalue, _ : exn_handler) {{ let x = AdrLoadU8(lv) return x }}
  val setUChar : (LValue(UChar), Int) -> () =
    fun setUChar (lv : lvalue, x : int, _ : exn_handler) {{ AdrStoreU8(lv, x) return () }}
  val sizeOfUChar : () -> SizeOf(UChar) =
    fun sz (_ : exn_handler) {{ let n = 1 return n }}
  val getSChar : LValue(SChar) -> Int =
    fun getSChar (lv : lvalue, _ : exn_handler) {{
      let x = AdrLoadU8(lv)
      let c = I32Lt(x, 128)
      if c then return x
      else {{ let y = I32Sub(x, 256) return y }}
    }}
  val setSChar : (LValue(SChar), Int) -> () =
    fun setSChar (lv : lvalue, x : int, _ : exn_handler) {{ AdrStoreU8(lv, x) return () }}
  val sizeOfSChar : () -> SizeOf(SChar) =
    fun sz (_ : exn_handler) {{ let n = 1 return n }}
  val getSLong : LValue(SLong) -> Int =
    fun getSLong (lv : lvalue, _ : exn_handler) {{ let x = {long_load}(lv) return x }}
  val setSLong : (LValue(SLong), Int) -> () =
    fun setSLong (lv : lvalue, x : {long_ty}, _ : exn_handler) {{ {long_store}(lv, x) return () }}
  val sizeOfSLong : () -> SizeOf(SLong) =
    fun sz (_ : exn_handler) {{ let n = {word} return n }}
  val sizeOfPtr : [t] () -> SizeOf(CPtr(t)) =
    fun sz (_ : exn_handler) {{ let n = {word} return n }}
}}
"""


def c_interface_text(target: TargetConfig = DEFAULT_TARGET) -> str:
    wide = target.word_size_bits == 64
    return _CINTERFACE.format(
        long_load="AdrLoadI64" if wide else "AdrLoadI32",
        long_store="AdrStoreI64" if wide else "AdrStoreI32",
        long_ty="int64" if wide else "int",
        word=target.word_bytes,
    )


def c_interface_library(target: TargetConfig = DEFAULT_TARGET) -> MbiDocument:
    """The fixed C-interface library: pointer operations, malloc/free and
    per-scalar get/set/sizeOf."""
    return normalize_document(parse_mbx(c_interface_text(target), "<cinterface>", target=target))
