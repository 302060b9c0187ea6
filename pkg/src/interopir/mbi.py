"""Binary module interface (MBI) files.

Layout (all integers big-endian)::

    "MBI1" | version u16 | word bits u8 | endianness u8 (0 little, 1 big)
    | default int bits u8 | payload length u32 | payload | crc32 u32

The payload is a canonical UTF-8 s-expression rendering of the module
interface.  The checksum covers every preceding byte.
"""

from __future__ import annotations

import json
import re
import struct
import zlib
from typing import Any, Union

from .diagnostics import FormatError
from .ir import (
    AddrData,
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
)
from .mbx import MBI_VERSION, MbiDocument

MAGIC = b"MBI1"
_HEADER = struct.Struct(">HBBBI")


class Sym(str):
    """A bare s-expression symbol (as opposed to a quoted string)."""


# ---------------------------------------------------------------------------
# s-expressions


def dump_sexpr(x: Any) -> str:
    if isinstance(x, Sym):
        return str(x)
    if isinstance(x, bool):
        raise TypeError("booleans are not encoded")
    if isinstance(x, int):
        return str(x)
    if isinstance(x, str):
        return json.dumps(x, ensure_ascii=False)
    if isinstance(x, (list, tuple)):
        return "(" + " ".join(dump_sexpr(y) for y in x) + ")"
    raise TypeError(f"cannot encode {x!r}")


_SEXPR_TOKEN = re.compile(r'\s*(?:(\()|(\))|("(?:[^"\\]|\\.)*")|(-?\d+)|([^\s()"]+))')


def load_sexpr(text: str) -> Any:
    stack: list[list] = [[]]
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _SEXPR_TOKEN.match(text, pos)
        if m is None:
            raise FormatError(f"malformed payload at offset {pos}")
        pos = m.end()
        lp, rp, s, n, sym = m.groups()
        if lp:
            stack.append([])
        elif rp:
            if len(stack) == 1:
                raise FormatError("unbalanced ')' in payload")
            done = stack.pop()
            stack[-1].append(done)
        elif s is not None:
            stack[-1].append(json.loads(s))
        elif n is not None:
            stack[-1].append(int(n))
        else:
            stack[-1].append(Sym(sym))
    if len(stack) != 1 or len(stack[0]) != 1:
        raise FormatError("payload is not a single s-expression")
    return stack[0][0]


# ---------------------------------------------------------------------------
# Encoding


def enc_type(t: IRType) -> list:
    if isinstance(t, EnumRange):
        return [Sym("enum"), t.lo, t.hi]
    if isinstance(t, IntN):
        return [Sym("int"), t.bits]
    if isinstance(t, AddrData):
        return [Sym("addr")]
    if isinstance(t, Ptr):
        return [Sym("ptr"), enc_type(t.target)]
    if isinstance(t, Vector):
        return [Sym("vector"), Sym("?") if t.count is None else t.count, enc_type(t.element)]
    if isinstance(t, StructLayout):
        return [Sym("struct"), t.size, t.align, [[o, enc_type(f)] for o, f in t.fields]]
    if isinstance(t, CFun):
        return [Sym("cfun"), [enc_type(p) for p in t.params], enc_type(t.result)]
    if isinstance(t, StructParam):
        return [Sym("sparam"), enc_type(t.layout)]
    if isinstance(t, Void):
        return [Sym("void")]
    if isinstance(t, ExnHandler):
        return [Sym("exn")]
    raise TypeError(f"not an IR type: {t!r}")


def _opt_type(t):
    return [] if t is None else [enc_type(t)]


def enc_arg(a) -> Any:
    if isinstance(a, str):
        return a
    if isinstance(a, Lit):
        return [Sym("lit"), a.value, enc_type(a.ty)]
    if isinstance(a, PrimExpr):
        return [Sym("prim"), Sym(a.op.value), [enc_arg(x) for x in a.args]]
    if isinstance(a, SelectExpr):
        return [Sym("select"), enc_arg(a.src), a.index]
    if isinstance(a, CallExpr):
        return [Sym("call"), a.fn, [enc_arg(x) for x in a.args]]
    raise TypeError(f"not an argument: {a!r}")


def _opt_var(v):
    return [] if v is None else [v]


def enc_term(t: Term) -> list:
    binds = []
    while True:
        if isinstance(t, Return):
            end = [Sym("return"), [enc_arg(a) for a in t.args]]
            break
        if isinstance(t, If):
            end = [Sym("if"), enc_arg(t.cond), enc_term(t.then), enc_term(t.orelse)]
            break
        if isinstance(t, LetPrim):
            b = [Sym("letprim"), _opt_var(t.var), Sym(t.op.value), [enc_arg(a) for a in t.args], _opt_type(t.ty)]
        elif isinstance(t, LetAlloc):
            b = [Sym("alloc"), t.var, [enc_arg(a) for a in t.args], _opt_type(t.ty)]
        elif isinstance(t, LetSelect):
            b = [Sym("select"), t.var, enc_arg(t.src), t.index, _opt_type(t.ty)]
        elif isinstance(t, LetCCall):
            b = [Sym("ccall"), _opt_var(t.var), t.callee, [enc_arg(a) for a in t.args], _opt_type(t.ty)]
        elif isinstance(t, LetCall):
            b = [Sym("call"), list(t.vars), t.fn, [enc_arg(a) for a in t.args]]
        elif isinstance(t, LetStackAlloc):
            b = [Sym("stackalloc"), t.var, t.size, t.align]
        elif isinstance(t, LetLit):
            b = [Sym("lit"), t.var, t.value, enc_type(t.ty)]
        else:
            raise TypeError(f"not a term: {t!r}")
        binds.append(b)
        t = t.body
    return [Sym("block"), binds, end]


def enc_fundef(f: FunDef) -> list:
    res = [] if f.result is None else [[enc_type(t) for t in f.result]]
    return [Sym("fun"), f.name, [[n, enc_type(t)] for n, t in f.params], res, enc_term(f.body)]


def enc_module(m: ModuleInterface) -> list:
    types = []
    for tb in m.type_bindings:
        if tb.rhs is None:
            rhs: Any = [Sym("abstract")]
        elif isinstance(tb.rhs, str):
            rhs = [Sym("alias"), tb.rhs]
        else:
            rhs = [Sym("prim"), enc_type(tb.rhs)]
        types.append([tb.name, list(tb.params), rhs])
    return [
        Sym("module"),
        m.name,
        [Sym("typedefs")] + [[n, enc_type(t)] for n, t in m.typedefs],
        [Sym("types")] + types,
        [Sym("externals")] + [[e.cname, enc_type(e.sig)] for e in m.externals],
        [Sym("vals")] + [[b.name, b.hl_type, enc_fundef(b.fundef)] for b in m.fun_bindings],
    ]


# ---------------------------------------------------------------------------
# Decoding


def _tag(x) -> str:
    if not isinstance(x, list) or not x or not isinstance(x[0], Sym):
        raise FormatError(f"malformed node {x!r}")
    return str(x[0])


def dec_type(x) -> IRType:
    tag = _tag(x)
    if tag == "enum":
        return EnumRange(x[1], x[2])
    if tag == "int":
        return IntN(x[1])
    if tag == "addr":
        return AddrData()
    if tag == "ptr":
        return Ptr(dec_type(x[1]))
    if tag == "vector":
        return Vector(None if x[1] == "?" else x[1], dec_type(x[2]))
    if tag == "struct":
        return StructLayout(x[1], x[2], tuple((o, dec_type(f)) for o, f in x[3]))
    if tag == "cfun":
        return CFun(tuple(dec_type(p) for p in x[1]), dec_type(x[2]))
    if tag == "sparam":
        return StructParam(dec_type(x[1]))
    if tag == "void":
        return Void()
    if tag == "exn":
        return ExnHandler()
    raise FormatError(f"unknown type tag {tag}")


def _dec_opt_type(x):
    return dec_type(x[0]) if x else None


def dec_arg(x):
    if isinstance(x, str) and not isinstance(x, Sym):
        return x
    tag = _tag(x)
    if tag == "lit":
        return Lit(x[1], dec_type(x[2]))
    if tag == "prim":
        return PrimExpr(PrimOp(x[1]), tuple(dec_arg(a) for a in x[2]))
    if tag == "select":
        return SelectExpr(dec_arg(x[1]), x[2])
    if tag == "call":
        return CallExpr(x[1], tuple(dec_arg(a) for a in x[2]))
    raise FormatError(f"unknown argument tag {tag}")


def dec_term(x) -> Term:
    if _tag(x) != "block":
        raise FormatError("expected a term block")
    _, binds, end = x
    etag = _tag(end)
    if etag == "return":
        t: Term = Return(tuple(dec_arg(a) for a in end[1]))
    elif etag == "if":
        t = If(dec_arg(end[1]), dec_term(end[2]), dec_term(end[3]))
    else:
        raise FormatError(f"unknown terminal {etag}")
    for b in reversed(binds):
        tag = _tag(b)
        if tag == "letprim":
            t = LetPrim(b[1][0] if b[1] else None, PrimOp(b[2]), tuple(dec_arg(a) for a in b[3]), t,
                        _dec_opt_type(b[4]))
        elif tag == "alloc":
            t = LetAlloc(b[1], tuple(dec_arg(a) for a in b[2]), t, _dec_opt_type(b[3]))
        elif tag == "select":
            t = LetSelect(b[1], dec_arg(b[2]), b[3], t, _dec_opt_type(b[4]))
        elif tag == "ccall":
            t = LetCCall(b[1][0] if b[1] else None, b[2], tuple(dec_arg(a) for a in b[3]), t,
                         _dec_opt_type(b[4]))
        elif tag == "call":
            t = LetCall(tuple(b[1]), b[2], tuple(dec_arg(a) for a in b[3]), t)
        elif tag == "stackalloc":
            t = LetStackAlloc(b[1], b[2], b[3], t)
        elif tag == "lit":
            t = LetLit(b[1], b[2], t, dec_type(b[3]))
        else:
            raise FormatError(f"unknown binding tag {tag}")
    return t


def dec_fundef(x) -> FunDef:
    if _tag(x) != "fun":
        raise FormatError("expected a function")
    result = tuple(dec_type(t) for t in x[3][0]) if x[3] else None
    params = tuple((n, dec_type(t)) for n, t in x[2])
    return FunDef(x[1], params, dec_term(x[4]), result)


def dec_module(x) -> ModuleInterface:
    if _tag(x) != "module":
        raise FormatError("expected a module")
    _, name, tds, tys, exts, vals = x
    typedefs = tuple((n, dec_type(t)) for n, t in tds[1:])
    types = []
    for n, params, rhs in tys[1:]:
        tag = _tag(rhs)
        r: Union[IRType, str, None]
        if tag == "abstract":
            r = None
        elif tag == "alias":
            r = rhs[1]
        else:
            r = dec_type(rhs[1])
        types.append(TypeBinding(n, r, tuple(params)))
    externals = []
    for n, sig in exts[1:]:
        s = dec_type(sig)
        if not isinstance(s, CFun):
            raise FormatError(f"external {n} is not a C function type")
        externals.append(External(n, s))
    funs = tuple(FunBinding(n, hl, dec_fundef(f)) for n, hl, f in vals[1:])
    return ModuleInterface(name, typedefs, tuple(types), funs, tuple(externals))


# ---------------------------------------------------------------------------
# Container


def serialize_mbi(doc: MbiDocument) -> bytes:
    payload = dump_sexpr(enc_module(doc.module)).encode("utf-8")
    t = doc.target
    header = MAGIC + _HEADER.pack(doc.version, t.word_size_bits, 0 if t.endianness == "little" else 1,
                                  t.default_int_bits, len(payload))
    body = header + payload
    return body + struct.pack(">I", zlib.crc32(body))


def parse_mbi(data: bytes) -> MbiDocument:
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError("not an MBI file")
    hsize = 4 + _HEADER.size
    if len(data) < hsize + 4:
        raise FormatError("truncated MBI header")
    # The trailing checksum covers every preceding byte, so verify it before
    # trusting any header field.
    (crc,) = struct.unpack_from(">I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise FormatError("MBI checksum mismatch")
    version, word, endian, int_bits, n = _HEADER.unpack_from(data, 4)
    if version != MBI_VERSION:
        raise FormatError(f"unsupported MBI version {version} (expected {MBI_VERSION})")
    if len(data) != hsize + n + 4:
        raise FormatError("MBI payload length does not match file size")
    try:
        target = TargetConfig(word, "little" if endian == 0 else "big", int_bits)
    except ValueError as e:
        raise FormatError(f"bad target header: {e}") from None
    try:
        text = data[hsize:hsize + n].decode("utf-8")
        module = dec_module(load_sexpr(text))
    except FormatError:
        raise
    except (ValueError, TypeError, IndexError, KeyError) as e:
        raise FormatError(f"malformed MBI payload: {e}") from None
    return MbiDocument(module, target, version)
