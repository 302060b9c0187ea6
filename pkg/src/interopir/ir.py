"""Core IR: target configuration, kinded types, primitive ops and ANF terms.

Every other module in the package consumes the definitions here.  All values
are immutable; terms are frozen dataclasses compared structurally (source
spans are excluded from equality).
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Union

from .diagnostics import SourceSpan


# ---------------------------------------------------------------------------
# Target configuration


@dataclass(frozen=True)
class TargetConfig:
    word_size_bits: int = 32
    endianness: str = "little"
    default_int_bits: int = 32

    def __post_init__(self) -> None:
        if self.word_size_bits not in (32, 64):
            raise ValueError(f"word size must be 32 or 64, not {self.word_size_bits}")
        if self.endianness not in ("little", "big"):
            raise ValueError(f"endianness must be 'little' or 'big', not {self.endianness!r}")
        if self.default_int_bits != 32:
            raise ValueError("default int width is fixed at 32 bits")

    @property
    def word_bytes(self) -> int:
        return self.word_size_bits // 8


DEFAULT_TARGET = TargetConfig()
TARGET64 = TargetConfig(word_size_bits=64)


# ---------------------------------------------------------------------------
# Types


class IRType:
    __slots__ = ()


@dataclass(frozen=True)
class EnumRange(IRType):
    lo: int
    hi: int


@dataclass(frozen=True)
class IntN(IRType):
    bits: int


@dataclass(frozen=True)
class AddrData(IRType):
    """Untyped address; the IR counterpart of ``void*``."""


@dataclass(frozen=True)
class Ptr(IRType):
    target: IRType


@dataclass(frozen=True)
class Vector(IRType):
    count: Optional[int]  # None: unknown length, legal only under Ptr
    element: IRType


@dataclass(frozen=True)
class StructLayout(IRType):
    size: int
    align: int
    fields: tuple[tuple[int, IRType], ...]


@dataclass(frozen=True)
class CFun(IRType):
    params: tuple[IRType, ...]
    result: IRType


@dataclass(frozen=True)
class StructParam(IRType):
    layout: StructLayout


@dataclass(frozen=True)
class Void(IRType):
    pass


@dataclass(frozen=True)
class ExnHandler(IRType):
    """Opaque exception-handler continuation; threaded through, never invoked."""


INT8 = IntN(8)
INT16 = IntN(16)
INT32 = IntN(32)
INT64 = IntN(64)
ADDR = AddrData()
LVALUE = ADDR  # assignable C locations are plain addresses
VOID = Void()
EXN = ExnHandler()
LValueRep = AddrData


class Kind(enum.IntEnum):
    WORD = 0
    VAR = 1
    MEMORY = 2

    def __str__(self) -> str:
        return self.name.lower()


def _enum_bytes(t: EnumRange) -> int:
    for n in (1, 2, 4, 8):
        bits = 8 * n
        if 0 <= t.lo and t.hi < (1 << bits):
            return n
        if -(1 << (bits - 1)) <= t.lo and t.hi < (1 << (bits - 1)):
            return n
    return 8


def kind_of(t: IRType, target: TargetConfig = DEFAULT_TARGET) -> Kind:
    """Least kind of a well-formed type on ``target``."""
    if isinstance(t, EnumRange):
        return Kind.WORD if _enum_bytes(t) * 8 <= target.word_size_bits else Kind.VAR
    if isinstance(t, IntN):
        return Kind.WORD if t.bits <= target.word_size_bits else Kind.VAR
    if isinstance(t, (AddrData, Ptr, CFun, ExnHandler)):
        return Kind.WORD
    return Kind.MEMORY


def kind_accepts(required: Kind, t: IRType, target: TargetConfig = DEFAULT_TARGET) -> bool:
    return kind_of(t, target) <= required


def byte_size(t: IRType, target: TargetConfig = DEFAULT_TARGET) -> int:
    if isinstance(t, EnumRange):
        return _enum_bytes(t)
    if isinstance(t, IntN):
        return t.bits // 8
    if isinstance(t, (AddrData, Ptr, CFun, ExnHandler)):
        return target.word_bytes
    if isinstance(t, Vector):
        if t.count is None:
            raise ValueError("unknown-length vector has no size")
        return t.count * byte_size(t.element, target)
    if isinstance(t, StructLayout):
        return t.size
    if isinstance(t, StructParam):
        return t.layout.size
    if isinstance(t, Void):
        return 0
    raise TypeError(f"not an IR type: {t!r}")


def alignment(t: IRType, target: TargetConfig = DEFAULT_TARGET) -> int:
    if isinstance(t, Vector):
        return alignment(t.element, target)
    if isinstance(t, StructLayout):
        return t.align
    if isinstance(t, StructParam):
        return t.layout.align
    if isinstance(t, Void):
        return 1
    return byte_size(t, target)


def is_address(t: IRType) -> bool:
    return isinstance(t, (AddrData, Ptr))


def is_integer(t: IRType) -> bool:
    return isinstance(t, (IntN, EnumRange))


def _pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def well_formed(t: IRType, target: TargetConfig = DEFAULT_TARGET) -> list[str]:
    """Return the list of invariant violations in ``t`` (empty when well formed)."""
    out: list[str] = []
    _wf(t, target, False, out)
    return out


def _wf(t: IRType, target: TargetConfig, under_ptr: bool, out: list[str]) -> None:
    if isinstance(t, EnumRange):
        if t.lo > t.hi:
            out.append(f"lo > hi in {show_type(t)}")
    elif isinstance(t, IntN):
        if t.bits not in (8, 16, 32, 64):
            out.append(f"unsupported integer width {t.bits}")
    elif isinstance(t, Ptr):
        _wf(t.target, target, True, out)
    elif isinstance(t, Vector):
        if t.count is None and not under_ptr:
            out.append(f"unknown-length vector outside ptr in {show_type(t)}")
        if t.count is not None and t.count <= 0:
            out.append(f"vector count must be positive in {show_type(t)}")
        _wf(t.element, target, False, out)
    elif isinstance(t, StructLayout):
        _wf_struct(t, target, out)
    elif isinstance(t, CFun):
        for p in t.params:
            _wf(p, target, False, out)
        _wf(t.result, target, False, out)
    elif isinstance(t, StructParam):
        _wf_struct(t.layout, target, out)
    elif not isinstance(t, (AddrData, Void, ExnHandler)):
        out.append(f"not an IR type: {t!r}")


def _wf_struct(t: StructLayout, target: TargetConfig, out: list[str]) -> None:
    if not _pow2(t.align):
        out.append(f"struct alignment {t.align} is not a power of two")
    elif t.size % t.align:
        out.append(f"struct size {t.size} is not a multiple of alignment {t.align}")
    prev_end = 0
    prev_off = -1
    for off, fty in t.fields:
        before = len(out)
        _wf(fty, target, False, out)
        if len(out) > before:
            continue
        if off <= prev_off:
            out.append(f"field offsets not strictly increasing at offset {off}")
        elif off < prev_end:
            out.append(f"field overlap at offset {off} in {show_type(t)}")
        prev_off = off
        prev_end = off + byte_size(fty, target)
    if prev_end > t.size:
        out.append(f"fields extend past struct size {t.size}")


def show_type(t: IRType) -> str:
    """Render a type in MBX surface syntax."""
    if isinstance(t, EnumRange):
        return f"enum({t.lo},{t.hi})"
    if isinstance(t, IntN):
        return "int" if t.bits == 32 else f"int{t.bits}"
    if isinstance(t, AddrData):
        return "addr(data)"
    if isinstance(t, Ptr):
        return f"ptr({show_type(t.target)})"
    if isinstance(t, Vector):
        if t.count is None:
            return f"vector({byte_size(t.element)}, {show_type(t.element)})"
        return f"vector[{t.count}]({show_type(t.element)})"
    if isinstance(t, StructLayout):
        fields = ", ".join(f"{off}: {show_type(ft)}" for off, ft in t.fields)
        return f"struct {t.size}:{t.align} ({fields})"
    if isinstance(t, CFun):
        return f"cfun({', '.join(show_type(p) for p in t.params)}) -> {show_type(t.result)}"
    if isinstance(t, StructParam):
        return f"sparam({show_type(t.layout)})"
    if isinstance(t, Void):
        return "void"
    if isinstance(t, ExnHandler):
        return "exn_handler"
    raise TypeError(f"not an IR type: {t!r}")


# ---------------------------------------------------------------------------
# Primitive operations


class PrimOp(enum.Enum):
    I32Add = "I32Add"
    I32Sub = "I32Sub"
    I32Mul = "I32Mul"
    I32Lt = "I32Lt"
    I32Eq = "I32Eq"
    AdrAdd = "AdrAdd"
    AdrEq = "AdrEq"
    AdrLoadI32 = "AdrLoadI32"
    AdrStoreI32 = "AdrStoreI32"
    AdrLoadAdr = "AdrLoadAdr"
    AdrStoreAdr = "AdrStoreAdr"
    AdrLoadU8 = "AdrLoadU8"
    AdrStoreU8 = "AdrStoreU8"
    AdrLoadI64 = "AdrLoadI64"
    AdrStoreI64 = "AdrStoreI64"

    @property
    def params(self) -> tuple[IRType, ...]:
        return PRIM_SIGS[self][0]

    @property
    def result(self) -> Optional[IRType]:
        return PRIM_SIGS[self][1]

    @property
    def arity(self) -> int:
        return len(PRIM_SIGS[self][0])

    @property
    def is_store(self) -> bool:
        return self in STORE_OPS

    @property
    def is_load(self) -> bool:
        return self in LOAD_OPS


_II = (INT32, INT32)
PRIM_SIGS: dict[PrimOp, tuple[tuple[IRType, ...], Optional[IRType]]] = {
    PrimOp.I32Add: (_II, INT32),
    PrimOp.I32Sub: (_II, INT32),
    PrimOp.I32Mul: (_II, INT32),
    PrimOp.I32Lt: (_II, INT32),
    PrimOp.I32Eq: (_II, INT32),
    PrimOp.AdrAdd: ((ADDR, INT32), ADDR),
    PrimOp.AdrEq: ((ADDR, ADDR), INT32),
    PrimOp.AdrLoadI32: ((ADDR,), INT32),
    PrimOp.AdrStoreI32: ((ADDR, INT32), None),
    PrimOp.AdrLoadAdr: ((ADDR,), ADDR),
    PrimOp.AdrStoreAdr: ((ADDR, ADDR), None),
    PrimOp.AdrLoadU8: ((ADDR,), INT32),
    PrimOp.AdrStoreU8: ((ADDR, INT32), None),
    PrimOp.AdrLoadI64: ((ADDR,), INT64),
    PrimOp.AdrStoreI64: ((ADDR, INT64), None),
}
STORE_OPS = frozenset({PrimOp.AdrStoreI32, PrimOp.AdrStoreAdr, PrimOp.AdrStoreU8, PrimOp.AdrStoreI64})
LOAD_OPS = frozenset({PrimOp.AdrLoadI32, PrimOp.AdrLoadAdr, PrimOp.AdrLoadU8, PrimOp.AdrLoadI64})


# ---------------------------------------------------------------------------
# Terms
#
# An argument is either a variable name (the only form allowed once a term is
# normalized) or a nested expression, which the MBX front end accepts and
# ``mbx.normalize`` flattens.


@dataclass(frozen=True)
class Lit:
    value: int
    ty: IRType = INT32


NIL = Lit(0, ADDR)


@dataclass(frozen=True)
class PrimExpr:
    op: PrimOp
    args: tuple["Arg", ...]


@dataclass(frozen=True)
class SelectExpr:
    src: "Arg"
    index: int


@dataclass(frozen=True)
class CallExpr:
    fn: str
    args: tuple["Arg", ...]


Expr = Union[Lit, PrimExpr, SelectExpr, CallExpr]
Arg = Union[str, Expr]

_span = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class LetPrim:
    var: Optional[str]  # None for unit-valued ops (stores)
    op: PrimOp
    args: tuple[Arg, ...]
    body: "Term"
    ty: Optional[IRType] = None
    span: Optional[SourceSpan] = _span


@dataclass(frozen=True)
class LetAlloc:
    var: str
    args: tuple[Arg, ...]
    body: "Term"
    ty: Optional[IRType] = None
    span: Optional[SourceSpan] = _span


@dataclass(frozen=True)
class LetSelect:
    var: str
    src: Arg
    index: int
    body: "Term"
    ty: Optional[IRType] = None
    span: Optional[SourceSpan] = _span


@dataclass(frozen=True)
class LetCCall:
    var: Optional[str]  # None for void results
    callee: str
    args: tuple[Arg, ...]
    body: "Term"
    ty: Optional[IRType] = None
    span: Optional[SourceSpan] = _span


@dataclass(frozen=True)
class LetCall:
    """Application of an IR function; binds all of its return values."""

    vars: tuple[str, ...]
    fn: str
    args: tuple[Arg, ...]
    body: "Term"
    span: Optional[SourceSpan] = _span


@dataclass(frozen=True)
class LetStackAlloc:
    var: str
    size: int
    align: int
    body: "Term"
    span: Optional[SourceSpan] = _span


@dataclass(frozen=True)
class LetLit:
    var: str
    value: int
    body: "Term"
    ty: IRType = INT32
    span: Optional[SourceSpan] = _span


@dataclass(frozen=True)
class If:
    cond: Arg
    then: "Term"
    orelse: "Term"
    span: Optional[SourceSpan] = _span


@dataclass(frozen=True)
class Return:
    args: tuple[Arg, ...]
    span: Optional[SourceSpan] = _span


Term = Union[LetPrim, LetAlloc, LetSelect, LetCCall, LetCall, LetStackAlloc, LetLit, If, Return]
LET_FORMS = (LetPrim, LetAlloc, LetSelect, LetCCall, LetCall, LetStackAlloc, LetLit)


@dataclass(frozen=True)
class FunDef:
    name: str
    params: tuple[tuple[str, IRType], ...]
    body: Term
    result: Optional[tuple[IRType, ...]] = None
    span: Optional[SourceSpan] = _span


def bound_vars(t: Term) -> tuple[str, ...]:
    """Variables introduced by the head binding of ``t``."""
    if isinstance(t, LetCall):
        return t.vars
    if isinstance(t, (LetPrim, LetCCall)):
        return () if t.var is None else (t.var,)
    if isinstance(t, LET_FORMS):
        return (t.var,)
    return ()


def head_args(t: Term) -> tuple[Arg, ...]:
    """Argument positions of the head of ``t`` (not its sub-terms)."""
    if isinstance(t, (LetPrim, LetAlloc, LetCCall, LetCall, Return)):
        return t.args
    if isinstance(t, LetSelect):
        return (t.src,)
    if isinstance(t, If):
        return (t.cond,)
    return ()


def is_normalized(t: Term) -> bool:
    while True:
        if not all(isinstance(a, str) for a in head_args(t)):
            return False
        if isinstance(t, If):
            return is_normalized(t.then) and is_normalized(t.orelse)
        if isinstance(t, Return):
            return True
        t = t.body


def binding_count(t: Term) -> int:
    """Number of let-bindings in ``t`` (both branches of conditionals)."""
    n = 0
    stack = [t]
    while stack:
        t = stack.pop()
        if isinstance(t, If):
            stack += [t.then, t.orelse]
        elif not isinstance(t, Return):
            n += 1
            stack.append(t.body)
    return n


def has_branches(t: Term) -> bool:
    while not isinstance(t, Return):
        if isinstance(t, If):
            return True
        t = t.body
    return False


def _arg_vars(a: Arg, out: set[str]) -> None:
    if isinstance(a, str):
        out.add(a)
    elif isinstance(a, (PrimExpr, CallExpr)):
        for x in a.args:
            _arg_vars(x, out)
    elif isinstance(a, SelectExpr):
        _arg_vars(a.src, out)


def free_vars(t: Term) -> set[str]:
    """Free variables of ``t``.  Function and C callee names are not variables,
    except a ccall through a variable, which is reported when it is free."""
    out: set[str] = set()
    for a in head_args(t):
        _arg_vars(a, out)
    if isinstance(t, LetCCall):
        out.add(t.callee)
    if isinstance(t, If):
        return out | free_vars(t.then) | free_vars(t.orelse)
    if isinstance(t, Return):
        return out
    return out | (free_vars(t.body) - set(bound_vars(t)))


def called_functions(t: Term) -> set[str]:
    """Names of IR functions applied anywhere in ``t``."""
    out: set[str] = set()

    def visit_arg(a: Arg) -> None:
        if isinstance(a, CallExpr):
            out.add(a.fn)
        if isinstance(a, (PrimExpr, CallExpr)):
            for x in a.args:
                visit_arg(x)
        elif isinstance(a, SelectExpr):
            visit_arg(a.src)

    stack = [t]
    while stack:
        t = stack.pop()
        for a in head_args(t):
            visit_arg(a)
        if isinstance(t, LetCall):
            out.add(t.fn)
        if isinstance(t, If):
            stack += [t.then, t.orelse]
        elif not isinstance(t, Return):
            stack.append(t.body)
    return out


def all_names(t: Term) -> Iterator[str]:
    stack = [t]
    while stack:
        t = stack.pop()
        yield from bound_vars(t)
        acc: set[str] = set()
        for a in head_args(t):
            _arg_vars(a, acc)
        yield from acc
        if isinstance(t, If):
            stack += [t.then, t.orelse]
        elif not isinstance(t, Return):
            stack.append(t.body)


# ---------------------------------------------------------------------------
# Fresh names

FRESH_PREFIX = "_t"
_FRESH_RE = re.compile(r"_t(\d+)$")


class NameSupply:
    """Deterministic generator of ``_t<N>`` temporaries."""

    def __init__(self, start: int = 1) -> None:
        self.next = start

    @classmethod
    def avoiding(cls, *terms: Union[Term, FunDef]) -> "NameSupply":
        hi = 0
        for t in terms:
            if isinstance(t, FunDef):
                names = [p for p, _ in t.params] + list(all_names(t.body))
            else:
                names = list(all_names(t))
            for n in names:
                m = _FRESH_RE.match(n)
                if m:
                    hi = max(hi, int(m.group(1)))
        return cls(hi + 1)

    def fresh(self) -> str:
        name = f"{FRESH_PREFIX}{self.next}"
        self.next += 1
        return name


# ---------------------------------------------------------------------------
# Renaming and alpha-equivalence


def _rename_arg(a: Arg, m: Mapping[str, str]) -> Arg:
    if isinstance(a, str):
        return m.get(a, a)
    if isinstance(a, PrimExpr):
        return PrimExpr(a.op, tuple(_rename_arg(x, m) for x in a.args))
    if isinstance(a, CallExpr):
        return CallExpr(a.fn, tuple(_rename_arg(x, m) for x in a.args))
    if isinstance(a, SelectExpr):
        return SelectExpr(_rename_arg(a.src, m), a.index)
    return a


def subst(t: Term, m: Mapping[str, str]) -> Term:
    """Replace free occurrences of variables per ``m`` (variable-for-variable).

    Callers guarantee no capture, e.g. by keeping all binders distinct."""
    if not m:
        return t
    args = tuple(_rename_arg(a, m) for a in head_args(t))
    if isinstance(t, Return):
        return Return(args, span=t.span)
    if isinstance(t, If):
        return If(args[0], subst(t.then, m), subst(t.orelse, m), span=t.span)
    bound = bound_vars(t)
    inner = {k: v for k, v in m.items() if k not in bound} if bound else m
    body = subst(t.body, inner)
    if isinstance(t, LetPrim):
        return LetPrim(t.var, t.op, args, body, t.ty, span=t.span)
    if isinstance(t, LetAlloc):
        return LetAlloc(t.var, args, body, t.ty, span=t.span)
    if isinstance(t, LetSelect):
        return LetSelect(t.var, args[0], t.index, body, t.ty, span=t.span)
    if isinstance(t, LetCCall):
        return LetCCall(t.var, m.get(t.callee, t.callee), args, body, t.ty, span=t.span)
    if isinstance(t, LetCall):
        return LetCall(t.vars, t.fn, args, body, span=t.span)
    if isinstance(t, LetStackAlloc):
        return LetStackAlloc(t.var, t.size, t.align, body, span=t.span)
    if isinstance(t, LetLit):
        return LetLit(t.var, t.value, body, t.ty, span=t.span)
    raise TypeError(f"not a term: {t!r}")


def rename_bound(t: Term, supply: NameSupply, m: Optional[dict[str, str]] = None) -> Term:
    """Alpha-rename every binder in ``t`` to a fresh name."""
    m = dict(m or {})
    if isinstance(t, Return):
        return subst(t, m)
    if isinstance(t, If):
        cond = _rename_arg(t.cond, m)
        return If(cond, rename_bound(t.then, supply, m), rename_bound(t.orelse, supply, m), span=t.span)
    args = tuple(_rename_arg(a, m) for a in head_args(t))
    new_vars = []
    for v in bound_vars(t):
        if v == "_":
            new_vars.append(v)
            continue
        nv = supply.fresh()
        m[v] = nv
        new_vars.append(nv)
    body = rename_bound(t.body, supply, m)
    nv0 = new_vars[0] if new_vars else None
    if isinstance(t, LetPrim):
        return LetPrim(nv0, t.op, args, body, t.ty, span=t.span)
    if isinstance(t, LetAlloc):
        return LetAlloc(nv0, args, body, t.ty, span=t.span)
    if isinstance(t, LetSelect):
        return LetSelect(nv0, args[0], t.index, body, t.ty, span=t.span)
    if isinstance(t, LetCCall):
        return LetCCall(nv0, m.get(t.callee, t.callee), args, body, t.ty, span=t.span)
    if isinstance(t, LetCall):
        return LetCall(tuple(new_vars), t.fn, args, body, span=t.span)
    if isinstance(t, LetStackAlloc):
        return LetStackAlloc(nv0, t.size, t.align, body, span=t.span)
    if isinstance(t, LetLit):
        return LetLit(nv0, t.value, body, t.ty, span=t.span)
    raise TypeError(f"not a term: {t!r}")


class _Alpha:
    def __init__(self) -> None:
        self.left: dict[str, int] = {}
        self.right: dict[str, int] = {}
        self.fl: dict[str, int] = {}
        self.fr: dict[str, int] = {}
        self.n = 0

    def bind(self, a: Optional[str], b: Optional[str]) -> None:
        if (a is None) != (b is None):
            raise _Mismatch
        if a is None:
            return
        self.n += 1
        self.left[a] = self.n
        self.right[b] = self.n

    def var(self, a: str, b: str) -> None:
        la, rb = self.left.get(a), self.right.get(b)
        if la is None and rb is None:
            if a != b:
                raise _Mismatch
        elif la != rb:
            raise _Mismatch

    def fn(self, a: str, b: str) -> None:
        la, rb = self.fl.get(a), self.fr.get(b)
        if la is None and rb is None:
            if a != b:
                raise _Mismatch
        elif la != rb:
            raise _Mismatch

    def arg(self, a: Arg, b: Arg) -> None:
        if isinstance(a, str) and isinstance(b, str):
            self.var(a, b)
        elif isinstance(a, Lit) and isinstance(b, Lit):
            if a != b:
                raise _Mismatch
        elif isinstance(a, PrimExpr) and isinstance(b, PrimExpr):
            if a.op != b.op:
                raise _Mismatch
            self.args(a.args, b.args)
        elif isinstance(a, CallExpr) and isinstance(b, CallExpr):
            self.fn(a.fn, b.fn)
            self.args(a.args, b.args)
        elif isinstance(a, SelectExpr) and isinstance(b, SelectExpr):
            if a.index != b.index:
                raise _Mismatch
            self.arg(a.src, b.src)
        else:
            raise _Mismatch

    def args(self, a: tuple[Arg, ...], b: tuple[Arg, ...]) -> None:
        if len(a) != len(b):
            raise _Mismatch
        for x, y in zip(a, b):
            self.arg(x, y)

    def snapshot(self) -> tuple:
        return dict(self.left), dict(self.right)

    def restore(self, snap: tuple) -> None:
        self.left, self.right = dict(snap[0]), dict(snap[1])

    def term(self, a: Term, b: Term) -> None:
        while True:
            if type(a) is not type(b):
                raise _Mismatch
            self.args(head_args(a), head_args(b))
            if isinstance(a, Return):
                return
            if isinstance(a, If):
                snap = self.snapshot()
                self.term(a.then, b.then)
                self.restore(snap)
                self.term(a.orelse, b.orelse)
                return
            if isinstance(a, LetPrim) and a.op != b.op:
                raise _Mismatch
            if isinstance(a, LetSelect) and a.index != b.index:
                raise _Mismatch
            if isinstance(a, LetCCall):
                self.var(a.callee, b.callee)
            if isinstance(a, LetCall):
                self.fn(a.fn, b.fn)
            if isinstance(a, LetStackAlloc) and (a.size, a.align) != (b.size, b.align):
                raise _Mismatch
            if isinstance(a, LetLit) and (a.value, a.ty) != (b.value, b.ty):
                raise _Mismatch
            va, vb = bound_vars(a), bound_vars(b)
            if isinstance(a, LetCall) and len(va) != len(vb):
                raise _Mismatch
            if len(va) != len(vb):
                raise _Mismatch
            for x, y in zip(va, vb):
                self.bind(x, y)
            a, b = a.body, b.body

    def fundef(self, a: FunDef, b: FunDef) -> None:
        self.n += 1
        self.fl[a.name] = self.n
        self.fr[b.name] = self.n
        if len(a.params) != len(b.params):
            raise _Mismatch
        for (pa, ta), (pb, tb) in zip(a.params, b.params):
            if ta != tb:
                raise _Mismatch
            self.bind(pa, pb)
        if a.result is not None and b.result is not None and a.result != b.result:
            raise _Mismatch
        self.term(a.body, b.body)


class _Mismatch(Exception):
    pass


def alpha_eq(a: Union[Term, FunDef], b: Union[Term, FunDef]) -> bool:
    """Equality up to consistent renaming of bound variables.

    Type annotations on let-bindings are hints and are not compared; parameter
    types and literal types are."""
    st = _Alpha()
    try:
        if isinstance(a, FunDef) or isinstance(b, FunDef):
            if not (isinstance(a, FunDef) and isinstance(b, FunDef)):
                return False
            st.fundef(a, b)
        else:
            st.term(a, b)
    except _Mismatch:
        return False
    return True


# ---------------------------------------------------------------------------
# Module interfaces and the compilation environment


@dataclass(frozen=True)
class TypeBinding:
    """High-level type name bound to an IR type (``prim``), to another
    high-level type expression (alias text), or left abstract (None)."""

    name: str
    rhs: Union[IRType, str, None]
    params: tuple[str, ...] = ()


@dataclass(frozen=True)
class FunBinding:
    name: str
    hl_type: str
    fundef: FunDef


@dataclass(frozen=True)
class External:
    cname: str
    sig: CFun


@dataclass(frozen=True)
class ModuleInterface:
    name: str
    typedefs: tuple[tuple[str, IRType], ...] = ()
    type_bindings: tuple[TypeBinding, ...] = ()
    fun_bindings: tuple[FunBinding, ...] = ()
    externals: tuple[External, ...] = ()

    def fun(self, name: str) -> Optional[FunBinding]:
        for fb in self.fun_bindings:
            if fb.name == name:
                return fb
        return None

    def external(self, cname: str) -> Optional[External]:
        for e in self.externals:
            if e.cname == cname:
                return e
        return None

    def typedef_map(self) -> dict[str, IRType]:
        return dict(self.typedefs)

    def duplicate_names(self) -> list[str]:
        dups = []
        for kind, names in (
            ("typedef", [n for n, _ in self.typedefs]),
            ("type", [b.name for b in self.type_bindings]),
            ("val", [b.name for b in self.fun_bindings]),
            ("external", [e.cname for e in self.externals]),
        ):
            seen: set[str] = set()
            for n in names:
                if n in seen:
                    dups.append(f"{kind} {n}")
                seen.add(n)
        return dups


class AmbiguousName(LookupError):
    pass


class CompilationEnv:
    """A set of module interfaces searched for functions and externals.

    Lookups prefer the ``current`` module; otherwise a name must be bound in
    exactly one imported module."""

    def __init__(self, modules: Union[Mapping[str, ModuleInterface], list[ModuleInterface], None] = None):
        if modules is None:
            modules = {}
        if not isinstance(modules, Mapping):
            modules = {m.name: m for m in modules}
        self.modules: dict[str, ModuleInterface] = dict(modules)

    def with_module(self, m: ModuleInterface) -> "CompilationEnv":
        mods = dict(self.modules)
        mods[m.name] = m
        return CompilationEnv(mods)

    def _resolve(self, getter, name: str, current: Optional[ModuleInterface]):
        if current is not None:
            hit = getter(current, name)
            if hit is not None:
                return current, hit
        found = []
        for m in self.modules.values():
            if current is not None and m.name == current.name:
                continue
            hit = getter(m, name)
            if hit is not None:
                found.append((m, hit))
        if len(found) > 1:
            raise AmbiguousName(f"{name} is bound in modules {', '.join(m.name for m, _ in found)}")
        return found[0] if found else None

    def resolve_fun(self, name: str, current: Optional[ModuleInterface] = None):
        """``(module, FunBinding)`` or None.  Accepts ``Module.name`` too."""
        hit = self._resolve(ModuleInterface.fun, name, current)
        if hit is None and "." in name:
            mod, _, rest = name.partition(".")
            m = self.modules.get(mod)
            if m is not None and m.fun(rest) is not None:
                return m, m.fun(rest)
        return hit

    def resolve_external(self, cname: str, current: Optional[ModuleInterface] = None):
        return self._resolve(ModuleInterface.external, cname, current)

    def typedefs(self) -> dict[str, IRType]:
        out: dict[str, IRType] = {}
        for m in self.modules.values():
            out.update(m.typedefs)
        return out
