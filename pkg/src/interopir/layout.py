"""C type descriptions and the natural-alignment ABI used for them.

``layout_of`` computes size/alignment/field offsets, ``to_ir_struct`` turns a
struct into the IR's ``StructLayout`` and ``promote_param`` gives the IR type
a C value has when passed to or returned from a C function.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Union

from .ir import (
    ADDR,
    DEFAULT_TARGET,
    CFun,
    INT8,
    INT16,
    INT32,
    VOID,
    IntN,
    IRType,
    StructLayout,
    StructParam,
    TargetConfig,
    Vector,
)


class CType:
    __slots__ = ()


@dataclass(frozen=True)
class CChar(CType):
    signed: bool = True


@dataclass(frozen=True)
class CShort(CType):
    signed: bool = True


@dataclass(frozen=True)
class CInt(CType):
    signed: bool = True


@dataclass(frozen=True)
class CLong(CType):
    signed: bool = True


def CUChar() -> CChar:
    return CChar(False)


def CUShort() -> CShort:
    return CShort(False)


def CUInt() -> CInt:
    return CInt(False)


def CULong() -> CLong:
    return CLong(False)


@dataclass(frozen=True)
class CVoid(CType):
    pass


@dataclass(frozen=True)
class CPtrTo(CType):
    # A string target is a forward reference to a struct tag or typedef name.
    target: Union[CType, str]


@dataclass(frozen=True)
class CArray(CType):
    count: int
    element: CType


@dataclass(frozen=True)
class CStructDef(CType):
    tag: str
    fields: tuple[tuple[str, CType], ...]


@dataclass(frozen=True)
class CNamed(CType):
    name: str


@dataclass(frozen=True)
class CVarargs(CType):
    """The ``...`` marker in a parameter list."""


@dataclass(frozen=True)
class CFunType(CType):
    params: tuple[CType, ...]
    result: CType
    varargs: bool = False


SCALARS = (CChar, CShort, CInt, CLong)


@dataclass(frozen=True)
class CLayout:
    size: int
    align: int
    field_offsets: tuple[tuple[str, int], ...] = ()


class LayoutError(ValueError):
    pass


class UnsupportedError(LayoutError):
    pass


def align_up(value: int, align: int) -> int:
    return (value + align - 1) // align * align


def resolve(t: CType, typedefs: Optional[Mapping[str, CType]] = None) -> CType:
    seen = set()
    while isinstance(t, CNamed):
        if t.name in seen:
            raise LayoutError(f"typedef cycle through {t.name}")
        seen.add(t.name)
        if typedefs is None or t.name not in typedefs:
            raise LayoutError(f"unresolved type name {t.name}")
        t = typedefs[t.name]
    return t


def scalar_size(t: CType, target: TargetConfig) -> int:
    if isinstance(t, CChar):
        return 1
    if isinstance(t, CShort):
        return 2
    if isinstance(t, CInt):
        return 4
    if isinstance(t, CLong):
        return target.word_bytes
    if isinstance(t, CPtrTo):
        return target.word_bytes
    raise LayoutError(f"not a scalar: {t!r}")


def layout_of(t: CType, target: TargetConfig = DEFAULT_TARGET,
              typedefs: Optional[Mapping[str, CType]] = None) -> CLayout:
    t = resolve(t, typedefs)
    if isinstance(t, (CChar, CShort, CInt, CLong, CPtrTo)):
        n = scalar_size(t, target)
        return CLayout(n, n)
    if isinstance(t, CArray):
        el = layout_of(t.element, target, typedefs)
        return CLayout(t.count * el.size, el.align)
    if isinstance(t, CStructDef):
        if not t.fields:
            raise LayoutError(f"struct {t.tag} has no fields")
        offset = 0
        align = 1
        offsets = []
        for name, fty in t.fields:
            fl = layout_of(fty, target, typedefs)
            offset = align_up(offset, fl.align)
            offsets.append((name, offset))
            offset += fl.size
            align = max(align, fl.align)
        return CLayout(align_up(offset, align), align, tuple(offsets))
    if isinstance(t, CVoid):
        raise LayoutError("void has no layout")
    if isinstance(t, CFunType):
        raise LayoutError("function types have no layout")
    raise LayoutError(f"not a C type: {t!r}")


def _memory_type(t: CType, target: TargetConfig, typedefs) -> IRType:
    t = resolve(t, typedefs)
    if isinstance(t, CChar):
        return INT8
    if isinstance(t, CShort):
        return INT16
    if isinstance(t, CInt):
        return INT32
    if isinstance(t, CLong):
        return IntN(target.word_size_bits)
    if isinstance(t, CPtrTo):
        return ADDR
    if isinstance(t, CArray):
        return Vector(t.count, _memory_type(t.element, target, typedefs))
    if isinstance(t, CStructDef):
        return to_ir_struct(t, target, typedefs)
    raise LayoutError(f"type has no in-memory representation: {t!r}")


def to_ir_struct(t: CType, target: TargetConfig = DEFAULT_TARGET,
                 typedefs: Optional[Mapping[str, CType]] = None) -> StructLayout:
    t = resolve(t, typedefs)
    if not isinstance(t, CStructDef):
        raise LayoutError(f"not a struct: {t!r}")
    cl = layout_of(t, target, typedefs)
    fields = tuple(
        (off, _memory_type(fty, target, typedefs))
        for (_, off), (_, fty) in zip(cl.field_offsets, t.fields)
    )
    return StructLayout(cl.size, cl.align, fields)


def promote_param(t: CType, target: TargetConfig = DEFAULT_TARGET,
                  typedefs: Optional[Mapping[str, CType]] = None) -> IRType:
    """IR type of a C parameter after the calling convention's promotions."""
    t = resolve(t, typedefs)
    if isinstance(t, CVarargs):
        raise UnsupportedError("varargs are unsupported")
    if isinstance(t, CVoid):
        raise LayoutError("void is not a parameter type")
    return _call_type(t, target, typedefs)


def promote_result(t: CType, target: TargetConfig = DEFAULT_TARGET,
                   typedefs: Optional[Mapping[str, CType]] = None) -> IRType:
    t = resolve(t, typedefs)
    if isinstance(t, CVoid):
        return VOID
    return _call_type(t, target, typedefs)


def _call_type(t: CType, target: TargetConfig, typedefs) -> IRType:
    if isinstance(t, (CChar, CShort, CInt)):
        return INT32
    if isinstance(t, CLong):
        return IntN(target.word_size_bits)
    if isinstance(t, (CPtrTo, CArray)):
        return ADDR
    if isinstance(t, CStructDef):
        return StructParam(to_ir_struct(t, target, typedefs))
    if isinstance(t, CFunType):
        raise UnsupportedError("function-typed parameters are unsupported")
    raise LayoutError(f"not a C type: {t!r}")


def cfun_signature(t: CFunType, target: TargetConfig = DEFAULT_TARGET,
                   typedefs: Optional[Mapping[str, CType]] = None) -> CFun:
    if t.varargs or any(isinstance(p, CVarargs) for p in t.params):
        raise UnsupportedError("varargs functions are unsupported")
    params = tuple(promote_param(p, target, typedefs) for p in t.params)
    return CFun(params, promote_result(t.result, target, typedefs))
