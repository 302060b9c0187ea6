"""Reference interpreter for IR programs over a simulated memory.

Memory is split into disjoint regions, each backed by one growing byte
array.  Every allocation is a block followed by a red zone of canary bytes;
accesses are bounds- and liveness-checked against the block containing the
address, so a completed run can only have touched live bytes.
"""

from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field, fields
from typing import Callable, Iterable, Optional, Union

from .ir import (
    ADDR,
    DEFAULT_TARGET,
    INT32,
    CompilationEnv,
    EnumRange,
    ExnHandler,
    FunBinding,
    If,
    IRType,
    LetAlloc,
    LetCall,
    LetCCall,
    LetLit,
    LetPrim,
    LetSelect,
    LetStackAlloc,
    ModuleInterface,
    PrimOp,
    Ptr,
    Return,
    StructLayout,
    TargetConfig,
    Term,
    byte_size,
    is_address,
)
from .layout import CInt, CPtrTo, CStructDef, to_ir_struct
from .typecheck import Checker, TypeEnv, alloc_layout


class TrapKind(str, enum.Enum):
    NIL_DEREF = "nil-deref"
    OUT_OF_BOUNDS = "out-of-bounds"
    USE_AFTER_SCOPE = "use-after-scope"
    USE_AFTER_FREE = "use-after-free"
    DOUBLE_FREE = "double-free"
    MISALIGNED = "misaligned"
    UNKNOWN_CCALL = "unknown-ccall"
    STEP_BUDGET = "step-budget"

    def __str__(self) -> str:
        return self.value


class Trap(Exception):
    def __init__(self, kind: TrapKind, message: str):
        super().__init__(f"trap {kind}: {message}")
        self.kind = kind
        self.message = message


# ---------------------------------------------------------------------------
# Values


@dataclass(frozen=True)
class WordVal:
    value: int


@dataclass(frozen=True)
class AddrVal:
    value: int


@dataclass(frozen=True)
class UnitVal:
    value: int = 0


UNIT = UnitVal()
NIL = AddrVal(0)
RuntimeValue = Union[WordVal, AddrVal, UnitVal]


def wrap_signed(v: int, bits: int) -> int:
    m = 1 << bits
    v &= m - 1
    return v - m if v >> (bits - 1) else v


def wrap32(v: int) -> int:
    return wrap_signed(v, 32)


# ---------------------------------------------------------------------------
# Memory


NIL_LIMIT = 0x1000
REDZONE = 8
CANARY = 0xA5


@dataclass
class Block:
    base: int
    size: int
    capacity: int
    region: "Region"
    live: bool = True
    layout: Optional[StructLayout] = None

    @property
    def end(self) -> int:
        return self.base + self.size


class Region:
    def __init__(self, name: str, base: int, limit: int):
        self.name = name
        self.base = base
        self.limit = limit
        self.data = bytearray()
        self.top = base
        self.bases: list[int] = []
        self.blocks: dict[int, Block] = {}

    def contains(self, addr: int) -> bool:
        return self.base <= addr < self.base + self.limit

    def carve(self, size: int, align: int) -> Block:
        start = (self.top + align - 1) // align * align
        cap = max(size, 1)
        end = start + cap + REDZONE
        if end - self.base > self.limit:
            raise MemoryError(f"{self.name} region exhausted")
        grow = end - self.base - len(self.data)
        if grow > 0:
            self.data.extend(bytes([CANARY]) * grow)
        off = start - self.base
        self.data[off:off + cap] = bytes(cap)
        self.top = end
        b = Block(start, size, cap, self)
        self.bases.append(start)
        self.blocks[start] = b
        return b

    def find(self, addr: int) -> Optional[Block]:
        i = bisect.bisect_right(self.bases, addr) - 1
        if i < 0:
            return None
        b = self.blocks[self.bases[i]]
        return b if addr < b.base + b.capacity else None

    def canary_violations(self) -> list[str]:
        out = []
        for base in self.bases:
            b = self.blocks[base]
            off = b.base + b.capacity - self.base
            zone = self.data[off:off + REDZONE]
            if any(x != CANARY for x in zone):
                out.append(f"{self.name} red zone after {b.base:#x} overwritten")
        return out


class MemoryModel:
    """Disjoint static, heap, c_heap and stack regions; address 0 is nil."""

    def __init__(self, target: TargetConfig = DEFAULT_TARGET):
        self.target = target
        self.static = Region("static", 0x0000_1000, 0x000F_F000)
        self.heap = Region("heap", 0x0010_0000, 0x3FF0_0000)
        self.c_heap = Region("c_heap", 0x4000_0000, 0x3000_0000)
        self.stack = Region("stack", 0x7000_0000, 0x0FFF_0000)
        self.regions = (self.static, self.heap, self.c_heap, self.stack)
        self.c_free: list[Block] = []
        self.c_carved = 0

    # -- allocation
    def alloc_heap(self, size: int, align: int, layout: Optional[StructLayout] = None) -> int:
        b = self.heap.carve(size, max(align, 1))
        b.layout = layout
        return b.base

    def alloc_static(self, data: bytes) -> int:
        b = self.static.carve(len(data), 1)
        off = b.base - self.static.base
        self.static.data[off:off + len(data)] = data
        return b.base

    def stackalloc(self, size: int, align: int) -> Block:
        return self.stack.carve(size, align)

    def kill(self, block: Block) -> None:
        block.live = False

    def malloc(self, n: int) -> int:
        need = max((n + 7) // 8 * 8, 8)
        for i, b in enumerate(self.c_free):
            if b.capacity >= need:
                del self.c_free[i]
                b.live = True
                b.size = n
                off = b.base - self.c_heap.base
                self.c_heap.data[off:off + b.capacity] = bytes(b.capacity)
                return b.base
        b = self.c_heap.carve(need, 8)
        b.size = n
        self.c_carved += b.capacity
        return b.base

    def free(self, addr: int) -> None:
        if addr == 0:
            return
        b = self.c_heap.find(addr) if self.c_heap.contains(addr) else None
        if b is None or b.base != addr:
            raise Trap(TrapKind.OUT_OF_BOUNDS, f"free of {addr:#x}, which malloc did not return")
        if not b.live:
            raise Trap(TrapKind.DOUBLE_FREE, f"block {addr:#x} freed twice")
        b.live = False
        self.c_free.append(b)

    @property
    def c_free_bytes(self) -> int:
        return sum(b.capacity for b in self.c_free)

    @property
    def c_leaked_bytes(self) -> int:
        return self.c_carved - self.c_free_bytes

    @property
    def live_c_blocks(self) -> int:
        return sum(1 for b in self.c_heap.blocks.values() if b.live)

    def canary_violations(self) -> list[str]:
        out: list[str] = []
        for r in self.regions:
            out.extend(r.canary_violations())
        return out

    # -- checked access
    def _locate(self, addr: int, n: int) -> tuple[Region, int]:
        if 0 <= addr < NIL_LIMIT:
            raise Trap(TrapKind.NIL_DEREF, f"access at {addr:#x} through nil")
        if n in (2, 4, 8) and addr % n:
            raise Trap(TrapKind.MISALIGNED, f"{n}-byte access at {addr:#x}")
        for r in self.regions:
            if r.contains(addr):
                b = r.find(addr)
                if b is None:
                    break
                if not b.live:
                    if r is self.stack:
                        raise Trap(TrapKind.USE_AFTER_SCOPE, f"stack block {b.base:#x} used after its scope")
                    if r is self.c_heap:
                        raise Trap(TrapKind.USE_AFTER_FREE, f"block {b.base:#x} used after free")
                if addr + n > b.end:
                    raise Trap(TrapKind.OUT_OF_BOUNDS,
                               f"{n}-byte access at {addr:#x} overruns block {b.base:#x}+{b.size}")
                return r, addr - r.base
        raise Trap(TrapKind.OUT_OF_BOUNDS, f"access at {addr:#x} outside any live block")

    def load(self, addr: int, n: int, signed: bool = True) -> int:
        r, off = self._locate(addr, n)
        return int.from_bytes(r.data[off:off + n], self.target.endianness, signed=signed)

    def store(self, addr: int, n: int, value: int) -> None:
        r, off = self._locate(addr, n)
        value &= (1 << (8 * n)) - 1
        r.data[off:off + n] = value.to_bytes(n, self.target.endianness)

    def load_bytes(self, addr: int, n: int) -> bytes:
        return bytes(self.load(addr + i, 1, False) for i in range(n))

    def store_bytes(self, addr: int, data: bytes) -> None:
        for i, x in enumerate(data):
            self.store(addr + i, 1, x)

    def read_cstring(self, addr: int) -> bytes:
        out = bytearray()
        while True:
            c = self.load(addr + len(out), 1, False)
            if c == 0:
                return bytes(out)
            out.append(c)

    # -- typed helpers
    def load_typed(self, addr: int, t: IRType) -> RuntimeValue:
        if is_address(t) or isinstance(t, ExnHandler):
            return AddrVal(self.load(addr, self.target.word_bytes, False))
        n = byte_size(t, self.target)
        signed = not (isinstance(t, EnumRange) and t.lo >= 0)
        return WordVal(self.load(addr, n, signed))

    def store_typed(self, addr: int, t: IRType, v: RuntimeValue) -> None:
        n = self.target.word_bytes if is_address(t) else byte_size(t, self.target)
        self.store(addr, n, v.value)


def string_layout(target: TargetConfig = DEFAULT_TARGET) -> StructLayout:
    return alloc_layout([INT32, ADDR], target)


def alloc_string(mem: MemoryModel, data: Union[str, bytes]) -> int:
    """Build a heap string object (length word, data address) for ``data``."""
    raw = data.encode() if isinstance(data, str) else bytes(data)
    buf = mem.alloc_heap(len(raw) + 1, 1)
    mem.store_bytes(buf, raw + b"\0")
    lay = string_layout(mem.target)
    obj = mem.alloc_heap(lay.size, lay.align, lay)
    mem.store_typed(obj + lay.fields[0][0], INT32, WordVal(len(raw)))
    mem.store_typed(obj + lay.fields[1][0], ADDR, AddrVal(buf))
    return obj


def read_string(mem: MemoryModel, obj: int) -> bytes:
    """Bytes of a heap string object, checked against its length word."""
    lay = string_layout(mem.target)
    n = mem.load_typed(obj + lay.fields[0][0], INT32).value
    data = mem.load_typed(obj + lay.fields[1][0], ADDR).value
    raw = mem.load_bytes(data, n)
    if mem.load(data + n, 1, False) != 0:
        raise ValueError("string data is not null-terminated at its length")
    return raw


# ---------------------------------------------------------------------------
# Foreign functions


Hook = Callable[[MemoryModel, list], RuntimeValue]


def tree_struct(target: TargetConfig = DEFAULT_TARGET) -> StructLayout:
    node = CStructDef("tree", (("label", CInt()), ("left", CPtrTo("tree")), ("right", CPtrTo("tree"))))
    return to_ir_struct(node, target)


@dataclass
class ForeignRegistry:
    """C functions visible to ccall, plus the simulated world they act on."""

    hooks: dict[str, Hook] = field(default_factory=dict)
    environ: dict[str, str] = field(default_factory=dict)
    clock: tuple[int, int] = (0, 0)
    timezone: tuple[int, int] = (0, 0)
    seed: int = 1
    rand_state: int = -1

    def __post_init__(self) -> None:
        if self.rand_state < 0:
            self.rand_state = self.seed

    def register(self, name: str, hook: Hook) -> None:
        self.hooks[name] = hook

    def rand(self) -> int:
        self.rand_state = (self.rand_state * 1103515245 + 12345) % (1 << 31)
        return (self.rand_state // 65536) % 32768

    def tick(self) -> tuple[int, int]:
        now = self.clock
        sec, usec = now[0], now[1] + 1
        if usec >= 1_000_000:
            sec, usec = sec + 1, usec - 1_000_000
        self.clock = (sec, usec)
        return now


def register_builtin_world(registry: ForeignRegistry) -> ForeignRegistry:
    """Install getenv, MOBY_AllocCString, gettimeofday, rand, malloc, free
    and MakeTree."""
    env_cache: dict[str, int] = {}

    def getenv(mem: MemoryModel, args):
        name = mem.read_cstring(args[0].value).decode()
        if name not in registry.environ:
            return NIL
        if name not in env_cache:
            env_cache[name] = mem.alloc_static(registry.environ[name].encode() + b"\0")
        return AddrVal(env_cache[name])

    def alloc_cstring(mem: MemoryModel, args):
        return AddrVal(alloc_string(mem, mem.read_cstring(args[0].value)))

    def gettimeofday(mem: MemoryModel, args):
        sec, usec = registry.tick()
        w = mem.target.word_bytes
        tv, tz = args[0].value, args[1].value
        if tv:
            mem.store(tv, w, sec)
            mem.store(tv + w, w, usec)
        if tz:
            mem.store(tz, 4, registry.timezone[0])
            mem.store(tz + 4, 4, registry.timezone[1])
        return WordVal(0)

    def rand(mem: MemoryModel, args):
        return WordVal(registry.rand())

    def malloc(mem: MemoryModel, args):
        return AddrVal(mem.malloc(args[0].value))

    def free(mem: MemoryModel, args):
        mem.free(args[0].value)
        return UNIT

    def make_tree(mem: MemoryModel, args):
        lay = tree_struct(mem.target)
        (o_label, t_label), (o_left, _), (o_right, _) = lay.fields

        def build(d: int) -> int:
            if d <= 0:
                return 0
            p = mem.malloc(lay.size)
            mem.store_typed(p + o_label, t_label, WordVal(registry.rand()))
            mem.store_typed(p + o_left, ADDR, AddrVal(build(d - 1)))
            mem.store_typed(p + o_right, ADDR, AddrVal(build(d - 1)))
            return p

        return AddrVal(build(args[0].value))

    for name, hook in (("getenv", getenv), ("MOBY_AllocCString", alloc_cstring),
                       ("gettimeofday", gettimeofday), ("rand", rand), ("malloc", malloc),
                       ("free", free), ("MakeTree", make_tree)):
        registry.register(name, hook)
    return registry


def builtin_registry(**world) -> ForeignRegistry:
    return register_builtin_world(ForeignRegistry(**world))


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class ExecStats:
    steps: int = 0
    heap_allocs: int = 0
    stack_allocs: int = 0
    ccalls: int = 0
    loads: int = 0
    stores: int = 0
    calls: int = 0

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def lines(self) -> list[str]:
        return [f"{k}={v}" for k, v in sorted(self.as_dict().items())]


DEFAULT_BUDGET = 10 ** 8


@dataclass
class _Frame:
    module: ModuleInterface
    fb: FunBinding
    vals: dict
    term: Term
    types: dict
    ret_vars: tuple = ()
    blocks: list = field(default_factory=list)


class Interpreter:
    def __init__(self, env: Union[CompilationEnv, Iterable[ModuleInterface]],
                 registry: Optional[ForeignRegistry] = None,
                 target: TargetConfig = DEFAULT_TARGET,
                 budget: int = DEFAULT_BUDGET,
                 memory: Optional[MemoryModel] = None):
        self.env = env if isinstance(env, CompilationEnv) else CompilationEnv(list(env))
        self.registry = registry if registry is not None else builtin_registry()
        self.target = target
        self.budget = budget
        self.memory = memory or MemoryModel(target)
        self.stats = ExecStats()
        self._checker = Checker(TypeEnv(self.env), target)
        self._types: dict[tuple[str, str], dict[str, IRType]] = {}
        self._calls: dict[tuple[str, str], tuple[ModuleInterface, FunBinding]] = {}

    # -- argument conversion
    def value(self, x) -> RuntimeValue:
        if isinstance(x, (WordVal, AddrVal, UnitVal)):
            return x
        if isinstance(x, bool):
            return WordVal(int(x))
        if isinstance(x, int):
            return WordVal(x)
        if isinstance(x, (str, bytes)):
            return AddrVal(alloc_string(self.memory, x))
        raise TypeError(f"cannot pass {x!r} to an IR function")

    def _types_of(self, m: ModuleInterface, fb: FunBinding) -> dict[str, IRType]:
        key = (m.name, fb.name)
        t = self._types.get(key)
        if t is None:
            t, _ = self._checker.check_fun(m, fb, [])
            self._types[key] = t
        return t

    def _resolve(self, m: ModuleInterface, fb: FunBinding, name: str) -> tuple[ModuleInterface, FunBinding]:
        key = (m.name, fb.name, name)
        hit = self._calls.get(key)
        if hit is None:
            if name in (fb.name, fb.fundef.name):
                hit = (m, fb)
            else:
                hit = self.env.resolve_fun(name, m)
                if hit is None:
                    raise LookupError(f"unknown function {name}")
            self._calls[key] = hit
        return hit

    def _frame(self, m: ModuleInterface, fb: FunBinding, args: list, ret_vars=()) -> _Frame:
        f = fb.fundef
        if len(args) != len(f.params):
            raise TypeError(f"{fb.name} expects {len(f.params)} argument(s), got {len(args)}")
        vals = {p: a for (p, _), a in zip(f.params, args) if p != "_"}
        return _Frame(m, fb, vals, f.body, self._types_of(m, fb), ret_vars)

    def call(self, entry: str, args: Iterable = ()) -> tuple:
        hit = self.env.resolve_fun(entry, None)
        if hit is None:
            raise LookupError(f"unknown entry function {entry}")
        argv = [self.value(a) for a in args]
        return self._run(self._frame(hit[0], hit[1], argv))

    def _tick(self) -> None:
        self.stats.steps += 1
        if self.stats.steps > self.budget:
            raise Trap(TrapKind.STEP_BUDGET, f"exceeded {self.budget} steps")

    def _run(self, frame: _Frame) -> tuple:
        stack: list[_Frame] = [frame]
        mem = self.memory
        st = self.stats
        while True:
            fr = stack[-1]
            t = fr.term
            vals = fr.vals
            cls = type(t)
            if cls is LetLit:
                self._tick()
                vals[t.var] = AddrVal(t.value) if is_address(t.ty) else WordVal(t.value)
                fr.term = t.body
            elif cls is LetPrim:
                self._tick()
                v = self._prim(t.op, [vals[a] for a in t.args])
                if t.var is not None:
                    vals[t.var] = v
                fr.term = t.body
            elif cls is LetSelect:
                self._tick()
                base = vals[t.src].value
                lay = self._struct_of(fr.types.get(t.src), base)
                off, fty = lay.fields[t.index]
                st.loads += 1
                vals[t.var] = mem.load_typed(base + off, fty)
                fr.term = t.body
            elif cls is LetAlloc:
                self._tick()
                lay = self._alloc_layout(t, fr.types)
                p = mem.alloc_heap(lay.size, lay.align, lay)
                for (off, fty), a in zip(lay.fields, t.args):
                    mem.store_typed(p + off, fty, vals[a])
                st.heap_allocs += 1
                vals[t.var] = AddrVal(p)
                fr.term = t.body
            elif cls is LetStackAlloc:
                self._tick()
                b = mem.stackalloc(t.size, t.align)
                fr.blocks.append(b)
                st.stack_allocs += 1
                vals[t.var] = AddrVal(b.base)
                fr.term = t.body
            elif cls is LetCCall:
                self._tick()
                hook = self.registry.hooks.get(t.callee)
                if hook is None:
                    raise Trap(TrapKind.UNKNOWN_CCALL, f"no C function {t.callee}")
                st.ccalls += 1
                v = hook(mem, [vals[a] for a in t.args])
                if t.var is not None:
                    vals[t.var] = v
                fr.term = t.body
            elif cls is LetCall:
                self._tick()
                st.calls += 1
                cm, cfb = self._resolve(fr.module, fr.fb, t.fn)
                fr.term = t.body
                stack.append(self._frame(cm, cfb, [vals[a] for a in t.args], t.vars))
            elif cls is If:
                fr.term = t.then if vals[t.cond].value != 0 else t.orelse
            elif cls is Return:
                out = tuple(vals[a] for a in t.args)
                for b in fr.blocks:
                    mem.kill(b)
                stack.pop()
                if not stack:
                    return out
                caller = stack[-1]
                if len(out) != len(fr.ret_vars):
                    raise TypeError(f"{fr.fb.name} returned {len(out)} value(s), caller binds {len(fr.ret_vars)}")
                for v, x in zip(fr.ret_vars, out):
                    if v != "_":
                        caller.vals[v] = x
            else:
                raise TypeError(f"cannot evaluate {t!r}")

    def _struct_of(self, t: Optional[IRType], base: int) -> StructLayout:
        if isinstance(t, Ptr) and isinstance(t.target, StructLayout):
            return t.target
        for r in self.memory.regions:
            if r.contains(base):
                b = r.find(base)
                if b is not None and b.base == base and b.layout is not None:
                    return b.layout
        raise TypeError("select through an address with no known struct layout")

    def _alloc_layout(self, t: LetAlloc, types: dict) -> StructLayout:
        if isinstance(t.ty, Ptr) and isinstance(t.ty.target, StructLayout):
            return t.ty.target
        return alloc_layout([types.get(a, INT32) for a in t.args], self.target)

    def _prim(self, op: PrimOp, a: list) -> RuntimeValue:
        mem = self.memory
        st = self.stats
        if op is PrimOp.I32Add:
            return WordVal(wrap32(a[0].value + a[1].value))
        if op is PrimOp.I32Sub:
            return WordVal(wrap32(a[0].value - a[1].value))
        if op is PrimOp.I32Mul:
            return WordVal(wrap32(a[0].value * a[1].value))
        if op is PrimOp.I32Lt:
            return WordVal(int(wrap32(a[0].value) < wrap32(a[1].value)))
        if op is PrimOp.I32Eq:
            return WordVal(int(wrap32(a[0].value) == wrap32(a[1].value)))
        if op is PrimOp.AdrAdd:
            return AddrVal(a[0].value + a[1].value)
        if op is PrimOp.AdrEq:
            return WordVal(int(a[0].value == a[1].value))
        w = self.target.word_bytes
        if op.is_load:
            st.loads += 1
            p = a[0].value
            if op is PrimOp.AdrLoadI32:
                return WordVal(mem.load(p, 4))
            if op is PrimOp.AdrLoadU8:
                return WordVal(mem.load(p, 1, False))
            if op is PrimOp.AdrLoadI64:
                return WordVal(mem.load(p, 8))
            return AddrVal(mem.load(p, w, False))
        if op.is_store:
            st.stores += 1
            p, v = a[0].value, a[1].value
            n = {PrimOp.AdrStoreI32: 4, PrimOp.AdrStoreU8: 1, PrimOp.AdrStoreI64: 8}.get(op, w)
            mem.store(p, n, v)
            return UNIT
        raise TypeError(f"unknown primitive {op}")


def run(env: Union[CompilationEnv, Iterable[ModuleInterface]], entry: str, args: Iterable = (),
        registry: Optional[ForeignRegistry] = None, target: TargetConfig = DEFAULT_TARGET,
        budget: int = DEFAULT_BUDGET) -> tuple[tuple, ExecStats]:
    """Run ``entry`` and return its result values and execution statistics.

    Arguments may be runtime values, Python ints, or str/bytes (passed as
    fresh heap string objects).  Raises ``Trap`` on a runtime fault."""
    it = Interpreter(env, registry, target, budget)
    out = it.call(entry, args)
    return out, it.stats


def count_steps(env, entry: str, args: Iterable = (), registry: Optional[ForeignRegistry] = None,
                target: TargetConfig = DEFAULT_TARGET) -> ExecStats:
    return run(env, entry, args, registry, target)[1]
