"""Kind and type checking for IR modules, plus the stack-escape lint.

The IR's type system is deliberately weak (roughly C's): addresses are
interchangeable with each other, integers must agree in width, and the
literal ``0`` may stand for a nil address.  What is enforced strictly is the
kind discipline: no variable may hold a memory-kind value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .diagnostics import Diagnostic, SourceSpan, error, warning
from .ir import (
    ADDR,
    DEFAULT_TARGET,
    INT32,
    AmbiguousName,
    CFun,
    CompilationEnv,
    EnumRange,
    ExnHandler,
    FunBinding,
    FunDef,
    If,
    IntN,
    IRType,
    Kind,
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
    StructParam,
    TargetConfig,
    Term,
    Void,
    alignment,
    byte_size,
    is_address,
    is_integer,
    is_normalized,
    kind_of,
    show_type,
    well_formed,
)


@dataclass
class TypeEnv:
    """The compilation environment a module is checked against."""

    imports: CompilationEnv = field(default_factory=CompilationEnv)

    @classmethod
    def of(cls, *modules: ModuleInterface) -> "TypeEnv":
        return cls(CompilationEnv(list(modules)))


@dataclass
class CheckResult:
    module: ModuleInterface
    diagnostics: list[Diagnostic]
    var_types: dict[str, dict[str, IRType]]
    result_types: dict[str, tuple[IRType, ...]]

    @property
    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity == "error"]

    @property
    def ok(self) -> bool:
        return not self.errors


def _int_width(t: IRType) -> Optional[int]:
    if isinstance(t, IntN):
        return t.bits
    if isinstance(t, EnumRange):
        return 32 if byte_size(t) <= 4 else 64
    return None


def compatible(expected: IRType, actual: IRType, zero_literal: bool = False) -> bool:
    if expected == actual:
        return True
    if isinstance(expected, ExnHandler):
        return zero_literal
    if is_address(expected):
        return is_address(actual) or zero_literal
    if is_integer(expected):
        return is_integer(actual) and _int_width(expected) == _int_width(actual)
    return False


def alloc_layout(field_types: list[IRType], target: TargetConfig) -> StructLayout:
    """Natural layout of a heap object whose fields have the given types."""
    off = 0
    align = 1
    fields = []
    for t in field_types:
        a = alignment(t, target)
        off = (off + a - 1) // a * a
        fields.append((off, t))
        off += byte_size(t, target)
        align = max(align, a)
    size = (off + align - 1) // align * align
    return StructLayout(max(size, align) if fields else 0, align, tuple(fields))


class _RecursionPending(Exception):
    pass


class Checker:
    def __init__(self, env: TypeEnv, target: TargetConfig = DEFAULT_TARGET):
        self.env = env
        self.target = target
        self._results: dict[tuple[str, str], Optional[tuple[IRType, ...]]] = {}
        self._in_progress: set[tuple[str, str]] = set()

    # -- callee results
    def results_of(self, module: ModuleInterface, fb: FunBinding) -> tuple[IRType, ...]:
        if fb.fundef.result is not None:
            return fb.fundef.result
        key = (module.name, fb.name)
        if key in self._results:
            res = self._results[key]
            if res is None:
                raise _RecursionPending
            return res
        if key in self._in_progress:
            raise _RecursionPending
        self._in_progress.add(key)
        try:
            diags: list[Diagnostic] = []
            _, res = self.check_fun(module, fb, diags)
        finally:
            self._in_progress.discard(key)
        self._results[key] = res
        if res is None:
            raise _RecursionPending
        return res

    # -- module
    def check_module(self, m: ModuleInterface) -> CheckResult:
        diags: list[Diagnostic] = []
        for dup in m.duplicate_names():
            diags.append(error(f"duplicate binding {dup}"))
        for name, t in m.typedefs:
            for v in well_formed(t, self.target):
                diags.append(error(f"typedef {name}: {v}"))
        for tb in m.type_bindings:
            if tb.rhs is not None and not isinstance(tb.rhs, str):
                for v in well_formed(tb.rhs, self.target):
                    diags.append(error(f"type {tb.name}: {v}"))
        for e in m.externals:
            diags.extend(self._check_external(e.cname, e.sig))
        var_types: dict[str, dict[str, IRType]] = {}
        results: dict[str, tuple[IRType, ...]] = {}
        for fb in m.fun_bindings:
            vt, res = self.check_fun(m, fb, diags)
            var_types[fb.name] = vt
            if res is not None:
                results[fb.name] = res
                self._results[(m.name, fb.name)] = res
        return CheckResult(m, diags, var_types, results)

    def _check_external(self, cname: str, sig: CFun) -> list[Diagnostic]:
        out = []
        for v in well_formed(sig, self.target):
            out.append(error(f"external {cname}: {v}"))
        for i, p in enumerate(sig.params):
            if isinstance(p, Void):
                out.append(error(f"external {cname}: parameter {i} has void type"))
            elif not isinstance(p, StructParam) and kind_of(p, self.target) > Kind.VAR:
                out.append(error(f"external {cname}: parameter {i} has memory kind ({show_type(p)})"))
        r = sig.result
        if not isinstance(r, (Void, StructParam)) and kind_of(r, self.target) > Kind.VAR:
            out.append(error(f"external {cname}: result has memory kind ({show_type(r)})"))
        return out

    # -- functions
    def check_fun(self, m: ModuleInterface, fb: FunBinding, diags: list[Diagnostic]):
        f = fb.fundef
        ctx = _FunCtx(self, m, fb, diags)
        if not is_normalized(f.body):
            ctx.err(f"{fb.name}: body is not normalized", f.span)
            return ctx.types, None
        for name, t in f.params:
            ctx.bind(name, t, f.span, is_param=True)
        ctx.term(f.body)
        res = f.result
        if res is None:
            res = ctx.joined_result()
        elif ctx.returns:
            for ts, span in ctx.returns:
                ctx.check_return(res, ts, span)
        return ctx.types, res


class _FunCtx:
    def __init__(self, checker: Checker, m: ModuleInterface, fb: FunBinding, diags: list[Diagnostic]):
        self.c = checker
        self.target = checker.target
        self.m = m
        self.fb = fb
        self.diags = diags
        self.types: dict[str, IRType] = {}
        self.zero: set[str] = set()
        self.bound: set[str] = set()
        self.returns: list[tuple[list[tuple[IRType, bool]], Optional[SourceSpan]]] = []
        self.span: Optional[SourceSpan] = fb.fundef.span

    def err(self, msg: str, span: Optional[SourceSpan] = None) -> None:
        self.diags.append(error(msg, span or self.span))

    def bind(self, name: Optional[str], t: IRType, span, is_param: bool = False) -> None:
        if name is None:
            return
        where = f"{self.fb.name}: {'parameter' if is_param else 'variable'} {name}"
        if isinstance(t, Void):
            self.err(f"{where} has void type", span)
        elif kind_of(t, self.target) > Kind.VAR:
            self.err(f"memory-kind binding: {where} has type {show_type(t)}", span)
        if name == "_":
            return
        if name in self.bound:
            self.err(f"{where} is bound more than once", span)
        self.bound.add(name)
        self.types[name] = t

    def use(self, name: str, span) -> tuple[IRType, bool]:
        if name == "_" or name not in self.types:
            self.err(f"{self.fb.name}: unbound variable {name}", span)
            return ADDR, True
        return self.types[name], name in self.zero

    def check_arg(self, what: str, expected: IRType, name: str, span) -> None:
        if name == "_" or name not in self.types:
            self.use(name, span)
            return
        t, z = self.use(name, span)
        if not compatible(expected, t, z):
            self.err(f"{self.fb.name}: {what} expects {show_type(expected)}, "
                     f"got {name} : {show_type(t)}", span)

    def annotate(self, var: Optional[str], ann: Optional[IRType], actual: IRType, span) -> IRType:
        if ann is None:
            return actual
        if kind_of(ann, self.target) > Kind.VAR:
            return ann  # reported by bind()
        if not compatible(ann, actual) and not compatible(actual, ann):
            self.err(f"{self.fb.name}: {var} annotated {show_type(ann)} but bound to {show_type(actual)}", span)
        return ann

    def term(self, t: Term) -> None:
        while True:
            span = getattr(t, "span", None) or self.span
            if isinstance(t, Return):
                self.returns.append(([self.use(a, span) for a in t.args], span))
                return
            if isinstance(t, If):
                ct, _ = self.use(t.cond, span)
                if kind_of(ct, self.target) != Kind.WORD or isinstance(ct, (CFun, ExnHandler)):
                    self.err(f"{self.fb.name}: condition {t.cond} must be a word-kind value, "
                             f"not {show_type(ct)}", span)
                saved = (dict(self.types), set(self.zero))
                self.term(t.then)
                self.types, self.zero = dict(saved[0]), set(saved[1])
                self.term(t.orelse)
                self.types, self.zero = saved
                return
            if isinstance(t, LetPrim):
                self.prim(t, span)
            elif isinstance(t, LetAlloc):
                fts = []
                for a in t.args:
                    at, _ = self.use(a, span)
                    if kind_of(at, self.target) > Kind.VAR:
                        self.err(f"{self.fb.name}: alloc field {a} has memory kind", span)
                    fts.append(at)
                ty = Ptr(alloc_layout(fts, self.target))
                self.bind(t.var, self.annotate(t.var, t.ty, ty, span), span)
            elif isinstance(t, LetSelect):
                st, _ = self.use(t.src, span)
                ft: IRType = INT32
                if isinstance(st, Ptr) and isinstance(st.target, StructLayout):
                    fields = st.target.fields
                    if 0 <= t.index < len(fields):
                        ft = fields[t.index][1]
                    else:
                        self.err(f"{self.fb.name}: {t.src}#{t.index} selects a missing field "
                                 f"(struct has {len(fields)})", span)
                else:
                    self.err(f"{self.fb.name}: {t.src}#{t.index} selects through {show_type(st)}, "
                             f"not a pointer to a struct", span)
                self.bind(t.var, self.annotate(t.var, t.ty, ft, span), span)
            elif isinstance(t, LetCCall):
                self.ccall(t, span)
            elif isinstance(t, LetCall):
                self.call(t, span)
            elif isinstance(t, LetStackAlloc):
                if t.size <= 0 or t.align <= 0 or t.align & (t.align - 1):
                    self.err(f"{self.fb.name}: stackalloc {t.var}[{t.size}:{t.align}] needs a positive size "
                             f"and power-of-two alignment", span)
                self.bind(t.var, ADDR, span)
            elif isinstance(t, LetLit):
                self.bind(t.var, t.ty, span)
                if t.value == 0:
                    self.zero.add(t.var)
            t = t.body

    def prim(self, t: LetPrim, span) -> None:
        op: PrimOp = t.op
        if len(t.args) != op.arity:
            self.err(f"{self.fb.name}: {op.value} expects {op.arity} argument(s), got {len(t.args)}", span)
        for i, (p, a) in enumerate(zip(op.params, t.args)):
            self.check_arg(f"{op.value} argument {i + 1}", p, a, span)
        if op.result is None:
            if t.var is not None:
                self.err(f"{self.fb.name}: {op.value} produces no value to bind to {t.var}", span)
            return
        res = op.result
        if t.var is not None:
            self.bind(t.var, self.annotate(t.var, t.ty, res, span), span)

    def ccall(self, t: LetCCall, span) -> None:
        sig: Optional[CFun] = None
        local = self.types.get(t.callee)
        if isinstance(local, CFun):
            sig = local
        else:
            try:
                hit = self.c.env.imports.resolve_external(t.callee, self.m)
            except AmbiguousName as e:
                self.err(f"{self.fb.name}: {e}", span)
                hit = None
            if hit is not None:
                sig = hit[1].sig
        if sig is None:
            self.err(f"{self.fb.name}: unknown ccall target {t.callee}", span)
            if t.var is not None:
                self.bind(t.var, t.ty or ADDR, span)
            return
        if len(t.args) != len(sig.params):
            self.err(f"{self.fb.name}: ccall {t.callee} expects {len(sig.params)} argument(s), "
                     f"got {len(t.args)}", span)
        for i, (p, a) in enumerate(zip(sig.params, t.args)):
            if isinstance(p, StructParam):
                at, _ = self.use(a, span)
                ok = isinstance(at, Ptr) and at.target == p.layout or at == ADDR
                if not ok:
                    self.err(f"{self.fb.name}: ccall {t.callee} argument {i + 1} must be the address of "
                             f"{show_type(p.layout)}, got {show_type(at)}", span)
            else:
                self.check_arg(f"ccall {t.callee} argument {i + 1}", p, a, span)
        if isinstance(sig.result, Void):
            if t.var is not None:
                self.err(f"{self.fb.name}: ccall {t.callee} returns void but binds {t.var}", span)
            return
        res = ADDR if isinstance(sig.result, StructParam) else sig.result
        if t.var is not None:
            self.bind(t.var, self.annotate(t.var, t.ty, res, span), span)

    def call(self, t: LetCall, span) -> None:
        f = self.fb.fundef
        if t.fn == f.name or t.fn == self.fb.name:
            params = [p for _, p in f.params]
            res = f.result
            if res is None:
                if t.vars:
                    self.err(f"{self.fb.name}: recursive call to {t.fn} needs a result annotation", span)
                res = tuple(ADDR for _ in t.vars)
        else:
            try:
                hit = self.c.env.imports.resolve_fun(t.fn, self.m)
            except AmbiguousName as e:
                self.err(f"{self.fb.name}: {e}", span)
                hit = None
            if hit is None:
                self.err(f"{self.fb.name}: unknown function {t.fn}", span)
                for v in t.vars:
                    self.bind(v, ADDR, span)
                return
            cm, cfb = hit
            params = [p for _, p in cfb.fundef.params]
            try:
                res = self.c.results_of(cm, cfb)
            except _RecursionPending:
                self.err(f"{self.fb.name}: result of recursive function {t.fn} needs an annotation", span)
                res = tuple(ADDR for _ in t.vars)
        if len(t.args) != len(params):
            self.err(f"{self.fb.name}: {t.fn} expects {len(params)} argument(s), got {len(t.args)}", span)
        for i, (p, a) in enumerate(zip(params, t.args)):
            self.check_arg(f"{t.fn} argument {i + 1}", p, a, span)
        if len(res) != len(t.vars):
            self.err(f"{self.fb.name}: {t.fn} returns {len(res)} value(s), {len(t.vars)} bound", span)
            res = tuple(ADDR for _ in t.vars)
        for v, rt in zip(t.vars, res):
            self.bind(v, rt, span)

    def joined_result(self) -> Optional[tuple[IRType, ...]]:
        if not self.returns:
            return None
        n = len(self.returns[0][0])
        joined: list[Optional[IRType]] = [None] * n
        # prefer the first type that is not just a literal 0
        zero_only = [True] * n
        for ts, span in self.returns:
            if len(ts) != n:
                self.err(f"{self.fb.name}: returns {len(ts)} value(s) here but {n} elsewhere", span)
                continue
            for i, (t, z) in enumerate(ts):
                if joined[i] is None or (zero_only[i] and not z):
                    joined[i] = t
                    zero_only[i] = z
        res = tuple(t if t is not None else ADDR for t in joined)
        for ts, span in self.returns:
            if len(ts) == n:
                self.check_return(res, ts, span)
        return res

    def check_return(self, res: tuple[IRType, ...], ts, span) -> None:
        if len(ts) != len(res):
            self.err(f"{self.fb.name}: returns {len(ts)} value(s), declared {len(res)}", span)
            return
        for i, (want, (t, z)) in enumerate(zip(res, ts)):
            if not compatible(want, t, z) and not compatible(t, want):
                self.err(f"{self.fb.name}: return value {i + 1} has type {show_type(t)}, "
                         f"expected {show_type(want)}", span)


def check_module(env: TypeEnv, m: ModuleInterface, target: TargetConfig = DEFAULT_TARGET) -> CheckResult:
    """Check ``m`` against the compilation environment ``env``."""
    return Checker(env, target).check_module(m)


# ---------------------------------------------------------------------------
# Escape lint


def escape_lint(f: Union[FunDef, FunBinding]) -> list[Diagnostic]:
    """Warn where a stack-allocated address (or one derived from it with
    AdrAdd) is returned, stored as an address, or put into a heap object."""
    if isinstance(f, FunBinding):
        f = f.fundef
    out: list[Diagnostic] = []

    def walk(t: Term, tainted: frozenset[str]) -> None:
        while True:
            span = getattr(t, "span", None) or f.span
            if isinstance(t, Return):
                for a in t.args:
                    if a in tainted:
                        out.append(warning(f"{f.name}: stack address {a} escapes via return", span))
                return
            if isinstance(t, If):
                walk(t.then, tainted)
                walk(t.orelse, tainted)
                return
            if isinstance(t, LetStackAlloc):
                tainted = tainted | {t.var}
            elif isinstance(t, LetPrim):
                if t.op is PrimOp.AdrAdd and t.args[0] in tainted and t.var is not None:
                    tainted = tainted | {t.var}
                elif t.op is PrimOp.AdrStoreAdr and len(t.args) == 2 and t.args[1] in tainted:
                    out.append(warning(f"{f.name}: stack address {t.args[1]} escapes via store", span))
            elif isinstance(t, LetAlloc):
                for a in t.args:
                    if a in tainted:
                        out.append(warning(f"{f.name}: stack address {a} escapes into heap object {t.var}", span))
            t = t.body

    walk(f.body, frozenset())
    return out


def lint_module(m: ModuleInterface) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    for fb in m.fun_bindings:
        out.extend(escape_lint(fb.fundef))
    return out
