"""Cross-module inlining and local simplification of normalized IR."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

from .ir import (
    INT32,
    CompilationEnv,
    FunBinding,
    FunDef,
    If,
    LetAlloc,
    LetCall,
    LetCCall,
    LetLit,
    LetPrim,
    LetSelect,
    LetStackAlloc,
    ModuleInterface,
    NameSupply,
    PrimOp,
    Return,
    Term,
    binding_count,
    called_functions,
    free_vars,
    has_branches,
    head_args,
    rename_bound,
    subst,
)
from .interp import wrap32


@dataclass(frozen=True)
class InlinePolicy:
    max_body_size: int = 20
    max_depth: int = 4
    allow_recursive: bool = False

    def __post_init__(self) -> None:
        if self.max_body_size <= 0 or self.max_depth <= 0:
            raise ValueError("inline thresholds must be positive")
        if self.allow_recursive:
            raise ValueError("recursive inlining is not supported")


DEFAULT_POLICY = InlinePolicy()


def is_self_recursive(fb: FunBinding) -> bool:
    calls = called_functions(fb.fundef.body)
    return fb.name in calls or fb.fundef.name in calls


def _qualify(t: Term, cm: ModuleInterface, fb: FunBinding) -> Term:
    """Make the callee's own function references resolvable from elsewhere."""
    def q(name: str) -> str:
        if name in (fb.name, fb.fundef.name):
            return f"{cm.name}.{fb.name}"
        if cm.fun(name) is not None:
            return f"{cm.name}.{name}"
        return name

    if isinstance(t, Return):
        return t
    if isinstance(t, If):
        return replace(t, then=_qualify(t.then, cm, fb), orelse=_qualify(t.orelse, cm, fb))
    body = _qualify(t.body, cm, fb)
    if isinstance(t, LetCall):
        return replace(t, fn=q(t.fn), body=body)
    return replace(t, body=body)


def _splice(body: Term, vars_: tuple[str, ...], cont: Term) -> Term:
    """Replace each ``return rs`` in ``body`` with ``cont`` with vars := rs."""
    if isinstance(body, Return):
        m = {v: r for v, r in zip(vars_, body.args) if v != "_"}
        return subst(cont, m)
    if isinstance(body, If):
        return replace(body, then=_splice(body.then, vars_, cont), orelse=_splice(body.orelse, vars_, cont))
    return replace(body, body=_splice(body.body, vars_, cont))


def _is_tail(t: LetCall) -> bool:
    b = t.body
    return isinstance(b, Return) and b.args == t.vars and "_" not in t.vars


class _Inliner:
    def __init__(self, env: CompilationEnv, policy: InlinePolicy, supply: NameSupply):
        self.env = env
        self.policy = policy
        self.supply = supply

    def candidate(self, t: LetCall, module: Optional[ModuleInterface], active: tuple[str, ...]):
        try:
            hit = self.env.resolve_fun(t.fn, module)
        except LookupError:
            return None
        if hit is None:
            return None
        cm, fb = hit
        key = f"{cm.name}.{fb.name}"
        if key in active or is_self_recursive(fb):
            return None
        f = fb.fundef
        if len(f.params) != len(t.args) or binding_count(f.body) > self.policy.max_body_size:
            return None
        if has_branches(f.body) and not _is_tail(t):
            return None
        return cm, fb, key

    def term(self, t: Term, module: Optional[ModuleInterface], depth: int, active: tuple[str, ...]) -> Term:
        if isinstance(t, Return):
            return t
        if isinstance(t, If):
            return replace(t, then=self.term(t.then, module, depth, active),
                           orelse=self.term(t.orelse, module, depth, active))
        if isinstance(t, LetCall) and depth < self.policy.max_depth:
            hit = self.candidate(t, module, active)
            if hit is not None:
                cm, fb, key = hit
                f = fb.fundef
                m = {p: a for (p, _), a in zip(f.params, t.args) if p != "_"}
                body = rename_bound(f.body, self.supply, m)
                if cm is not module:
                    body = _qualify(body, cm, fb)
                body = self.term(body, cm, depth + 1, active + (key,))
                cont = self.term(t.body, module, depth, active)
                return _splice(body, t.vars, cont)
        return replace(t, body=self.term(t.body, module, depth, active))


def inline(env: CompilationEnv, f: Union[FunDef, FunBinding], policy: InlinePolicy = DEFAULT_POLICY,
           module: Optional[ModuleInterface] = None) -> FunDef:
    """Inline known, non-recursive, small callees into ``f``.

    ``module`` is the module ``f`` belongs to, used to resolve names."""
    fd = f.fundef if isinstance(f, FunBinding) else f
    own = ()
    if module is not None and isinstance(f, FunBinding):
        own = (f"{module.name}.{f.name}",)
    supply = NameSupply.avoiding(fd, *(fb.fundef for m in env.modules.values() for fb in m.fun_bindings))
    body = _Inliner(env, policy, supply).term(fd.body, module, 0, own)
    return replace(fd, body=body)


# ---------------------------------------------------------------------------
# Simplification


_FOLD_I32 = {
    PrimOp.I32Add: lambda a, b: wrap32(a + b),
    PrimOp.I32Sub: lambda a, b: wrap32(a - b),
    PrimOp.I32Mul: lambda a, b: wrap32(a * b),
    PrimOp.I32Lt: lambda a, b: int(wrap32(a) < wrap32(b)),
    PrimOp.I32Eq: lambda a, b: int(wrap32(a) == wrap32(b)),
}

def _removable(t: Term) -> bool:
    if isinstance(t, (LetLit, LetSelect, LetAlloc)):
        return True
    if isinstance(t, LetPrim):
        return not t.op.is_store
    return False


def _simp(t: Term, ren: dict, lits: dict, allocs: dict) -> Term:
    chain: list[Term] = []
    while True:
        if isinstance(t, Return):
            term: Term = Return(tuple(ren.get(a, a) for a in t.args), span=t.span)
            break
        if isinstance(t, If):
            c = ren.get(t.cond, t.cond)
            if c in lits:
                t = t.then if lits[c][0] != 0 else t.orelse
                continue
            term = If(c, _simp(t.then, dict(ren), dict(lits), dict(allocs)),
                      _simp(t.orelse, dict(ren), dict(lits), dict(allocs)), span=t.span)
            break
        args = tuple(ren.get(a, a) for a in head_args(t))
        if isinstance(t, LetPrim):
            op = t.op
            if op.is_store:
                allocs.clear()
            if t.var is not None and not op.is_store and not op.is_load:
                vals = [lits.get(a) for a in args]
                if op in _FOLD_I32 and all(v is not None for v in vals):
                    v = _FOLD_I32[op](vals[0][0], vals[1][0])
                    lits[t.var] = (v, INT32)
                    chain.append(LetLit(t.var, v, t, INT32, span=t.span))
                    t = t.body
                    continue
                if op is PrimOp.AdrEq and (args[0] == args[1] or all(v is not None for v in vals)):
                    v = 1 if args[0] == args[1] else int(vals[0][0] == vals[1][0])
                    lits[t.var] = (v, INT32)
                    chain.append(LetLit(t.var, v, t, INT32, span=t.span))
                    t = t.body
                    continue
                if op is PrimOp.AdrAdd and vals[1] is not None and vals[1][0] == 0:
                    ren[t.var] = args[0]
                    if args[0] in lits:
                        lits[t.var] = lits[args[0]]
                    t = t.body
                    continue
            chain.append(replace(t, args=args))
        elif isinstance(t, LetSelect):
            src = args[0]
            fields = allocs.get(src)
            if fields is not None and 0 <= t.index < len(fields):
                target = fields[t.index]
                ren[t.var] = target
                if target in lits:
                    lits[t.var] = lits[target]
                t = t.body
                continue
            chain.append(replace(t, src=src))
        elif isinstance(t, LetAlloc):
            chain.append(replace(t, args=args))
            allocs[t.var] = args
        elif isinstance(t, LetCCall):
            allocs.clear()
            chain.append(replace(t, args=args, callee=ren.get(t.callee, t.callee)))
        elif isinstance(t, LetCall):
            allocs.clear()
            chain.append(replace(t, args=args))
        elif isinstance(t, LetLit):
            lits[t.var] = (t.value, t.ty)
            chain.append(t)
        elif isinstance(t, LetStackAlloc):
            chain.append(t)
        else:
            raise TypeError(f"not a term: {t!r}")
        t = t.body
    # rebuild back to front, dropping dead pure bindings
    used = set(free_vars(term))
    for b in reversed(chain):
        var = getattr(b, "var", None)
        if _removable(b) and (var is None or var not in used):
            continue
        used.update(a for a in head_args(b) if isinstance(a, str))
        if isinstance(b, LetCCall):
            used.add(b.callee)
        term = replace(b, body=term)
    return term


def simplify_once(t: Term) -> Term:
    return _simp(t, {}, {}, {})


def simplify(t: Term, max_rounds: int = 50) -> Term:
    """Fold constants, forward known alloc fields, prune literal branches and
    drop dead pure bindings, repeating to a fixpoint."""
    for _ in range(max_rounds):
        nt = simplify_once(t)
        if nt == t:
            return nt
        t = nt
    return t


def simplify_fundef(f: FunDef) -> FunDef:
    return replace(f, body=simplify(f.body))


def optimize_fundef(env: CompilationEnv, fb: FunBinding, module: Optional[ModuleInterface] = None,
                    policy: Optional[InlinePolicy] = DEFAULT_POLICY) -> FunDef:
    f = fb.fundef if policy is None else inline(env, fb, policy, module)
    return simplify_fundef(f)


def inline_module(env: CompilationEnv, m: ModuleInterface,
                  policy: Optional[InlinePolicy] = DEFAULT_POLICY) -> ModuleInterface:
    """Inline and simplify every function of ``m``; ``policy=None`` only simplifies."""
    env = env.with_module(m)
    funs = []
    for fb in m.fun_bindings:
        funs.append(replace(fb, fundef=optimize_fundef(env, fb, m, policy)))
    return replace(m, fun_bindings=tuple(funs))


__all__ = [
    "InlinePolicy", "DEFAULT_POLICY", "inline", "inline_module", "simplify", "simplify_once",
    "simplify_fundef", "optimize_fundef", "is_self_recursive",
]
