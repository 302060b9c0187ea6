"""Random trap-free IR programs for optimizer soundness checks.

A generated program is a ``lib`` module of small helpers (some inlinable,
one branching, one recursive) plus a ``main`` module whose entry point
``main(a, b, e)`` is a random straight-line ANF body ending in a Return or
a tail If.  Results are integers only, so heap addresses never leak into
compared values."""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from interopir.ir import (
    EXN,
    INT32,
    CFun,
    External,
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
    PrimOp,
    Return,
    Term,
)
from interopir.mbx import parse_mbx, normalize_document, prelude_typedefs

LIB_MBX = """\
module lib {
  external int rand ()

  val inc : Int -> Int =
    fun inc (x : int, _ : exn_handler) {
      let t = I32Add(x, 1)
      return t
    }

  // Box two values and read the second back.
  val second : (Int, Int) -> Int =
    fun second (x : int, y : int, _ : exn_handler) {
      let o = alloc(x, y)
      let r = o#1
      return r
    }

  val clamp : Int -> Int =
    fun clamp (x : int, _ : exn_handler) {
      if I32Lt(x, 0) then return 0
      else return x
    }

  // Round-trip a value through scoped stack storage.
  val via : Int -> Int =
    fun via (x : int, _ : exn_handler) {
      stackalloc b[4:4]
      AdrStoreI32(b, x)
      let y = AdrLoadI32(b)
      return y
    }

  val noise : () -> Int =
    fun noise (_ : exn_handler) {
      let r = ccall rand()
      return r
    }

  val sumTo : Int -> Int =
    fun sumTo (n : int, e : exn_handler) : (int) {
      if I32Lt(n, 1) then return 0
      else {
        let m = I32Sub(n, 1)
        let (s) = sumTo(m, e)
        let t = I32Add(s, n)
        return t
      }
    }

  val both : (Int, Int) -> (Int, Int) =
    fun both (x : int, y : int, _ : exn_handler) {
      let s = I32Add(x, y)
      let d = I32Sub(x, y)
      return (s, d)
    }
}
"""

# name -> (int argument count, result count)
LIB_FUNS = {
    "inc": (1, 1),
    "second": (2, 1),
    "clamp": (1, 1),
    "via": (1, 1),
    "noise": (0, 1),
    "sumTo": (1, 1),
    "both": (2, 2),
}

_ARITH = (PrimOp.I32Add, PrimOp.I32Sub, PrimOp.I32Mul, PrimOp.I32Lt, PrimOp.I32Eq)
_INTERESTING = (0, 1, 2, 3, -1, 7, 255, 2 ** 31 - 1, -(2 ** 31), 65536)


def lib_module() -> ModuleInterface:
    return normalize_document(parse_mbx(LIB_MBX, "lib.mbx", typedefs=prelude_typedefs())).module


@dataclass
class _Scope:
    ints: list[str]
    objs: list[tuple[str, int]] = field(default_factory=list)  # (var, field count)
    stacks: list[str] = field(default_factory=list)  # 8:4 blocks

    def copy(self) -> "_Scope":
        return _Scope(list(self.ints), list(self.objs), list(self.stacks))


class ProgramGen:
    def __init__(self, rng: random.Random, max_bindings: int = 40):
        self.rng = rng
        self.budget = max_bindings
        self.n = 0

    def fresh(self, prefix: str = "v") -> str:
        self.n += 1
        return f"{prefix}{self.n}"

    def _int(self, sc: _Scope) -> str:
        return self.rng.choice(sc.ints)

    def _lit(self) -> int:
        if self.rng.random() < 0.5:
            return self.rng.choice(_INTERESTING)
        return self.rng.randint(-1000, 1000)

    def _binding(self, sc: _Scope):
        """One random binding as ``(count, wrap)`` where ``wrap(body)`` builds it."""
        r = self.rng
        kinds = ["lit", "arith", "arith", "alloc", "call", "ccall", "stack"]
        if sc.objs:
            kinds += ["select", "select", "adreq"]
        if sc.stacks:
            kinds += ["store", "load"]
        k = r.choice(kinds)
        if k == "lit":
            v = self.fresh()
            val = self._lit()
            sc.ints.append(v)
            return 1, lambda b: LetLit(v, val, b)
        if k == "arith":
            v = self.fresh()
            op = r.choice(_ARITH)
            x, y = self._int(sc), self._int(sc)
            sc.ints.append(v)
            return 1, lambda b: LetPrim(v, op, (x, y), b)
        if k == "alloc":
            v = self.fresh("o")
            xs = tuple(self._int(sc) for _ in range(r.randint(1, 3)))
            sc.objs.append((v, len(xs)))
            return 1, lambda b: LetAlloc(v, xs, b)
        if k == "select":
            o, nf = r.choice(sc.objs)
            v = self.fresh()
            i = r.randrange(nf)
            sc.ints.append(v)
            return 1, lambda b: LetSelect(v, o, i, b)
        if k == "adreq":
            (o1, _), (o2, _) = r.choice(sc.objs), r.choice(sc.objs)
            v = self.fresh()
            sc.ints.append(v)
            return 1, lambda b: LetPrim(v, PrimOp.AdrEq, (o1, o2), b)
        if k == "call":
            fn = r.choice(sorted(LIB_FUNS))
            nargs, nres = LIB_FUNS[fn]
            if fn == "sumTo":
                # keep recursion shallow: pass a fresh small literal
                n = self.fresh()
                k_ = r.randint(0, 6)
                v = self.fresh()
                sc.ints.append(v)
                return 2, lambda b: LetLit(n, k_, LetCall((v,), fn, (n, "e"), b))
            args = tuple(self._int(sc) for _ in range(nargs)) + ("e",)
            vs = tuple(self.fresh() for _ in range(nres))
            sc.ints.extend(vs)
            return 1, lambda b: LetCall(vs, fn, args, b)
        if k == "ccall":
            v = self.fresh()
            sc.ints.append(v)
            return 1, lambda b: LetCCall(v, "rand", (), b, INT32)
        if k == "stack":
            v = self.fresh("s")
            sc.stacks.append(v)
            return 1, lambda b: LetStackAlloc(v, 8, 4, b)
        s = r.choice(sc.stacks)
        off4 = r.random() < 0.5
        if k == "store":
            x = self._int(sc)
            if off4:
                c, a = self.fresh(), self.fresh("p")
                return 3, lambda b: LetLit(c, 4, LetPrim(a, PrimOp.AdrAdd, (s, c), LetPrim(None, PrimOp.AdrStoreI32, (a, x), b)))
            return 1, lambda b: LetPrim(None, PrimOp.AdrStoreI32, (s, x), b)
        v = self.fresh()
        if off4:
            c, a = self.fresh(), self.fresh("p")
            sc.ints.append(v)
            return 3, lambda b: LetLit(c, 4, LetPrim(a, PrimOp.AdrAdd, (s, c), LetPrim(v, PrimOp.AdrLoadI32, (a,), b)))
        sc.ints.append(v)
        return 1, lambda b: LetPrim(v, PrimOp.AdrLoadI32, (s,), b)

    def _ret(self, sc: _Scope) -> Return:
        k = self.rng.randint(1, 3)
        return Return(tuple(self.rng.choice(sc.ints) for _ in range(k)))

    def body(self, sc: _Scope, allow_if: bool = True) -> Term:
        wraps = []
        while self.budget > 3 and self.rng.random() < 0.92:
            cost, w = self._binding(sc)
            self.budget -= cost
            wraps.append(w)
        if allow_if and self.budget > 2 and self.rng.random() < 0.4:
            cond = self._int(sc)
            left = self.body(sc.copy(), allow_if=False)
            right = self.body(sc.copy(), allow_if=False)
            tail: Term = If(cond, left, right)
        else:
            tail = self._ret(sc)
        for w in reversed(wraps):
            tail = w(tail)
        return tail


def _pad_returns(t: Term, n: int, filler: str) -> Term:
    """Make every Return in ``t`` return exactly ``n`` values."""
    if isinstance(t, Return):
        args = t.args[:n] + (filler,) * (n - len(t.args))
        return Return(args)
    if isinstance(t, If):
        return If(t.cond, _pad_returns(t.then, n, filler), _pad_returns(t.orelse, n, filler))
    return replace(t, body=_pad_returns(t.body, n, filler))


def gen_program(seed: int, max_bindings: int = 40) -> ModuleInterface:
    """A ``main`` module with entry ``main(a, b, e)`` and at most ``max_bindings`` lets."""
    rng = random.Random(seed)
    g = ProgramGen(rng, max_bindings)
    body = g.body(_Scope(["a", "b"]))
    body = _pad_returns(body, 3, "a")
    f = FunDef("main", (("a", INT32), ("b", INT32), ("e", EXN)), body, (INT32, INT32, INT32))
    fb = FunBinding("main", "(Int, Int) -> (Int, Int, Int)", f)
    ext = External("rand", CFun((), INT32))
    return ModuleInterface("main", fun_bindings=(fb,), externals=(ext,))


def gen_args(seed: int) -> list[int]:
    rng = random.Random(seed ^ 0x5EED)
    return [rng.randint(-50, 50), rng.randint(-50, 50), 0]

