from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import env_with, module, values
from interopir.interp import (
    AddrVal,
    ForeignRegistry,
    Interpreter,
    MemoryModel,
    Trap,
    TrapKind,
    builtin_registry,
    read_string,
    run,
    tree_struct,
)
from interopir.ir import TARGET64, CompilationEnv
from interopir.programs import builtin_env, library_modules
from listings import LENGTH
from progen import gen_args, gen_program, lib_module


def lcg(seed: int, n: int) -> list[int]:
    out, state = [], seed
    for _ in range(n):
        state = (state * 1103515245 + 12345) % 2 ** 31
        out.append(state // 65536 % 32768)
    return out


def trap_of(src: str, entry: str = "f", args=(0,), **world) -> TrapKind:
    env = env_with(module(src))
    with pytest.raises(Trap) as ei:
        run(env, entry, list(args), builtin_registry(**world))
    return ei.value.kind


STRLEN = """
module t {
  // Build "abc" in C memory, wrap it as a string object, then ask for its length.
  val f : () -> Int =
    fun f (e : exn_handler) {
      let (buf) = malloc(4, e)
      AdrStoreU8(buf, 97)
      AdrStoreU8(AdrAdd(buf, 1), 98)
      AdrStoreU8(AdrAdd(buf, 2), 99)
      AdrStoreU8(AdrAdd(buf, 3), 0)
      let s : string = alloc(3, buf)
      let (n) = length(s, e)
      return n
    }
}
"""


class TestExamples:
    def test_length_of_abc(self):
        env = env_with(module(STRLEN))
        (n,), _ = values(env, "f", [0])
        assert n == 3

    def test_length_of_host_string_matches_field(self):
        it = Interpreter(env_with(module(LENGTH, "strings")))
        s = it.value("hello, world")
        (n,) = it.call("strings.length", [s, 0])
        assert n.value == it.memory.load(s.value, 4) == 12
        assert read_string(it.memory, s.value) == b"hello, world"

    def test_getenv_absent_and_present(self):
        env = builtin_env()
        it = Interpreter(env, builtin_registry(environ={"HOME": "/u"}))
        (none,) = it.call("getenv", ["X", 0])
        assert none.value == 0
        (some,) = it.call("getenv", ["HOME", 0])
        inner = it.memory.load(some.value, 4)
        assert read_string(it.memory, inner) == b"/u"

    def test_gettimeofday_clock(self):
        it = Interpreter(builtin_env(), builtin_registry(clock=(1000, 500), timezone=(60, 1)))
        res, tv, tz = it.call("gettimeofday", [0])
        mem = it.memory
        assert res.value == 0
        assert (mem.load(tv.value, 4), mem.load(tv.value + 4, 4)) == (1000, 500)
        assert (mem.load(tz.value, 4), mem.load(tz.value + 4, 4)) == (60, 1)

    def test_gettimeofday_clock_selects(self):
        env = builtin_env()
        (s, u), _ = values(env, "time_demo", [0], clock=(1000, 500))
        assert (s, u) == (1000, 500)

    def test_rand_sequence(self):
        reg = builtin_registry(seed=1)
        assert [reg.rand() for _ in range(5)] == lcg(1, 5) == [16838, 5758, 10113, 17515, 31051]

    @given(st.integers(0, 2 ** 31 - 1))
    def test_rand_matches_lcg(self, seed):
        reg = ForeignRegistry(seed=seed)
        assert [reg.rand() for _ in range(8)] == lcg(seed, 8)

    def test_malloc_reuse(self):
        mem = MemoryModel()
        a = mem.malloc(12)
        mem.free(a)
        assert mem.malloc(12) == a

    def test_make_tree_depth_one(self):
        it = Interpreter(builtin_env(), builtin_registry(seed=1))
        (t,) = it.call("makeTree", [1, 0])
        lay = tree_struct()
        label, left, right = (it.memory.load_typed(t.value + off, ty) for off, ty in lay.fields)
        assert label.value == lcg(1, 1)[0]
        assert left == right == AddrVal(0)

    def test_empty_function(self):
        env = env_with(module("val f : () -> () = fun f (_ : exn_handler) { return () }"))
        vals, stats = run(env, "f", [0])
        assert vals == () and stats.steps == 0

    def test_heap_alloc_accounting(self):
        src = """val f : Int -> Int = fun f (x : int, e : exn_handler) {
            let a = alloc(x) let b = alloc(x, x) let c = alloc(a, b)
            let (y) = second(x, x, e)
            return y }"""
        env = env_with(module(src), lib_module())
        _, stats = values(env, "f", [5, 0])
        assert stats.heap_allocs == 4

    def test_int64_on_32_bit(self):
        src = """val f : () -> Int = fun f (e : exn_handler) {
            stackalloc b[8:4]
            let big : int64 = 4294967298
            AdrStoreI64(b, big)
            let lo = AdrLoadI32(b)
            let hi = AdrLoadI32(AdrAdd(b, 4))
            return (lo, hi) }"""
        (lo, hi), _ = values(env_with(module(src)), "f", [0])
        assert (lo, hi) == (2, 1)

    def test_64_bit_tree_layout(self):
        env = builtin_env(TARGET64)
        (m0, m1, n), _ = values(env, "tree_demo", [3, 0], target=TARGET64)
        assert (m1, n) == (m0 + 1, 7)


class TestTraps:
    def test_use_after_scope(self):
        src = """module t {
          val leak : () -> Int = fun leak (_ : exn_handler) { stackalloc x[4:4] return x }
          val f : () -> Int = fun f (e : exn_handler) { let (p) = leak(e) let v = AdrLoadI32(p) return v }
        }"""
        assert trap_of(src) is TrapKind.USE_AFTER_SCOPE

    def test_nil_deref(self):
        assert trap_of("val f : () -> Int = fun f (e : exn_handler) { let v = AdrLoadI32(nil) return v }") \
            is TrapKind.NIL_DEREF

    def test_near_nil_deref(self):
        src = "val f : () -> Int = fun f (e : exn_handler) { let v = AdrLoadI32(AdrAdd(nil, 8)) return v }"
        assert trap_of(src) is TrapKind.NIL_DEREF

    def test_double_free(self):
        src = "val f : () -> () = fun f (e : exn_handler) { let (p) = malloc(8, e) free(p, e) free(p, e) return () }"
        assert trap_of(src) is TrapKind.DOUBLE_FREE

    def test_use_after_free(self):
        src = ("val f : () -> Int = fun f (e : exn_handler) "
               "{ let (p) = malloc(8, e) free(p, e) let v = AdrLoadI32(p) return v }")
        assert trap_of(src) is TrapKind.USE_AFTER_FREE

    def test_misaligned(self):
        src = ("val f : () -> Int = fun f (e : exn_handler) "
               "{ let (p) = malloc(8, e) let v = AdrLoadI32(AdrAdd(p, 1)) return v }")
        assert trap_of(src) is TrapKind.MISALIGNED

    def test_out_of_bounds(self):
        src = ("val f : () -> () = fun f (e : exn_handler) "
               "{ let (p) = malloc(8, e) AdrStoreI32(AdrAdd(p, 8), 1) return () }")
        assert trap_of(src) is TrapKind.OUT_OF_BOUNDS

    def test_unknown_ccall(self):
        src = "module t { external int mystery () val f : () -> Int = fun f (e : exn_handler) " \
              "{ let r = ccall mystery() return r } }"
        assert trap_of(src) is TrapKind.UNKNOWN_CCALL

    def test_step_budget(self):
        src = "val f : Int -> Int = fun f (x : int, e : exn_handler) : (int) { let (y) = f(x, e) return y }"
        env = env_with(module(src))
        with pytest.raises(Trap) as ei:
            run(env, "f", [1, 0], budget=500)
        assert ei.value.kind is TrapKind.STEP_BUDGET

    def test_free_of_non_malloc_address(self):
        src = "val f : () -> () = fun f (e : exn_handler) { stackalloc b[4:4] free(b, e) return () }"
        assert trap_of(src) is TrapKind.OUT_OF_BOUNDS

    def test_traps_are_deterministic(self):
        src = ("val f : () -> Int = fun f (e : exn_handler) "
               "{ let (p) = malloc(8, e) free(p, e) let v = AdrLoadI32(p) return v }")
        msgs = set()
        for _ in range(3):
            with pytest.raises(Trap) as ei:
                run(env_with(module(src)), "f", [0])
            msgs.add(str(ei.value))
        assert len(msgs) == 1


def test_stack_write_past_block_traps_and_canaries_hold():
    src = "val f : () -> () = fun f (e : exn_handler) { stackalloc b[4:4] AdrStoreI32(AdrAdd(b, 4), 7) return () }"
    it = Interpreter(env_with(module(src)))
    with pytest.raises(Trap):
        it.call("f", [0])
    assert it.memory.canary_violations() == []


@given(st.integers(0, 100_000))
def test_random_programs_keep_canaries_and_are_deterministic(seed):
    m = gen_program(seed)
    env = CompilationEnv(library_modules()[:1] + [lib_module(), m])
    outs = []
    for _ in range(2):
        it = Interpreter(env, builtin_registry(seed=seed))
        vals = it.call("main", gen_args(seed))
        assert it.memory.canary_violations() == []
        outs.append((vals, it.stats.as_dict()))
    assert outs[0] == outs[1]


def test_tree_benchmark_is_deterministic_and_leak_free():
    env = builtin_env()
    runs = []
    for _ in range(2):
        it = Interpreter(env, builtin_registry(seed=1))
        (best,) = it.call("bench_tree", [4, 2, 0])
        assert it.memory.c_leaked_bytes == 0
        assert it.memory.live_c_blocks == 0
        assert it.memory.c_free_bytes > 0
        runs.append((best.value, it.stats.as_dict()))
    assert runs[0] == runs[1]


def test_string_arguments_at_64_bit():
    env = builtin_env(TARGET64)
    (n,), _ = values(env, "strlen_demo", ["abcd", 0], target=TARGET64)
    assert n == 5
