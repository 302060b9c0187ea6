"""End-to-end acceptance checks.  Each test prints one PASS/FAIL line."""

from __future__ import annotations

import contextlib
import io
import random
import subprocess
import sys
import time

import pytest

from helpers import env_with, module
from interopir.charon import c_interface_library, gen_impl, gen_interface, parse_header
from interopir.cli import main
from interopir.idl import gen_stubs, parse_idl
from interopir.interp import Interpreter, Trap, TrapKind, builtin_registry, count_steps, read_string, run
from interopir.ir import (
    ADDR,
    DEFAULT_TARGET,
    EXN,
    INT32,
    TARGET64,
    CompilationEnv,
    FunDef,
    LetAlloc,
    LetStackAlloc,
    Return,
    alpha_eq,
    binding_count,
)
from interopir.layout import layout_of
from interopir.mbi import parse_mbi, serialize_mbi
from interopir.mbx import MbiDocument, prelude
from interopir.optimizer import inline_module
from interopir.programs import builtin_env, library_modules, program_modules
from interopir.typecheck import escape_lint, lint_module
from listings import (
    CALLER_OF_LENGTH,
    GETENV_IDL,
    GETENV_STUB,
    GETTIMEOFDAY_IDL,
    GETTIMEOFDAY_STUB,
    LENGTH_PLUS_ONE,
    MAKETREE,
    TREE_ACCESSORS,
    TREE_HEADER,
    TREE_INTERFACE,
    TREE_TYPES,
)
from progen import gen_args, gen_program, lib_module
from test_charon_gen import walk
from test_layout import _struct, oracle_layout, random_struct


@pytest.fixture
def report(capsys):
    """Yield a recorder; print PASS or FAIL for the criterion once the test body finishes."""

    @contextlib.contextmanager
    def criterion(label: str, budget: float | None = None):
        start = time.perf_counter()
        ok = False
        try:
            yield
            elapsed = time.perf_counter() - start
            if budget is not None:
                assert elapsed < budget, f"took {elapsed:.2f}s, budget {budget}s"
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            with capsys.disabled():
                print(f"\n{'PASS' if ok else 'FAIL'} {label} ({elapsed:.2f}s)")

    return criterion


def test_01_golden_stubs(report):
    with report("1 golden stubs", budget=1.0):
        m = gen_stubs(parse_idl(GETENV_IDL + GETTIMEOFDAY_IDL)).module
        assert alpha_eq(m.fun("getenv").fundef, module(GETENV_STUB).fun("getenv").fundef)
        ref = module(GETTIMEOFDAY_STUB, imports=[m]).fun("gettimeofday").fundef
        assert alpha_eq(m.fun("gettimeofday").fundef, ref)


def test_02_golden_embedding(report):
    with report("2 golden embedding", budget=1.0):
        h = parse_header(TREE_HEADER)
        assert gen_interface(h).split() == TREE_INTERFACE.split()
        m = gen_impl(h).module
        ref = module(TREE_TYPES + TREE_ACCESSORS, "ref")
        for name in ("label", "left", "right", "sizeOf"):
            assert alpha_eq(m.fun("Stree." + name).fundef, ref.fun("Stree." + name).fundef)
        it = Interpreter(env_with(m, libs=False))
        assert [it.call(f"Stree.{f}", [100, 0])[0].value for f in ("label", "left", "right")] == [100, 104, 108]
        assert it.call("Stree.sizeOf", [0])[0].value == 12
        ref = module("typedef struct_tree = void\n" + MAKETREE, "ref")
        assert alpha_eq(m.fun("makeTree").fundef, ref.fun("makeTree").fundef)


def test_03_layout_oracle(report):
    with report("3 layout oracle (1000 structs x 2 targets)", budget=5.0):
        for target in (DEFAULT_TARGET, TARGET64):
            rng = random.Random(1000 + target.word_size_bits)
            for _ in range(1000):
                names = random_struct(rng)
                lay = layout_of(_struct(names), target)
                got = (lay.size, lay.align, [o for _, o in lay.field_offsets])
                assert got == oracle_layout(names, target.word_bytes), names


def test_04_inlining_fidelity(report):
    with report("4 inlining fidelity"):
        user = module(CALLER_OF_LENGTH, "user")
        env = env_with(user, libs=False)
        out = inline_module(env, user)
        body = out.fun("f").fundef.body
        wrap = "val g : String -> Int = fun g (s : string, _ : exn_handler) {{ {} }}"
        assert alpha_eq(body, module(wrap.format(LENGTH_PLUS_ONE)).fun("g").fundef.body)
        assert binding_count(body) == 3
        assert count_steps(env.with_module(out), "user.f", ["abc", 0]).steps == 3


def test_05_end_to_end_marshaling(report):
    with report("5 end-to-end marshaling (100 worlds)"):
        m = gen_stubs(parse_idl(GETENV_IDL + GETTIMEOFDAY_IDL)).module
        env = env_with(m, libs=False)
        rng = random.Random(55)
        for _ in range(100):
            environ = {rng.choice(["HOME", "PATH", "USER", "TZ", "LANG"]): "".join(
                rng.choices("abcxyz/._-0123456789", k=rng.randint(0, 16))) for _ in range(rng.randint(0, 4))}
            clock = (rng.randint(0, 2 ** 31 - 1), rng.randint(0, 999_999))
            it = Interpreter(env, builtin_registry(environ=environ, clock=clock))
            for key in ("HOME", "PATH", "USER", "TZ", "LANG"):
                (v,) = it.call("stubs.getenv", [key, 0])
                if key not in environ:
                    assert v.value == 0
                    continue
                s = it.memory.load(v.value, 4)
                assert read_string(it.memory, s) == environ[key].encode()
                assert it.memory.load(s, 4) == len(environ[key])
            it.registry.clock = clock
            res, tv, _ = it.call("stubs.gettimeofday", [0])
            assert res.value == 0
            assert (it.memory.load(tv.value, 4), it.memory.load(tv.value + 4, 4)) == clock


def test_06_end_to_end_embedding(report):
    with report("6 end-to-end embedding (incLabels, d=1..6)"):
        for d in range(1, 7):
            it = Interpreter(builtin_env(), builtin_registry(seed=d))
            (t,) = it.call("makeTree", [d, 0])
            before = walk(it.memory, t.value)
            it.call("incLabels", [t, 0])
            after = walk(it.memory, t.value)
            assert len(after) == 2 ** d - 1
            assert max(after) == max(before) + 1
            assert it.call("maxLabel", [t, -1, 0])[0].value == max(before) + 1
            it.call("freeTree", [t, 0])
            assert it.memory.c_leaked_bytes == 0


def test_07_optimizer_soundness(report):
    with report("7 optimizer soundness (500 programs)", budget=30.0):
        lib = lib_module()
        for seed in range(500):
            m = gen_program(seed)
            assert binding_count(m.fun("main").fundef.body) <= 40
            env = CompilationEnv([prelude().module, lib, m])
            opt = inline_module(env, m)
            args = gen_args(seed)
            v1, s1 = run(env, "main", args, builtin_registry(seed=seed))
            v2, s2 = run(CompilationEnv([prelude().module, lib, opt]), "main", args, builtin_registry(seed=seed))
            assert v1 == v2, seed
            assert s2.steps <= s1.steps, seed


def _trap(src: str) -> TrapKind:
    try:
        run(env_with(module(src)), "f", [0])
    except Trap as t:
        return t.kind
    raise AssertionError("no trap")


TRAP_CASES = {
    TrapKind.USE_AFTER_SCOPE: """module t {
        val leak : () -> Int = fun leak (_ : exn_handler) { stackalloc x[4:4] return x }
        val f : () -> Int = fun f (e : exn_handler) { let (p) = leak(e) let v = AdrLoadI32(p) return v } }""",
    TrapKind.NIL_DEREF: "val f : () -> Int = fun f (e : exn_handler) { let v = AdrLoadI32(nil) return v }",
    TrapKind.DOUBLE_FREE: ("val f : () -> () = fun f (e : exn_handler) "
                           "{ let (p) = malloc(8, e) free(p, e) free(p, e) return () }"),
    TrapKind.MISALIGNED: ("val f : () -> Int = fun f (e : exn_handler) "
                          "{ let (p) = malloc(8, e) let v = AdrLoadI32(AdrAdd(p, 1)) return v }"),
}


def test_08_memory_safety(report):
    with report("8 memory-safety traps and escape lint"):
        for kind, src in TRAP_CASES.items():
            assert {_trap(src) for _ in range(3)} == {kind}
        params = (("p", ADDR), ("k", INT32), ("e", EXN))
        direct = escape_lint(FunDef("f", params, LetStackAlloc("x", 4, 4, Return(("x",)))))
        heap = escape_lint(FunDef("f", params, LetStackAlloc("x", 4, 4, LetAlloc("o", ("x",), Return(("k",))))))
        assert [w.severity for w in direct] == ["warning"] and "via return" in direct[0].message
        assert [w.severity for w in heap] == ["warning"] and "heap object" in heap[0].message
        generated = [gen_stubs(parse_idl(GETENV_IDL + GETTIMEOFDAY_IDL)).module,
                     gen_impl(parse_header(TREE_HEADER)).module, c_interface_library().module]
        assert all(lint_module(m) == [] for m in generated)


def _bench(*args: str) -> str:
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        assert main(["bench", *args]) == 0
    return buf.getvalue()


def test_09_format_stability(report):
    with report("9 format stability"):
        for target in (DEFAULT_TARGET, TARGET64):
            for m in library_modules(target) + program_modules(target):
                doc = MbiDocument(m, target)
                data = serialize_mbi(doc)
                assert parse_mbi(data) == doc
                assert serialize_mbi(parse_mbi(data)) == data
        for args in (["tree", "--depth", "4", "--iters", "2", "--seed", "1"], ["tod", "--calls", "100"]):
            runs = {subprocess.run([sys.executable, "-m", "interopir", "bench", *args],
                                   capture_output=True, check=True).stdout for _ in range(2)}
            assert len(runs) == 1


def _steps(text: str) -> int:
    return int(next(line for line in text.splitlines() if line.startswith("steps=")).split("=")[1])


def test_10_inlining_step_proxy(report):
    with report("10 inlining step-count proxy"):
        for args in (["tree", "--depth", "4", "--iters", "2", "--seed", "1"], ["tod", "--calls", "100"]):
            fast = _steps(_bench(*args))
            slow = _steps(_bench(*args, "--no-inline"))
            assert fast < slow, (args, fast, slow)
