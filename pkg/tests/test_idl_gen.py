from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import env_with, module
from interopir.diagnostics import ParseError
from interopir.idl import IdlFunction, IdlTypedef, gen_signature, gen_stubs, parse_idl
from interopir.interp import Interpreter, WordVal, builtin_registry, read_string
from interopir.ir import TARGET64, LetCCall, Return, alpha_eq, binding_count
from interopir.typecheck import TypeEnv, check_module, lint_module
from listings import GETENV_IDL, GETENV_SIG, GETENV_STUB, GETTIMEOFDAY_IDL, GETTIMEOFDAY_SIG, GETTIMEOFDAY_STUB

BOTH = GETENV_IDL + GETTIMEOFDAY_IDL


def stubs(text: str = BOTH, **kw):
    return gen_stubs(parse_idl(text), **kw).module


def parse_errors(text: str) -> list[str]:
    with pytest.raises(ParseError) as ei:
        parse_idl(text)
    return [d.message for d in ei.value.diagnostics]


class TestParse:
    def test_getenv(self):
        td, fn = parse_idl(GETENV_IDL)
        assert isinstance(td, IdlTypedef) and td.name == "StringOpt"
        assert td.attrs == {"unique", "string"}
        assert isinstance(fn, IdlFunction) and [p.attrs for p in fn.params] == [{"in", "string"}]

    def test_gettimeofday(self):
        decls = parse_idl(GETTIMEOFDAY_IDL)
        tds = [d for d in decls if isinstance(d, IdlTypedef)]
        (fn,) = [d for d in decls if isinstance(d, IdlFunction)]
        assert [t.name for t in tds] == ["timeval", "timezone"] and all(t.is_struct for t in tds)
        assert [p.attrs for p in fn.params] == [{"ref", "out"}] * 2

    def test_unknown_attribute(self):
        assert "unknown attribute inout" in parse_errors("void f ([inout] int x);")

    def test_out_must_be_pointer(self):
        assert any("not a pointer" in m for m in parse_errors("void f ([out] int x);"))

    def test_missing_direction(self):
        assert any("no direction" in m for m in parse_errors("void f (int x);"))

    def test_in_out_combination_rejected(self):
        assert any("in/out" in m for m in parse_errors("void f ([in, out] int *x);"))

    def test_varargs_rejected(self):
        assert any("unsupported" in m for m in parse_errors("int printf ([in,string] char *fmt, ...);"))

    def test_errors_carry_spans(self):
        with pytest.raises(ParseError) as ei:
            parse_idl("void f (\n  [inout] int x);", "x.idl")
        assert ei.value.diagnostics[0].render().startswith("x.idl:2:")


class TestSignature:
    def test_getenv(self):
        assert gen_signature(parse_idl(GETENV_IDL)).strip() == GETENV_SIG

    def test_gettimeofday(self):
        assert gen_signature(parse_idl(GETTIMEOFDAY_IDL)).split() == GETTIMEOFDAY_SIG.split()

    def test_no_outputs(self):
        assert gen_signature(parse_idl("void reset ([in] int n);")).strip() == "val reset : Int -> ()"

    def test_scalar_out_is_appended(self):
        assert gen_signature(parse_idl("int pick ([in] long a, [out] int *x);")).strip() == \
            "val pick : Int -> (Int, Int)"


class TestStubs:
    def test_getenv_listing(self):
        assert alpha_eq(stubs().fun("getenv").fundef, module(GETENV_STUB).fun("getenv").fundef)

    def test_gettimeofday_listing(self):
        got = stubs().fun("gettimeofday").fundef
        ref = module(GETTIMEOFDAY_STUB, imports=[stubs()]).fun("gettimeofday").fundef
        assert alpha_eq(got, ref)

    def test_externals_match_prototypes(self):
        names = {e.cname for e in stubs().externals}
        assert {"getenv", "gettimeofday", "MOBY_AllocCString"} <= names

    def test_in_scalars_pass_through(self):
        f = stubs("int add ([in] int a, [in] long b);").fun("add").fundef
        assert isinstance(f.body, LetCCall) and f.body.args == ("a", "b")
        assert f.body.body == Return((f.body.var,))
        assert binding_count(f.body) == 1

    def test_struct_sizes_follow_target(self):
        f = stubs(GETTIMEOFDAY_IDL, target=TARGET64).fun("gettimeofday").fundef
        assert (f.body.size, f.body.align) == (16, 8)

    @pytest.mark.parametrize("text", [BOTH, "int add ([in] int a, [in] long b);\nint pick ([out] int *x);"])
    def test_generated_stubs_check_clean(self, text):
        m = stubs(text)
        r = check_module(TypeEnv(env_with(m, libs=False)), m)
        assert r.diagnostics == []
        assert lint_module(m) == []


# -- end to end against the simulated world


def _run_getenv(environ: dict[str, str], key: str):
    it = Interpreter(env_with(stubs(GETENV_IDL), libs=False), builtin_registry(environ=environ))
    (v,) = it.call("stubs.getenv", [key, 0])
    if v.value == 0:
        return None
    s = it.memory.load(v.value, 4)
    data = read_string(it.memory, s)
    assert it.memory.load(s, 4) == len(data)
    return data.decode()


def test_getenv_over_100_environments():
    rng = random.Random(5)
    alphabet = "ABCDEFGHIJ_/-.0123456789abcdefg"
    for _ in range(100):
        environ = {"".join(rng.choices("ABCDEFG", k=rng.randint(1, 3))): "".join(rng.choices(alphabet, k=rng.randint(0, 12)))
                   for _ in range(rng.randint(0, 5))}
        key = rng.choice(list(environ) + ["MISSING", "A"])
        assert _run_getenv(environ, key) == environ.get(key)


@given(st.integers(0, 2 ** 31 - 1), st.integers(0, 999_999), st.integers(-720, 720), st.integers(0, 1))
def test_gettimeofday_returns_clock(sec, usec, west, dst):
    it = Interpreter(env_with(stubs(GETTIMEOFDAY_IDL), libs=False),
                     builtin_registry(clock=(sec, usec), timezone=(west, dst)))
    res, tv, tz = it.call("stubs.gettimeofday", [0])
    mem = it.memory
    assert res.value == 0
    assert (mem.load(tv.value, 4), mem.load(tv.value + 4, 4)) == (sec, usec)
    assert (mem.load(tz.value, 4), mem.load(tz.value + 4, 4)) == (west, dst)


COPY_OUT_VARIANT = """
module v {
  external int gettimeofday (addr(data), addr(data))
  // Copy out, then scribble over the temporary block before returning.
  val f : () -> (Int, Int) =
    fun f (_ : exn_handler) {
      stackalloc tm[8:4], tz[8:4]
      let res = ccall gettimeofday(tm, tz)
      let tm2 = alloc(AdrLoadI32(tm), AdrLoadI32(AdrAdd(tm, 4)))
      AdrStoreI32(tm, 7)
      AdrStoreI32(AdrAdd(tm, 4), 8)
      return (res, tm2)
    }
}
"""


def test_copy_out_results_are_isolated():
    it = Interpreter(env_with(module(COPY_OUT_VARIANT, "v"), libs=False), builtin_registry(clock=(1000, 500)))
    _, tm2 = it.call("v.f", [0])
    assert (it.memory.load(tm2.value, 4), it.memory.load(tm2.value + 4, 4)) == (1000, 500)


def test_scalar_out_param():
    # the registry has no `pick`; register one that writes through its pointer
    m = stubs("int pick ([out] int *x);")
    reg = builtin_registry()

    def pick(mem, args):
        mem.store(args[0].value, 4, 41)
        return WordVal(1)

    reg.register("pick", pick)
    it = Interpreter(env_with(m, libs=False), reg)
    res, x = it.call("stubs.pick", [0])
    assert (res.value, x.value) == (1, 41)
