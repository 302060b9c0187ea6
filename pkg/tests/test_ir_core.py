from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from interopir.ir import (
    ADDR,
    DEFAULT_TARGET,
    INT8,
    INT32,
    INT64,
    TARGET64,
    AmbiguousName,
    CompilationEnv,
    EnumRange,
    FunBinding,
    FunDef,
    IntN,
    Kind,
    LetLit,
    LetPrim,
    LetSelect,
    ModuleInterface,
    NameSupply,
    PrimOp,
    Ptr,
    Return,
    StructLayout,
    TargetConfig,
    Vector,
    alpha_eq,
    binding_count,
    free_vars,
    is_normalized,
    kind_accepts,
    kind_of,
    rename_bound,
    well_formed,
)
from interopir.layout import CChar, CInt, CLong, CPtrTo, CShort, CStructDef, to_ir_struct
from progen import ProgramGen, _Scope

STRING_OBJ = StructLayout(8, 4, ((0, INT32), (4, Ptr(Vector(None, EnumRange(0, 255))))))


class TestKinds:
    def test_int64_is_var_on_32_bit(self):
        assert kind_of(INT64, DEFAULT_TARGET) == Kind.VAR

    def test_int64_is_word_on_64_bit(self):
        assert kind_of(INT64, TARGET64) == Kind.WORD

    @pytest.mark.parametrize("target", [DEFAULT_TARGET, TARGET64])
    def test_pointers_are_words(self, target):
        assert kind_of(Ptr(STRING_OBJ), target) == Kind.WORD
        assert kind_of(ADDR, target) == Kind.WORD

    def test_struct_is_memory(self):
        assert kind_of(StructLayout(8, 4, ((0, INT32), (4, ADDR)))) == Kind.MEMORY

    def test_unknown_vector_is_memory(self):
        assert kind_of(Vector(None, INT8)) == Kind.MEMORY


class TestWellFormed:
    def test_string_layout(self):
        assert well_formed(STRING_OBJ) == []
        assert well_formed(Ptr(STRING_OBJ)) == []

    def test_inverted_enum(self):
        (msg,) = well_formed(EnumRange(255, 0))
        assert "lo > hi" in msg

    def test_overlap(self):
        (msg,) = well_formed(StructLayout(8, 4, ((0, INT32), (2, INT32))))
        assert "field overlap" in msg

    def test_unknown_vector_needs_ptr(self):
        assert well_formed(Vector(None, INT8))
        assert not well_formed(Ptr(Vector(None, INT8)))

    def test_bad_alignment(self):
        assert well_formed(StructLayout(6, 3, ((0, INT8),)))

    def test_bad_width(self):
        assert well_formed(IntN(12))


def test_target_validation():
    with pytest.raises(ValueError):
        TargetConfig(word_size_bits=16)
    with pytest.raises(ValueError):
        TargetConfig(endianness="middle")


# -- random types for the kind and well-formedness properties

_scalar_c = st.sampled_from([CChar(True), CChar(False), CShort(True), CInt(True), CLong(True), CPtrTo(CInt(True))])


@st.composite
def c_structs(draw, depth=2):
    n = draw(st.integers(1, 6))
    fields = []
    for i in range(n):
        if depth > 0 and draw(st.integers(0, 5)) == 0:
            ft = draw(c_structs(depth=depth - 1))
        else:
            ft = draw(_scalar_c)
        fields.append((f"f{i}", ft))
    return CStructDef(f"s{draw(st.integers(0, 99))}", tuple(fields))


_base_ir = st.sampled_from([INT8, IntN(16), INT32, INT64, ADDR, EnumRange(0, 255), EnumRange(-5, 5)])
ir_types = st.recursive(
    _base_ir,
    lambda inner: st.one_of(
        st.builds(Ptr, inner),
        st.builds(lambda t: Ptr(Vector(None, t)), inner),
    ),
    max_leaves=4,
)


@given(ir_types, st.sampled_from([DEFAULT_TARGET, TARGET64]))
def test_kind_monotone(t, target):
    assert well_formed(t, target) == []
    k = kind_of(t, target)
    for req in Kind:
        assert kind_accepts(req, t, target) == (k <= req)


@given(c_structs(), st.sampled_from([DEFAULT_TARGET, TARGET64]))
def test_layout_output_is_well_formed(s, target):
    assert well_formed(to_ir_struct(s, target), target) == []


# -- alpha equivalence


def _one_term(seed: int):
    g = ProgramGen(random.Random(seed), max_bindings=8)
    return g.body(_Scope(["a", "b"]))


def _renamed(t, start):
    supply = NameSupply(start)
    return rename_bound(t, supply)


def test_alpha_examples():
    t1 = LetSelect("n", "s", 0, Return(("n",)))
    t2 = LetSelect("m", "s", 0, Return(("m",)))
    assert alpha_eq(t1, t1)
    assert alpha_eq(t1, t2)
    a = LetLit("c", 1, Return(("c",)))
    b = LetLit("c", 2, Return(("c",)))
    assert not alpha_eq(a, b)


def test_alpha_respects_free_variables():
    t1 = LetSelect("n", "s", 0, Return(("n",)))
    t2 = LetSelect("n", "r", 0, Return(("n",)))
    assert not alpha_eq(t1, t2)


def test_alpha_distinguishes_binding_structure():
    t1 = LetLit("x", 1, LetLit("y", 2, LetPrim("z", PrimOp.I32Sub, ("x", "y"), Return(("z",)))))
    t2 = LetLit("x", 1, LetLit("y", 2, LetPrim("z", PrimOp.I32Sub, ("y", "x"), Return(("z",)))))
    assert not alpha_eq(t1, t2)


@given(st.integers(0, 10_000), st.integers(0, 10_000), st.integers(1, 500), st.integers(1, 500))
def test_alpha_is_an_equivalence(s1, s2, n1, n2):
    a, b = _one_term(s1), _one_term(s2)
    ra, rra = _renamed(a, 1000 + n1), _renamed(_renamed(a, 5000 + n2), 9000)
    assert alpha_eq(a, a)
    assert alpha_eq(a, ra) and alpha_eq(ra, a)
    assert alpha_eq(ra, rra) and alpha_eq(a, rra)
    assert alpha_eq(a, b) == alpha_eq(b, a)
    if alpha_eq(a, b):
        assert alpha_eq(ra, b)


@given(st.integers(0, 10_000))
def test_rename_keeps_free_vars(seed):
    t = _one_term(seed)
    assert free_vars(_renamed(t, 700)) == free_vars(t)
    assert binding_count(_renamed(t, 700)) == binding_count(t)
    assert is_normalized(t)


# -- compilation environment


def _fb(name):
    return FunBinding(name, "() -> ()", FunDef(name, (), Return(())))


def test_resolution_prefers_current_module():
    a = ModuleInterface("A", fun_bindings=(_fb("f"),))
    b = ModuleInterface("B", fun_bindings=(_fb("f"), _fb("g")))
    env = CompilationEnv([a, b])
    assert env.resolve_fun("f", a)[0].name == "A"
    assert env.resolve_fun("g", a)[0].name == "B"
    assert env.resolve_fun("B.f")[0].name == "B"
    with pytest.raises(AmbiguousName):
        env.resolve_fun("f")
    assert env.resolve_fun("h") is None
