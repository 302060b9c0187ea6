from __future__ import annotations

import random
import shutil
import subprocess

import pytest
from hypothesis import given
from hypothesis import strategies as st

from interopir.ir import ADDR, DEFAULT_TARGET, INT8, INT32, TARGET64, StructLayout, StructParam, VOID
from interopir.layout import (
    CChar,
    CFunType,
    CInt,
    CLong,
    CNamed,
    CPtrTo,
    CShort,
    CStructDef,
    CVarargs,
    CVoid,
    LayoutError,
    UnsupportedError,
    cfun_signature,
    layout_of,
    promote_param,
    promote_result,
    to_ir_struct,
)

SCALAR_NAMES = ("char", "short", "int", "long", "ptr")


def _ctype(name: str):
    return {"char": CChar(), "short": CShort(), "int": CInt(), "long": CLong(), "ptr": CPtrTo(CInt())}[name]


def oracle_layout(names: list[str], word: int) -> tuple[int, int, list[int]]:
    """Independent placement: scan a byte-occupancy map for the first free,
    aligned slot after the previous field; round the end up by scanning."""
    sizes = {"char": 1, "short": 2, "int": 4, "long": word, "ptr": word}
    used: list[bool] = []
    offsets = []
    cursor = 0
    for n in names:
        sz = sizes[n]
        pos = cursor
        while pos % sz != 0 or any(used[pos:pos + sz]):
            pos += 1
        used.extend([False] * (pos + sz - len(used)))
        for i in range(pos, pos + sz):
            used[i] = True
        offsets.append(pos)
        cursor = pos + sz
    align = max(sizes[n] for n in names)
    size = cursor
    while size % align:
        size += 1
    return size, align, offsets


def random_struct(rng: random.Random) -> list[str]:
    return [rng.choice(SCALAR_NAMES) for _ in range(rng.randint(1, 8))]


def _struct(names: list[str]) -> CStructDef:
    return CStructDef("s", tuple((f"f{i}", _ctype(n)) for i, n in enumerate(names)))


class TestExamples:
    def test_timeval_32(self):
        lay = layout_of(CStructDef("timeval", (("tv_sec", CLong()), ("tv_usec", CLong()))))
        assert (lay.size, lay.align, [o for _, o in lay.field_offsets]) == (8, 4, [0, 4])

    def test_tree_32(self):
        t = CStructDef("tree", (("label", CInt()), ("left", CPtrTo("tree")), ("right", CPtrTo("tree"))))
        lay = layout_of(t)
        assert (lay.size, lay.align, [o for _, o in lay.field_offsets]) == (12, 4, [0, 4, 8])

    def test_char_int(self):
        lay = layout_of(CStructDef("s", (("c", CChar()), ("i", CInt()))))
        assert (lay.size, lay.align, [o for _, o in lay.field_offsets]) == (8, 4, [0, 4])

    def test_char(self):
        lay = layout_of(CChar())
        assert (lay.size, lay.align) == (1, 1)

    def test_tree_64(self):
        t = CStructDef("tree", (("label", CInt()), ("left", CPtrTo("tree")), ("right", CPtrTo("tree"))))
        lay = layout_of(t, TARGET64)
        assert (lay.size, lay.align, [o for _, o in lay.field_offsets]) == (24, 8, [0, 8, 16])

    def test_named_resolution(self):
        env = {"struct p": CStructDef("p", (("x", CShort()), ("y", CChar())))}
        assert layout_of(CNamed("struct p"), DEFAULT_TARGET, env).size == 4

    def test_errors(self):
        with pytest.raises(LayoutError):
            layout_of(CVoid())
        with pytest.raises(LayoutError):
            layout_of(CStructDef("e", ()))


class TestPromotion:
    def test_char_promotes_to_int(self):
        assert promote_param(CChar()) == INT32
        assert promote_param(CShort(False)) == INT32

    def test_struct_by_value(self):
        tv = CStructDef("timeval", (("a", CLong()), ("b", CLong())))
        assert promote_param(tv) == StructParam(StructLayout(8, 4, ((0, INT32), (4, INT32))))

    def test_pointer_erases(self):
        assert promote_param(CPtrTo(CInt())) == ADDR

    def test_void_result(self):
        assert promote_result(CVoid()) == VOID
        with pytest.raises(LayoutError):
            promote_param(CVoid())

    def test_varargs_unsupported(self):
        with pytest.raises(UnsupportedError):
            promote_param(CVarargs())
        with pytest.raises(UnsupportedError):
            cfun_signature(CFunType((CInt(),), CInt(), varargs=True))

    def test_long_follows_word(self):
        assert promote_param(CLong(), TARGET64).bits == 64


class TestIrStruct:
    def test_string_object(self):
        s = CStructDef("string", (("len", CInt()), ("data", CPtrTo(CChar()))))
        assert to_ir_struct(s) == StructLayout(8, 4, ((0, INT32), (4, ADDR)))

    def test_tree(self):
        t = CStructDef("tree", (("label", CInt()), ("left", CPtrTo("tree")), ("right", CPtrTo("tree"))))
        assert to_ir_struct(t) == StructLayout(12, 4, ((0, INT32), (4, ADDR), (8, ADDR)))

    def test_single_char(self):
        assert to_ir_struct(CStructDef("c", (("c", CChar()),))) == StructLayout(1, 1, ((0, INT8),))


@pytest.mark.parametrize("target", [DEFAULT_TARGET, TARGET64], ids=["32", "64"])
def test_layout_matches_oracle_on_1000_structs(target):
    rng = random.Random(20 + target.word_size_bits)
    for _ in range(1000):
        names = random_struct(rng)
        lay = layout_of(_struct(names), target)
        assert (lay.size, lay.align, [o for _, o in lay.field_offsets]) == oracle_layout(names, target.word_bytes)


field_lists = st.lists(st.sampled_from(SCALAR_NAMES), min_size=1, max_size=8)


@given(field_lists, st.sampled_from([DEFAULT_TARGET, TARGET64]))
def test_offsets_increase_without_overlap(names, target):
    lay = layout_of(_struct(names), target)
    sizes = [layout_of(_ctype(n), target).size for n in names]
    offs = [o for _, o in lay.field_offsets]
    for i in range(1, len(offs)):
        assert offs[i] >= offs[i - 1] + sizes[i - 1]
    assert lay.size >= offs[-1] + sizes[-1]
    assert lay.size % lay.align == 0


@given(st.lists(st.sampled_from(("char", "short", "int")), min_size=1, max_size=8))
def test_word_independent_layouts_are_target_invariant(names):
    assert layout_of(_struct(names), DEFAULT_TARGET) == layout_of(_struct(names), TARGET64)


@pytest.mark.skipif(shutil.which("cc") is None, reason="no host C compiler")
def test_host_compiler_offsetof(tmp_path):
    """Side experiment: the 64-bit model agrees with the host compiler (LP64)."""
    rng = random.Random(7)
    cnames = {"char": "char", "short": "short", "int": "int", "long": "long", "ptr": "int *"}
    structs = [random_struct(rng) for _ in range(40)]
    src = ["#include <stdio.h>", "#include <stddef.h>"]
    for k, names in enumerate(structs):
        src.append(f"struct s{k} {{ " + " ".join(f"{cnames[n]} f{i};" for i, n in enumerate(names)) + " };")
    src.append("int main(void) {")
    for k, names in enumerate(structs):
        offs = " ".join(f'printf(" %zu", offsetof(struct s{k}, f{i}));' for i in range(len(names)))
        src.append(f'printf("%zu %zu", sizeof(struct s{k}), _Alignof(struct s{k})); {offs} printf("\\n");')
    src.append("return 0; }")
    c = tmp_path / "probe.c"
    c.write_text("\n".join(src))
    exe = tmp_path / "probe"
    subprocess.run(["cc", "-std=c11", "-o", str(exe), str(c)], check=True)
    lines = subprocess.run([str(exe)], check=True, capture_output=True, text=True).stdout.splitlines()
    for names, line in zip(structs, lines):
        nums = [int(x) for x in line.split()]
        lay = layout_of(_struct(names), TARGET64)
        assert nums == [lay.size, lay.align] + [o for _, o in lay.field_offsets]
