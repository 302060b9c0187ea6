"""The bundled compilation environment: prelude, generated libc stubs and
tree embedding, the C-interface library, and the demo/benchmark programs."""

from __future__ import annotations

from functools import lru_cache
from typing import Optional

from .charon import c_interface_library, gen_impl, parse_header
from .idl import gen_stubs, parse_idl
from .ir import DEFAULT_TARGET, CompilationEnv, ModuleInterface, TargetConfig
from .mbx import MbiDocument, asset_path, load_asset, normalize_document, prelude
from .optimizer import DEFAULT_POLICY, InlinePolicy, inline_module

PROGRAM_ASSETS = ("trees.mbx", "demo.mbx", "bench_tree.mbx", "bench_tod.mbx")


@lru_cache(maxsize=None)
def libc_stubs(target: TargetConfig = DEFAULT_TARGET) -> MbiDocument:
    text = asset_path("libc.idl").read_text(encoding="utf-8")
    return gen_stubs(parse_idl(text, "libc.idl"), target, "libc")


@lru_cache(maxsize=None)
def tree_impl(target: TargetConfig = DEFAULT_TARGET) -> MbiDocument:
    text = asset_path("tree.h").read_text(encoding="utf-8")
    return gen_impl(parse_header(text, "tree.h"), target, "tree")


@lru_cache(maxsize=None)
def program(name: str, target: TargetConfig = DEFAULT_TARGET) -> MbiDocument:
    return normalize_document(load_asset(name, target))


def library_modules(target: TargetConfig = DEFAULT_TARGET) -> list[ModuleInterface]:
    """Modules a program can import: prelude, libc stubs, C interface, tree."""
    return [prelude(target).module, libc_stubs(target).module,
            c_interface_library(target).module, tree_impl(target).module]


def program_modules(target: TargetConfig = DEFAULT_TARGET) -> list[ModuleInterface]:
    return [program(n, target).module for n in PROGRAM_ASSETS]


@lru_cache(maxsize=None)
def _builtin_env(target: TargetConfig, policy: Optional[InlinePolicy]) -> CompilationEnv:
    libs = library_modules(target)
    progs = program_modules(target)
    env = CompilationEnv(libs + progs)
    if policy is None:
        return env
    return CompilationEnv(libs + [inline_module(env, m, policy) for m in progs])


def builtin_env(target: TargetConfig = DEFAULT_TARGET,
                policy: Optional[InlinePolicy] = None) -> CompilationEnv:
    """The built-in environment; with a policy, program modules are inlined
    against the libraries and simplified."""
    return _builtin_env(target, policy)


def inlined_builtin_env(target: TargetConfig = DEFAULT_TARGET) -> CompilationEnv:
    return builtin_env(target, DEFAULT_POLICY)
