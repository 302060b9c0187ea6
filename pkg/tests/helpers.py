"""Small shared helpers for building and running test programs."""

from __future__ import annotations

from interopir.interp import builtin_registry, run
from interopir.ir import DEFAULT_TARGET, CompilationEnv, ModuleInterface
from interopir.mbx import normalize_document, parse_mbx, prelude
from interopir.programs import library_modules
from interopir.typecheck import TypeEnv, check_module


def module(text: str, name: str = "t", target=DEFAULT_TARGET, imports=()) -> ModuleInterface:
    tds = CompilationEnv([prelude(target).module, *imports]).typedefs()
    return normalize_document(parse_mbx(text, f"{name}.mbx", module_name=name, typedefs=tds, target=target)).module


def env_with(*mods: ModuleInterface, libs: bool = True, target=DEFAULT_TARGET) -> CompilationEnv:
    base = library_modules(target) if libs else [prelude(target).module]
    return CompilationEnv(base + list(mods))


def check(m: ModuleInterface, libs: bool = True, target=DEFAULT_TARGET):
    return check_module(TypeEnv(env_with(m, libs=libs, target=target)), m, target)


def values(env, entry: str, args=(), target=DEFAULT_TARGET, **world):
    vals, stats = run(env, entry, list(args), builtin_registry(**world), target)
    return tuple(v.value for v in vals), stats
