"""Command-line driver: parse, check, normalize, inline, run, layout, idl, charon, bench."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .charon import c_interface_library, gen_impl, gen_interface, parse_header
from .diagnostics import DiagnosticError
from .idl import gen_signature, gen_stubs, parse_idl
from .interp import (
    AddrVal,
    ExecStats,
    Interpreter,
    Trap,
    UnitVal,
    builtin_registry,
    read_string,
)
from .ir import (
    DEFAULT_TARGET,
    TARGET64,
    CompilationEnv,
    ExnHandler,
    ModuleInterface,
    TargetConfig,
    TypeBinding,
)
from .layout import layout_of
from .mbi import parse_mbi, serialize_mbi
from .mbx import MbiDocument, normalize_document, parse_mbx, prelude, render_fundef, render_mbx
from .optimizer import DEFAULT_POLICY, inline_module
from .programs import builtin_env, library_modules
from .typecheck import TypeEnv, check_module, lint_module

EXIT_OK, EXIT_DIAG, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _target(args) -> TargetConfig:
    return TARGET64 if args.target == 64 else DEFAULT_TARGET


def _write(path: str, data, binary: bool = False) -> None:
    if binary:
        Path(path).write_bytes(data)
    else:
        Path(path).write_text(data, encoding="utf-8")


def load_module_file(path: str, target: TargetConfig, typedefs: Optional[dict] = None) -> MbiDocument:
    """Read an ``.mbi`` (binary) or MBX (text) file; MBX is normalized."""
    p = Path(path)
    if p.suffix == ".mbi":
        doc = parse_mbi(p.read_bytes())
        if doc.target != target:
            raise UsageError(f"{path} was built for a {doc.target.word_size_bits}-bit target")
        return doc
    text = p.read_text(encoding="utf-8")
    tds = dict(prelude(target).module.typedef_map())
    if typedefs:
        tds.update(typedefs)
    return normalize_document(parse_mbx(text, str(path), typedefs=tds, target=target))


def _load_set(paths: Sequence[str], target: TargetConfig, base: Sequence[ModuleInterface] = ()) -> list[MbiDocument]:
    tds = CompilationEnv(list(base)).typedefs()
    docs = []
    for p in paths:
        d = load_module_file(p, target, tds)
        tds.update(d.module.typedef_map())
        docs.append(d)
    return docs


def _print_diags(diags, out=None) -> None:
    for d in diags:
        print(d.render(), file=out or sys.stderr)


# ---------------------------------------------------------------------------
# check / normalize / inline


def cmd_parse(args) -> int:
    _load_set(args.files, _target(args), [prelude(_target(args)).module])
    return EXIT_OK


def cmd_check(args) -> int:
    target = _target(args)
    base = [prelude(target).module] + ([] if not args.builtins else library_modules(target)[1:])
    imports = _load_set(args.imports, target, base)
    docs = _load_set(args.files, target, base + [d.module for d in imports])
    env = CompilationEnv(base + [d.module for d in imports + docs])
    failed = False
    for d in docs:
        res = check_module(TypeEnv(env), d.module, target)
        _print_diags(res.diagnostics + lint_module(d.module), sys.stdout)
        failed |= not res.ok
    return EXIT_DIAG if failed else EXIT_OK


def cmd_normalize(args) -> int:
    target = _target(args)
    doc = _load_set([args.file], target)[0]
    text = render_mbx(doc)
    _check_outputs(args.output)
    if args.output:
        _write(args.output, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_inline(args) -> int:
    target = _target(args)
    base = [prelude(target).module] + (library_modules(target)[1:] if args.builtins else [])
    imports = _load_set(args.imports, target, base)
    doc = _load_set([args.file], target, base + [d.module for d in imports])[0]
    env = CompilationEnv(base + [d.module for d in imports] + [doc.module])
    res = check_module(TypeEnv(env), doc.module, target)
    if not res.ok:
        _print_diags(res.diagnostics)
        return EXIT_DIAG
    _check_outputs(args.output)
    out = inline_module(env, doc.module, DEFAULT_POLICY)
    if args.dump:
        for before, after in zip(doc.module.fun_bindings, out.fun_bindings):
            print(f"== {before.name} (before)")
            print(render_fundef(before.fundef))
            print(f"== {before.name} (after)")
            print(render_fundef(after.fundef))
    new_doc = MbiDocument(out, target)
    if args.output:
        _write(args.output, serialize_mbi(new_doc), binary=True)
    elif not args.dump:
        sys.stdout.write(render_mbx(new_doc))
    return EXIT_OK


# ---------------------------------------------------------------------------
# run


def _parse_arg(s: str):
    if s.startswith('"'):
        try:
            v = json.loads(s)
        except ValueError as e:
            raise UsageError(f"bad string argument {s}: {e}") from None
        return v
    if s == "nil":
        return AddrVal(0)
    try:
        return int(s, 0)
    except ValueError:
        raise UsageError(f"argument {s!r} is neither an integer, nil nor a quoted string") from None


def _parse_clock(s: str) -> tuple[int, int]:
    try:
        sec, usec = s.split(":")
        clock = (int(sec), int(usec))
    except ValueError:
        raise UsageError(f"--clock expects SEC:USEC, got {s!r}") from None
    if clock[0] < 0 or not 0 <= clock[1] < 1_000_000:
        raise UsageError(f"--clock out of range: {s}")
    return clock


def _parse_env(pairs: Sequence[str]) -> dict[str, str]:
    out = {}
    for p in pairs:
        if "=" not in p:
            raise UsageError(f"--env expects KEY=VALUE, got {p!r}")
        k, _, v = p.partition("=")
        out[k] = v
    return out


def _split_top(s: str, sep: str) -> list[str]:
    parts, depth, cur = [], 0, ""
    i = 0
    while i < len(s):
        if s.startswith(sep, i) and depth == 0:
            parts.append(cur.strip())
            cur = ""
            i += len(sep)
            continue
        c = s[i]
        depth += c in "([" and 1 or 0
        depth -= c in ")]" and 1 or 0
        cur += c
        i += 1
    parts.append(cur.strip())
    return parts


def result_type(hl_type: str) -> str:
    return _split_top(hl_type, "->")[-1]


class ValueFormatter:
    """Render runtime values according to high-level type text."""

    def __init__(self, it: Interpreter):
        self.it = it
        self.types: dict[str, TypeBinding] = {}
        for m in it.env.modules.values():
            for tb in m.type_bindings:
                self.types.setdefault(tb.name, tb)

    def components(self, ty: str) -> list[str]:
        ty = ty.strip()
        if ty.startswith("(") and ty.endswith(")"):
            inner = ty[1:-1].strip()
            return _split_top(inner, ",") if inner else []
        return [ty]

    def fmt_results(self, ty: str, vals: tuple) -> str:
        comps = self.components(ty)
        if len(comps) != len(vals):
            comps = ["?"] * len(vals)
        if not vals:
            return "()"
        parts = [self.fmt(c, v) for c, v in zip(comps, vals)]
        return parts[0] if len(parts) == 1 else "(" + ", ".join(parts) + ")"

    def _field_vals(self, addr: int) -> list:
        mem = self.it.memory
        for r in mem.regions:
            if r.contains(addr):
                b = r.find(addr)
                if b is not None and b.base == addr and b.layout is not None:
                    return [mem.load_typed(addr + o, t) for o, t in b.layout.fields]
        return []

    def fmt(self, ty: str, v) -> str:
        ty = ty.strip()
        if isinstance(v, UnitVal):
            return "()"
        if ty.startswith("Option(") and ty.endswith(")"):
            if v.value == 0:
                return "None"
            inner = self._field_vals(v.value)
            return "Some " + (self.fmt(ty[7:-1], inner[0]) if inner else hex(v.value))
        if ty == "String":
            return json.dumps(read_string(self.it.memory, v.value).decode("utf-8", "replace"))
        if ty in ("Int", "Bool"):
            return str(v.value)
        tb = self.types.get(ty)
        if tb is not None and isinstance(tb.rhs, str) and " of " in tb.rhs:
            con, _, fields = tb.rhs.partition(" of ")
            vals = self._field_vals(v.value)
            comps = self.components(fields)
            if len(vals) == len(comps):
                return f"{con.strip()} " + "(" + ", ".join(self.fmt(c, x) for c, x in zip(comps, vals)) + ")"
        if isinstance(v, AddrVal):
            return "nil" if v.value == 0 else f"0x{v.value:x}"
        return str(v.value)


def _entry_args(it: Interpreter, entry: str, raw: list) -> list:
    hit = it.env.resolve_fun(entry, None)
    if hit is None:
        raise UsageError(f"no function named {entry}")
    params = hit[1].fundef.params
    if len(raw) == len(params) - 1 and params and isinstance(params[-1][1], ExnHandler):
        raw = raw + [0]
    if len(raw) != len(params):
        raise UsageError(f"{entry} takes {len(params)} argument(s) ({', '.join(n for n, _ in params)}), "
                         f"got {len(raw)}")
    return raw


def _print_stats(stats: ExecStats) -> None:
    for line in stats.lines():
        print(line)


def cmd_run(args) -> int:
    target = _target(args)
    registry = builtin_registry(environ=_parse_env(args.env), clock=_parse_clock(args.clock), seed=args.seed)
    if args.files:
        libs = library_modules(target)
        docs = _load_set(args.files, target, libs)
        env = CompilationEnv(libs + [d.module for d in docs])
        for d in docs:
            res = check_module(TypeEnv(env), d.module, target)
            if not res.ok:
                _print_diags(res.diagnostics)
                return EXIT_DIAG
        if not args.no_inline:
            env = CompilationEnv(libs + [inline_module(env, d.module) for d in docs])
    else:
        env = builtin_env(target, None if args.no_inline else DEFAULT_POLICY)
    it = Interpreter(env, registry, target)
    raw = [_parse_arg(a) for a in args.args]
    raw = _entry_args(it, args.entry, raw)
    vals = it.call(args.entry, raw)
    hl = it.env.resolve_fun(args.entry, None)[1].hl_type
    print(ValueFormatter(it).fmt_results(result_type(hl), vals))
    if args.stats:
        _print_stats(it.stats)
    return EXIT_OK


# ---------------------------------------------------------------------------
# layout / idl / charon


def cmd_layout(args) -> int:
    target = _target(args)
    h = parse_header(Path(args.header).read_text(encoding="utf-8"), args.header)
    env = h.ctypes()
    for s in h.structs:
        lay = layout_of(s.ctype(), target, env)
        print(f"struct {s.tag} {lay.size}:{lay.align}")
        for name, off in lay.field_offsets:
            print(f"  {name}: {off}")
    return EXIT_OK


def _check_outputs(*paths: Optional[str]) -> None:
    for p in paths:
        if p and not Path(p).resolve().parent.is_dir():
            raise UsageError(f"output directory for {p} does not exist")


def _emit(args, sig: str, doc: MbiDocument) -> None:
    _check_outputs(args.sig, args.mbi, args.mbx)
    if args.sig:
        _write(args.sig, sig)
    if args.mbi:
        _write(args.mbi, serialize_mbi(doc), binary=True)
    if args.mbx:
        _write(args.mbx, render_mbx(doc))
    if not (args.sig or args.mbi or args.mbx):
        sys.stdout.write(sig)


def cmd_idl(args) -> int:
    target = _target(args)
    decls = parse_idl(Path(args.file).read_text(encoding="utf-8"), args.file)
    sig = gen_signature(decls)
    doc = gen_stubs(decls, target, Path(args.file).stem)
    _emit(args, sig, doc)
    return EXIT_OK


def cmd_charon(args) -> int:
    target = _target(args)
    if args.emit_stdlib:
        text = render_mbx(c_interface_library(target))
        _check_outputs(args.output)
        if args.output:
            _write(args.output, text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    if not args.file:
        raise UsageError("charon needs a header file or --emit-stdlib")
    h = parse_header(Path(args.file).read_text(encoding="utf-8"), args.file)
    _emit(args, gen_interface(h), gen_impl(h, target, Path(args.file).stem))
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    target = _target(args)
    policy = None if args.no_inline else DEFAULT_POLICY
    env = builtin_env(target, policy)
    if args.which == "tree":
        if args.depth < 0 or args.iters < 0:
            raise UsageError("--depth and --iters must be non-negative")
        registry = builtin_registry(seed=args.seed)
        it = Interpreter(env, registry, target)
        (best,) = it.call("bench_tree", [args.depth, args.iters, 0])
        print(f"max_label={best.value}")
        print(f"c_heap_leaked={it.memory.c_leaked_bytes}")
    else:
        if args.calls < 0:
            raise UsageError("--calls must be non-negative")
        registry = builtin_registry(clock=_parse_clock(args.clock))
        it = Interpreter(env, registry, target)
        sec, usec = it.call("bench_tod", [args.calls, 0])
        print(f"last={sec.value}:{usec.value}")
        print(f"clock={registry.clock[0]}:{registry.clock[1]}")
    _print_stats(it.stats)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="interopir", description="IR toolchain for high-level/C interoperability")
    p.add_argument("--target", type=int, choices=(32, 64), default=32, help="target word size in bits")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("parse", help="parse and normalize MBX/MBI files, reporting syntax errors only")
    ps.add_argument("files", nargs="+")
    ps.set_defaults(func=cmd_parse)

    c = sub.add_parser("check", help="parse and type-check MBX/MBI files")
    c.add_argument("files", nargs="+")
    c.add_argument("--env", dest="imports", action="append", default=[], help="imported module file")
    c.add_argument("--builtins", action="store_true", help="also import the bundled libraries")
    c.set_defaults(func=cmd_check)

    n = sub.add_parser("normalize", help="print the normalized MBX of a file")
    n.add_argument("file")
    n.add_argument("-o", "--output")
    n.set_defaults(func=cmd_normalize)

    i = sub.add_parser("inline", help="inline and simplify a module against imports")
    i.add_argument("file")
    i.add_argument("--env", dest="imports", action="append", default=[], help="imported module file")
    i.add_argument("--builtins", action="store_true", help="also import the bundled libraries")
    i.add_argument("-o", "--output", help="write the optimized module as MBI")
    i.add_argument("--dump", action="store_true", help="print functions before and after")
    i.set_defaults(func=cmd_inline)

    r = sub.add_parser("run", help="interpret a function")
    r.add_argument("files", nargs="*", help="program files (default: the bundled demos)")
    r.add_argument("--entry", required=True)
    r.add_argument("--args", nargs="*", default=[], help='integers, nil, or "quoted strings"')
    r.add_argument("--seed", type=int, default=1)
    r.add_argument("--clock", default="0:0", help="initial simulated clock SEC:USEC")
    r.add_argument("--env", action="append", default=[], metavar="KEY=VALUE",
                   help="simulated environment variable")
    r.add_argument("--stats", action="store_true")
    r.add_argument("--no-inline", action="store_true")
    r.set_defaults(func=cmd_run)

    lay = sub.add_parser("layout", help="print struct layouts of a C header")
    lay.add_argument("header")
    lay.set_defaults(func=cmd_layout)

    d = sub.add_parser("idl", help="generate signatures and stubs from IDL")
    d.add_argument("file")
    d.add_argument("--sig")
    d.add_argument("--mbi")
    d.add_argument("--mbx")
    d.set_defaults(func=cmd_idl)

    ch = sub.add_parser("charon", help="generate the embedding of a C header")
    ch.add_argument("file", nargs="?")
    ch.add_argument("--sig")
    ch.add_argument("--mbi")
    ch.add_argument("--mbx")
    ch.add_argument("--emit-stdlib", action="store_true", help="print the C-interface library module")
    ch.add_argument("-o", "--output", help="with --emit-stdlib, write to this file")
    ch.set_defaults(func=cmd_charon)

    b = sub.add_parser("bench", help="run a benchmark program")
    bsub = b.add_subparsers(dest="which", required=True)
    bt = bsub.add_parser("tree", help="build/traverse/free malloc'd trees")
    bt.add_argument("--depth", type=int, default=10)
    bt.add_argument("--iters", type=int, default=3)
    bt.add_argument("--seed", type=int, default=1)
    bt.add_argument("--no-inline", action="store_true")
    bo = bsub.add_parser("tod", help="repeated gettimeofday calls")
    bo.add_argument("--calls", type=int, default=1000)
    bo.add_argument("--clock", default="0:0")
    bo.add_argument("--no-inline", action="store_true")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits on --help and on usage errors; report the code instead
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DiagnosticError as e:
        _print_diags(e.diagnostics)
        return EXIT_DIAG
    except Trap as e:
        print(f"trap: {e.kind}: {e.message}", file=sys.stderr)
        return EXIT_DIAG
    except OSError as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return EXIT_DIAG


if __name__ == "__main__":
    sys.exit(main())
