"""From an annotated IDL prototype to a running marshaling stub.

Run with:  python3 demos/getenv_pipeline.py
"""

from __future__ import annotations

from interopir.idl import gen_signature, gen_stubs, parse_idl
from interopir.interp import Interpreter, builtin_registry, read_string
from interopir.ir import CompilationEnv
from interopir.mbx import prelude, render_mbx

IDL = """
typedef [unique,string] char *StringOpt;
StringOpt getenv ([in,string] char *name);
"""


def main() -> None:
    decls = parse_idl(IDL)
    print("-- high-level signature")
    print(gen_signature(decls))

    doc = gen_stubs(decls)
    print("-- generated stub")
    print(render_mbx(doc))

    # The simulated world has HOME but not SHELL.  None comes back as the
    # word 0; Some is a one-field heap object holding a fresh string.
    env = CompilationEnv([prelude().module, doc.module])
    it = Interpreter(env, builtin_registry(environ={"HOME": "/home/ada"}))
    for key in ("HOME", "SHELL"):
        (v,) = it.call("stubs.getenv", [key, 0])
        if v.value == 0:
            print(f"getenv {key!r} -> None")
        else:
            s = it.memory.load(v.value, 4)
            print(f"getenv {key!r} -> Some {read_string(it.memory, s).decode()!r}")
    print("-- stats:", it.stats.as_dict())


if __name__ == "__main__":
    main()
