"""Embedding a C header: phantom-typed interface, accessors, and a client.

Run with:  python3 demos/tree_embedding.py
"""

from __future__ import annotations

from interopir.charon import gen_impl, gen_interface, parse_header
from interopir.interp import Interpreter, builtin_registry
from interopir.mbx import render_mbx
from interopir.programs import builtin_env

HEADER = """
typedef struct tree {
    int         label;
    tree_ptr    left;
    tree_ptr    right;
} tree_node, *tree_ptr;
extern tree_ptr MakeTree (int depth);
"""


def main() -> None:
    h = parse_header(HEADER)
    print("-- interface seen by high-level code")
    print(gen_interface(h))
    print("-- implementation (accessors are address arithmetic)")
    print(render_mbx(gen_impl(h)))

    # The bundled `trees` program walks a C tree only through the generated
    # accessors and the C-interface library.
    it = Interpreter(builtin_env(), builtin_registry(seed=7))
    (t,) = it.call("makeTree", [4, 0])
    before = it.call("maxLabel", [t, -1, 0])[0].value
    it.call("incLabels", [t, 0])
    after = it.call("maxLabel", [t, -1, 0])[0].value
    nodes = it.call("countNodes", [t, 0])[0].value
    print(f"nodes={nodes} max label {before} -> {after}")
    it.call("freeTree", [t, 0])
    print(f"leaked C bytes after freeTree: {it.memory.c_leaked_bytes}")


if __name__ == "__main__":
    main()
