"""What cross-module inlining buys, measured in interpreter steps.

Run with:  python3 demos/inlining_steps.py
"""

from __future__ import annotations

from interopir.interp import count_steps
from interopir.ir import CompilationEnv
from interopir.mbx import normalize_document, parse_mbx, prelude, render_fundef
from interopir.optimizer import DEFAULT_POLICY, inline_module
from interopir.programs import builtin_env

CLIENT = """
module user {
  val f : String -> Int =
    fun f (s : string, e : exn_handler) { return I32Add(length(s, e), 1) }
}
"""


def main() -> None:
    pre = prelude()
    user = normalize_document(parse_mbx(CLIENT, typedefs=pre.module.typedef_map())).module
    env = CompilationEnv([pre.module, user])
    opt = inline_module(env, user)

    print("-- before")
    print(render_fundef(user.fun("f").fundef))
    print("-- after inline + simplify")
    print(render_fundef(opt.fun("f").fundef))

    plain = count_steps(env, "user.f", ["hello", 0]).steps
    fast = count_steps(env.with_module(opt), "user.f", ["hello", 0]).steps
    print(f"steps: {plain} -> {fast}")

    # The same effect across the bundled tree program.
    for label, e in (("no inline", builtin_env()), ("inline", builtin_env(policy=DEFAULT_POLICY))):
        print(f"tree_demo(5) {label}: {count_steps(e, 'tree_demo', [5, 0]).steps} steps")


if __name__ == "__main__":
    main()
