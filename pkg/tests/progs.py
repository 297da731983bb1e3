"""Random Finch program text for property tests."""

import random

GLOBALS = ["g0", "g1", "g2", "g3"]


class Gen:
    def __init__(self, rng: random.Random, throws: bool = True, helpers: int = 2):
        self.r = rng
        self.throws = throws
        self.helpers = [f"h{k}" for k in range(helpers)]
        self.loops = 0
        self.names = GLOBALS + ["arr"]

    def expr(self, depth=0, locals_=()):
        r = self.r
        scalars = [n for n in self.names if n != "arr"]
        atoms = scalars + list(locals_) or [str(r.randint(0, 9))]
        if depth > 1 or r.random() < 0.4:
            choice = r.random()
            if choice < 0.3:
                return str(r.randint(0, 9))
            if choice < 0.4 and "arr" in self.names:
                return f"arr[{r.randint(0, 3)}]"
            return r.choice(atoms)
        op = r.choice(["+", "-", "*", "%", "<", "==", "&&"])
        left, right = self.expr(depth + 1, locals_), self.expr(depth + 1, locals_)
        if op == "%":
            return f"({left} % {r.randint(2, 7)})"
        if op == "&&":
            return f"({left} < 5 && {right} > 1)"
        if op in ("<", "=="):
            return f"({left} {op} {right})"
        return f"(({left} {op} {right}) % 97)"

    def stmt(self, depth, locals_=(), callee_floor=0):
        r = self.r
        kinds = ["assign", "assign", "arr", "if", "for", "async", "finish", "call", "while",
                 "switch"]
        if self.throws:
            kinds += ["try", "throw"]
        if depth > 2:
            kinds = ["assign", "arr"]
        scalars = [n for n in self.names if n != "arr"]
        if not scalars:
            kinds = [x for x in kinds if x != "assign"]
        if "arr" not in self.names:
            kinds = [x for x in kinds if x != "arr"]
        if not kinds:
            return "skip;"
        k = r.choice(kinds)
        e = lambda: self.expr(0, locals_)
        body = lambda: self.block(depth + 1, locals_, callee_floor)
        if k == "assign":
            return f"{r.choice(scalars)} = {e()};"
        if k == "arr":
            return f"arr[{r.randint(0, 3)}] = {e()};"
        if k == "if":
            tail = f" else {body()}" if r.random() < 0.5 else ""
            return f"if ({e()}) {body()}{tail}"
        if k == "for":
            self.loops += 1
            v = f"i{self.loops}"
            inner = self.block(depth + 1, locals_ + (v,), callee_floor)
            return f"for ({v} = 0; {v} < {r.randint(0, 3)}; {v}++) {inner}"
        if k == "while":
            self.loops += 1
            v = f"w{self.loops}"
            inner = self.block(depth + 1, locals_ + (v,), callee_floor)
            return f"{v} = 0; while ({v} < {r.randint(0, 2)}) {{ {v} = {v} + 1; {inner} }}"
        if k == "async":
            return f"async {body()}"
        if k == "finish":
            return f"finish {body()}"
        if k == "call":
            options = self.helpers[callee_floor:]
            if not options:
                return "skip;"
            return f"{r.choice(options)}();"
        if k == "switch":
            return (f"switch ({e()} % 3) {{ case 0: {self.block(depth + 1, locals_, callee_floor)} "
                    f"case 1: {self.block(depth + 1, locals_, callee_floor)} }}")
        if k == "try":
            kind = r.choice(["A", "B", "Exception", "ME"])
            return f"try {body()} catch (x: {kind}) {body()}"
        return f"if ({e()}) {{ throw exc({r.choice(['A', 'B'])}); }}"

    def block(self, depth, locals_=(), callee_floor=0):
        n = self.r.randint(1, 3)
        return "{ " + " ".join(self.stmt(depth, locals_, callee_floor) for _ in range(n)) + " }"

    def helper_defs(self) -> str:
        out = []
        for idx, name in enumerate(self.helpers):
            # helpers only call later helpers, so there is no recursion
            out.append(f"def {name}() {self.block(1, (), idx + 1)}")
        return "\n".join(out)

    def header(self) -> str:
        inits = "\n".join(f"global {g} = {self.r.randint(0, 5)};" for g in GLOBALS)
        return inits + "\nglobal arr = 0;\n" + self.helper_defs() + "\n"


def random_program(rng: random.Random, throws: bool = True) -> str:
    g = Gen(rng, throws)
    return g.header() + f"def main() {{ arr = newarray(4); {g.block(0)} }}\n"
