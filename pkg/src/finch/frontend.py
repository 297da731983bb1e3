"""Concrete syntax for Finch: tokenizer, recursive-descent parser, pretty-printer."""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

from . import ir
from .wellformed import Diagnostic, well_formed


@dataclass(frozen=True)
class SourceFile:
    path: str
    text: str

    @classmethod
    def read(cls, path) -> "SourceFile":
        return cls(str(path), Path(path).read_text(encoding="utf-8"))


class FinchSyntaxError(Exception):
    def __init__(self, message: str, loc=None, path: str = "<string>"):
        self.message = message
        self.loc = loc
        self.path = path
        where = f"{path}:{loc[0]}:{loc[1]}" if loc else path
        super().__init__(f"{where}: {message}")


class IllFormedProgram(Exception):
    def __init__(self, diagnostics: List[Diagnostic], path: str = "<string>"):
        self.diagnostics = diagnostics
        super().__init__(f"{path}: " + "; ".join(str(d) for d in diagnostics))


KEYWORDS = {
    "def", "global", "finish", "async", "clocked", "advanceAll", "for", "while", "if",
    "else", "switch", "case", "try", "catch", "throw", "return", "break", "continue",
    "skip", "true", "false", "null", "pending", "slot", "var", "val", "exc", "ME",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*|/\*.*?\*/)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><<|>>|<=|>=|==|!=|&&|\|\||\+\+|--|[-+*/%<>=!&|^(){}\[\];:,.])
    """,
    re.VERBOSE | re.DOTALL,
)


@dataclass
class Token:
    kind: str  # int | ident | kw | op | eof
    text: str
    loc: tuple


def tokenize(text: str, path: str = "<string>") -> List[Token]:
    tokens = []
    pos, line, col = 0, 1, 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FinchSyntaxError(f"unexpected character {text[pos]!r}", (line, col), path)
        kind = m.lastgroup
        chunk = m.group()
        if kind == "int":
            tokens.append(Token("int", chunk, (line, col)))
        elif kind == "ident":
            tokens.append(Token("kw" if chunk in KEYWORDS else "ident", chunk, (line, col)))
        elif kind == "op":
            tokens.append(Token("op", chunk, (line, col)))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            col = len(chunk) - chunk.rfind("\n")
        else:
            col += len(chunk)
        pos = m.end()
    tokens.append(Token("eof", "", (line, col)))
    return tokens


_BINARY_LEVELS = [
    ("||",),
    ("&&",),
    ("|",),
    ("^",),
    ("&",),
    ("==", "!="),
    ("<", "<=", ">", ">="),
    ("<<", ">>"),
    ("+", "-"),
    ("*", "/", "%"),
]
PRECEDENCE = {op: i for i, ops in enumerate(_BINARY_LEVELS) for op in ops}
UNARY_PRECEDENCE = len(_BINARY_LEVELS)


class Parser:
    def __init__(self, text: str, path: str = "<string>"):
        self.path = path
        self.toks = tokenize(text, path)
        self.i = 0

    # token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k=1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        return self.tok.kind in ("op", "kw") and self.tok.text == text

    def accept(self, text: str) -> Optional[Token]:
        if self.at(text):
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(f"expected '{text}', found {self.describe(self.tok)}")
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> str:
        if self.tok.kind != "ident":
            self.fail(f"expected identifier, found {self.describe(self.tok)}")
        t = self.tok
        self.i += 1
        return t.text

    def fail(self, msg):
        raise FinchSyntaxError(msg, self.tok.loc, self.path)

    @staticmethod
    def describe(t: Token) -> str:
        return "end of input" if t.kind == "eof" else repr(t.text)

    # program
    def program(self) -> ir.Program:
        methods, globals_ = [], []
        while self.tok.kind != "eof":
            if self.at("global"):
                globals_.append(self.global_decl())
            elif self.at("def"):
                methods.append(self.method())
            else:
                self.fail(f"expected 'def' or 'global', found {self.describe(self.tok)}")
        return ir.Program(tuple(methods), "main", tuple(globals_))

    def global_decl(self) -> ir.Global:
        loc = self.expect("global").loc
        name = self.ident()
        self.expect("=")
        init = self.expr()
        self.expect(";")
        return ir.Global(name, init, loc=loc)

    def method(self) -> ir.Method:
        loc = self.expect("def").loc
        name = self.ident()
        self.expect("(")
        params = []
        if not self.at(")"):
            while True:
                pname = self.ident()
                kind = "Int"
                if self.accept(":"):
                    kind = self.ident()
                params.append((pname, kind))
                if not self.accept(","):
                    break
        self.expect(")")
        slot = None
        if self.accept("slot"):
            self.expect("(")
            slot = self.ident()
            self.expect(")")
        if not self.at("{"):
            self.fail("expected '{' to open method body")
        body = self.stmt()
        return ir.Method(name, tuple(params), body, slot, loc=loc)

    # statements
    def block(self) -> ir.Stmt:
        loc = self.expect("{").loc
        stmts = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                self.fail("unterminated block")
            stmts.append(self.stmt())
        self.expect("}")
        return ir.Seq(tuple(stmts), loc=loc)

    def stmt(self) -> ir.Stmt:
        t = self.tok
        loc = t.loc
        if self.at("{"):
            return self.block()
        if self.accept("skip"):
            self.expect(";")
            return ir.Skip(loc=loc)
        if self.accept("finish"):
            body = self.stmt()
            pending = ()
            if self.accept("pending"):
                pending = tuple(self.ident_list())
            return ir.Finish(body, pending, loc=loc)
        if self.accept("async"):
            clocks = ()
            if self.accept("clocked"):
                clocks = tuple(self.ident_list())
            return ir.Async(self.stmt(), clocks, loc=loc)
        if self.accept("for"):
            self.expect("(")
            init = ir.Skip() if self.at(";") else self.simple()
            self.expect(";")
            cond = ir.Bool(True) if self.at(";") else self.expr()
            self.expect(";")
            step = ir.Skip() if self.at(")") else self.simple()
            self.expect(")")
            return ir.For(init, cond, step, self.stmt(), loc=loc)
        if t.kind == "ident" and self.peek().text == ":" and self.peek(2).text == "while":
            label = self.ident()
            self.expect(":")
            return self.while_stmt(label)
        if self.at("while"):
            return self.while_stmt(None)
        if self.accept("if"):
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            then = self.stmt()
            orelse = self.stmt() if self.accept("else") else None
            return ir.If(cond, then, orelse, loc=loc)
        if self.accept("switch"):
            self.expect("(")
            scrut = self.expr()
            self.expect(")")
            self.expect("{")
            cases = []
            while self.accept("case"):
                neg = bool(self.accept("-"))
                if self.tok.kind != "int":
                    self.fail("expected integer case label")
                value = int(self.tok.text) * (-1 if neg else 1)
                self.i += 1
                self.expect(":")
                body = []
                while not (self.at("case") or self.at("}")):
                    body.append(self.stmt())
                cases.append((value, ir.Seq(tuple(body))))
            self.expect("}")
            return ir.Switch(scrut, tuple(cases), loc=loc)
        if self.accept("try"):
            body = self.stmt()
            self.expect("catch")
            self.expect("(")
            var = self.ident()
            self.expect(":")
            kind = self.tok.text
            if self.tok.kind not in ("ident", "kw"):
                self.fail("expected exception kind")
            self.i += 1
            self.expect(")")
            return ir.TryCatch(body, var, kind, self.stmt(), loc=loc)
        if self.accept("throw"):
            e = self.expr()
            self.expect(";")
            return ir.Throw(e, loc=loc)
        if self.accept("advanceAll"):
            if self.accept("("):
                self.expect(")")
            self.expect(";")
            return ir.AdvanceAll(loc=loc)
        if self.accept("return"):
            self.expect(";")
            return ir.Return(loc=loc)
        if self.accept("break"):
            label = self.ident() if self.tok.kind == "ident" else None
            self.expect(";")
            return ir.Break(label, loc=loc)
        if self.accept("continue"):
            label = self.ident() if self.tok.kind == "ident" else None
            self.expect(";")
            return ir.Continue(label, loc=loc)
        if self.at("var") or self.at("val"):
            self.i += 1
            name = self.ident()
            if self.accept(":"):
                self.ident()
            self.expect("=")
            value = self.expr()
            self.expect(";")
            return ir.Assign(name, value, loc=loc)
        if t.kind == "ident" and self.peek().text == "(":
            name = self.ident()
            args = self.args()
            self.expect(";")
            return ir.Call(name, tuple(args), loc=loc)
        s = self.simple()
        self.expect(";")
        return s

    def while_stmt(self, label):
        loc = self.expect("while").loc
        self.expect("(")
        cond = self.expr()
        self.expect(")")
        return ir.While(cond, self.stmt(), label, loc=loc)

    def simple(self) -> ir.Stmt:
        loc = self.tok.loc
        name = self.ident()
        index = None
        if self.accept("["):
            index = self.expr()
            self.expect("]")
        if self.at("++") or self.at("--"):
            op = "+" if self.tok.text == "++" else "-"
            self.i += 1
            if index is not None:
                self.fail("increment of array element is not supported")
            return ir.Assign(name, ir.Binary(op, ir.Var(name), ir.Int(1)), loc=loc)
        for compound in ("+", "-"):
            if self.at(compound) and self.peek().text == "=":
                self.i += 2
                rhs = self.expr()
                lhs = ir.Index(name, index) if index is not None else ir.Var(name)
                return ir.Assign(name, ir.Binary(compound, lhs, rhs), index, loc=loc)
        self.expect("=")
        return ir.Assign(name, self.expr(), index, loc=loc)

    def ident_list(self) -> List[str]:
        self.expect("(")
        names = []
        if not self.at(")"):
            names.append(self.ident())
            while self.accept(","):
                names.append(self.ident())
        self.expect(")")
        return names

    def args(self) -> List[ir.Expr]:
        self.expect("(")
        out = []
        if not self.at(")"):
            out.append(self.expr())
            while self.accept(","):
                out.append(self.expr())
        self.expect(")")
        return out

    # expressions
    def expr(self, level: int = 0) -> ir.Expr:
        if level == len(_BINARY_LEVELS):
            return self.unary()
        left = self.expr(level + 1)
        while self.tok.kind == "op" and self.tok.text in _BINARY_LEVELS[level]:
            t = self.tok
            self.i += 1
            right = self.expr(level + 1)
            left = ir.Binary(t.text, left, right, loc=t.loc)
        return left

    def unary(self) -> ir.Expr:
        t = self.tok
        if self.accept("-"):
            operand = self.unary()
            if isinstance(operand, ir.Int) and operand.value > 0:
                return ir.Int(-operand.value, loc=t.loc)
            return ir.Unary("-", operand, loc=t.loc)
        if self.accept("!"):
            return ir.Unary("!", self.unary(), loc=t.loc)
        return self.primary()

    def primary(self) -> ir.Expr:
        t = self.tok
        loc = t.loc
        if t.kind == "int":
            self.i += 1
            return ir.Int(int(t.text), loc=loc)
        if self.accept("true"):
            return ir.Bool(True, loc=loc)
        if self.accept("false"):
            return ir.Bool(False, loc=loc)
        if self.accept("null"):
            return ir.Null(loc=loc)
        if self.accept("exc"):
            self.expect("(")
            tag = self.ident()
            self.expect(")")
            return ir.NewExc(tag, loc=loc)
        if self.accept("ME"):
            self.expect("(")
            e = self.expr()
            self.expect(")")
            return ir.WrapME(e, loc=loc)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "ident":
            name = self.ident()
            if self.at("("):
                return ir.Builtin(name, tuple(self.args()), loc=loc)
            if self.accept("["):
                idx = self.expr()
                self.expect("]")
                return ir.Index(name, idx, loc=loc)
            return ir.Var(name, loc=loc)
        self.fail(f"expected expression, found {self.describe(t)}")


def parse(src: Union[SourceFile, str], check: bool = True) -> ir.Program:
    """Parse a whole program; raises on the first syntax error or on ill-formedness."""
    if isinstance(src, str):
        src = SourceFile("<string>", src)
    program = Parser(src.text, src.path).program()
    if check:
        diags = well_formed(program)
        if diags:
            raise IllFormedProgram(diags, src.path)
    return program


def parse_stmt(text: str) -> ir.Stmt:
    p = Parser(text)
    stmts = []
    while p.tok.kind != "eof":
        stmts.append(p.stmt())
    return ir.normalize(ir.Seq(tuple(stmts)))


def parse_expr(text: str) -> ir.Expr:
    p = Parser(text)
    e = p.expr()
    if p.tok.kind != "eof":
        p.fail("trailing input after expression")
    return e


# --------------------------------------------------------------------------
# Pretty printer


def pretty_expr(e: ir.Expr, ctx: int = 0) -> str:
    if isinstance(e, ir.Int):
        text = str(e.value)
        return f"({text})" if e.value < 0 and ctx > 0 else text
    if isinstance(e, ir.Bool):
        return "true" if e.value else "false"
    if isinstance(e, ir.Null):
        return "null"
    if isinstance(e, ir.Var):
        return e.name
    if isinstance(e, ir.Index):
        return f"{e.array}[{pretty_expr(e.index)}]"
    if isinstance(e, ir.Builtin):
        return f"{e.name}({', '.join(pretty_expr(a) for a in e.args)})"
    if isinstance(e, ir.NewExc):
        return f"exc({e.tag})"
    if isinstance(e, ir.WrapME):
        return f"ME({pretty_expr(e.operand)})"
    if isinstance(e, ir.Unary):
        text = e.op + pretty_expr(e.operand, UNARY_PRECEDENCE)
        return f"({text})" if ctx > UNARY_PRECEDENCE else text
    if isinstance(e, ir.Binary):
        p = PRECEDENCE[e.op]
        text = f"{pretty_expr(e.left, p)} {e.op} {pretty_expr(e.right, p + 1)}"
        return f"({text})" if p < ctx else text
    raise TypeError(f"not an expression: {e!r}")


def _simple(s: ir.Stmt) -> str:
    s = ir.normalize(s)
    if isinstance(s, ir.Skip):
        return ""
    if isinstance(s, ir.Assign):
        lhs = s.target if s.index is None else f"{s.target}[{pretty_expr(s.index)}]"
        return f"{lhs} = {pretty_expr(s.value)}"
    raise ValueError(f"for-loop header must be a simple assignment, got {type(s).__name__}")


class _Printer:
    def __init__(self, indent: str = "  "):
        self.unit = indent
        self.lines: List[str] = []

    def emit(self, depth, text):
        self.lines.append(self.unit * depth + text)

    def body(self, depth, head, s, tail=""):
        """``head { ... }tail`` with ``s`` printed inside the braces."""
        self.emit(depth, head + " {")
        for x in ir.flatten(s):
            self.stmt(depth + 1, x)
        self.emit(depth, "}" + tail)

    def stmt(self, d, s):
        if isinstance(s, ir.Seq):
            items = ir.flatten(s)
            if not items:
                self.emit(d, "skip;")
            for x in items:
                self.stmt(d, x)
        elif isinstance(s, ir.Skip):
            self.emit(d, "skip;")
        elif isinstance(s, ir.Finish):
            tail = f" pending({', '.join(s.pending)})" if s.pending else ""
            self.body(d, "finish", s.body, tail)
        elif isinstance(s, ir.Async):
            head = "async" + (f" clocked({', '.join(s.clocks)})" if s.clocks else "")
            self.body(d, head, s.body)
        elif isinstance(s, ir.For):
            head = f"for ({_simple(s.init)}; {pretty_expr(s.cond)}; {_simple(s.step)})"
            self.body(d, head.replace("( ;", "(;").replace("; )", ";)"), s.body)
        elif isinstance(s, ir.While):
            label = f"{s.label}: " if s.label else ""
            self.body(d, f"{label}while ({pretty_expr(s.cond)})", s.body)
        elif isinstance(s, ir.If):
            if s.orelse is None:
                self.body(d, f"if ({pretty_expr(s.cond)})", s.then)
            else:
                self.emit(d, f"if ({pretty_expr(s.cond)}) {{")
                for x in ir.flatten(s.then):
                    self.stmt(d + 1, x)
                self.emit(d, "} else {")
                for x in ir.flatten(s.orelse):
                    self.stmt(d + 1, x)
                self.emit(d, "}")
        elif isinstance(s, ir.Switch):
            self.emit(d, f"switch ({pretty_expr(s.scrutinee)}) {{")
            for value, body in s.cases:
                self.emit(d + 1, f"case {value}:")
                for x in ir.flatten(body):
                    self.stmt(d + 2, x)
            self.emit(d, "}")
        elif isinstance(s, ir.TryCatch):
            self.emit(d, "try {")
            for x in ir.flatten(s.body):
                self.stmt(d + 1, x)
            self.emit(d, f"}} catch ({s.var}: {s.kind}) {{")
            for x in ir.flatten(s.handler):
                self.stmt(d + 1, x)
            self.emit(d, "}")
        elif isinstance(s, ir.Throw):
            self.emit(d, f"throw {pretty_expr(s.expr)};")
        elif isinstance(s, ir.AdvanceAll):
            self.emit(d, "advanceAll;")
        elif isinstance(s, ir.Call):
            self.emit(d, f"{s.target}({', '.join(pretty_expr(a) for a in s.args)});")
        elif isinstance(s, ir.Assign):
            self.emit(d, _simple(s) + ";")
        elif isinstance(s, ir.Return):
            self.emit(d, "return;")
        elif isinstance(s, ir.Break):
            self.emit(d, "break" + (f" {s.label}" if s.label else "") + ";")
        elif isinstance(s, ir.Continue):
            self.emit(d, "continue" + (f" {s.label}" if s.label else "") + ";")
        else:
            raise TypeError(f"not a statement: {s!r}")


def pretty_stmt(s: ir.Stmt, depth: int = 0) -> str:
    p = _Printer()
    p.stmt(depth, s)
    return "\n".join(p.lines)


def pretty(program: ir.Program) -> str:
    p = _Printer()
    for g in program.globals:
        p.emit(0, f"global {g.name} = {pretty_expr(g.init)};")
    if program.globals:
        p.lines.append("")
    for i, m in enumerate(program.methods):
        if i:
            p.lines.append("")
        params = ", ".join(n if k == "Int" else f"{n}: {k}" for n, k in m.params)
        slot = f" slot({m.exception_slot})" if m.exception_slot else ""
        p.body(0, f"def {m.name}({params}){slot}", m.body)
    return "\n".join(p.lines) + "\n"
