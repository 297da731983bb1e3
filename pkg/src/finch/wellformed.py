"""Well-formedness checks for Finch programs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

from . import ir


@dataclass(frozen=True)
class Diagnostic:
    message: str
    loc: ir.Loc = None
    method: str = ""

    def __str__(self) -> str:
        where = f"{self.loc[0]}:{self.loc[1]}: " if self.loc else ""
        scope = f"[{self.method}] " if self.method else ""
        return f"{where}{scope}{self.message}"


def _has_clocked_async(stmt: ir.Stmt) -> bool:
    return any(isinstance(n, ir.Async) and n.clocks for n in stmt.walk())


def well_formed(program: ir.Program) -> List[Diagnostic]:
    diags: List[Diagnostic] = []
    methods = {}
    for m in program.methods:
        if m.name in methods:
            diags.append(Diagnostic(f"duplicate method '{m.name}'", m.loc, m.name))
        methods[m.name] = m
    if program.entry not in methods:
        diags.append(Diagnostic(f"entry method '{program.entry}' is not defined"))
    globals_ = program.global_names()
    for g in program.globals:
        if not isinstance(g.init, (ir.Int, ir.Bool, ir.Null)) and not (
            isinstance(g.init, ir.Unary) and isinstance(g.init.operand, ir.Int)
        ):
            diags.append(Diagnostic(f"global '{g.name}' must be initialised with a literal", g.loc))
    for m in program.methods:
        _MethodChecker(m, methods, globals_, diags).run()
    return diags


class _MethodChecker:
    def __init__(self, method, methods, globals_, diags):
        self.method = method
        self.methods = methods
        self.globals = globals_
        self.diags = diags
        self.clocked_method = _has_clocked_async(method.body)

    def err(self, msg, node):
        self.diags.append(Diagnostic(msg, getattr(node, "loc", None), self.method.name))

    def run(self):
        for name in self.method.param_names:
            if name in self.globals:
                self.err(f"parameter '{name}' shadows a global", self.method)
        self.stmt(self.method.body, loops=(), labels=(), clocked=False)

    def stmt(self, s, loops, labels, clocked):
        if isinstance(s, ir.Seq):
            for x in s.stmts:
                self.stmt(x, loops, labels, clocked)
        elif isinstance(s, ir.Finish):
            self.stmt(s.body, loops, labels, clocked)
        elif isinstance(s, ir.Async):
            # jumps may not leave a task
            self.stmt(s.body, (), (), clocked or bool(s.clocks))
        elif isinstance(s, ir.For):
            self.stmt(s.init, loops, labels, clocked)
            self.expr(s.cond)
            self.stmt(s.step, loops, labels, clocked)
            self.stmt(s.body, loops + (None,), labels, clocked)
        elif isinstance(s, ir.While):
            self.expr(s.cond)
            new_labels = labels + ((s.label,) if s.label else ())
            self.stmt(s.body, loops + (s.label,), new_labels, clocked)
        elif isinstance(s, ir.If):
            self.expr(s.cond)
            self.stmt(s.then, loops, labels, clocked)
            if s.orelse is not None:
                self.stmt(s.orelse, loops, labels, clocked)
        elif isinstance(s, ir.Switch):
            self.expr(s.scrutinee)
            seen = set()
            for value, body in s.cases:
                if value in seen:
                    self.err(f"duplicate case {value}", s)
                seen.add(value)
                self.stmt(body, loops, labels, clocked)
        elif isinstance(s, ir.TryCatch):
            self.stmt(s.body, loops, labels, clocked)
            self.stmt(s.handler, loops, labels, clocked)
        elif isinstance(s, ir.Throw):
            self.expr(s.expr)
        elif isinstance(s, ir.AdvanceAll):
            if not (clocked or self.clocked_method):
                self.err("advanceAll outside any clocked context", s)
        elif isinstance(s, ir.Call):
            target = self.methods.get(s.target)
            if target is None:
                self.err(f"call to undefined method '{s.target}'", s)
            elif len(target.params) != len(s.args):
                self.err(
                    f"'{s.target}' expects {len(target.params)} arguments, got {len(s.args)}", s
                )
            for a in s.args:
                self.expr(a)
        elif isinstance(s, ir.Assign):
            if s.index is not None:
                if s.target not in self.globals:
                    self.err(f"array '{s.target}' must be a global", s)
                self.expr(s.index)
                self.expr(s.value)
            elif isinstance(s.value, ir.Builtin) and s.value.name == "newarray":
                if s.target not in self.globals:
                    self.err(f"array '{s.target}' must be a global", s)
                self.expr(s.value, allow_alloc=True)
            else:
                self.expr(s.value)
        elif isinstance(s, ir.Break):
            if not loops:
                self.err("break outside a loop", s)
            elif s.label is not None and s.label not in labels:
                self.err(f"break to unknown label '{s.label}'", s)
        elif isinstance(s, ir.Continue):
            if not loops:
                self.err("continue outside a loop", s)
            elif s.label is not None and s.label not in labels:
                self.err(f"continue to unknown label '{s.label}'", s)
        elif isinstance(s, (ir.Return, ir.Skip)):
            pass
        else:
            self.err(f"unknown statement {type(s).__name__}", s)

    def expr(self, e, allow_alloc=False):
        for node in e.walk():
            if isinstance(node, ir.Index) and node.array not in self.globals:
                self.err(f"array '{node.array}' must be a global", node)
            elif isinstance(node, ir.Builtin):
                arity = ir.BUILTINS.get(node.name)
                if arity is None:
                    self.err(f"unknown builtin '{node.name}'", node)
                elif arity != len(node.args):
                    self.err(f"builtin '{node.name}' takes {arity} arguments", node)
                if node.name == "newarray" and not (allow_alloc and node is e):
                    self.err("newarray() may only initialise a global array", node)
