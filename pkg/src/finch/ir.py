"""Finch abstract syntax tree.

Nodes are frozen dataclasses; every transformation builds new trees.  Source
locations ride along on ``loc`` but never take part in equality.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterator, Optional, Tuple

# Names starting with this prefix are reserved for compiler temporaries.
TEMP_PREFIX = "_t"
# Compiler-owned globals (exception slots); excluded from store checksums.
RESERVED_PREFIX = "_"

Loc = Optional[Tuple[int, int]]


def _loc():
    return field(default=None, compare=False, repr=False, kw_only=True)


class Node:
    loc: Loc

    def children(self) -> Iterator["Node"]:
        for f in fields(self):
            if f.name == "loc":
                continue
            value = getattr(self, f.name)
            if isinstance(value, Node):
                yield value
            elif isinstance(value, tuple):
                for item in value:
                    if isinstance(item, Node):
                        yield item
                    elif isinstance(item, tuple):
                        yield from (x for x in item if isinstance(x, Node))

    def walk(self) -> Iterator["Node"]:
        yield self
        for child in self.children():
            yield from child.walk()


# --------------------------------------------------------------------------
# Expressions


class Expr(Node):
    pass


@dataclass(frozen=True)
class Int(Expr):
    value: int
    loc: Loc = _loc()


@dataclass(frozen=True)
class Bool(Expr):
    value: bool
    loc: Loc = _loc()


@dataclass(frozen=True)
class Null(Expr):
    loc: Loc = _loc()


@dataclass(frozen=True)
class Var(Expr):
    name: str
    loc: Loc = _loc()


@dataclass(frozen=True)
class Index(Expr):
    array: str
    index: Expr
    loc: Loc = _loc()


@dataclass(frozen=True)
class Unary(Expr):
    op: str
    operand: Expr
    loc: Loc = _loc()


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr
    loc: Loc = _loc()


# Builtins: idleWorkers(), nthreads(), newarray(n).
BUILTINS = {"idleWorkers": 0, "nthreads": 0, "newarray": 1}


@dataclass(frozen=True)
class Builtin(Expr):
    name: str
    args: Tuple[Expr, ...] = ()
    loc: Loc = _loc()


@dataclass(frozen=True)
class NewExc(Expr):
    """``exc(Tag)``: a fresh plain exception carrying ``tag``."""

    tag: str
    loc: Loc = _loc()


@dataclass(frozen=True)
class WrapME(Expr):
    """``ME(e)``: a MultipleExceptions value holding the single exception ``e``."""

    operand: Expr
    loc: Loc = _loc()


# --------------------------------------------------------------------------
# Statements


class Stmt(Node):
    pass


@dataclass(frozen=True)
class Seq(Stmt):
    stmts: Tuple[Stmt, ...] = ()
    loc: Loc = _loc()


@dataclass(frozen=True)
class Finish(Stmt):
    body: Stmt
    pending: Tuple[str, ...] = ()
    loc: Loc = _loc()


@dataclass(frozen=True)
class Async(Stmt):
    body: Stmt
    clocks: Tuple[str, ...] = ()
    loc: Loc = _loc()


@dataclass(frozen=True)
class For(Stmt):
    init: Stmt
    cond: Expr
    step: Stmt
    body: Stmt
    loc: Loc = _loc()


@dataclass(frozen=True)
class While(Stmt):
    cond: Expr
    body: Stmt
    label: Optional[str] = None
    loc: Loc = _loc()


@dataclass(frozen=True)
class If(Stmt):
    cond: Expr
    then: Stmt
    orelse: Optional[Stmt] = None
    loc: Loc = _loc()


@dataclass(frozen=True)
class Switch(Stmt):
    """C-style switch; control falls through from the matched case onwards."""

    scrutinee: Expr
    cases: Tuple[Tuple[int, Stmt], ...]
    loc: Loc = _loc()


@dataclass(frozen=True)
class TryCatch(Stmt):
    body: Stmt
    var: str
    kind: str
    handler: Stmt
    loc: Loc = _loc()


@dataclass(frozen=True)
class Throw(Stmt):
    expr: Expr
    loc: Loc = _loc()


@dataclass(frozen=True)
class AdvanceAll(Stmt):
    loc: Loc = _loc()


@dataclass(frozen=True)
class Call(Stmt):
    target: str
    args: Tuple[Expr, ...] = ()
    loc: Loc = _loc()


@dataclass(frozen=True)
class Assign(Stmt):
    target: str
    value: Expr
    index: Optional[Expr] = None
    loc: Loc = _loc()


@dataclass(frozen=True)
class Return(Stmt):
    loc: Loc = _loc()


@dataclass(frozen=True)
class Skip(Stmt):
    loc: Loc = _loc()


@dataclass(frozen=True)
class Break(Stmt):
    label: Optional[str] = None
    loc: Loc = _loc()


@dataclass(frozen=True)
class Continue(Stmt):
    label: Optional[str] = None
    loc: Loc = _loc()


# --------------------------------------------------------------------------
# Program structure


@dataclass(frozen=True)
class Method:
    name: str
    params: Tuple[Tuple[str, str], ...]
    body: Stmt
    exception_slot: Optional[str] = None
    loc: Loc = _loc()

    @property
    def param_names(self) -> Tuple[str, ...]:
        return tuple(p for p, _ in self.params)


@dataclass(frozen=True)
class Global:
    name: str
    init: Expr
    loc: Loc = _loc()


@dataclass(frozen=True)
class Program:
    methods: Tuple[Method, ...]
    entry: str = "main"
    globals: Tuple[Global, ...] = ()

    def method(self, name: str) -> Method:
        for m in self.methods:
            if m.name == name:
                return m
        raise KeyError(name)

    def method_map(self) -> dict:
        return {m.name: m for m in self.methods}

    def global_names(self) -> set:
        return {g.name for g in self.globals}

    def replace_method(self, method: Method) -> "Program":
        methods = tuple(method if m.name == method.name else m for m in self.methods)
        return Program(methods, self.entry, self.globals)


# --------------------------------------------------------------------------
# Helpers


def seq(*stmts: Stmt) -> Stmt:
    """Build a flattened sequence; a single statement is returned unwrapped."""
    out = []
    for s in stmts:
        if isinstance(s, Seq):
            out.extend(x for x in flatten(s) if not isinstance(x, Skip))
        elif s is not None and not isinstance(s, Skip):
            out.append(s)
    if not out:
        return Skip()
    if len(out) == 1:
        return out[0]
    return Seq(tuple(out))


def flatten(s: Stmt) -> list:
    if isinstance(s, Seq):
        out = []
        for x in s.stmts:
            out.extend(flatten(x))
        return out
    if isinstance(s, Skip):
        return []
    return [s]


def normalize(node):
    """Canonical form: nested sequences flattened, skips dropped, singleton sequences unwrapped."""
    if isinstance(node, Seq):
        return seq(*(normalize(s) for s in node.stmts))
    if isinstance(node, Finish):
        return Finish(normalize(node.body), node.pending)
    if isinstance(node, Async):
        return Async(normalize(node.body), node.clocks)
    if isinstance(node, For):
        return For(normalize(node.init), node.cond, normalize(node.step), normalize(node.body))
    if isinstance(node, While):
        return While(node.cond, normalize(node.body), node.label)
    if isinstance(node, If):
        orelse = normalize(node.orelse) if node.orelse is not None else None
        if isinstance(orelse, Skip):
            orelse = None
        return If(node.cond, normalize(node.then), orelse)
    if isinstance(node, Switch):
        return Switch(node.scrutinee, tuple((v, normalize(b)) for v, b in node.cases))
    if isinstance(node, TryCatch):
        return TryCatch(normalize(node.body), node.var, node.kind, normalize(node.handler))
    return node


def if_throws(pending) -> Stmt:
    """``if (v != null) throw v;`` for each pending variable, in order."""
    return seq(*(If(Binary("!=", Var(v), Null()), Throw(Var(v))) for v in pending))


def is_temp(name: str) -> bool:
    return name.startswith(TEMP_PREFIX)


class TempSupply:
    """Fresh compiler temporaries, unique against every name already in a program."""

    def __init__(self, program: Optional[Program] = None):
        self._n = 0
        self._taken = set()
        if program is not None:
            for m in program.methods:
                for node in m.body.walk():
                    for attr in ("name", "target", "var", "array"):
                        v = getattr(node, attr, None)
                        if isinstance(v, str):
                            self._taken.add(v)

    def fresh(self, hint: str = "") -> str:
        while True:
            self._n += 1
            name = f"{TEMP_PREFIX}{hint}{self._n}"
            if name not in self._taken:
                self._taken.add(name)
                return name


# --------------------------------------------------------------------------
# Structural equality


def structurally_equal(a, b) -> bool:
    """Equality up to consistent renaming of compiler temporaries.

    Both trees are normalized first, so ``{S}`` and ``S`` compare equal.
    """
    return _AlphaEq().eq(normalize(a) if isinstance(a, Stmt) else a,
                         normalize(b) if isinstance(b, Stmt) else b)


class _AlphaEq:
    def __init__(self):
        self.fwd = {}
        self.bwd = {}

    def name(self, x, y) -> bool:
        if x is None or y is None:
            return x == y
        if is_temp(x) or is_temp(y):
            if not (is_temp(x) and is_temp(y)):
                return False
            if self.fwd.setdefault(x, y) != y or self.bwd.setdefault(y, x) != x:
                return False
            return True
        return x == y

    def eq(self, a, b) -> bool:
        if type(a) is not type(b):
            return False
        if isinstance(a, tuple):
            return len(a) == len(b) and all(self.eq(x, y) for x, y in zip(a, b))
        if isinstance(a, str):
            return self.name(a, b)
        if not isinstance(a, Node):
            return a == b
        for f in fields(a):
            if f.name == "loc":
                continue
            x, y = getattr(a, f.name), getattr(b, f.name)
            if f.name in ("op", "kind", "tag"):
                if x != y:
                    return False
            elif not self.eq(x, y):
                return False
        return True


def programs_equal(p: Program, q: Program) -> bool:
    if p.entry != q.entry or len(p.methods) != len(q.methods):
        return False
    if [(g.name, g.init) for g in p.globals] != [(g.name, g.init) for g in q.globals]:
        return False
    for m, n in zip(p.methods, q.methods):
        if (m.name, m.params, m.exception_slot) != (n.name, n.params, n.exception_slot):
            return False
        if not structurally_equal(m.body, n.body):
            return False
    return True
