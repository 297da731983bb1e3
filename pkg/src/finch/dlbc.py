"""Loop chunking (LC) and dynamic load-balanced loop chunking (DLBC).

Both transformations apply to a canonical parallel loop

    for (i = a; i < n; i = i + 1) async B        (optionally inside finish)

LC splits the range into ``nthreads()`` static chunks.  DLBC emits a template
that asks the runtime how many workers are idle: with idle workers the range
is partitioned between them and the current task, otherwise the current task
runs the iterations serially and re-checks after each one.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

from . import ir
from .analysis import DepFacts, has_escaping_jump

B = ir.Binary
V = ir.Var
I = ir.Int


class NotCanonical(Exception):
    pass


class DomainError(ValueError):
    pass


# --------------------------------------------------------------------------
# Partition arithmetic


@dataclass(frozen=True)
class Partition:
    chunks: Tuple[Tuple[int, int], ...]
    parent: Tuple[int, int]

    def sizes(self) -> List[int]:
        return [k - n for n, k in self.chunks] + [self.parent[1] - self.parent[0]]


def compute_partition(actualn: int, workers: int, start: int = 0) -> Partition:
    """Replay the template's chunk arithmetic for ``actualn`` iterations from ``start``."""
    if workers < 1 or actualn < 1:
        raise DomainError(f"need workers >= 1 and actualn >= 1, got {workers}, {actualn}")
    tot = workers + 1
    eq = actualn // tot
    new_n = start + actualn - eq
    rem = actualn % tot + workers
    chunks = []
    ii = start
    while ii < new_n:
        kx = ii + eq + rem // tot
        chunks.append((ii, kx))
        rem -= 1
        ii = kx
    return Partition(tuple(chunks), (new_n, start + actualn))


# --------------------------------------------------------------------------
# Canonical loops


@dataclass
class CanonicalLoop:
    var: str
    lower: ir.Expr
    upper: ir.Expr
    body: ir.Stmt
    clocks: Tuple[str, ...]
    finished: bool  # the loop was the whole body of a finish with no pending list
    phases: Tuple[ir.Stmt, ...] = ()

    @property
    def clocked(self) -> bool:
        return bool(self.clocks)


def _written_locals(s: ir.Stmt, globals_) -> set:
    out = set()
    for n in s.walk():
        if isinstance(n, ir.Assign) and n.target not in globals_:
            out.add(n.target)
        elif isinstance(n, ir.TryCatch):
            out.add(n.var)
        elif isinstance(n, ir.For) and isinstance(n.init, ir.Assign):
            out.add(n.init.target)
    return out


def _names(node) -> set:
    out = set()
    for n in node.walk():
        for attr in ("name", "target", "var"):
            v = getattr(n, attr, None)
            if isinstance(v, str):
                out.add(v)
    return out


def _private(body: ir.Stmt, v: str) -> bool:
    """``v`` is assigned before any read in every execution of ``body``."""
    for s in ir.flatten(body):
        if v not in _names(s):
            continue
        return (isinstance(s, ir.Assign) and s.target == v and s.index is None
                and v not in _names(s.value))
    return True


def match_loop(stmt: ir.Stmt, facts: DepFacts, context: Optional[ir.Stmt] = None) -> CanonicalLoop:
    """Recognise a canonical parallel loop or raise :class:`NotCanonical`.

    ``context`` is the enclosing method body; locals written by the loop body
    must not be visible anywhere else in it.
    """
    original = stmt
    stmt = ir.normalize(stmt)
    finished = False
    if isinstance(stmt, ir.Finish):
        if stmt.pending:
            raise NotCanonical("finish has pending exceptions")
        finished = True
        stmt = stmt.body
    if not isinstance(stmt, ir.For):
        raise NotCanonical("not a for loop")
    init, cond, step = stmt.init, stmt.cond, stmt.step
    if not (isinstance(init, ir.Assign) and init.index is None):
        raise NotCanonical("loop init is not i = a")
    i = init.target
    if not (isinstance(cond, ir.Binary) and cond.op == "<" and cond.left == V(i)):
        raise NotCanonical("loop condition is not i < n")
    if step != ir.Assign(i, B("+", V(i), I(1))):
        raise NotCanonical("loop step is not i = i + 1")
    if not isinstance(stmt.body, ir.Async):
        raise NotCanonical("loop body is not a single async")
    lower, upper = init.value, cond.right
    body, clocks = stmt.body.body, stmt.body.clocks
    for e in (lower, upper):
        if any(isinstance(n, ir.Builtin) for n in e.walk()):
            raise NotCanonical("loop bounds call builtins")
        if i in _names(e):
            raise NotCanonical("loop bound mentions the loop variable")
    if i in facts.footprint(body).writes:
        raise NotCanonical("loop body writes the loop variable")
    if facts.footprint(upper).reads & facts.footprint(body).writes:
        raise NotCanonical("loop body writes the loop bound")
    if facts.may_throw(body):
        raise NotCanonical("loop body may throw")
    if has_escaping_jump(body):
        raise NotCanonical("loop body jumps")
    for v in _written_locals(body, facts.globals):
        if not _private(body, v):
            raise NotCanonical(f"local '{v}' is read before it is written")
        if context is not None and _occurs_outside(context, original, v):
            raise NotCanonical(f"local '{v}' is shared with the enclosing method")
    phases: Tuple[ir.Stmt, ...] = ()
    if clocks:
        parts = [[]]
        for s in ir.flatten(body):
            if isinstance(s, ir.AdvanceAll):
                parts.append([])
            else:
                parts[-1].append(s)
        phases = tuple(ir.seq(*p) for p in parts)
        if any(facts.has_barrier(p) for p in phases):
            raise NotCanonical("advanceAll nested inside a phase")
    elif facts.has_barrier(body):
        raise NotCanonical("unclocked body synchronizes on a clock")
    return CanonicalLoop(i, lower, upper, body, clocks, finished, phases)


def _occurs_outside(root: ir.Stmt, loop: ir.Stmt, v: str) -> bool:
    def visit(node):
        if node is loop:
            return False
        for attr in ("name", "target", "var"):
            if getattr(node, attr, None) == v:
                return True
        return any(visit(c) for c in node.children())

    return visit(root)


# --------------------------------------------------------------------------
# Generators


def _for(var, lo, hi, body) -> ir.For:
    return ir.For(ir.Assign(var, lo), B("<", V(var), hi), ir.Assign(var, B("+", V(var), I(1))), body)


def _phase_loops(loop: CanonicalLoop, lo, hi, phase_var: Optional[str]):
    """Serial execution of the iterations [lo, hi); clocked bodies become a phase switch."""
    if not loop.clocked:
        return _for(loop.var, lo, hi, loop.body)
    cases = []
    last = len(loop.phases) - 1
    for j, p in enumerate(loop.phases):
        stmts = [_for(loop.var, lo, hi, p)]
        if j < last:
            stmts.append(ir.AdvanceAll())
        cases.append((j, ir.seq(*stmts)))
    return ir.Switch(V(phase_var), tuple(cases))


def lc_chunk(stmt: ir.Stmt, facts: DepFacts, temps: ir.TempSupply,
             context: Optional[ir.Stmt] = None) -> ir.Stmt:
    """Static chunking into ``nthreads()`` tasks."""
    loop = match_loop(stmt, facts, context)
    n, a = loop.upper, loop.lower
    nchunks, chunk, ii, ni, kx = (temps.fresh(h) for h in ("nChunks", "chunk", "ii", "ni", "kx"))
    inner: List[ir.Stmt] = [
        ir.Assign(kx, B("+", V(ni), V(chunk))),
        ir.If(B(">", V(kx), n), ir.Assign(kx, n)),
    ]
    if loop.clocked:
        for j, p in enumerate(loop.phases):
            if j:
                inner.append(ir.AdvanceAll())
            inner.append(_for(loop.var, V(ni), V(kx), p))
    else:
        inner.append(_for(loop.var, V(ni), V(kx), loop.body))
    outer = ir.For(
        ir.Assign(ii, a),
        B("<", V(ii), n),
        ir.Assign(ii, B("+", V(ii), V(chunk))),
        ir.seq(ir.Assign(ni, V(ii)), ir.Async(ir.seq(*inner), loop.clocks)),
    )
    size = B("-", n, a)
    return ir.seq(
        ir.Assign(nchunks, ir.Builtin("nthreads")),
        ir.Assign(chunk, B("/", B("-", B("+", size, V(nchunks)), I(1)), V(nchunks))),
        ir.Finish(outer) if loop.finished else outer,
    )


def gen_dlbc(stmt: ir.Stmt, facts: DepFacts, temps: ir.TempSupply,
             context: Optional[ir.Stmt] = None) -> ir.Stmt:
    """The idle-worker driven template; clocked loops get the phase-switch form."""
    loop = match_loop(stmt, facts, context)
    n, a = loop.upper, loop.lower
    t = {h: temps.fresh(h) for h in
         ("ii", "workers", "tot", "actualn", "eq", "newN", "rem", "kx", "ni", "phase")}
    outer_label = temps.fresh("outer")
    workers, ii, phase = t["workers"], t["ii"], t["phase"]
    idle = ir.Builtin("idleWorkers")

    chunked = ir.For(
        ir.Skip(),
        B("<", V(ii), V(t["newN"])),
        ir.Skip(),
        ir.seq(
            ir.Assign(t["kx"], B("+", B("+", V(ii), V(t["eq"])), B("/", V(t["rem"]), V(t["tot"])))),
            ir.Assign(t["ni"], V(ii)),
            ir.Assign(t["rem"], B("-", V(t["rem"]), I(1))),
            ir.Assign(ii, V(t["kx"])),
            ir.Async(_phase_loops(loop, V(t["ni"]), V(t["kx"]), phase), loop.clocks),
        ),
    )
    parent = _phase_loops(loop, V(t["newN"]), n, phase)
    blocks = ir.seq(chunked, parent)
    parallel = ir.seq(
        ir.Assign(t["tot"], B("+", V(workers), I(1))),
        ir.Assign(t["actualn"], B("-", n, V(ii))),
        ir.Assign(t["eq"], B("/", V(t["actualn"]), V(t["tot"]))),
        ir.Assign(t["newN"], B("-", n, V(t["eq"]))),
        ir.Assign(t["rem"], B("+", B("%", V(t["actualn"]), V(t["tot"])), V(workers))),
        ir.Finish(blocks) if loop.finished else blocks,
    )

    if loop.clocked:
        serial_parts: List[ir.Stmt] = []
        last = len(loop.phases) - 1
        for j, p in enumerate(loop.phases):
            serial_parts.append(_for(loop.var, V(ii), n, p))
            if j < last:
                serial_parts += [
                    ir.AdvanceAll(),
                    ir.Assign(workers, idle),
                    ir.If(B(">", V(workers), I(0)),
                          ir.seq(ir.Assign(phase, I(j + 1)), ir.Continue(outer_label))),
                ]
        serial = ir.seq(*serial_parts)
    else:
        serial = _for(loop.var, V(ii), n, ir.seq(
            loop.body,
            ir.Assign(workers, idle),
            ir.If(
                B("&&", B(">", V(workers), I(0)), B("<", V(loop.var), B("-", n, I(2)))),
                ir.seq(ir.Assign(ii, B("+", V(loop.var), I(1))), ir.Continue(outer_label)),
            ),
        ))

    pre = [ir.Assign(ii, a)]
    if loop.clocked:
        pre.append(ir.Assign(phase, I(0)))
    pre.append(ir.Assign(workers, idle))
    template = ir.While(
        ir.Bool(True),
        ir.seq(ir.If(B(">", V(workers), I(0)), parallel, serial), ir.Break()),
        outer_label,
    )
    return ir.seq(*pre, template)


# --------------------------------------------------------------------------
# Whole-program drivers


@dataclass
class ChunkReport:
    transformed: List[Tuple[str, ir.Loc]] = field(default_factory=list)
    skipped: List[Tuple[str, ir.Loc, str]] = field(default_factory=list)
    # the replacement statement for each transformed loop, in order
    generated: List[ir.Stmt] = field(default_factory=list)


def _candidate(s) -> bool:
    if isinstance(s, ir.Finish) and not s.pending:
        s = ir.normalize(s.body)
    return isinstance(s, ir.For) and isinstance(ir.normalize(s.body), ir.Async)


def _apply(program: ir.Program, gen) -> Tuple[ir.Program, ChunkReport]:
    report = ChunkReport()
    temps = ir.TempSupply(program)
    facts = DepFacts(program)
    methods = []
    for m in program.methods:
        context = m.body

        def visit(node):
            if isinstance(node, ir.Stmt) and _candidate(node):
                try:
                    out = gen(node, facts, temps, context)
                except NotCanonical as e:
                    report.skipped.append((m.name, node.loc, str(e)))
                else:
                    report.transformed.append((m.name, node.loc))
                    report.generated.append(out)
                    return out
            if isinstance(node, ir.Seq):
                return ir.seq(*(visit(s) for s in node.stmts))
            if isinstance(node, ir.Switch):
                return replace(node, cases=tuple((v, visit(b)) for v, b in node.cases))
            changes = {}
            for name in ("body", "then", "orelse", "init", "step", "handler"):
                child = getattr(node, name, None)
                if isinstance(child, ir.Stmt):
                    changes[name] = visit(child)
            return replace(node, **changes) if changes else node

        methods.append(replace(m, body=ir.normalize(visit(m.body))))
    return ir.Program(tuple(methods), program.entry, program.globals), report


def apply_lc(program: ir.Program):
    return _apply(program, lc_chunk)


def apply_dlbc(program: ir.Program):
    return _apply(program, gen_dlbc)
