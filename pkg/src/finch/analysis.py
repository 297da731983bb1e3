"""Conservative dependence facts for the finish-elimination rules.

Everything here over-approximates: a spurious dependence only blocks an
optimization, a missing one would be a soundness bug.  Arrays are treated as
one location each, and locals never conflict with tasks because an ``async``
works on a copy of its parent's frame.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Set, Tuple

from . import ir

ANY = "*"  # exception of unknown kind


# --------------------------------------------------------------------------
# Call graph


@dataclass
class CallGraph:
    nodes: List[str]
    edges: Set[Tuple[str, str]]
    sccs: List[List[str]]  # reverse topological order: callees before callers
    recursive_edges: Set[Tuple[str, str]] = field(default_factory=set)
    call_sites: List[Tuple[str, ir.Call]] = field(default_factory=list)

    @property
    def recursive_sites(self) -> List[Tuple[str, ir.Call]]:
        return [(m, c) for m, c in self.call_sites if (m, c.target) in self.recursive_edges]

    def is_recursive_site(self, caller: str, callee: str) -> bool:
        return (caller, callee) in self.recursive_edges

    def callers(self, callee: str) -> List[str]:
        return sorted({a for a, b in self.edges if b == callee})

    def order(self) -> List[str]:
        """Methods leaf-first; members of one cycle appear in declaration order."""
        return [m for scc in self.sccs for m in scc]


def _calls_in(stmt: ir.Stmt) -> List[ir.Call]:
    return [n for n in stmt.walk() if isinstance(n, ir.Call)]


def _tarjan(nodes: List[str], succ: Dict[str, List[str]]) -> List[List[str]]:
    index: Dict[str, int] = {}
    low: Dict[str, int] = {}
    on_stack: Set[str] = set()
    stack: List[str] = []
    out: List[List[str]] = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(succ[root]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ[w])))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                low[work[-1][0]] = min(low[work[-1][0]], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                order = {n: i for i, n in enumerate(nodes)}
                out.append(sorted(comp, key=order.__getitem__))
    return out


def build_call_graph(program: ir.Program) -> CallGraph:
    nodes = [m.name for m in program.methods]
    succ: Dict[str, List[str]] = {n: [] for n in nodes}
    edges = set()
    sites = []
    for m in program.methods:
        for call in _calls_in(m.body):
            sites.append((m.name, call))
            if call.target in succ and call.target not in succ[m.name]:
                succ[m.name].append(call.target)
            edges.add((m.name, call.target))
    # Tarjan emits components callee-first
    sccs = _tarjan(nodes, succ)
    comp_of = {n: i for i, comp in enumerate(sccs) for n in comp}
    recursive = {(a, b) for a, b in edges if b in comp_of and comp_of[a] == comp_of[b]}
    return CallGraph(nodes, edges, sccs, recursive, sites)


# --------------------------------------------------------------------------
# Escaping asyncs


def escaping_asyncs(s: ir.Stmt) -> List[ir.Async]:
    """Asyncs syntactically inside ``s`` whose immediately enclosing finish is outside ``s``."""
    out: List[ir.Async] = []

    def visit(node):
        if isinstance(node, ir.Finish):
            return
        if isinstance(node, ir.Async):
            out.append(node)
        for child in node.children():
            if isinstance(child, ir.Stmt):
                visit(child)

    visit(s)
    return out


@dataclass
class EAsyncSet:
    """Escaping tasks of a statement: literal asyncs plus calls whose callee leaks tasks."""

    asyncs: Tuple[ir.Async, ...] = ()
    calls: Tuple[ir.Call, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.asyncs or self.calls)


# --------------------------------------------------------------------------
# Footprints and exception kinds


@dataclass(frozen=True)
class Footprint:
    reads: FrozenSet[str] = frozenset()
    writes: FrozenSet[str] = frozenset()

    def __or__(self, other: "Footprint") -> "Footprint":
        return Footprint(self.reads | other.reads, self.writes | other.writes)

    def only(self, names) -> "Footprint":
        return Footprint(self.reads & names, self.writes & names)

    def conflicts(self, other: "Footprint") -> bool:
        return bool(
            self.writes & (other.reads | other.writes) or self.reads & other.writes
        )


EMPTY = Footprint()


def expr_reads(e: Optional[ir.Expr]) -> Set[str]:
    if e is None:
        return set()
    out = set()
    for n in e.walk():
        if isinstance(n, ir.Var):
            out.add(n.name)
        elif isinstance(n, ir.Index):
            out.add(n.array)
    return out


def _catches(kind: str, thrown: str) -> bool:
    if kind == "Exception":
        return True
    return thrown != ANY and thrown == kind


@dataclass
class _Summary:
    footprint: Footprint = EMPTY  # globals only, transitive
    sync_throws: FrozenSet[str] = frozenset()
    async_throws: FrozenSet[str] = frozenset()
    leaks_tasks: bool = False
    leaks_clocked: bool = False
    barrier: bool = False


class DepFacts:
    """Per-program facts; statement-level queries are memoized by node identity."""

    def __init__(self, program: ir.Program):
        self.program = program
        self.globals = frozenset(program.global_names())
        self.methods = program.method_map()
        self.summaries: Dict[str, _Summary] = {m: _Summary() for m in self.methods}
        self._memo: Dict[Tuple[str, int], object] = {}
        self._solve()

    # fixed point over the call graph
    def _solve(self):
        changed = True
        while changed:
            changed = False
            self._memo.clear()
            for name, m in self.methods.items():
                fp = self.footprint(m.body).only(self.globals)
                sync, asyn = self.throw_kinds(m.body)
                new = _Summary(
                    fp,
                    frozenset(sync),
                    frozenset(asyn),
                    bool(self.escaping(m.body)),
                    self._clocked(self.escaping(m.body)),
                    self.has_barrier(m.body),
                )
                if new != self.summaries[name]:
                    self.summaries[name] = new
                    changed = True
        self._memo.clear()

    def _cached(self, tag, node, fn):
        key = (tag, id(node))
        hit = self._memo.get(key)
        if hit is None:
            hit = fn(node)
            self._memo[key] = (node, hit)
            return hit
        return hit[1]

    # footprints
    def footprint(self, s) -> Footprint:
        return self._cached("fp", s, self._footprint)

    def _footprint(self, s) -> Footprint:
        if isinstance(s, ir.Expr):
            return Footprint(frozenset(expr_reads(s)))
        if isinstance(s, ir.Assign):
            reads = expr_reads(s.value) | expr_reads(s.index)
            return Footprint(frozenset(reads), frozenset({s.target}))
        if isinstance(s, ir.Call):
            reads = set()
            for a in s.args:
                reads |= expr_reads(a)
            callee = self.summaries.get(s.target, _Summary()).footprint
            return Footprint(frozenset(reads)) | callee
        fp = EMPTY
        for child in s.children():
            fp = fp | self.footprint(child)
        return fp

    def global_footprint(self, s) -> Footprint:
        return self.footprint(s).only(self.globals)

    # exceptions
    def throw_kinds(self, s: ir.Stmt) -> Tuple[Set[str], Set[str]]:
        """(kinds thrown synchronously, kinds thrown by escaping tasks)."""
        return self._cached("throw", s, self._throw_kinds)

    def _throw_kinds(self, s):
        if isinstance(s, ir.Throw):
            if isinstance(s.expr, ir.NewExc):
                return {s.expr.tag}, set()
            if isinstance(s.expr, ir.WrapME):
                return {"ME"}, set()
            return {ANY}, set()
        if isinstance(s, ir.Call):
            summ = self.summaries.get(s.target, _Summary())
            return set(summ.sync_throws), set(summ.async_throws)
        if isinstance(s, ir.Finish):
            sync, asyn = self.throw_kinds(s.body)
            out = {"ME"} if sync or asyn else set()
            if s.pending:
                out.add(ANY)
            return out, set()
        if isinstance(s, ir.Async):
            sync, asyn = self.throw_kinds(s.body)
            return set(), sync | asyn
        if isinstance(s, ir.TryCatch):
            sync, asyn = self.throw_kinds(s.body)
            hsync, hasyn = self.throw_kinds(s.handler)
            kept = {k for k in sync if not _catches(s.kind, k)}
            return kept | hsync, asyn | hasyn
        sync, asyn = set(), set()
        for child in s.children():
            if isinstance(child, ir.Stmt):
                a, b = self.throw_kinds(child)
                sync |= a
                asyn |= b
        return sync, asyn

    def may_throw(self, s: ir.Stmt) -> bool:
        sync, asyn = self.throw_kinds(s)
        return bool(sync or asyn)

    def escaping_may_throw(self, s: ir.Stmt) -> bool:
        """Whether some e-async of ``s`` (or task leaked through a call) may throw."""
        return bool(self.throw_kinds(s)[1])

    # escaping tasks
    def escaping(self, s: ir.Stmt) -> EAsyncSet:
        asyncs = escaping_asyncs(s)
        calls = []

        def visit(node):
            if isinstance(node, ir.Finish):
                return
            if isinstance(node, ir.Call) and self.summaries.get(node.target, _Summary()).leaks_tasks:
                calls.append(node)
            for child in node.children():
                if isinstance(child, ir.Stmt):
                    visit(child)

        visit(s)
        return EAsyncSet(tuple(asyncs), tuple(calls))

    def source_footprint(self, sources: EAsyncSet) -> Footprint:
        fp = EMPTY
        for a in sources.asyncs:
            fp = fp | self.global_footprint(a.body)
        for c in sources.calls:
            fp = fp | self.summaries.get(c.target, _Summary()).footprint
        return fp

    def _clocked(self, sources: EAsyncSet) -> bool:
        if any(a.clocks for a in sources.asyncs):
            return True
        # any clocked async reachable inside a leaked task also counts
        for a in sources.asyncs:
            if any(isinstance(n, ir.Async) and n.clocks for n in a.body.walk()):
                return True
        return any(self.summaries.get(c.target, _Summary()).leaks_clocked for c in sources.calls)

    def registered_on_clocks(self, sources: EAsyncSet) -> bool:
        return self._clocked(sources)

    def has_barrier(self, s: ir.Stmt) -> bool:
        """Whether executing ``s`` may itself run ``advanceAll`` (not counting child tasks)."""

        def visit(node):
            if isinstance(node, ir.AdvanceAll):
                return True
            if isinstance(node, ir.Async):
                return False
            if isinstance(node, ir.Call):
                return self.summaries.get(node.target, _Summary()).barrier
            return any(visit(c) for c in node.children() if isinstance(c, ir.Stmt))

        return visit(s)


def depends(target, sources: EAsyncSet, facts: DepFacts) -> bool:
    """True when ``target`` may conflict with any of the escaping tasks in ``sources``."""
    if not sources:
        return False
    return facts.global_footprint(target).conflicts(facts.source_footprint(sources))


def may_throw(s: ir.Stmt, facts: DepFacts) -> bool:
    return facts.may_throw(s)


def registered_on_clocks(sources: EAsyncSet, facts: DepFacts) -> bool:
    return facts.registered_on_clocks(sources)


def has_escaping_jump(s: ir.Stmt) -> bool:
    """Whether ``s`` contains a return, or a break/continue leaving ``s``, outside any task."""

    def visit(node, loops: Tuple[Optional[str], ...]):
        if isinstance(node, ir.Async):
            return False
        if isinstance(node, ir.Return):
            return True
        if isinstance(node, (ir.Break, ir.Continue)):
            if node.label is None:
                return not loops
            return node.label not in loops
        if isinstance(node, ir.For):
            return (
                visit(node.init, loops)
                or visit(node.step, loops)
                or visit(node.body, loops + ("",))
            )
        if isinstance(node, ir.While):
            return visit(node.body, loops + (node.label or "",))
        return any(visit(c, loops) for c in node.children() if isinstance(c, ir.Stmt))

    return visit(s, ())


def dump_facts(program: ir.Program) -> str:
    """JSON lines: one record per top-level statement of every method."""
    from .frontend import pretty_stmt

    facts = DepFacts(program)
    lines = []
    for m in program.methods:
        summ = facts.summaries[m.name]
        lines.append(json.dumps({
            "method": m.name,
            "reads": sorted(summ.footprint.reads),
            "writes": sorted(summ.footprint.writes),
            "mayThrow": bool(summ.sync_throws or summ.async_throws),
            "leaksTasks": summ.leaks_tasks,
            "clockRegistered": summ.leaks_clocked,
        }))
        for i, s in enumerate(ir.flatten(m.body)):
            fp = facts.footprint(s)
            lines.append(json.dumps({
                "method": m.name,
                "stmt": i,
                "text": pretty_stmt(s).splitlines()[0],
                "reads": sorted(fp.reads),
                "writes": sorted(fp.writes),
                "mayThrow": facts.may_throw(s),
                "clockRegistered": facts.registered_on_clocks(facts.escaping(s)),
            }))
    return "\n".join(lines) + "\n"
