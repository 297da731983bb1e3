"""Aggressive finish elimination.

Finish scopes are widened and hoisted by a small set of local rewrite rules,
applied innermost-first to a fixed point inside each method.  Methods are
visited leaf-up over the call graph; when a method's body ends up as a single
``finish`` that finish is pulled out to the non-recursive call sites, otherwise
the method is restored to its original body.

Two modes exist.  ``plain`` only fires a rule when the statements whose
exceptions would be routed differently cannot throw.  ``exceptions`` uses the
exception-preserving forms that thread caught exceptions through pending
lists (``finish {...} pending(e)``), later removed by :func:`lower_pending`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Dict, List, Optional, Tuple

from . import ir
from .analysis import DepFacts, build_call_graph, depends, has_escaping_jump

MODES = ("plain", "exceptions")
DEFAULT_CAP = 10_000


class RuleId(str, Enum):
    LoopFinishInterchange = "LoopFinishInterchange"
    FinishFusion = "FinishFusion"
    TailFinishElim = "TailFinishElim"
    FinishIfInterchange = "FinishIfInterchange"
    FinishExpandUpper = "FinishExpandUpper"
    FinishExpandLower = "FinishExpandLower"
    AsyncFinishInterchange = "AsyncFinishInterchange"
    FinishMethodPull = "FinishMethodPull"
    TryFinishExchange = "TryFinishExchange"
    LowerPending = "LowerPending"


class RuleInapplicable(Exception):
    """A rule's precondition failed; ``reason`` names it."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class _NoMatch(RuleInapplicable):
    def __init__(self):
        super().__init__("site does not match the rule")


class RuleCapExceeded(RuntimeError):
    pass


@dataclass
class AfeState:
    mode: str = "plain"
    processed: set = field(default_factory=set)
    pulled: set = field(default_factory=set)
    snapshots: Dict[str, ir.Stmt] = field(default_factory=dict)


@dataclass
class RuleFiring:
    rule: str
    method: str
    loc: ir.Loc = None

    def as_dict(self) -> dict:
        return {"rule": self.rule, "method": self.method,
                "loc": list(self.loc) if self.loc else None}


@dataclass
class AfeReport:
    mode: str = "plain"
    fired: List[RuleFiring] = field(default_factory=list)
    rollbacks: List[Tuple[str, str]] = field(default_factory=list)
    pulled: List[str] = field(default_factory=list)
    # per method: (rule, body after the rule fired)
    history: Dict[str, List[Tuple[str, ir.Stmt]]] = field(default_factory=dict)
    refusals: Dict[Tuple[str, str], str] = field(default_factory=dict)
    applications: int = 0

    def rules_for(self, method: str) -> List[str]:
        return [f.rule for f in self.fired if f.method == method]

    def trace_lines(self) -> str:
        return "".join(json.dumps(f.as_dict()) + "\n" for f in self.fired)


# --------------------------------------------------------------------------
# Small builders


def _null(v: str) -> ir.Stmt:
    return ir.Assign(v, ir.Null())


def _is_null_init(s, names) -> bool:
    return (isinstance(s, ir.Assign) and s.index is None and s.target in names
            and isinstance(s.value, ir.Null))


def _strip_nulls(body: ir.Stmt, pending) -> ir.Stmt:
    stmts = ir.flatten(body)
    i = 0
    while i < len(stmts) and _is_null_init(stmts[i], pending):
        i += 1
    return ir.seq(*stmts[i:])


def _finish(body: ir.Stmt, pending=()) -> ir.Finish:
    """A finish whose pending variables are reset at the top of its body.

    Keeping the resets inside the finish keeps neighbouring finishes adjacent
    for later rules, and guarantees every pending variable is defined when the
    list is checked.
    """
    pending = tuple(dict.fromkeys(pending))
    if not pending:
        return ir.Finish(ir.normalize(body), ())
    core = _strip_nulls(body, set(pending))
    return ir.Finish(ir.normalize(ir.seq(*(_null(v) for v in pending), core)), pending)


def _catch_all(body, var, handler) -> ir.TryCatch:
    return ir.TryCatch(body, var, "Exception", handler)


def _is_null(v: str) -> ir.Expr:
    return ir.Binary("==", ir.Var(v), ir.Null())


def _not_null(v: str) -> ir.Expr:
    return ir.Binary("!=", ir.Var(v), ir.Null())


def _pure(e: ir.Expr) -> bool:
    return not any(isinstance(n, ir.Builtin) for n in e.walk())


def _require(ok, reason):
    if not ok:
        raise RuleInapplicable(reason)


class _Ctx:
    def __init__(self, facts: DepFacts, mode: str, temps: ir.TempSupply):
        if mode not in MODES:
            raise ValueError(f"unknown AFE mode {mode!r}")
        self.facts = facts
        self.mode = mode
        self.temps = temps

    @property
    def plain(self) -> bool:
        return self.mode == "plain"

    def fresh(self, hint):
        return self.temps.fresh(hint)

    def clocked(self, s) -> bool:
        return self.facts.registered_on_clocks(self.facts.escaping(s))


def _pair(site):
    if not (isinstance(site, ir.Seq) and len(site.stmts) == 2):
        raise _NoMatch()
    return site.stmts


# --------------------------------------------------------------------------
# Rules


def _fusion_check(a: ir.Finish, b: ir.Finish, ctx: _Ctx):
    s1, s2 = a.body, b.body
    esc = ctx.facts.escaping(s1)
    _require(not depends(s2, esc, ctx.facts), "S2 depends on e-async of S1")
    _require(
        not (ctx.clocked(s1) and (ctx.facts.has_barrier(s2) or ctx.clocked(s2))),
        "clocked e-asyncs of S1 meet clock operations of S2",
    )
    _require(not ctx.facts.escaping_may_throw(s1), "e-asyncs of S1 may throw")


def rule_fusion(site, ctx: _Ctx) -> ir.Stmt:
    a, b = _pair(site)
    if not (isinstance(a, ir.Finish) and isinstance(b, ir.Finish)):
        raise _NoMatch()
    _fusion_check(a, b, ctx)
    if not a.pending:
        return _finish(ir.seq(a.body, b.body), b.pending)
    _require(not ctx.plain, "pending exceptions")
    e, x = ctx.fresh("e"), ctx.fresh("x")
    body = ir.seq(
        a.body,
        _catch_all(ir.if_throws(a.pending), x, ir.Assign(e, ir.Var(x))),
        ir.If(_is_null(e), b.body),
    )
    return _finish(body, (e,) + b.pending)


def rule_finish_if(site, ctx: _Ctx) -> ir.Stmt:
    if isinstance(site, ir.Switch):
        return _finish_switch(site, ctx)
    if not isinstance(site, ir.If) or not isinstance(site.then, ir.Finish):
        raise _NoMatch()
    then, orelse = site.then, site.orelse
    if orelse is not None and not isinstance(orelse, ir.Finish):
        raise _NoMatch()
    pre = []
    cond = site.cond
    if not _pure(cond):
        v = ctx.fresh("c")
        pre.append(ir.Assign(v, cond))
        cond = ir.Var(v)
    if orelse is None:
        fin = _finish(ir.If(cond, then.body), then.pending)
    else:
        fin = _finish(ir.If(cond, then.body, orelse.body), then.pending + orelse.pending)
    return ir.seq(*pre, fin)


def _finish_switch(site: ir.Switch, ctx: _Ctx) -> ir.Stmt:
    bodies = [b for _, b in site.cases]
    if not bodies or not all(isinstance(b, ir.Finish) for b in bodies):
        raise _NoMatch()
    _require(all(not b.pending for b in bodies), "pending exceptions")
    # matched case falls through into the following ones
    for a, b in zip(bodies, bodies[1:]):
        _fusion_check(a, b, ctx)
    pre = []
    scrut = site.scrutinee
    if not _pure(scrut):
        v = ctx.fresh("c")
        pre.append(ir.Assign(v, scrut))
        scrut = ir.Var(v)
    cases = tuple((v, b.body) for v, b in site.cases)
    return ir.seq(*pre, _finish(ir.Switch(scrut, cases)))


def rule_async_finish(site, ctx: _Ctx) -> ir.Stmt:
    if not (isinstance(site, ir.Async) and isinstance(site.body, ir.Finish)):
        raise _NoMatch()
    inner = site.body
    _require(not site.clocks, "async is clocked")
    _require(not inner.pending, "pending exceptions")
    _require(not ctx.facts.may_throw(inner.body), "S1 may throw")
    return ir.Finish(ir.Async(inner.body))


def rule_loop_finish(site, ctx: _Ctx) -> ir.Stmt:
    if not isinstance(site, (ir.For, ir.While)) or not isinstance(site.body, ir.Finish):
        raise _NoMatch()
    fin = site.body
    s3 = fin.body
    step = site.step if isinstance(site, ir.For) else ir.Skip()
    facts = ctx.facts
    esc = facts.escaping(s3)
    _require(not has_escaping_jump(s3) and not has_escaping_jump(step),
             "loop body jumps out of the finish")
    _require(not depends(site.cond, esc, facts), "cond depends on e-async")
    _require(not depends(ir.seq(step, s3), esc, facts), "e-async has loop-carried dependence")
    _require(not ctx.clocked(s3), "e-asyncs registered on clocks")
    s3_throws, step_throws = facts.may_throw(s3), facts.may_throw(step)
    ex = fin.pending
    if not (s3_throws or step_throws or ex):
        if isinstance(site, ir.While):
            return ir.Finish(ir.While(site.cond, s3, site.label))
        if facts.escaping(site.init):
            return ir.seq(site.init, ir.Finish(ir.For(ir.Skip(), site.cond, site.step, s3)))
        return ir.Finish(ir.For(site.init, site.cond, site.step, s3))
    _require(not ctx.plain, "loop body may throw")
    _require(not facts.escaping_may_throw(s3) and not facts.escaping_may_throw(step),
             "e-asyncs of the loop may throw")
    e, me = ctx.fresh("e"), ctx.fresh("me")
    parts, pending = [], []
    if s3_throws:
        x = ctx.fresh("x")
        parts.append(_catch_all(s3, x, ir.seq(ir.Assign(me, ir.WrapME(ir.Var(x))), ir.Break())))
    else:
        parts.append(s3)
    if ex:
        x = ctx.fresh("x")
        parts.append(_catch_all(ir.if_throws(ex), x, ir.seq(ir.Assign(e, ir.Var(x)), ir.Break())))
    if step_throws:
        x = ctx.fresh("x")
        parts.append(_catch_all(step, x, ir.seq(ir.Assign(e, ir.Var(x)), ir.Break())))
    else:
        parts.append(step)
    if ex or step_throws:
        pending.append(e)
    if s3_throws:
        pending.append(me)
    label = site.label if isinstance(site, ir.While) else None
    loop = ir.While(site.cond, ir.seq(*parts), label)
    init = site.init if isinstance(site, ir.For) else ir.Skip()
    return ir.seq(init, _finish(loop, pending))


def rule_tail_finish(site, ctx: _Ctx) -> ir.Stmt:
    if not isinstance(site, ir.Finish):
        raise _NoMatch()
    inner = _strip_nulls(site.body, set(site.pending))
    if not isinstance(inner, ir.Finish):
        raise _NoMatch()
    s1 = inner.body
    if not inner.pending and not ctx.facts.may_throw(s1):
        return _finish(s1, site.pending)
    _require(not ctx.plain, "S1 may throw")
    x = ctx.fresh("x")
    wrapped = ir.TryCatch(
        ir.seq(*(_null(v) for v in site.pending), ir.Finish(s1), ir.if_throws(inner.pending)),
        x, "Exception", ir.Throw(ir.WrapME(ir.Var(x))),
    )
    return ir.seq(wrapped, ir.if_throws(site.pending))


def rule_try_finish(site, ctx: _Ctx) -> ir.Stmt:
    if not (isinstance(site, ir.TryCatch) and isinstance(site.body, ir.Finish)):
        raise _NoMatch()
    _require(not ctx.plain, "needs exceptions mode")
    fin = site.body
    s1, ex = fin.body, fin.pending
    facts = ctx.facts
    _require(not facts.escaping_may_throw(s1), "e-asyncs of S1 may throw")
    if not facts.may_throw(s1) and not ex:
        return fin
    t = ctx.fresh("t")
    inner = s1
    if facts.may_throw(s1):
        x = ctx.fresh("x")
        inner = ir.TryCatch(s1, x, "Exception", ir.Throw(ir.WrapME(ir.Var(x))))
    x2 = ctx.fresh("x")
    caught = ir.TryCatch(ir.seq(inner, ir.if_throws(ex)), x2, site.kind, ir.Assign(t, ir.Var(x2)))
    pending = ()
    if site.kind != "Exception":
        # anything the handler would not have caught still leaves raw
        u, x3 = ctx.fresh("u"), ctx.fresh("x")
        caught = _catch_all(caught, x3, ir.Assign(u, ir.Var(x3)))
        pending = (u,)
    fin2 = _finish(ir.seq(_null(t), caught), pending)
    after = ir.If(_not_null(t), ir.seq(ir.Assign(site.var, ir.Var(t)), site.handler))
    return ir.seq(fin2, after)


def rule_expand_upper(site, ctx: _Ctx) -> ir.Stmt:
    s1, fin = _pair(site)
    if not isinstance(fin, ir.Finish):
        raise _NoMatch()
    facts = ctx.facts
    _require(not has_escaping_jump(s1), "S1 jumps out of the finish")
    _require(not ctx.clocked(s1), "S1 has e-asyncs registered on clocks")
    if not facts.may_throw(s1):
        return _finish(ir.seq(s1, fin.body), fin.pending)
    _require(not ctx.plain, "S1 may throw")
    _require(not facts.escaping_may_throw(s1), "e-asyncs of S1 may throw")
    e, x = ctx.fresh("e"), ctx.fresh("x")
    body = ir.seq(_catch_all(s1, x, ir.Assign(e, ir.Var(x))), ir.If(_is_null(e), fin.body))
    return _finish(body, (e,) + fin.pending)


def rule_expand_lower(site, ctx: _Ctx) -> ir.Stmt:
    fin, s2 = _pair(site)
    if not isinstance(fin, ir.Finish):
        raise _NoMatch()
    facts = ctx.facts
    s1 = fin.body
    _require(not has_escaping_jump(s2), "S2 jumps out of the finish")
    _require(not facts.has_barrier(s2), "S2 is a barrier")
    _require(not ctx.clocked(s2), "S2 has e-asyncs registered on clocks")
    _require(not depends(s2, facts.escaping(s1), facts), "S2 depends on e-async")
    _require(not facts.escaping_may_throw(s1), "e-asyncs of S1 may throw")
    _require(not facts.escaping_may_throw(s2), "e-asyncs of S2 may throw")
    s2_throws = facts.may_throw(s2)
    if not fin.pending and not s2_throws:
        return _finish(ir.seq(s1, s2), ())
    _require(not ctx.plain, "S2 may throw")
    e = ctx.fresh("e")
    parts = [s1]
    if fin.pending:
        x = ctx.fresh("x")
        parts.append(_catch_all(ir.if_throws(fin.pending), x, ir.Assign(e, ir.Var(x))))
    if s2_throws:
        x = ctx.fresh("x")
        s2 = _catch_all(s2, x, ir.Assign(e, ir.Var(x)))
    parts.append(ir.If(_is_null(e), s2))
    return _finish(ir.seq(*parts), (e,))


_RULES = {
    RuleId.FinishFusion: rule_fusion,
    RuleId.FinishIfInterchange: rule_finish_if,
    RuleId.AsyncFinishInterchange: rule_async_finish,
    RuleId.LoopFinishInterchange: rule_loop_finish,
    RuleId.TailFinishElim: rule_tail_finish,
    RuleId.TryFinishExchange: rule_try_finish,
    RuleId.FinishExpandUpper: rule_expand_upper,
    RuleId.FinishExpandLower: rule_expand_lower,
}


def apply_rule(rule, site: ir.Stmt, facts: DepFacts, mode: str = "plain",
               temps: Optional[ir.TempSupply] = None) -> ir.Stmt:
    """Rewrite ``site`` with one rule or raise :class:`RuleInapplicable`.

    Pair rules (fusion and the two expansions) take a two-statement ``Seq``.
    """
    rule = RuleId(rule)
    fn = _RULES.get(rule)
    if fn is None:
        raise ValueError(f"{rule.value} is not a statement-level rule")
    return fn(site, _Ctx(facts, mode, temps or ir.TempSupply(facts.program)))


# --------------------------------------------------------------------------
# Innermost-first driver

_PAIR_RULES = (RuleId.FinishFusion, RuleId.FinishExpandUpper, RuleId.FinishExpandLower)
_NODE_RULES = {
    ir.If: (RuleId.FinishIfInterchange,),
    ir.Switch: (RuleId.FinishIfInterchange,),
    ir.Async: (RuleId.AsyncFinishInterchange,),
    ir.For: (RuleId.LoopFinishInterchange,),
    ir.While: (RuleId.LoopFinishInterchange,),
    ir.Finish: (RuleId.TailFinishElim,),
    ir.TryCatch: (RuleId.TryFinishExchange,),
}


def _stmt_fields(node):
    for f in fields(node):
        value = getattr(node, f.name)
        if isinstance(value, ir.Stmt):
            yield f.name, value


def _rewrite_once(node: ir.Stmt, ctx: _Ctx, refusals: dict):
    """Apply the first applicable rule at the innermost site; None at a fixed point."""
    if isinstance(node, ir.Seq):
        for i, s in enumerate(node.stmts):
            hit = _rewrite_once(s, ctx, refusals)
            if hit:
                return (ir.Seq(node.stmts[:i] + (hit[0],) + node.stmts[i + 1:]),) + hit[1:]
    elif isinstance(node, ir.Switch):
        for i, (v, b) in enumerate(node.cases):
            hit = _rewrite_once(b, ctx, refusals)
            if hit:
                cases = node.cases[:i] + ((v, hit[0]),) + node.cases[i + 1:]
                return (replace(node, cases=cases),) + hit[1:]
    else:
        for name, child in _stmt_fields(node):
            hit = _rewrite_once(child, ctx, refusals)
            if hit:
                return (replace(node, **{name: hit[0]}),) + hit[1:]

    if isinstance(node, ir.Seq):
        stmts = node.stmts
        for rule in _PAIR_RULES:
            for i in range(len(stmts) - 1):
                site = ir.Seq(stmts[i:i + 2])
                try:
                    new = _RULES[rule](site, ctx)
                except _NoMatch:
                    continue
                except RuleInapplicable as r:
                    refusals[rule.value] = r.reason
                    continue
                out = ir.seq(*stmts[:i], new, *stmts[i + 2:])
                return out, rule, stmts[i].loc
        return None
    for rule in _NODE_RULES.get(type(node), ()):
        if rule is RuleId.TryFinishExchange and ctx.plain:
            continue
        try:
            new = _RULES[rule](node, ctx)
        except _NoMatch:
            continue
        except RuleInapplicable as r:
            refusals[rule.value] = r.reason
            continue
        return new, rule, node.loc
    return None


# --------------------------------------------------------------------------
# Finish-method pull


def _path_to(root, target):
    if root is target:
        return [root]
    for child in root.children():
        if isinstance(child, ir.Stmt):
            p = _path_to(child, target)
            if p:
                return [root] + p
    return None


def _continuation(root: ir.Stmt, target: ir.Stmt):
    """Code the task running ``target`` may execute after it, and whether that
    continuation runs past the end of ``root``.  Stops at an async or finish."""
    path = _path_to(root, target)
    if path is None:
        raise RuleInapplicable("call site not found")
    out = []
    for parent, child in reversed(list(zip(path, path[1:]))):
        if isinstance(parent, (ir.Async, ir.Finish)):
            return out, False
        if isinstance(parent, ir.Seq):
            i = next(k for k, s in enumerate(parent.stmts) if s is child)
            out.extend(parent.stmts[i + 1:])
        elif isinstance(parent, ir.For):
            out.extend([parent.cond, parent.step, parent.body])
        elif isinstance(parent, ir.While):
            out.extend([parent.cond, parent.body])
        elif isinstance(parent, ir.Switch):
            i = next(k for k, (_, b) in enumerate(parent.cases) if b is child)
            out.extend(b for _, b in parent.cases[i + 1:])
        elif isinstance(parent, ir.TryCatch) and child is parent.body:
            out.append(parent.handler)
    return out, True


def _substitute(node, mapping):
    """Replace statements by identity."""
    if id(node) in mapping and mapping[id(node)][0] is node:
        return mapping[id(node)][1]
    if isinstance(node, ir.Seq):
        return ir.Seq(tuple(_substitute(s, mapping) for s in node.stmts))
    if isinstance(node, ir.Switch):
        return replace(node, cases=tuple((v, _substitute(b, mapping)) for v, b in node.cases))
    changes = {n: _substitute(c, mapping) for n, c in _stmt_fields(node)}
    return replace(node, **changes) if changes else node


def _inside_async(root, target) -> bool:
    path = _path_to(root, target) or []
    return any(isinstance(n, ir.Async) for n in path[:-1])


def _pull(program: ir.Program, name: str, state: AfeState, temps: ir.TempSupply) -> ir.Program:
    if name in state.pulled:
        raise RuleInapplicable("finish already pulled from this method")
    m = program.method(name)
    if not isinstance(m.body, ir.Finish):
        raise RuleInapplicable("body is not a single finish")
    cg = build_call_graph(program)
    facts = DepFacts(program)
    sites = [(c, call) for c, call in cg.call_sites if call.target == name]
    _require(sites, "method has no callers")
    rec = [(c, call) for c, call in sites if cg.is_recursive_site(c, name)]
    nonrec = [(c, call) for c, call in sites if not cg.is_recursive_site(c, name)]
    _require(nonrec, "only recursive callers")
    body, pending = m.body.body, m.body.pending

    if rec:
        _require(not pending, "recursive method with pending exceptions")
        _require(not facts.may_throw(body), "recursive method may throw")
        _require(not facts.registered_on_clocks(facts.escaping(body)),
                 "recursive method leaks clocked tasks")
        tasks = facts.global_footprint(body)
        for caller, call in rec:
            root = body if caller == name else program.method(caller).body
            cont, escapes = _continuation(root, call)
            _require(not (escapes and caller != name), "recursive call escapes its caller")
            fp = ir_fp = None
            for s in cont:
                ir_fp = facts.global_footprint(s)
                fp = ir_fp if fp is None else fp | ir_fp
            _require(fp is None or not fp.conflicts(tasks),
                     "code after a recursive call depends on its tasks")

    globals_ = program.globals
    slot = None
    if pending:
        _require(state.mode == "exceptions", "pending exceptions")
        entry = program.method(program.entry).body
        _require(
            all(c == program.entry and not _inside_async(entry, call) for c, call in nonrec),
            "pending exceptions need a single-task caller",
        )
        slot = f"{ir.RESERVED_PREFIX}gex_{name}"
        slots = [f"{slot}_{k}" for k in range(len(pending))]
        new_body = ir.seq(body, *(ir.Assign(s, ir.Var(v)) for s, v in zip(slots, pending)))
        globals_ = globals_ + tuple(ir.Global(s, ir.Null()) for s in slots)
    else:
        new_body = body

    by_caller: Dict[str, dict] = {}
    for caller, call in nonrec:
        if slot is None:
            wrapped = ir.Finish(call)
        else:
            temps_k = [temps.fresh("p") for _ in slots]
            wrapped = _finish(
                ir.seq(call, *(ir.Assign(t, ir.Var(s)) for t, s in zip(temps_k, slots))),
                tuple(temps_k),
            )
        by_caller.setdefault(caller, {})[id(call)] = (call, wrapped)

    methods = []
    for meth in program.methods:
        # methods the pull does not touch keep their exact tree
        if meth.name == name:
            b = new_body
            if name in by_caller:
                b = _substitute(b, by_caller[name])
            meth = replace(meth, body=ir.normalize(b), exception_slot=slot)
        elif meth.name in by_caller:
            meth = replace(meth, body=ir.normalize(_substitute(meth.body, by_caller[meth.name])))
        methods.append(meth)
    state.pulled.add(name)
    return ir.Program(tuple(methods), program.entry, globals_)


# --------------------------------------------------------------------------
# Driver


def run_afe(program: ir.Program, mode: str = "plain", cap: int = DEFAULT_CAP):
    """Returns ``(optimized program, AfeReport)``."""
    if mode not in MODES:
        raise ValueError(f"unknown AFE mode {mode!r}")
    state = AfeState(mode=mode)
    report = AfeReport(mode=mode)
    temps = ir.TempSupply(program)
    order = build_call_graph(program).order()
    for name in order:
        if name in state.processed:
            continue
        state.processed.add(name)
        original = program.method(name)
        state.snapshots[name] = original.body
        history = report.history.setdefault(name, [])
        body = ir.normalize(original.body)
        fired = 0
        while True:
            current = program.replace_method(replace(original, body=body))
            ctx = _Ctx(DepFacts(current), mode, temps)
            hit = _rewrite_once(body, ctx, {})
            if hit is None:
                break
            body, rule, loc = ir.normalize(hit[0]), hit[1], hit[2]
            fired += 1
            report.applications += 1
            if report.applications > cap:
                raise RuleCapExceeded(f"more than {cap} rule applications")
            report.fired.append(RuleFiring(rule.value, name, loc))
            history.append((rule.value, body))
        program = program.replace_method(replace(original, body=body))
        if name == program.entry:
            continue
        try:
            program = _pull(program, name, state, temps)
        except RuleInapplicable as r:
            if fired:
                program = program.replace_method(original)
                report.rollbacks.append((name, r.reason))
            report.refusals[(name, RuleId.FinishMethodPull.value)] = r.reason
            continue
        report.pulled.append(name)
        report.fired.append(RuleFiring(RuleId.FinishMethodPull.value, name, original.loc))
        history.append((RuleId.FinishMethodPull.value, program.method(name).body))
    return program, report


def lower_pending(program: ir.Program) -> ir.Program:
    """Replace every ``finish {S} pending(v...)`` with the finish followed by its throws."""

    def lower(node):
        if isinstance(node, ir.Finish):
            inner = ir.Finish(lower(node.body))
            return ir.seq(inner, ir.if_throws(node.pending)) if node.pending else inner
        if isinstance(node, ir.Seq):
            return ir.seq(*(lower(s) for s in node.stmts))
        if isinstance(node, ir.Switch):
            return replace(node, cases=tuple((v, lower(b)) for v, b in node.cases))
        changes = {n: lower(c) for n, c in _stmt_fields(node)}
        return replace(node, **changes) if changes else node

    methods = tuple(replace(m, body=ir.normalize(lower(m.body))) for m in program.methods)
    return ir.Program(methods, program.entry, program.globals)
