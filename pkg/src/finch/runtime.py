"""Multi-worker interpreter for Finch.

The program is compiled once into Python closures; a scheduler object supplies
the parallel semantics (task pool, finish joins, clock barriers).  Two
schedulers exist: ``PoolScheduler`` runs tasks on real threads with an
idle-worker counter, ``SerialScheduler`` is the depth-first oracle.
"""
from __future__ import annotations

import collections
import hashlib
import json
import os
import random
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from . import ir

sys.setrecursionlimit(max(sys.getrecursionlimit(), 200_000))
_STACK_SIZE = 256 * 1024 * 1024


# --------------------------------------------------------------------------
# Values and signals


class ExcValue:
    """A Finch exception: ``Plain(tag)`` or ``Multiple(children)``."""

    __slots__ = ("tag", "children")

    def __init__(self, tag: Optional[str] = None, children: Tuple["ExcValue", ...] = ()):
        self.tag = tag
        self.children = children

    @property
    def is_multiple(self) -> bool:
        return self.tag is None

    def canonical(self):
        if self.tag is not None:
            return self.tag
        return ("ME",) + tuple(sorted((c.canonical() for c in self.children), key=repr))

    def __repr__(self):
        if self.tag is not None:
            return f"Plain({self.tag})"
        return f"Multiple({', '.join(map(repr, self.children))})"


def Plain(tag: str) -> ExcValue:
    return ExcValue(tag)


def Multiple(children: Sequence[ExcValue]) -> ExcValue:
    return ExcValue(None, tuple(children))


def canonical_outcome(exc: Optional[ExcValue]):
    """Order-insensitive inside ME, nesting depth kept exactly."""
    return None if exc is None else exc.canonical()


def tag_multiset(exc: Optional[ExcValue]) -> List[str]:
    if exc is None:
        return []
    if exc.tag is not None:
        return [exc.tag]
    out = []
    for c in exc.children:
        out.extend(tag_multiset(c))
    return sorted(out)


class FinchThrow(Exception):
    """A Finch-level exception propagating through the interpreter."""

    def __init__(self, value: ExcValue):
        super().__init__(value)
        self.value = value


class FinchRuntimeError(RuntimeError):
    """A fault in the interpreted program (division by zero, bad index, ...)."""


class DeadlockError(RuntimeError):
    pass


class _Abort(BaseException):
    """Unwinds worker threads after a deadlock or fault elsewhere."""


class _Break(Exception):
    def __init__(self, label):
        self.label = label


class _Continue(Exception):
    def __init__(self, label):
        self.label = label


class _Return(Exception):
    pass


_RETURN = _Return()


# --------------------------------------------------------------------------
# Configuration and results


@dataclass
class RuntimeConfig:
    n_workers: int = 1
    seed: int = 0
    jitter: bool = False
    idle_hook: Optional[Callable[[int, int], int]] = None
    trace: bool = False
    trace_capacity: int = 1 << 20
    deadlock_timeout: float = 2.0

    def __post_init__(self):
        if self.n_workers < 1:
            raise ValueError("n_workers must be >= 1")

    @classmethod
    def from_env(cls, **kw) -> "RuntimeConfig":
        if "n_workers" not in kw and os.environ.get("FINCH_NTHREADS"):
            kw["n_workers"] = int(os.environ["FINCH_NTHREADS"])
        return cls(**kw)


@dataclass
class Counters:
    asyncs: int = 0
    finishes: int = 0
    advances: int = 0

    def as_dict(self) -> dict:
        return {"asyncs": self.asyncs, "finishes": self.finishes, "advances": self.advances}


@dataclass
class RunResult:
    checksum: str
    exception: Optional[ExcValue]
    counters: Counters
    store: Dict[str, Any]
    trace: List[tuple] = field(default_factory=list)
    elapsed: float = 0.0
    threads: int = 1

    @property
    def outcome(self):
        return canonical_outcome(self.exception)


def _jsonable(v):
    if isinstance(v, ExcValue):
        return {"exc": v.canonical()}
    return v


def store_checksum(store: Dict[str, Any]) -> str:
    visible = {k: v for k, v in store.items() if not k.startswith(ir.RESERVED_PREFIX)}
    blob = json.dumps(visible, sort_keys=True, default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# Tasks, scopes, clocks


class FinishScope:
    __slots__ = ("pending", "exceptions", "waiter")

    def __init__(self):
        self.pending = 0
        self.exceptions: List[ExcValue] = []
        self.waiter = None


class Task:
    __slots__ = ("id", "body", "frame", "scope", "clocks")

    def __init__(self, tid, body, frame, scope, clocks=()):
        self.id = tid
        self.body = body
        self.frame = frame
        self.scope = scope
        self.clocks = set(clocks)


class Clock:
    __slots__ = ("name", "registered", "excused", "arrived", "generation", "waiters")

    def __init__(self, name):
        self.name = name
        self.registered = set()
        self.excused = set()
        self.arrived = set()
        self.generation = 0
        self.waiters = []


class Ctx:
    __slots__ = ("frame", "scope", "task")

    def __init__(self, frame, scope, task):
        self.frame = frame
        self.scope = scope
        self.task = task


# --------------------------------------------------------------------------
# Arithmetic with C-like truncating semantics


def _div(a, b):
    if b == 0:
        raise FinchRuntimeError("division by zero")
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def _mod(a, b):
    if b == 0:
        raise FinchRuntimeError("division by zero")
    return a - b * _div(a, b)


_BINOPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _div,
    "%": _mod,
    "<<": lambda a, b: a << b,
    ">>": lambda a, b: a >> b,
    "&": lambda a, b: a & b,
    "|": lambda a, b: a | b,
    "^": lambda a, b: a ^ b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a is b if isinstance(a, ExcValue) or isinstance(b, ExcValue) else a == b,
    "!=": lambda a, b: a is not b if isinstance(a, ExcValue) or isinstance(b, ExcValue) else a != b,
}


def _catches(kind: str, exc: ExcValue) -> bool:
    if kind == "Exception":
        return True
    if kind == "ME":
        return exc.is_multiple
    return exc.tag == kind


# --------------------------------------------------------------------------
# Interpreter


class Interpreter:
    """Compiles a program to closures and runs it against a scheduler."""

    def __init__(self, program: ir.Program, sched: "Scheduler", config: RuntimeConfig):
        self.program = program
        self.sched = sched
        self.config = config
        self.store: Dict[str, Any] = {}
        self.store_lock = threading.Lock()
        self.counters = Counters()
        self.counter_lock = threading.Lock()
        self.trace = collections.deque(maxlen=config.trace_capacity) if config.trace else None
        self.methods = program.method_map()
        self.compiled: Dict[str, Callable] = {}
        self._task_ids = 0
        for g in program.globals:
            self.store[g.name] = self.expr(g.init)(None)
        for m in program.methods:
            self.compiled[m.name] = None
        for m in program.methods:
            self.compiled[m.name] = self.stmt(m.body)
        sched.bind(self)

    def next_task_id(self) -> int:
        with self.counter_lock:
            self._task_ids += 1
            return self._task_ids

    def bump(self, name: str):
        with self.counter_lock:
            setattr(self.counters, name, getattr(self.counters, name) + 1)

    # expressions ------------------------------------------------------
    def expr(self, e: ir.Expr) -> Callable[[Ctx], Any]:
        store = self.store
        if isinstance(e, ir.Int) or isinstance(e, ir.Bool):
            v = e.value
            return lambda ctx: v
        if isinstance(e, ir.Null):
            return lambda ctx: None
        if isinstance(e, ir.Var):
            name = e.name

            def read(ctx):
                if ctx is not None:
                    frame = ctx.frame
                    if name in frame:
                        return frame[name]
                try:
                    return store[name]
                except KeyError:
                    raise FinchRuntimeError(f"undefined variable '{name}'") from None

            return read
        if isinstance(e, ir.Index):
            name = e.array
            idx = self.expr(e.index)

            def index(ctx):
                arr = store.get(name)
                i = idx(ctx)
                if not isinstance(arr, list):
                    raise FinchRuntimeError(f"'{name}' is not an array")
                if not 0 <= i < len(arr):
                    raise FinchRuntimeError(f"index {i} out of bounds for '{name}'")
                return arr[i]

            return index
        if isinstance(e, ir.Unary):
            f = self.expr(e.operand)
            if e.op == "-":
                return lambda ctx: -f(ctx)
            return lambda ctx: not f(ctx)
        if isinstance(e, ir.Binary):
            lf, rf = self.expr(e.left), self.expr(e.right)
            if e.op == "&&":
                return lambda ctx: bool(lf(ctx)) and bool(rf(ctx))
            if e.op == "||":
                return lambda ctx: bool(lf(ctx)) or bool(rf(ctx))
            op = _BINOPS[e.op]
            return lambda ctx: op(lf(ctx), rf(ctx))
        if isinstance(e, ir.Builtin):
            if e.name == "idleWorkers":
                return lambda ctx: self.sched.idle_workers()
            if e.name == "nthreads":
                return lambda ctx: self.sched.nthreads()
            if e.name == "newarray":
                n = self.expr(e.args[0])
                return lambda ctx: [0] * n(ctx)
            raise FinchRuntimeError(f"unknown builtin {e.name}")
        if isinstance(e, ir.NewExc):
            tag = e.tag
            return lambda ctx: ExcValue(tag)
        if isinstance(e, ir.WrapME):
            f = self.expr(e.operand)

            def wrap(ctx):
                v = f(ctx)
                if not isinstance(v, ExcValue):
                    raise FinchRuntimeError("ME() of a non-exception")
                return ExcValue(None, (v,))

            return wrap
        raise TypeError(f"cannot compile expression {e!r}")

    # statements -------------------------------------------------------
    def stmt(self, s: ir.Stmt) -> Callable[[Ctx], None]:
        method = getattr(self, "_s_" + type(s).__name__)
        return method(s)

    def _s_Skip(self, s):
        return lambda ctx: None

    def _s_Seq(self, s):
        fns = [self.stmt(x) for x in s.stmts]
        if len(fns) == 1:
            return fns[0]

        def run(ctx):
            for f in fns:
                f(ctx)

        return run

    def _s_Assign(self, s):
        store, lock, name = self.store, self.store_lock, s.target
        value = self.expr(s.value)
        trace = self.trace
        if s.index is not None:
            idx = self.expr(s.index)

            def set_elem(ctx):
                with lock:
                    arr = store.get(name)
                    i = idx(ctx)
                    if not isinstance(arr, list):
                        raise FinchRuntimeError(f"'{name}' is not an array")
                    if not 0 <= i < len(arr):
                        raise FinchRuntimeError(f"index {i} out of bounds for '{name}'")
                    arr[i] = value(ctx)
                    if trace is not None:
                        trace.append(("write", name, i, ctx.task.id))

            return set_elem

        def assign(ctx):
            frame = ctx.frame
            if name in frame:
                frame[name] = value(ctx)
            elif name in store:
                with lock:
                    store[name] = value(ctx)
                    if trace is not None:
                        trace.append(("write", name, None, ctx.task.id))
            else:
                frame[name] = value(ctx)

        return assign

    def _s_Call(self, s):
        target = s.target
        params = self.methods[target].param_names
        args = [self.expr(a) for a in s.args]
        compiled = self.compiled

        def call(ctx):
            frame = {p: a(ctx) for p, a in zip(params, args)}
            try:
                compiled[target](Ctx(frame, ctx.scope, ctx.task))
            except _Return:
                pass

        return call

    def _s_Return(self, s):
        def ret(ctx):
            raise _RETURN

        return ret

    def _s_Break(self, s):
        label = s.label

        def brk(ctx):
            raise _Break(label)

        return brk

    def _s_Continue(self, s):
        label = s.label

        def cont(ctx):
            raise _Continue(label)

        return cont

    def _s_If(self, s):
        cond, then = self.expr(s.cond), self.stmt(s.then)
        orelse = self.stmt(s.orelse) if s.orelse is not None else None

        def run(ctx):
            if cond(ctx):
                then(ctx)
            elif orelse is not None:
                orelse(ctx)

        return run

    def _loop(self, cond, body, step, label):
        def run(ctx):
            while cond(ctx):
                try:
                    body(ctx)
                except _Break as b:
                    if b.label is None or b.label == label:
                        break
                    raise
                except _Continue as c:
                    if not (c.label is None or c.label == label):
                        raise
                if step is not None:
                    step(ctx)

        return run

    def _s_While(self, s):
        return self._loop(self.expr(s.cond), self.stmt(s.body), None, s.label)

    def _s_For(self, s):
        init = self.stmt(s.init)
        loop = self._loop(self.expr(s.cond), self.stmt(s.body), self.stmt(s.step), None)

        def run(ctx):
            init(ctx)
            loop(ctx)

        return run

    def _s_Switch(self, s):
        scrut = self.expr(s.scrutinee)
        values = [v for v, _ in s.cases]
        bodies = [self.stmt(b) for _, b in s.cases]

        def run(ctx):
            v = scrut(ctx)
            try:
                start = values.index(v)
            except ValueError:
                return
            for b in bodies[start:]:
                b(ctx)

        return run

    def _s_TryCatch(self, s):
        body, handler = self.stmt(s.body), self.stmt(s.handler)
        kind, var = s.kind, s.var

        def run(ctx):
            try:
                body(ctx)
            except FinchThrow as t:
                if not _catches(kind, t.value):
                    raise
                ctx.frame[var] = t.value
                handler(ctx)

        return run

    def _s_Throw(self, s):
        value = self.expr(s.expr)

        def throw(ctx):
            v = value(ctx)
            if not isinstance(v, ExcValue):
                raise FinchRuntimeError(f"throw of non-exception value {v!r}")
            raise FinchThrow(v)

        return throw

    def _s_AdvanceAll(self, s):
        def advance(ctx):
            self.bump("advances")
            self.sched.advance(ctx)

        return advance

    def _s_Async(self, s):
        body = self.stmt(s.body)
        clocks = s.clocks

        def spawn(ctx):
            self.bump("asyncs")
            task = Task(self.next_task_id(), body, dict(ctx.frame), ctx.scope, clocks)
            self.sched.spawn(ctx, task)

        return spawn

    def _s_Finish(self, s):
        body = self.stmt(s.body)
        pending = [self.expr(ir.Var(v)) for v in s.pending]

        def finish(ctx):
            self.bump("finishes")
            scope = FinishScope()
            inner = Ctx(ctx.frame, scope, ctx.task)
            try:
                body(inner)
            except FinchThrow as t:
                scope.exceptions.append(t.value)
            except (_Break, _Continue, _Return):
                self.sched.join(ctx, scope)
                self._raise_collected(scope)
                raise
            self.sched.join(ctx, scope)
            self._raise_collected(scope)
            for p in pending:
                v = p(ctx)
                if v is not None:
                    raise FinchThrow(v)

        return finish

    def _raise_collected(self, scope):
        if scope.exceptions:
            raise FinchThrow(ExcValue(None, tuple(scope.exceptions)))

    # task bodies ------------------------------------------------------
    def execute(self, task: Task):
        """Run a spawned task to completion; exceptions go to its finish scope."""
        ctx = Ctx(task.frame, task.scope, task)
        exc = None
        try:
            task.body(ctx)
        except FinchThrow as t:
            exc = t.value
        except _Return:
            pass
        self.sched.task_done(task, exc)

    def run_root(self, inputs: Sequence[Any]):
        """Body of the root task: ``main`` under an implicit, uncounted finish."""
        main = self.methods[self.program.entry]
        if len(inputs) != len(main.params):
            raise FinchRuntimeError(
                f"'{main.name}' expects {len(main.params)} inputs, got {len(inputs)}"
            )
        scope = FinishScope()
        root = Task(0, None, dict(zip(main.param_names, inputs)), scope)
        ctx = Ctx(root.frame, scope, root)
        raised = None
        try:
            self.compiled[main.name](ctx)
        except FinchThrow as t:
            raised = t.value
        except _Return:
            pass
        self.sched.join(ctx, scope)
        self.sched.drop_clocks(root)
        if scope.exceptions:
            extra = [raised] if raised is not None else []
            return Multiple(scope.exceptions + extra)
        return raised


# --------------------------------------------------------------------------
# Schedulers


class Scheduler:
    def bind(self, interp: Interpreter):
        self.interp = interp

    def nthreads(self) -> int:
        raise NotImplementedError

    def idle_workers(self) -> int:
        raise NotImplementedError


class _ClockMixin:
    """Barrier bookkeeping; callers hold ``self.lock``."""

    def _clock(self, name) -> Clock:
        c = self.clocks.get(name)
        if c is None:
            c = self.clocks[name] = Clock(name)
        return c

    def _register(self, parent: Task, child: Task):
        for name in child.clocks:
            c = self._clock(name)
            if parent.id not in c.registered:
                c.registered.add(parent.id)
                parent.clocks.add(name)
            c.registered.add(child.id)

    def _maybe_release(self, c: Clock):
        active = c.registered - c.excused
        if c.arrived and active <= c.arrived:
            c.generation += 1
            c.arrived.clear()
            waiters, c.waiters = c.waiters, []
            for w in waiters:
                self._wake(w)

    def _excuse(self, task: Task, on: bool):
        for name in task.clocks:
            c = self.clocks[name]
            if on:
                c.excused.add(task.id)
                self._maybe_release(c)
            else:
                c.excused.discard(task.id)

    def _drop(self, task: Task):
        for name in task.clocks:
            c = self.clocks[name]
            c.registered.discard(task.id)
            c.excused.discard(task.id)
            c.arrived.discard(task.id)
            self._maybe_release(c)
        task.clocks.clear()


class PoolScheduler(Scheduler, _ClockMixin):
    """Worker threads with per-worker deques, help-first joins and FIFO stealing.

    ``n_workers`` permits bound the number of threads executing task code.  A
    thread that blocks (join or barrier) gives its permit back, and a spare
    thread is started if queued work would otherwise starve.
    """

    def __init__(self, config: RuntimeConfig):
        self.config = config
        self.n = config.n_workers
        self.lock = threading.Lock()
        self.work_cv = threading.Condition(self.lock)
        self.local = threading.local()
        self.deques: List[collections.deque] = []
        self.threads: List[threading.Thread] = []
        self.running = 0
        self.parked = 0
        self.queued = 0
        self.ready: collections.deque = collections.deque()
        self.clocks: Dict[str, Clock] = {}
        self.progress = 0
        self.shutdown = False
        self.aborted = False
        self.failure: Optional[BaseException] = None
        self.idle_calls = 0

    def nthreads(self) -> int:
        return self.n

    def idle_workers(self) -> int:
        actual = self.n - self.running - self.queued
        if actual < 0:
            actual = 0
        hook = self.config.idle_hook
        if hook is not None:
            self.idle_calls += 1
            return hook(self.idle_calls, actual)
        return actual

    # thread management (lock held)
    def _start_thread(self):
        wid = len(self.deques)
        self.deques.append(collections.deque())
        old = threading.stack_size()
        threading.stack_size(_STACK_SIZE)
        try:
            t = threading.Thread(target=self._worker, args=(wid,), daemon=True, name=f"finch-{wid}")
            self.threads.append(t)
            t.start()
        finally:
            threading.stack_size(old)

    def _wake(self, cv):
        cv.notify()

    def _permit_freed(self):
        if self.ready:
            self.ready[0].notify()
        elif self.queued:
            if self.parked:
                self.work_cv.notify()
            else:
                self._start_thread()

    def _take(self, wid) -> Optional[Task]:
        own = self.deques[wid]
        if own:
            self.queued -= 1
            return own.pop()
        order = list(range(len(self.deques)))
        if self.config.jitter:
            self.local.rng.shuffle(order)
        for v in order:
            d = self.deques[v]
            if d:
                self.queued -= 1
                return d.popleft()
        return None

    def _worker(self, wid):
        self.local.wid = wid
        self.local.rng = random.Random(self.config.seed * 7919 + wid)
        lock = self.lock
        lock.acquire()
        try:
            while True:
                while not self.shutdown and not (
                    self.queued and self.running < self.n and not self.ready
                ):
                    self.parked += 1
                    self.work_cv.wait()
                    self.parked -= 1
                if self.shutdown:
                    return
                task = self._take(wid)
                if task is None:
                    continue
                self.running += 1
                self.progress += 1
                lock.release()
                try:
                    self._run(task)
                finally:
                    lock.acquire()
                self.running -= 1
                self.progress += 1
                self._permit_freed()
        except _Abort:
            pass
        finally:
            lock.release()

    def _run(self, task: Task):
        try:
            if task.id == 0:
                self.root_result = self.interp.run_root(self.root_inputs)
                with self.lock:
                    self.root_done = True
                    self.work_cv.notify_all()
            else:
                self.interp.execute(task)
        except _Abort:
            raise
        except BaseException as e:  # interpreter faults abort the whole run
            with self.lock:
                if self.failure is None:
                    self.failure = e
                self._abort()
            raise _Abort() from None

    def _abort(self):
        self.aborted = True
        self.shutdown = True
        self.work_cv.notify_all()
        for cv in list(self.ready):
            cv.notify_all()
        for cv in self._all_waiters:
            cv.notify_all()

    @property
    def _all_waiters(self):
        return getattr(self, "_waiters", set())

    # blocking (lock held on entry and exit)
    def _block(self, done: Callable[[], bool], register: Callable[[threading.Condition], None]):
        cv = threading.Condition(self.lock)
        self._waiters = self._all_waiters | {cv}
        register(cv)
        self.running -= 1
        self.progress += 1
        self._permit_freed()
        try:
            while not done():
                if self.aborted:
                    raise _Abort()
                cv.wait()
            if self.running >= self.n or self.ready:
                self.ready.append(cv)
                while self.running >= self.n or self.ready[0] is not cv:
                    if self.aborted:
                        raise _Abort()
                    cv.wait()
                self.ready.popleft()
            self.running += 1
            self.progress += 1
            if self.ready and self.running < self.n:
                self.ready[0].notify()
        finally:
            self._waiters = self._all_waiters - {cv}

    # scheduler interface
    def spawn(self, ctx: Ctx, task: Task):
        if self.config.jitter and self.local.rng.random() < 0.05:
            time.sleep(0)
        with self.lock:
            if task.clocks:
                self._register(ctx.task, task)
            task.scope.pending += 1
            self.deques[self.local.wid].append(task)
            self.queued += 1
            if self.parked:
                self.work_cv.notify()
            elif self.running < self.n and not self.ready:
                self._start_thread()

    def task_done(self, task: Task, exc: Optional[ExcValue]):
        with self.lock:
            scope = task.scope
            if exc is not None:
                scope.exceptions.append(exc)
            self._drop(task)
            scope.pending -= 1
            if scope.pending == 0 and scope.waiter is not None:
                scope.waiter.notify()

    def drop_clocks(self, task: Task):
        with self.lock:
            self._drop(task)

    def join(self, ctx: Ctx, scope: FinishScope):
        wid = self.local.wid
        with self.lock:
            if scope.pending == 0:
                return
            self._excuse(ctx.task, True)
            try:
                while scope.pending > 0:
                    own = self.deques[wid]
                    if own:
                        task = own.pop()
                        self.queued -= 1
                        self.lock.release()
                        try:
                            self.interp.execute(task)
                        finally:
                            self.lock.acquire()
                        continue

                    def register(cv):
                        scope.waiter = cv

                    self._block(lambda: scope.pending == 0, register)
            finally:
                self._excuse(ctx.task, False)

    def advance(self, ctx: Ctx):
        task = ctx.task
        with self.lock:
            for name in sorted(task.clocks):
                c = self.clocks[name]
                gen = c.generation
                c.arrived.add(task.id)
                self._maybe_release(c)
                if c.generation == gen:
                    self._block(lambda: c.generation != gen, c.waiters.append)

    # driver
    def run(self, inputs) -> Optional[ExcValue]:
        self.root_inputs = list(inputs)
        self.root_done = False
        self.root_result = None
        with self.lock:
            root = Task(0, None, {}, None)
            self._start_thread()
            self.deques[0].append(root)
            self.queued += 1
            self.work_cv.notify_all()
        last, stable_since = -1, time.monotonic()
        try:
            while True:
                with self.lock:
                    if self.root_done or self.failure is not None:
                        break
                    quiet = self.running == 0 and self.queued == 0 and not self.ready
                    if self.progress != last or not quiet:
                        last, stable_since = self.progress, time.monotonic()
                    elif time.monotonic() - stable_since > self.config.deadlock_timeout:
                        self.failure = DeadlockError(
                            "all workers blocked with no runnable task"
                        )
                        break
                    self.work_cv.wait(0.05)
        finally:
            with self.lock:
                self._abort()
        for t in self.threads:
            t.join(timeout=1.0)
        if self.failure is not None:
            raise self.failure
        return self.root_result


class SerialScheduler(Scheduler, _ClockMixin):
    """Depth-first oracle: an async runs to completion at its spawn point.

    Clocked asyncs cannot run to completion before their siblings reach the
    barrier, so each of those gets its own thread; a single baton makes sure
    only one thread ever executes Finch code.
    """

    def __init__(self, config: RuntimeConfig):
        self.config = config
        self.lock = threading.Lock()
        self.cv = threading.Condition(self.lock)
        self.clocks: Dict[str, Clock] = {}
        self.runnable: collections.deque = collections.deque()
        self.current = None
        self.threads: List[threading.Thread] = []
        self.failure: Optional[BaseException] = None
        self.aborted = False
        self.idle_calls = 0

    def nthreads(self) -> int:
        return 1

    def idle_workers(self) -> int:
        hook = self.config.idle_hook
        if hook is not None:
            self.idle_calls += 1
            return hook(self.idle_calls, 0)
        return 0

    def _me(self):
        return threading.current_thread()

    def _wake(self, token):
        self.runnable.append(token)

    def _wait_turn(self, me):
        while self.current is not me:
            if self.aborted:
                raise _Abort()
            self.cv.wait()

    def _pass_baton(self):
        if not self.runnable:
            self.failure = self.failure or DeadlockError("no runnable task in serial schedule")
            self.aborted = True
            self.cv.notify_all()
            raise _Abort()
        self.current = self.runnable.popleft()
        self.cv.notify_all()

    def _block(self, done, register):
        me = self._me()
        register(me)
        while not done():
            self._pass_baton()
            self._wait_turn(me)

    def spawn(self, ctx: Ctx, task: Task):
        with self.lock:
            task.scope.pending += 1
            if task.clocks:
                self._register(ctx.task, task)
        if not task.clocks:
            self.interp.execute(task)
            return
        with self.lock:
            me = self._me()
            self.runnable.appendleft(me)
            old = threading.stack_size()
            threading.stack_size(_STACK_SIZE)
            try:
                t = threading.Thread(target=self._thread_main, args=(task,), daemon=True)
                self.threads.append(t)
                self.current = t
                t.start()
            finally:
                threading.stack_size(old)
            self._wait_turn(me)

    def _thread_main(self, task):
        with self.lock:
            try:
                self._wait_turn(self._me())
            except _Abort:
                return
        try:
            self.interp.execute(task)
        except _Abort:
            return
        except BaseException as e:
            with self.lock:
                self.failure = self.failure or e
                self.aborted = True
                self.cv.notify_all()
            return
        with self.lock:
            try:
                self._pass_baton()
            except _Abort:
                pass

    def task_done(self, task: Task, exc: Optional[ExcValue]):
        with self.lock:
            scope = task.scope
            if exc is not None:
                scope.exceptions.append(exc)
            self._drop(task)
            scope.pending -= 1
            if scope.pending == 0 and scope.waiter is not None:
                self.runnable.append(scope.waiter)
                scope.waiter = None

    def drop_clocks(self, task: Task):
        with self.lock:
            self._drop(task)

    def join(self, ctx: Ctx, scope: FinishScope):
        with self.lock:
            if scope.pending == 0:
                return
            self._excuse(ctx.task, True)
            try:
                def register(me):
                    scope.waiter = me

                self._block(lambda: scope.pending == 0, register)
            finally:
                self._excuse(ctx.task, False)

    def advance(self, ctx: Ctx):
        task = ctx.task
        with self.lock:
            for name in sorted(task.clocks):
                c = self.clocks[name]
                gen = c.generation
                c.arrived.add(task.id)
                self._maybe_release(c)
                if c.generation == gen:
                    self._block(lambda: c.generation != gen, c.waiters.append)

    def run(self, inputs) -> Optional[ExcValue]:
        box = {}

        def root():
            with self.lock:
                try:
                    self._wait_turn(self._me())
                except _Abort:
                    return
            try:
                box["result"] = self.interp.run_root(inputs)
            except _Abort:
                return
            except BaseException as e:
                box["error"] = e
            with self.lock:
                box["done"] = True
                self.current = None
                self.cv.notify_all()

        old = threading.stack_size()
        threading.stack_size(_STACK_SIZE)
        try:
            t = threading.Thread(target=root, daemon=True)
        finally:
            threading.stack_size(old)
        with self.lock:
            self.current = t
        t.start()
        with self.lock:
            while "done" not in box and self.failure is None:
                self.cv.wait(0.1)
            self.aborted = True
            self.cv.notify_all()
        for th in [t] + self.threads:
            th.join(timeout=1.0)
        if self.failure is not None:
            raise self.failure
        if "error" in box:
            raise box["error"]
        return box.get("result")


# --------------------------------------------------------------------------
# Entry points


def _finish_result(interp: Interpreter, exc, start, threads) -> RunResult:
    store = {k: (list(v) if isinstance(v, list) else v) for k, v in interp.store.items()}
    return RunResult(
        checksum=store_checksum(store),
        exception=exc,
        counters=interp.counters,
        store=store,
        trace=list(interp.trace) if interp.trace is not None else [],
        elapsed=time.perf_counter() - start,
        threads=threads,
    )


def run(program: ir.Program, config: Optional[RuntimeConfig] = None, inputs=()) -> RunResult:
    """Execute on ``config.n_workers`` workers and return store checksum, outcome and counters."""
    config = config or RuntimeConfig()
    sched = PoolScheduler(config)
    interp = Interpreter(program, sched, config)
    start = time.perf_counter()
    exc = sched.run(inputs)
    return _finish_result(interp, exc, start, len(sched.threads))


def serial_oracle(program: ir.Program, inputs=(), config: Optional[RuntimeConfig] = None) -> RunResult:
    """Depth-first single-threaded reference execution."""
    config = config or RuntimeConfig(n_workers=1)
    sched = SerialScheduler(config)
    interp = Interpreter(program, sched, config)
    start = time.perf_counter()
    exc = sched.run(list(inputs))
    return _finish_result(interp, exc, start, 1 + len(sched.threads))
