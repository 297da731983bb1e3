"""The ``finchc`` command line: build, run and bench."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .afe import RuleCapExceeded
from .frontend import FinchSyntaxError, IllFormedProgram, SourceFile, pretty, pretty_stmt
from .harness import (KERNEL_INPUTS, OptLevel, SemanticViolation, StageError,
                      bench, build, kernel_names, kernel_source, write_reports)
from .runtime import (DeadlockError, FinchRuntimeError, RuntimeConfig, canonical_outcome, run,
                      serial_oracle)

LEVEL_NAMES = [lv.value for lv in OptLevel]


def _source(path: str) -> SourceFile:
    """A file path, or the name of a bundled kernel."""
    if not Path(path).exists() and path in KERNEL_INPUTS:
        return kernel_source(path)
    return SourceFile.read(path)


def _csv(text, conv=str):
    return [conv(x) for x in text.split(",") if x.strip()]


def _default_workers() -> int:
    return int(os.environ.get("FINCH_NTHREADS", "1"))


def cmd_build(args) -> int:
    mode = "exceptions" if args.exceptions else "plain"
    built = build(_source(args.file), args.opt, mode)
    if args.afe_trace and built.afe:
        sys.stderr.write(built.afe.trace_lines())
        for method, reason in built.afe.rollbacks:
            sys.stderr.write(json.dumps({"rollback": method, "reason": reason}) + "\n")
    if args.dump_dlbc:
        if not built.chunks:
            raise SystemExit("--dump-dlbc needs --opt lc, dlbc or dcafe")
        for (method, loc), stmt in zip(built.chunks.transformed, built.chunks.generated):
            print(f"// {method} line {loc[0] if loc else '?'}")
            print(pretty_stmt(stmt))
        for method, loc, reason in built.chunks.skipped:
            print(f"// skipped {method} line {loc[0] if loc else '?'}: {reason}")
        return 0
    text = pretty(built.program)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        print(text, end="")
    return 0


def cmd_run(args) -> int:
    mode = "exceptions" if args.exceptions else "plain"
    src = _source(args.file)
    inputs = args.input
    if inputs is None:
        inputs = list(KERNEL_INPUTS.get(Path(src.path).stem, ()))
    built = build(src, args.opt, mode)
    config = RuntimeConfig(n_workers=args.workers, seed=args.seed, trace=args.trace)
    res = run(built.program, config, inputs)
    out = {
        "opt": args.opt, "workers": args.workers, "checksum": res.checksum,
        "outcome": canonical_outcome(res.exception), "counters": res.counters.as_dict(),
        "elapsed": round(res.elapsed, 6),
    }
    if args.trace:
        out["trace"] = [list(ev) for ev in res.trace]
    if args.check:
        base = build(src, OptLevel.none, mode).program
        oracle = serial_oracle(base, inputs)
        out["oracle"] = oracle.checksum
        if (oracle.checksum, oracle.outcome) != (res.checksum, res.outcome):
            print(json.dumps(out, default=str))
            raise SemanticViolation(f"{src.path}: result differs from the serial oracle")
    print(json.dumps(out, default=str))
    return 0


def cmd_bench(args) -> int:
    kernels = kernel_names() if args.kernels == "all" else _csv(args.kernels)
    levels = LEVEL_NAMES if args.levels == "all" else _csv(args.levels)
    reports = bench(kernels, levels, _csv(args.workers, int), args.repeats,
                    exceptions=args.exceptions, seed=args.seed)
    for r in reports:
        c = r.counters
        print(f"{r.kernel:12} {r.opt_level:6} W={r.n_workers:<3} asyncs={c['asyncs']:<7} "
              f"finishes={c['finishes']:<6} advances={c['advances']:<6} "
              f"median={r.elapsed:.4f}s")
    if args.out:
        jsonl, csv_path = write_reports(reports, args.out)
        print(f"wrote {jsonl} and {csv_path}", file=sys.stderr)
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="finchc", description="Finch optimizer and interpreter")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="optimize a program and print it")
    b.add_argument("file")
    b.add_argument("--opt", choices=LEVEL_NAMES, default="none")
    b.add_argument("--exceptions", action="store_true", help="exception-preserving AFE rules")
    b.add_argument("--dump-dlbc", action="store_true", help="print only the chunked loops")
    b.add_argument("--afe-trace", action="store_true", help="rule firings as JSON lines on stderr")
    b.add_argument("-o", "--output")
    b.set_defaults(fn=cmd_build)

    r = sub.add_parser("run", help="optimize and execute a program")
    r.add_argument("file")
    r.add_argument("--opt", choices=LEVEL_NAMES, default="none")
    r.add_argument("--exceptions", action="store_true")
    r.add_argument("--workers", type=int, default=_default_workers())
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--trace", action="store_true", help="include the event trace in the output")
    r.add_argument("--check", action="store_true", help="compare against the serial oracle")
    r.add_argument("--input", type=int, nargs="*", help="arguments for main")
    r.set_defaults(fn=cmd_run)

    k = sub.add_parser("bench", help="run kernels across levels and worker counts")
    k.add_argument("--kernels", default="all")
    k.add_argument("--levels", default="all")
    k.add_argument("--workers", default="1,2,4,8")
    k.add_argument("--repeats", type=int, default=10)
    k.add_argument("--exceptions", action="store_true")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--out")
    k.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SemanticViolation as e:
        print(f"finchc: semantic violation: {e}", file=sys.stderr)
        return 2
    except (FinchSyntaxError, IllFormedProgram, StageError, RuleCapExceeded,
            FinchRuntimeError, DeadlockError, OSError, KeyError, ValueError) as e:
        print(f"finchc: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
