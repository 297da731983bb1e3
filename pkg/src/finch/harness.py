"""Optimization pipeline driver, bundled kernels, benchmarking and reports."""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import asdict, dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from . import ir
from .afe import AfeReport, lower_pending, run_afe
from .dlbc import ChunkReport, apply_dlbc, apply_lc
from .frontend import IllFormedProgram, SourceFile, parse
from .runtime import RuntimeConfig, canonical_outcome, run, serial_oracle
from .wellformed import well_formed


class OptLevel(str, Enum):
    none = "none"
    lc = "lc"
    afe = "afe"
    dlbc = "dlbc"
    dcafe = "dcafe"


ALL_LEVELS = [OptLevel.none, OptLevel.lc, OptLevel.afe, OptLevel.dlbc, OptLevel.dcafe]


class StageError(Exception):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")


class SemanticViolation(Exception):
    """An optimized run disagreed with the serial oracle."""


# --------------------------------------------------------------------------
# Pipeline


@dataclass
class BuildResult:
    program: ir.Program
    afe: Optional[AfeReport] = None
    chunks: Optional[ChunkReport] = None


def _check(program: ir.Program, stage: str) -> ir.Program:
    diags = well_formed(program)
    if diags:
        raise StageError(stage, IllFormedProgram(diags))
    return program


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e


def build(src: Union[SourceFile, str, ir.Program], level: Union[OptLevel, str],
          mode: str = "plain") -> BuildResult:
    """Apply the module chain for ``level`` and re-check well-formedness."""
    level = OptLevel(level)
    if isinstance(src, ir.Program):
        program = _check(src, "parse")
    else:
        program = _stage("parse", parse, src)
    out = BuildResult(program)
    if level in (OptLevel.afe, OptLevel.dcafe):
        program, out.afe = _stage("afe", run_afe, program, mode)
        _check(program, "afe")
    if level is OptLevel.lc:
        program, out.chunks = _stage("lc", apply_lc, program)
        _check(program, "lc")
    if level in (OptLevel.dlbc, OptLevel.dcafe):
        program, out.chunks = _stage("dlbc", apply_dlbc, program)
        _check(program, "dlbc")
    if level in (OptLevel.afe, OptLevel.dcafe):
        program = _check(_stage("lower", lower_pending, program), "lower")
    out.program = program
    return out


def pipeline(src, level, mode: str = "plain") -> ir.Program:
    return build(src, level, mode).program


# --------------------------------------------------------------------------
# Kernels

# bench inputs, scaled so the whole suite stays small
KERNEL_INPUTS: Dict[str, Tuple[int, ...]] = {
    "nqueens": (8,),
    "clocked_bfs": (64,),
    "clocked_mst": (64,),
    "health": (4,),
    "byzantine": (64,),
    "exc_tree": (16,),
    "exc_pending": (8,),
}

EXCEPTION_KERNELS = ("exc_tree", "exc_pending")


def kernel_names() -> List[str]:
    return list(KERNEL_INPUTS)


def kernel_source(name: str) -> SourceFile:
    if name not in KERNEL_INPUTS:
        raise KeyError(f"unknown kernel {name!r}")
    ref = resources.files("finch") / "kernels" / f"{name}.finch"
    return SourceFile(f"{name}.finch", ref.read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# Reports


@dataclass
class Report:
    kernel: str
    opt_level: str
    n_workers: int
    counters: Dict[str, int]
    checksum: str
    elapsed: float
    outcome: object = None
    elapsed_mean: float = 0.0
    repeats: int = 1
    counters_min: Dict[str, int] = field(default_factory=dict)
    counters_max: Dict[str, int] = field(default_factory=dict)
    rule_log: List[str] = field(default_factory=list)
    mode: str = "plain"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Report":
        data = json.loads(line)
        data["outcome"] = _tuplify(data.get("outcome"))
        return cls(**data)


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, list) else v


CSV_FIELDS = ["kernel", "opt_level", "mode", "n_workers", "repeats", "asyncs", "finishes",
              "advances", "asyncs_min", "asyncs_max", "elapsed_median", "elapsed_mean",
              "checksum"]


def write_reports(reports: Sequence[Report], path: Union[str, Path]) -> Tuple[Path, Path]:
    """Write JSON lines to ``path`` and an aggregated CSV next to it."""
    path = Path(path)
    path.write_text("".join(r.to_json() + "\n" for r in reports), encoding="utf-8")
    csv_path = path.with_suffix(".csv")
    with csv_path.open("w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in reports:
            w.writerow({
                "kernel": r.kernel, "opt_level": r.opt_level, "mode": r.mode,
                "n_workers": r.n_workers, "repeats": r.repeats,
                "asyncs": r.counters["asyncs"], "finishes": r.counters["finishes"],
                "advances": r.counters["advances"],
                "asyncs_min": r.counters_min.get("asyncs", r.counters["asyncs"]),
                "asyncs_max": r.counters_max.get("asyncs", r.counters["asyncs"]),
                "elapsed_median": f"{r.elapsed:.6f}", "elapsed_mean": f"{r.elapsed_mean:.6f}",
                "checksum": r.checksum,
            })
    return path, csv_path


def read_reports(path: Union[str, Path]) -> List[Report]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [Report.from_json(line) for line in lines if line.strip()]


# --------------------------------------------------------------------------
# Benchmarking


def bench(kernels: Sequence[str], levels: Sequence[Union[OptLevel, str]],
          worker_counts: Sequence[int], repeats: int = 10, exceptions: bool = False,
          seed: int = 0, inputs: Optional[Dict[str, Sequence[int]]] = None) -> List[Report]:
    """Run every kernel x level x worker count cell sequentially.

    Each run is compared against the serial oracle of the unoptimized kernel;
    a mismatch raises SemanticViolation.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    reports = []
    for name in kernels:
        src = kernel_source(name)
        args = tuple((inputs or {}).get(name, KERNEL_INPUTS[name]))
        mode = "exceptions" if exceptions else "plain"
        base = parse(src)
        oracle = serial_oracle(base, args)
        for level in map(OptLevel, levels):
            built = build(base, level, mode)
            rule_log = [f.rule for f in built.afe.fired] if built.afe else []
            for n in worker_counts:
                runs = []
                for k in range(repeats):
                    res = run(built.program, RuntimeConfig(n_workers=n, seed=seed + k), args)
                    if res.checksum != oracle.checksum or res.outcome != oracle.outcome:
                        raise SemanticViolation(
                            f"{name} at {level.value} on {n} workers: checksum {res.checksum} "
                            f"outcome {res.outcome!r}, oracle {oracle.checksum} "
                            f"outcome {oracle.outcome!r}")
                    runs.append(res)
                times = [r.elapsed for r in runs]
                cs = [r.counters.as_dict() for r in runs]
                reports.append(Report(
                    kernel=name, opt_level=level.value, n_workers=n, counters=cs[0],
                    checksum=oracle.checksum, elapsed=statistics.median(times),
                    outcome=canonical_outcome(oracle.exception),
                    elapsed_mean=statistics.mean(times), repeats=repeats,
                    counters_min={k: min(c[k] for c in cs) for k in cs[0]},
                    counters_max={k: max(c[k] for c in cs) for k in cs[0]},
                    rule_log=rule_log, mode=mode,
                ))
    return reports
