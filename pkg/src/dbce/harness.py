"""Experiment orchestration: method dispatch, multi-seed runs, aggregation and reports."""
from __future__ import annotations

import csv
import json
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import run_ce_q, run_reward_modified
from .dbcpi import DbcpiConfig, RunResult, dbcpi_run
from .environments import GAMES, TASKS, build_game, normalize_task, requirement_preset
from .game import DensityObjective, load_game

OUTPUT_ENV = "DBCE_OUTPUT_DIR"
DEFAULT_SEEDS = (0, 1, 2)
APPENDIX_SEEDS = tuple(range(20))
METRICS = ("error", "max_reg", "max_bf", "runtime_s")
RUN_COLUMNS = ("game", "task", "method", "seed") + METRICS
REPORT_FORMATS = ("json", "csv", "aggregate-csv", "trace-csv")


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "results"))


# --------------------------------------------------------------------------
# method ids


@dataclass(frozen=True)
class Method:
    """Parsed method id: ``dbce``, ``ceq``, ``cm-<b>`` or ``rm-<p>``."""

    name: str
    param: Optional[float] = None

    @classmethod
    def parse(cls, method_id: str) -> "Method":
        m = method_id.strip().lower()
        if m in ("dbce", "ceq"):
            return cls(m)
        head, sep, tail = m.partition("-")
        if sep and head in ("cm", "rm"):
            try:
                value = float(tail)
            except ValueError:
                raise ValueError(f"bad numeric parameter in method id {method_id!r}") from None
            if not math.isfinite(value):
                raise ValueError(f"bad numeric parameter in method id {method_id!r}")
            if head == "cm":
                if value < 0:
                    raise ValueError("CM bound must be >= 0")
                return cls("cm", value)
            # "rm-1.5" and "rm--1.5" both mean a reward shift of -1.5
            if value == 0:
                raise ValueError("RM shift must be nonzero")
            return cls("rm", -abs(value))
        raise ValueError(f"unknown method {method_id!r}; use dbce, ceq, cm-<b> or rm-<p>")

    @property
    def id(self) -> str:
        if self.param is None:
            return self.name
        return f"{self.name}-{abs(self.param):g}"


def resolve_game(game_ref: str):
    """A named game (``fairgamble``, ``hunters``, ``cae``) or a path to a game json file."""
    if game_ref.lower() in GAMES:
        return build_game(game_ref)
    path = Path(game_ref)
    if path.suffix == ".json" or path.exists():
        return load_game(path)
    raise ValueError(f"unknown game {game_ref!r}; choose from {GAMES} or give a game json path")


def resolve_objective(game_ref: str, task_id: str, game, objective: Optional[dict] = None) -> DensityObjective:
    if objective is not None:
        return DensityObjective.from_json(objective)
    if game_ref.lower() not in GAMES:
        raise ValueError("custom games need an explicit objective")
    return requirement_preset(game_ref, task_id, game)[0]


def check_method_task(method: Method, task_id: str) -> None:
    if method.name == "rm" and normalize_task(task_id) != "safety":
        raise ValueError("RM is only defined for safety tasks")


def run_method(game_ref: str, task_id: str, method_id: str, cfg: DbcpiConfig,
               objective: Optional[dict] = None) -> RunResult:
    """Run one (game, task, method) with the given loop configuration."""
    method = Method.parse(method_id)
    game = resolve_game(game_ref)
    if objective is None:
        check_method_task(method, task_id)
    obj = resolve_objective(game_ref, task_id, game, objective)
    if method.name == "dbce":
        return dbcpi_run(game, obj, cfg)
    if method.name == "ceq":
        return run_ce_q(game, cfg, error_objective=obj)
    if method.name == "cm":
        return run_ce_q(game, cfg, cap=(obj, method.param), error_objective=obj)
    if obj.kind.value != "min_density":
        raise ValueError("RM needs a min-density (safety) objective")
    return run_reward_modified(game, obj.weights_1, method.param, obj, cfg)


# --------------------------------------------------------------------------
# configs and reports


@dataclass(frozen=True)
class RunSpec:
    game: str
    task: str
    method: str
    # explicit density objective (json form); required for custom games
    objective: Optional[dict] = None

    def key(self):
        return (self.game, self.task, self.method)


@dataclass
class ExperimentConfig:
    runs: list
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    dbcpi: dict = field(default_factory=dict)
    output_dir: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        self.runs = [r if isinstance(r, RunSpec) else RunSpec(*r) if isinstance(r, (list, tuple)) else RunSpec(**r)
                     for r in self.runs]
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        unknown = set(self.dbcpi) - {f.name for f in fields(DbcpiConfig)}
        if unknown:
            raise ValueError(f"unknown loop settings {sorted(unknown)}")
        for r in self.runs:
            method = Method.parse(r.method)
            if r.objective is None:
                if r.game.lower() in GAMES:
                    normalize_task(r.task)
                check_method_task(method, r.task)

    def loop_config(self, seed: int) -> DbcpiConfig:
        return DbcpiConfig(**{**self.dbcpi, "seed": seed})

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        runs = list(d.pop("runs", []))
        grid = d.pop("grid", None)
        if grid is not None:
            for g in grid.get("games", GAMES):
                for t in grid.get("tasks", TASKS):
                    for m in grid.get("methods", ["dbce"]):
                        # RM only applies to safety tasks; the grid skips the rest
                        if Method.parse(m).name == "rm" and normalize_task(t) != "safety":
                            continue
                        runs.append([g, t, m])
        if d.get("seeds") == "appendix":
            d["seeds"] = list(APPENDIX_SEEDS)
        return cls(runs=runs, **d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class RunRecord:
    game: str
    task: str
    method: str
    seed: int
    status: str = "ok"
    message: str = ""
    error: Optional[float] = None
    max_reg: Optional[float] = None
    max_bf: Optional[float] = None
    runtime_s: Optional[float] = None
    max_reg_original: Optional[float] = None
    global_optimum: Optional[bool] = None
    converged_at: Optional[int] = None
    trace: list = field(default_factory=list)
    policy: Optional[list] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @classmethod
    def from_result(cls, spec: RunSpec, seed: int, result: RunResult) -> "RunRecord":
        return cls(
            spec.game, spec.task, spec.method, seed,
            error=float(result.error),
            max_reg=float(result.max_reg),
            max_bf=float(result.max_bf),
            runtime_s=float(result.runtime_s),
            max_reg_original=None if result.max_reg_original is None else float(result.max_reg_original),
            global_optimum=bool(result.global_optimum),
            converged_at=int(result.converged_at),
            trace=[float(x) for x in result.trace],
            policy=np.asarray(result.policy, dtype=float).tolist(),
        )


def result_json(result: RunResult, game: str, task: str, method: str, seed: int,
                include_runtime: bool = True) -> dict:
    """JSON form of a single run."""
    rec = RunRecord.from_result(RunSpec(game, task, method), seed, result)
    if not include_runtime:
        rec.runtime_s = 0.0
    return asdict(rec)


def _sample_std(values) -> Optional[float]:
    if len(values) < 2:
        return None
    return float(np.std(values, ddof=1))


@dataclass
class RunReport:
    records: list = field(default_factory=list)

    def groups(self):
        out = {}
        for r in self.records:
            out.setdefault((r.game, r.task, r.method), []).append(r)
        return out

    def aggregates(self) -> list:
        """Mean and sample std of each metric over the successful seeds of every triple."""
        rows = []
        for (g, t, m), recs in self.groups().items():
            good = [r for r in recs if r.ok]
            row = {"game": g, "task": t, "method": m, "runs": len(recs), "failed": len(recs) - len(good)}
            for name in METRICS:
                values = [getattr(r, name) for r in good]
                row[f"{name}_mean"] = float(np.mean(values)) if values else None
                row[f"{name}_std"] = _sample_std(values)
            rows.append(row)
        return rows

    def to_json(self) -> dict:
        return {"runs": [asdict(r) for r in self.records], "aggregates": self.aggregates()}

    @classmethod
    def from_json(cls, d: dict) -> "RunReport":
        return cls([RunRecord(**r) for r in d["runs"]])

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, allow_nan=False) + "\n"


def _execute(job):
    spec, seed, cfg = job
    try:
        result = run_method(spec.game, spec.task, spec.method, cfg, spec.objective)
    except Exception as exc:  # fail soft: record and keep going
        last = traceback.format_exception_only(type(exc), exc)[-1].strip()
        return RunRecord(spec.game, spec.task, spec.method, seed, status="failed", message=last)
    return RunRecord.from_result(spec, seed, result)


def run_experiment(cfg: ExperimentConfig, include_runtime: bool = True) -> RunReport:
    """Every (run, seed) pair in config order.  Failed runs are recorded, not raised.

    With ``include_runtime=False`` the runtimes are zeroed so that Exact-mode
    reports are byte-identical across invocations.
    """
    jobs = [(spec, seed, cfg.loop_config(seed)) for spec in cfg.runs for seed in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(_execute, jobs))
    else:
        records = [_execute(j) for j in jobs]
    if not include_runtime:
        records = [replace(r, runtime_s=0.0) if r.ok else r for r in records]
    return RunReport(records)


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def emit_report(report: RunReport, fmt: str, path) -> Path:
    """Write ``report`` as ``json``, ``csv`` (per-run rows), ``aggregate-csv`` or ``trace-csv``."""
    if fmt not in REPORT_FORMATS:
        raise ValueError(f"unknown report format {fmt!r}; choose from {REPORT_FORMATS}")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            path.write_text(report.dumps())
            return path
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if fmt == "csv":
                w.writerow(RUN_COLUMNS)
                for r in report.records:
                    w.writerow([_csv_value(getattr(r, c)) for c in RUN_COLUMNS])
            elif fmt == "aggregate-csv":
                header = ["game", "task", "method", "runs", "failed"]
                header += [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]
                w.writerow(header)
                for row in report.aggregates():
                    w.writerow([_csv_value(row[h]) for h in header])
            elif fmt == "trace-csv":
                w.writerow(["game", "task", "method", "seed", "iteration", "error"])
                for r in report.records:
                    for it, e in enumerate(r.trace, start=1):
                        w.writerow([r.game, r.task, r.method, r.seed, it, repr(e)])
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def load_report(path) -> RunReport:
    return RunReport.from_json(json.loads(Path(path).read_text()))


def task_grid(methods=("dbce",), seeds=DEFAULT_SEEDS, **dbcpi) -> ExperimentConfig:
    """The 3 games x 3 tasks grid for the given methods (RM on safety tasks only)."""
    return ExperimentConfig.from_json({
        "grid": {"games": list(GAMES), "tasks": list(TASKS), "methods": list(methods)},
        "seeds": list(seeds),
        "dbcpi": dbcpi,
    })
