"""Command-line entry point: ``dbce {solve,experiment,rollout,validate,dump-lp}``.

Exit codes: 0 success, 1 usage error, 2 run failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .dbcpi import EXACT, SAMPLED, DbcpiConfig
from .environments import GAMES, TASKS, requirement_preset
from .game import RequirementSpec, load_game, requirement_score, rollout, validate_game
from .harness import (
    REPORT_FORMATS,
    ExperimentConfig,
    Method,
    default_output_dir,
    emit_report,
    resolve_game,
    resolve_objective,
    result_json,
    run_experiment,
    run_method,
)
from .lp import to_lp_text
from .stage import UTILITARIAN, StageSolveOptions, build_stage_lp

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_run_flags(p, method=True):
    p.add_argument("--game", required=True, help=f"one of {', '.join(GAMES)} or a game json path")
    p.add_argument("--task", default="safety", help=f"one of {', '.join(TASKS)}")
    if method:
        p.add_argument("--method", default="dbce", help="dbce, ceq, cm-<b> or rm-<p>")
    p.add_argument("--objective", help="density objective json file (needed for custom games)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dbce", description="Density-based correlated equilibria for Markov games.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="run one game/task/method and write the result json")
    _add_run_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=250)
    p.add_argument("--eval-mode", choices=(EXACT, SAMPLED), default=EXACT)
    p.add_argument("--out", help="output json path (default: <output dir>/<game>_<task>_<method>_s<seed>.json)")
    p.add_argument("--no-runtime", action="store_true", help="write runtime as 0 for reproducible bytes")

    p = sub.add_parser("experiment", help="run an experiment config and write reports")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="report directory (default: config output_dir or $DBCE_OUTPUT_DIR)")
    p.add_argument("--workers", type=int)
    p.add_argument("--iters", type=int, help="override the iteration count")
    p.add_argument("--eval-mode", choices=(EXACT, SAMPLED))
    p.add_argument("--no-runtime", action="store_true")

    p = sub.add_parser("rollout", help="sample trajectories of a policy and score the requirement")
    _add_run_flags(p, method=False)
    p.add_argument("--policy", required=True, help="result json from solve, or a json (S, J) table")
    p.add_argument("--steps", type=int, default=250)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="trajectory csv path (first episode)")

    p = sub.add_parser("validate", help="check a game json file")
    p.add_argument("game", help="game json path")

    p = sub.add_parser("dump-lp", help="print the stage LP for a Q snapshot")
    _add_run_flags(p)
    p.add_argument("--q", help="Q snapshot (.npy or json nested list, shape (N, S, J)); zeros by default")
    p.add_argument("--out", help="write to this file instead of stdout")
    return parser


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _objective_arg(args):
    return None if args.objective is None else _read_json(args.objective)


def cmd_solve(args) -> int:
    if args.iters < 1:
        raise UsageError("--iters must be >= 1")
    cfg = DbcpiConfig(iterations=args.iters, eval_mode=args.eval_mode, seed=args.seed)
    result = run_method(args.game, args.task, args.method, cfg, _objective_arg(args))
    method_id = Method.parse(args.method).id
    payload = result_json(result, args.game, args.task, method_id, args.seed,
                          include_runtime=not args.no_runtime)
    out = Path(args.out) if args.out else default_output_dir() / f"{Path(args.game).stem}_{args.task}_{method_id}_s{args.seed}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=1, allow_nan=False) + "\n")
    print(f"error={result.error:.6g} max_reg={result.max_reg:.3g} max_bf={result.max_bf:.3g} -> {out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    raw = _read_json(args.config)
    if args.iters is not None or args.eval_mode is not None:
        raw.setdefault("dbcpi", {})
        if args.iters is not None:
            raw["dbcpi"]["iterations"] = args.iters
        if args.eval_mode is not None:
            raw["dbcpi"]["eval_mode"] = args.eval_mode
    if args.workers is not None:
        raw["workers"] = args.workers
    cfg = ExperimentConfig.from_json(raw)
    out = Path(args.out or cfg.output_dir or default_output_dir())
    report = run_experiment(cfg, include_runtime=not args.no_runtime)
    names = {"json": "report.json", "csv": "runs.csv", "aggregate-csv": "aggregate.csv", "trace-csv": "trace.csv"}
    for fmt in REPORT_FORMATS:
        emit_report(report, fmt, out / names[fmt])
    for row in report.aggregates():
        mean = row["error_mean"]
        shown = "failed" if mean is None else f"error={mean:.4g} max_reg={row['max_reg_mean']:.3g}"
        print(f"{row['game']:>10} {row['task']:>9} {row['method']:>8}  {shown}")
    failed = [r for r in report.records if not r.ok]
    for r in failed:
        print(f"FAILED {r.game} {r.task} {r.method} seed={r.seed}: {r.message}", file=sys.stderr)
    print(f"reports in {out}")
    return EXIT_FAILURE if failed else EXIT_OK


def _load_policy(path, game):
    data = _read_json(path)
    table = data["policy"] if isinstance(data, dict) else data
    pi = np.asarray(table, dtype=float)
    if pi.shape != (game.num_states, game.num_joint):
        raise UsageError(f"policy shape {pi.shape} does not match game ({game.num_states}, {game.num_joint})")
    return pi


def cmd_rollout(args) -> int:
    if args.steps < 1 or args.episodes < 1:
        raise UsageError("--steps and --episodes must be >= 1")
    game = resolve_game(args.game)
    pi = _load_policy(args.policy, game)
    if args.objective is not None:
        raise UsageError("rollout scores preset requirements only; --objective is not supported")
    _, req = requirement_preset(args.game, args.task, game)
    seeds = np.random.SeedSequence(args.seed).spawn(args.episodes)
    scores = []
    for k, ss in enumerate(seeds):
        traj = rollout(game, pi, args.steps, seed=int(ss.generate_state(1)[0]))
        if k == 0 and args.out:
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            traj.to_csv(args.out, game)
        scores.append(requirement_score(traj, req))
    print(json.dumps({"requirement": req.kind.value, "steps": args.steps, "scores": scores,
                      "mean": float(np.mean(scores))}))
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        game = load_game(args.game)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {args.game}: {exc}") from None
    except (KeyError, ValueError, TypeError) as exc:
        print(f"invalid game: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    report = validate_game(game)
    if report.ok:
        print(f"ok: {game.num_states} states, {game.num_agents} agents, {game.num_joint} joint actions")
        return EXIT_OK
    for problem in report.problems:
        print(problem, file=sys.stderr)
    return EXIT_FAILURE


def cmd_dump_lp(args) -> int:
    game = resolve_game(args.game)
    if args.q is None:
        q = np.zeros((game.num_agents, game.num_states, game.num_joint))
    elif args.q.endswith(".npy"):
        q = np.load(args.q)
    else:
        q = np.asarray(_read_json(args.q), dtype=float)
    method = Method.parse(args.method)
    obj = resolve_objective(args.game, args.task, game, _objective_arg(args))
    if method.name == "dbce":
        opts = StageSolveOptions(objective=obj)
    elif method.name == "cm":
        opts = StageSolveOptions(objective=UTILITARIAN, density_cap=(obj, method.param))
    else:
        opts = StageSolveOptions(objective=UTILITARIAN)
    text = to_lp_text(build_stage_lp(game, q, opts))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "experiment": cmd_experiment,
    "rollout": cmd_rollout,
    "validate": cmd_validate,
    "dump-lp": cmd_dump_lp,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"dbce: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # bad ids or inconsistent inputs found after parsing
        print(f"dbce: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"dbce: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
