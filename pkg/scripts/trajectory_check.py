#!/usr/bin/env python3
"""Solve one task, then roll the policy out many times and summarise the requirement score.

    python scripts/trajectory_check.py cae fairness --episodes 20 --steps 250 --upto 30
"""
import argparse

import numpy as np

from dbce.dbcpi import DbcpiConfig, dbcpi_run
from dbce.environments import GAMES, TASKS, build_game, requirement_preset
from dbce.game import requirement_score, rollout


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("game", choices=GAMES)
    p.add_argument("task", choices=TASKS)
    p.add_argument("--iters", type=int, default=250)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--steps", type=int, default=250)
    p.add_argument("--upto", type=int, default=None, help="score only the first UPTO steps")
    args = p.parse_args()

    game = build_game(args.game)
    obj, req = requirement_preset(args.game, args.task, game)
    result = dbcpi_run(game, obj, DbcpiConfig(iterations=args.iters))
    scores = np.array([requirement_score(rollout(game, result.policy, args.steps, seed=k), req, upto=args.upto)
                       for k in range(args.episodes)])
    print(f"final error {result.error:.4f}  max_reg {result.max_reg:.2e}")
    print(f"score mean {scores.mean():.4f}  mean |score| {np.abs(scores).mean():.4f}  "
          f"min {scores.min():.4f}  max {scores.max():.4f}")


if __name__ == "__main__":
    main()
