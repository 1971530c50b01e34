#!/usr/bin/env python3
"""Train one forecaster cell and print its test-set report.

Example:
    python scripts/train_forecaster.py --model lstm --conditional --target y
"""

import argparse

from lorenzcast.train_eval import TrainConfig, train_and_evaluate


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", choices=("wavenet", "lstm", "ffn"),
                        default="wavenet")
    parser.add_argument("--conditional", action="store_true")
    parser.add_argument("--multitask", action="store_true")
    parser.add_argument("--target", choices=("x", "y", "z"), default="x")
    parser.add_argument("--scenario", choices=("A", "B"), default="A")
    parser.add_argument("--seed", type=int, default=1234)
    parser.add_argument("--epochs", type=int, default=None)
    args = parser.parse_args()

    config = TrainConfig(
        model=args.model, conditional=args.conditional,
        multitask=args.multitask, target=args.target,
        scenario=args.scenario, seed=args.seed, epochs=args.epochs,
    )
    result, report = train_and_evaluate(config)
    print(f"{config.model} scenario={config.scenario} seed={config.seed} "
          f"({result.metadata['param_count']} params, "
          f"{result.metadata['epochs']} epochs)")
    print(f"  train MAE: {result.loss_history[0]:.5f} -> "
          f"{result.loss_history[-1]:.5f}")
    for series in report.rmse_scaled:
        print(f"  test RMSE {series}: scaled {report.rmse_scaled[series]:.6f}"
              f"  raw {report.rmse_raw[series]:.6f}")
    print(f"  wall: {report.wall_seconds:.1f}s")


if __name__ == "__main__":
    main()
