"""Accuracy of each prediction head on a stochastic grammar, as JSON."""

import argparse
import json

from foresight.experiments import ExperimentConfig, run_horizon


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--concentration", type=float, default=0.3,
                    help="Dirichlet concentration of the transition rows; lower is more deterministic")
    ap.add_argument("--epochs", type=int, default=ExperimentConfig.epochs)
    args = ap.parse_args()
    exp = ExperimentConfig(epochs=args.epochs)
    print(json.dumps(run_horizon(tuple(args.seeds), exp, args.concentration), indent=2))


if __name__ == "__main__":
    main()
