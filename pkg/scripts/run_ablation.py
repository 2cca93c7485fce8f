"""Scene-branch ablation on the disambiguation grammar.

Prints per-seed and mean next-activity top-1 for the full network and for
the network without the scene branch, as JSON.
"""

import argparse
import json

from foresight.experiments import ExperimentConfig, run_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--train-videos", type=int, default=ExperimentConfig.n_train_videos)
    ap.add_argument("--epochs", type=int, default=ExperimentConfig.epochs)
    ap.add_argument("--with-no-time", action="store_true", help="also train the network without the time branch")
    args = ap.parse_args()
    exp = ExperimentConfig(n_train_videos=args.train_videos, epochs=args.epochs)
    variants = ("full", "no_scene", "no_time") if args.with_no_time else ("full", "no_scene")
    print(json.dumps(run_ablation(tuple(args.seeds), exp, variants), indent=2))


if __name__ == "__main__":
    main()
