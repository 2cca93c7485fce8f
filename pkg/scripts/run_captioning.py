"""Train the predictor and the captioner, then caption held-out windows.

Prints train exact match, held-out BLEU@4 and the caption loss curve as JSON.
"""

import argparse
import json

from foresight.experiments import CaptionExperimentConfig, run_captioning


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=CaptionExperimentConfig.epochs)
    args = ap.parse_args()
    print(json.dumps(run_captioning(args.seed, cap=CaptionExperimentConfig(epochs=args.epochs)), indent=2))


if __name__ == "__main__":
    main()
