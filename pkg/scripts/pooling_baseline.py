"""WavePool against 2x2 average pooling in the residual baseline, on bars10 over several seeds.

Usage: python3 scripts/pooling_baseline.py [--seeds 0,1,2] [--epochs 8]
"""

import argparse
import tempfile
from pathlib import Path

import numpy as np

from hypernet.recipes import bars10_data, baseline_config, baseline_model
from hypernet.train import train_loop


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--epochs", type=int, default=8)
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    with tempfile.TemporaryDirectory() as tmp:
        tr, va = bars10_data(Path(tmp))
        for coarsening in ("wavepool", "avgpool"):
            accs = []
            for seed in seeds:
                res = train_loop(baseline_model(coarsening), baseline_config(seed, args.epochs), tr, va)
                accs.append(res.val_history[-1]["global_accuracy"])
                print(f"{coarsening} seed={seed} val_acc={accs[-1]:.3f}", flush=True)
            print(f"{coarsening} mean={np.mean(accs):.3f}")


if __name__ == "__main__":
    main()
