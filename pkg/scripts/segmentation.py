"""Down-up segmentation of the shapes-seg set with mean-frequency class weighting.

Usage: python3 scripts/segmentation.py [--epochs 10] [--n-train 100] [--out DIR]
"""

import argparse
import tempfile
from pathlib import Path

from hypernet.recipes import seg_config, seg_data, seg_model
from hypernet.train import train_loop


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--n-train", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(args.out or tmp)
        tr, va = seg_data(out / "data", n_train=args.n_train)
        res = train_loop(seg_model(), seg_config(args.epochs, args.seed), tr, va, out / "run")
        for row in res.val_history:
            print(f"epoch {row['epoch']:2d} pixel_acc {row['global_accuracy']:.4f} "
                  f"class_avg {row['class_average_accuracy']:.4f}")


if __name__ == "__main__":
    main()
