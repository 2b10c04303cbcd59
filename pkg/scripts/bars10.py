"""Train the leapfrog classifier on bars10 in one gradient mode and report accuracy.

Usage: python3 scripts/bars10.py [--mode reversible|stored] [--epochs 30] [--out DIR]
"""

import argparse
import logging
import tempfile
import time
from pathlib import Path

from hypernet.recipes import bars10_config, bars10_data, bars10_model
from hypernet.train import train_loop


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mode", default="reversible", choices=["reversible", "stored"])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(args.out or tmp)
        tr, va = bars10_data(out / "data")
        t0 = time.time()
        res = train_loop(bars10_model(), bars10_config(args.mode, args.epochs, args.seed), tr, va, out / "run")
        for row in res.val_history:
            print(f"epoch {row['epoch']:2d} val_acc {row['global_accuracy']:.3f}")
        print(f"best val_acc {max(r['global_accuracy'] for r in res.val_history):.3f} "
              f"in {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
