"""Peak activation bytes against depth for both gradient modes, with the fitted trend.

Usage: python3 scripts/memory_sweep.py [--depths 8,16,32,64] [--size 32]
"""

import argparse

import numpy as np

from hypernet.blocks import NetworkSpec, init_params
from hypernet.grad import flatness, linear_fit_r2, measure_peak, memory_report
from hypernet.losses import l2_loss


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--depths", default="8,16,32,64")
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--width", type=int, default=4)
    args = ap.parse_args()
    depths = [int(d) for d in args.depths.split(",")]
    x = np.random.default_rng(0).standard_normal((1, 3, args.size, args.size))
    target = np.zeros((1, 1, args.size, args.size))
    runs = []
    for mode in ("reversible", "stored"):
        for d in depths:
            spec = NetworkSpec(input_channels=3, width=args.width, levels=0, blocks_per_level=d,
                               head="regressor", mode=mode)
            params = init_params(spec, np.random.default_rng(0))
            runs.append((d, mode, measure_peak(spec, params, x, l2_loss, target, mode)))
    report = memory_report(runs)
    print(report.to_csv(), end="")
    print(f"reversible spread {flatness(report.curve('reversible')):.3%}")
    print(f"stored linear fit R^2 {linear_fit_r2(report.curve('stored')):.5f}")


if __name__ == "__main__":
    main()
