#!/usr/bin/env python3
"""PPS clock servo from a 6 us initial offset, estimated model vs. known model."""
import argparse

import numpy as np

from gpsar.clock_sync import OscillatorTruth, ServoConfig, simulate_servo


def settle_time(run, threshold):
    outside = np.nonzero(np.abs(run.tau_true) >= threshold)[0]
    if len(outside) == 0:
        return float(run.t[0])
    return float(run.t[outside[-1] + 1]) if outside[-1] + 1 < len(run.t) else float("nan")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tau0", type=float, default=6e-6)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--threshold", type=float, default=0.2e-6)
    ap.add_argument("--csv", help="write the seed-0 trace here")
    args = ap.parse_args()

    truth = OscillatorTruth()
    for label, estimate in (("EKF + LQR", True), ("known model", False)):
        times, worst = [], 0.0
        for seed in range(args.seeds):
            run = simulate_servo(truth, args.tau0, args.steps, seed, ServoConfig(estimate=estimate))
            times.append(settle_time(run, args.threshold))
            worst = max(worst, float(np.max(np.abs(run.tau_true[run.t > 100.0]))))
            if seed == 0 and estimate and args.csv:
                run.to_csv(args.csv)
        print(f"{label:12s} settle {np.nanmin(times):5.0f}-{np.nanmax(times):5.0f} s, "
              f"worst |tau| after 100 s {1e6 * worst:.3f} us")


if __name__ == "__main__":
    main()
