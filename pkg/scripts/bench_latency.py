"""Per-stage latency of the full hybrid pipeline on 1440x1080 synthetic scenes.

    python scripts/bench_latency.py [--scenes 20] [--model weights.bin]
"""

import argparse

import numpy as np

from leafgrasp import evaluation as ev
from leafgrasp.nn import init_weights, load_weights

STAGES = ("leaf_ms", "grasp_ms", "cnn_ms", "fusion_ms", "total_ms")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--model", default=None, help="weights file (default: untrained seed-0 init; same cost)")
    args = ap.parse_args()
    weights = load_weights(args.model) if args.model else init_weights(0)
    timings = ev.latency_benchmark(args.scenes, args.seed, weights)
    print(f"{'stage':10s} {'median':>8s} {'p90':>8s} {'max':>8s}  (ms, {len(timings)} scenes)")
    for k in STAGES:
        v = np.array([t[k] for t in timings])
        print(f"{k:10s} {np.median(v):8.2f} {np.percentile(v, 90):8.2f} {v.max():8.2f}")


if __name__ == "__main__":
    main()
