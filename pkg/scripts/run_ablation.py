"""Feature ablation on the synthetic reference corpus; prints a markdown table.

    python scripts/run_ablation.py [--scenes 300] [--seed 0] [--model weights.bin]
"""

import argparse

from leafgrasp import evaluation as ev
from leafgrasp.nn import load_weights


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=ev.REFERENCE_SIZE)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--model", default=None)
    args = ap.parse_args()
    weights = load_weights(args.model) if args.model else None
    scenes = ev.reference_corpus(args.scenes, args.seed)
    reports = ev.ablate(scenes, weights=weights)
    print(ev.summary_markdown(reports))
    base = {r.label: r.aggregate() for r in reports}["geometric-only"]
    print("\nOSR-proxy loss when one feature is dropped (geometric-only baseline):")
    for r in reports:
        if r.label.startswith("-"):
            agg = r.aggregate()
            print(f"  {r.label:16s} grasp {base['OSR_proxy_pct'] - agg['OSR_proxy_pct']:+6.2f}  "
                  f"leaf {base['leaf_OSR_proxy_pct'] - agg['leaf_OSR_proxy_pct']:+6.2f}")


if __name__ == "__main__":
    main()
