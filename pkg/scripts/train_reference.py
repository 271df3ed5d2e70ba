"""Harvest self-supervised data from the reference corpus, train the CNN, save weights.

    python scripts/train_reference.py --out runs/ref [--scenes 300] [--seed 0]

Writes ``data/`` (shards + manifest), ``weights.bin`` and ``train_log.tsv``
under ``--out`` and prints the evaluation of the trained hybrid next to the
geometric-only baseline.
"""

import argparse
from pathlib import Path

from leafgrasp import evaluation as ev
from leafgrasp import selfsup as S
from leafgrasp.fusion import FusionConfig
from leafgrasp.nn import TrainConfig, save_weights, train
from leafgrasp.pipeline import PipelineConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--scenes", type=int, default=ev.REFERENCE_SIZE)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-epochs", type=int, default=TrainConfig.max_epochs)
    args = ap.parse_args()
    out = Path(args.out)
    scenes = ev.reference_corpus(args.scenes, args.seed)

    stats, samples = S.HarvestStats(), []
    for sc in scenes:
        samples += S.harvest_scene(sc, S.HarvestConfig(seed=args.seed), stats)
    man = S.append_experience(out / "data", samples)
    print(f"harvested {stats.positives}/{stats.scenes} scenes; counts {dict(man.counts)}; skipped {dict(stats.skipped)}")

    x, y = S.as_arrays(S.load_dataset(out / "data"))
    weights, log = train(x, y, TrainConfig(seed=args.seed, max_epochs=args.max_epochs))
    S.mark_trained(out / "data")
    save_weights(weights, out / "weights.bin")
    lines = ["epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc"]
    lines += [f"{e.epoch}\t{e.train_loss:.6f}\t{e.train_acc:.4f}\t{e.val_loss:.6f}\t{e.val_acc:.4f}" for e in log.epochs]
    (out / "train_log.tsv").write_text("\n".join(lines) + "\n")
    print(f"trained {len(log.epochs)} epochs, best val acc {log.best_val_acc:.3f} ({log.stopped})")

    held_out = ev.reference_corpus(100, args.seed + 1)
    geo = ev.evaluate(held_out, PipelineConfig(fusion=FusionConfig.geometric_only()), label="geometric-only")
    hyb = ev.evaluate(held_out, PipelineConfig(), weights, label="hybrid")
    print(ev.summary_markdown([geo, hyb]))


if __name__ == "__main__":
    main()
