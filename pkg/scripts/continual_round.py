"""One or more rounds of learning from simulated grasp outcomes.

Each round runs the current hybrid pipeline on fresh scenes, judges every
selection against the ground-truth graspable region, appends the outcomes to
the experience store and retrains once the store has grown past the retrain
threshold.

    python scripts/continual_round.py --data runs/ref/data --model runs/ref/weights.bin --out runs/cl
"""

import argparse
from pathlib import Path

from leafgrasp import evaluation as ev
from leafgrasp import selfsup as S
from leafgrasp.geometry import DegenerateLeafError
from leafgrasp.grasp import NoCandidateError
from leafgrasp.leafselect import NoViableLeafError
from leafgrasp.nn import TrainConfig, load_weights, save_weights, train
from leafgrasp.pipeline import Pipeline, PipelineConfig


def run_round(pipe: Pipeline, scenes, data_dir: Path):
    samples, ok = [], 0
    for sc in scenes:
        try:
            sel = pipe.select(sc)
        except (NoViableLeafError, NoCandidateError, DegenerateLeafError) as exc:
            print(f"  {sc.scene_id}: skipped ({type(exc).__name__})")
            continue
        t = sc.truth[sel.leaf_id]
        u, v = sel.pixel
        success = bool(t.graspable and t.region[v, u])
        ok += success
        samples.append(S.experience_sample(sel.context, sel.pixel, success))
    man = S.append_experience(data_dir, samples)
    return ok, len(samples), man


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", required=True, help="experience store (created if missing)")
    ap.add_argument("--model", default=None, help="starting weights (default: geometric-only first round)")
    ap.add_argument("--out", required=True)
    ap.add_argument("--rounds", type=int, default=1)
    ap.add_argument("--scenes", type=int, default=50)
    ap.add_argument("--seed", type=int, default=100)
    args = ap.parse_args()
    out, data = Path(args.out), Path(args.data)
    out.mkdir(parents=True, exist_ok=True)
    weights = load_weights(args.model) if args.model else None
    for r in range(args.rounds):
        pipe = Pipeline(PipelineConfig(), weights)
        ok, n, man = run_round(pipe, ev.reference_corpus(args.scenes, args.seed + r), data)
        print(f"round {r}: {ok}/{n} simulated grasps succeeded; store holds {man.total} samples; retrain={man.retrain}")
        if man.retrain:
            x, y = S.as_arrays(S.load_dataset(data))
            weights, log = train(x, y, TrainConfig(seed=args.seed + r), init=weights)
            S.mark_trained(data)
            save_weights(weights, out / f"weights_round{r}.bin")
            print(f"  retrained: {len(log.epochs)} epochs, best val acc {log.best_val_acc:.3f}")


if __name__ == "__main__":
    main()
