"""Command-line entry point: ``leafgrasp <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .config import ConfigError, RunConfig, load_config
from .distance import erode
from .fusion import FusionConfig
from .nn.model import parameter_count
from .nn.serialize import WeightsFormatError, header, load_weights, save_weights
from .nn.train import TrainingError, train
from .pipeline import Pipeline
from .scene import SceneFormatError, load_scene, save_scene, write_pgm_gray, write_ppm
from .selfsup import DatasetError, HarvestStats, append_experience, as_arrays, harvest_scene, load_dataset, read_manifest

log = logging.getLogger("leafgrasp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers


def _atomic_text(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(out: Path, cfg: RunConfig):
    _atomic_text(out / "config.json", cfg.to_json())


def load_corpus(path) -> list:
    """A single scene directory, or a directory of scene directories (sorted by name)."""
    p = Path(path)
    if (p / "manifest.json").is_file():
        return [load_scene(p)]
    if not p.is_dir():
        raise SceneFormatError(p, "not a scene or corpus directory")
    subdirs = sorted(d for d in p.iterdir() if (d / "manifest.json").is_file())
    if not subdirs:
        raise SceneFormatError(p, "no scene directories found")
    return [load_scene(d) for d in subdirs]


def _pipeline_cfg(cfg: RunConfig, args):
    pc = cfg.pipeline
    if getattr(args, "geometric_only", False):
        pc = replace(pc, fusion=FusionConfig.geometric_only())
    elif getattr(args, "cap", None) is not None:
        pc = replace(pc, fusion=replace(pc.fusion, cap=args.cap))
    try:
        pc.fusion.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return pc


def _weights(args):
    return load_weights(args.model) if getattr(args, "model", None) else None


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args, cfg: RunConfig):
    out = _out_dir(args)
    scenes = ev.reference_corpus(args.count, cfg.seed, cfg.synth)
    for s in scenes:
        save_scene(s, out / s.scene_id)
    _atomic_text(out / "corpus.json", json.dumps({"scenes": [s.scene_id for s in scenes], "seed": cfg.seed,
                                                  "config": cfg.fingerprint()}, indent=1) + "\n")
    _write_config(out, cfg)
    log.info("wrote %d scenes to %s", len(scenes), out)


def cmd_gen_data(args, cfg: RunConfig):
    out = _out_dir(args)
    scenes = load_corpus(args.scenes)
    hcfg = cfg.harvest()
    stats = HarvestStats()
    samples = []
    for s in scenes:
        samples += harvest_scene(s, hcfg, stats)
    filt = {f"rejected: {k}": v for k, v in sorted(stats.rejected.items())}
    filt.update({f"skipped: {k}": v for k, v in sorted(stats.skipped.items())})
    man = append_experience(out, samples, filt, cfg.retrain_fraction)
    _write_config(out, cfg)
    c = man.counts
    neg = sum(v for k, v in c.items() if k.startswith("negative"))
    print(f"originals {c.get('teacher-positive', 0)}  augmented {c.get('augmented', 0)}  negatives {neg}  "
          f"total {man.total}  hash {man.content_hash[:16]}")


def cmd_train(args, cfg: RunConfig):
    out = _out_dir(args)
    samples = load_dataset(args.data)
    if not samples:
        raise DatasetError(f"{args.data}: dataset is empty")
    x, y = as_arrays(samples)
    tcfg = replace(cfg.train, seed=cfg.seed)
    init = load_weights(args.init) if args.init else None
    weights, tlog = train(x, y, tcfg, init)
    save_weights(weights, out / "weights.bin")
    lines = ["epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc"]
    lines += [f"{e.epoch}\t{e.train_loss:.6f}\t{e.train_acc:.4f}\t{e.val_loss:.6f}\t{e.val_acc:.4f}" for e in tlog.epochs]
    _atomic_text(out / "train_log.tsv", "\n".join(lines) + "\n")
    _write_config(out, cfg)
    print(f"best epoch {tlog.best_epoch}  val_acc {tlog.best_val_acc:.4f}  stopped: {tlog.stopped}  "
          f"checksum {weights.checksum()[:16]}")


def _overlay(scene, sel) -> np.ndarray:
    d = scene.depth.values.astype(np.float64)
    ok = np.isfinite(d) & (d > 0)
    lo, hi = (float(d[ok].min()), float(d[ok].max())) if ok.any() else (0.0, 1.0)
    g = np.where(ok, 1.0 - (d - lo) / max(hi - lo, 1e-9), 0.0)
    rgb = np.repeat((40 + 180 * g)[..., None], 3, axis=2).astype(np.uint8)
    m = scene.mask(sel.leaf_id)
    rgb[m & ~erode(m, 1.5)] = (0, 255, 0)
    for c in sel.candidates:
        rgb[max(c.v - 1, 0) : c.v + 2, max(c.u - 1, 0) : c.u + 2] = (255, 255, 0)
    u, v = sel.pixel
    rgb[max(v - 3, 0) : v + 4, u] = (255, 0, 0)
    rgb[v, max(u - 3, 0) : u + 4] = (255, 0, 0)
    return rgb


def cmd_select(args, cfg: RunConfig):
    pc = _pipeline_cfg(cfg, args)
    out = _out_dir(args)
    scenes = load_corpus(args.scenes)
    pipe = Pipeline(pc, _weights(args))
    lines = ["scene_id\tleaf_id\tu\tv\ts_final\ts_hybrid\tfallback\tmodel"]
    for s in scenes:
        sel = pipe.select(s)
        d = sel.decision
        i = d.chosen_index
        lines.append(f"{s.scene_id}\t{sel.leaf_id}\t{sel.pixel[0]}\t{sel.pixel[1]}\t{d.chosen.s_final:.6f}\t"
                     f"{d.s_hybrid[i]:.6f}\t{int(d.fallback)}\t{int(d.model_used)}")
        audit = ["\t".join(next(iter(d.rows())).keys())]
        audit += ["\t".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in r.values()) for r in d.rows()]
        _atomic_text(out / f"{s.scene_id}.audit.tsv", "\n".join(audit) + "\n")
        if args.explain:
            feats = ["u", "v", "flatness", "approach", "edge", "accessibility", "s_grasp", "stem_penalty", "s_final"]
            rows = ["\t".join(feats)]
            rows += ["\t".join(str(getattr(c, f)) if f in "uv" else f"{getattr(c, f):.6f}" for f in feats)
                     for c in sel.candidates]
            _atomic_text(out / f"{s.scene_id}.features.tsv", "\n".join(rows) + "\n")
            ctx = sel.context
            for name, arr in (("flatness", ctx.F), ("approach", ctx.A), ("edge", ctx.E), ("accessibility", ctx.Acc),
                              ("stem_penalty", ctx.P), ("s_final", ctx.S_final)):
                a = np.where(ctx.candidates, arr, 0.0)
                write_pgm_gray(out / f"{s.scene_id}.{name}.pgm", np.round(255 * np.clip(a, 0, 1)))
        if args.overlay:
            write_ppm(out / f"{s.scene_id}.overlay.ppm", _overlay(s, sel))
    _atomic_text(out / "selections.tsv", "\n".join(lines) + "\n")
    _write_config(out, cfg)
    print("\n".join(lines))


def cmd_eval(args, cfg: RunConfig):
    pc = _pipeline_cfg(cfg, args)
    out = _out_dir(args)
    scenes = load_corpus(args.scenes)
    rep = ev.evaluate(scenes, pc, _weights(args), timing=args.timing,
                      label="geometric-only" if args.geometric_only or not args.model else "full")
    rep.fingerprint = f"{cfg.fingerprint()}:{rep.fingerprint}"
    _atomic_text(out / "rows.tsv", ev.rows_tsv(rep))
    _atomic_text(out / "report.tsv", ev.summary_tsv([rep]))
    _atomic_text(out / "report.md", ev.summary_markdown([rep]))
    _write_config(out, cfg)
    print(ev.summary_markdown([rep]), end="")


def cmd_ablate(args, cfg: RunConfig):
    plan = ev.AblationPlan(
        tuple(args.leaf_features) if args.leaf_features is not None else ev.LEAF_FEATURES,
        tuple(args.grasp_features) if args.grasp_features is not None else ev.GRASP_FEATURES,
    )
    try:
        plan.validate()
    except ev.EvaluationError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args)
    scenes = load_corpus(args.scenes)
    reps = ev.ablate(scenes, plan, cfg.pipeline, _weights(args))
    for r in reps:
        r.fingerprint = f"{cfg.fingerprint()}:{r.fingerprint}"
    _atomic_text(out / "ablation.tsv", ev.summary_tsv(reps))
    _atomic_text(out / "ablation.md", ev.summary_markdown(reps))
    _write_config(out, cfg)
    print(ev.summary_markdown(reps), end="")


def cmd_inspect(args, cfg: RunConfig):
    p = Path(args.path)
    if p.is_file():
        info = header(p)
        info["parameters"] = parameter_count()
        if info["magic"] != "GPCNNWT":
            raise WeightsFormatError(f"{p}: not a weight file")
        load_weights(p)  # full validation
    elif (p / "manifest.json").is_file():
        data = json.loads((p / "manifest.json").read_text())
        info = data if "format_version" in data else {"manifest": data}
        if "shards" in data:
            info = read_manifest(p).__dict__ | {"shards": len(data["shards"])}
    elif (p / "corpus.json").is_file():
        info = json.loads((p / "corpus.json").read_text())
    else:
        raise SceneFormatError(p, "nothing to inspect (expected weights, scene, dataset or corpus)")
    print(json.dumps(info, indent=1, sort_keys=True, default=str))


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML file with dotted sections, e.g. [fusion] cap = 0.3")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config value")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="leafgrasp", description="Hybrid geometric / neural leaf grasp-point selection.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="synthesize a scene corpus")
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--out", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="harvest self-supervised training samples")
    g.add_argument("--scenes", required=True)
    g.add_argument("--out", required=True)

    g = sub.add_parser("train", parents=[common], help="train GraspPointCNN on a dataset")
    g.add_argument("--data", required=True)
    g.add_argument("--init", help="weights to continue from")
    g.add_argument("--out", required=True)

    g = sub.add_parser("select", parents=[common], help="choose grasp points")
    g.add_argument("--scenes", required=True, help="scene directory or corpus directory")
    g.add_argument("--out", required=True)
    g.add_argument("--model", help="CNN weights; enables fusion")
    mode = g.add_mutually_exclusive_group()
    mode.add_argument("--geometric-only", action="store_true")
    mode.add_argument("--cap", type=float)
    g.add_argument("--explain", action="store_true", help="per-candidate features and score heat maps")
    g.add_argument("--overlay", action="store_true", help="overlay image per scene")

    for name in ("eval", "ablate"):
        g = sub.add_parser(name, parents=[common], help=f"{name} on a corpus with ground truth")
        g.add_argument("--scenes", required=True)
        g.add_argument("--out", required=True)
        g.add_argument("--model")
        if name == "eval":
            m = g.add_mutually_exclusive_group()
            m.add_argument("--geometric-only", action="store_true")
            m.add_argument("--cap", type=float)
            g.add_argument("--timing", action="store_true", help="record selection time (not reproducible)")
        else:
            g.add_argument("--leaf-features", nargs="*")
            g.add_argument("--grasp-features", nargs="*")

    g = sub.add_parser("inspect", parents=[common], help="print a weight-file header or a manifest")
    g.add_argument("path")
    return p


COMMANDS = {"gen": cmd_gen, "gen-data": cmd_gen_data, "train": cmd_train, "select": cmd_select,
            "eval": cmd_eval, "ablate": cmd_ablate, "inspect": cmd_inspect}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config, args.set, args.seed)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"leafgrasp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, (SceneFormatError, WeightsFormatError, DatasetError, ev.EvaluationError)):
            print(f"leafgrasp: data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        if isinstance(exc, ConfigError):
            print(f"leafgrasp: error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"leafgrasp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"leafgrasp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (AssertionError, TrainingError) as exc:
        print(f"leafgrasp: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
