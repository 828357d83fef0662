"""Command-line entry points.

Subcommands: build-pseudo-labels | train | evaluate | ablate-aggregators |
plot-histograms, plus make-planted-data for generating a synthetic demo
dataset. Flags mirror the run-config fields and override values loaded
with --config. Exit code 0 on success; failures print one diagnostic line
on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields

from . import pipeline
from .config import RunConfig
from .datasets import make_planted_dataset

_FLAG_HELP = {
    "dataset": "dataset manifest file",
    "encoder": "encoder spec: planted[:k=v,...] or clip[:model=...]",
    "cache": "embedding cache base path (built if missing)",
    "output_dir": "directory for run artifacts",
    "grid_rows": "snippet grid rows",
    "grid_cols": "snippet grid columns",
    "zeta": "min-max aggregation threshold",
    "strategy": "aggregation strategy: minmax | avg | max | global",
    "sigma_g": "width of the Gaussian label-update modulation",
    "eta": "latent update step scale",
    "epochs": "alternation rounds",
    "batch_size": "SGD minibatch size",
    "learning_rate": "SGD learning rate",
    "seed": "seed for every stochastic choice",
    "hidden_dim": "classifier hidden width (0 = linear head)",
    "epsilon": "clamp applied to scores before the logit",
    "hard_labels": "binarize initial pseudo labels (ablation)",
    "chain_through_sigmoid": "chain the label gradient through the sigmoid (ablation)",
    "eval_annotations": "voc:<dir> or coco:<file>; adds the eval-mAP history column",
    "histogram_bins": "bins for score histograms",
    "dump_similarities": "also write every global/local similarity vector",
}


def _add_config_flags(sub: argparse.ArgumentParser):
    sub.add_argument("--config", help="run config file (flags override its values)")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        name = f.type if isinstance(f.type, str) else f.type.__name__
        if name == "bool":
            sub.add_argument(flag, action="store_true", default=None,
                             help=_FLAG_HELP.get(f.name, ""))
        else:
            caster = {"int": int, "float": float}.get(name, str)
            sub.add_argument(flag, type=caster, default=None,
                             help=_FLAG_HELP.get(f.name, ""))


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(config, f.name, value)
    return config.validate()


def _cmd_build(args) -> int:
    result = pipeline.build_pseudo_labels(resolve_config(args))
    print(f"pseudo labels written to {result.score_base}.manifest/.bin")
    if result.quality_report is not None:
        print(f"pseudo-label mAP: {result.quality_report.map_score:.4f}")
    return 0


def _cmd_train(args) -> int:
    result = pipeline.run_training(resolve_config(args))
    print(f"checkpoint: {result.checkpoint_base}.manifest/.bin")
    print(f"history ({result.history_rows} rounds): {result.history_path}")
    return 0


def _cmd_evaluate(args) -> int:
    result = pipeline.run_evaluation(
        resolve_config(args),
        checkpoint_base=args.checkpoint,
        manifest_file=args.split_manifest,
        annotations=args.annotations or "",
        cache_base=args.eval_cache,
    )
    print(result.report.render_table(), end="")
    print(f"report: {result.json_path}")
    return 0


def _cmd_ablate(args) -> int:
    result = pipeline.run_ablation(resolve_config(args))
    print(result.text_path.read_text(encoding="utf-8"), end="")
    print(f"report: {result.json_path}")
    return 0


def _cmd_histograms(args) -> int:
    path = pipeline.run_histograms(resolve_config(args))
    print(f"histograms: {path}")
    return 0


def _cmd_make_planted(args) -> int:
    manifest = make_planted_dataset(
        out_dir=args.out_dir,
        num_images=args.num_images,
        num_classes=args.num_classes,
        rows=args.rows,
        cols=args.cols,
        cell=args.cell,
        max_extras=args.max_extras,
        seed=args.seed,
        split=args.split,
    )
    print(f"planted dataset with {len(manifest.image_paths)} images: "
          f"{args.out_dir}/manifest.txt")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vlpseudo",
        description="Annotation-free multi-label classification from "
                    "vision-language pseudo labels",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    for name, func, description in (
        ("build-pseudo-labels", _cmd_build,
         "encode the dataset, aggregate similarities, write soft pseudo labels"),
        ("train", _cmd_train,
         "alternate classifier training with pseudo-label refinement"),
        ("evaluate", _cmd_evaluate, "per-class AP / mAP of a checkpoint on a split"),
        ("ablate-aggregators", _cmd_ablate,
         "pseudo-label quality per aggregation strategy"),
        ("plot-histograms", _cmd_histograms,
         "per-class score distributions for the global and local routes"),
    ):
        sub = subparsers.add_parser(name, help=description)
        _add_config_flags(sub)
        sub.set_defaults(func=func)
        if name == "evaluate":
            sub.add_argument("--checkpoint", required=True,
                             help="classifier checkpoint base path")
            sub.add_argument("--split-manifest",
                             help="manifest of the split to score (default: config dataset)")
            sub.add_argument("--annotations",
                             help="override annotation source: voc:<dir> or coco:<file>")
            sub.add_argument("--eval-cache", help="cache base path for the evaluated split")

    planted = subparsers.add_parser("make-planted-data",
                                    help="generate a synthetic dataset with exact ground truth")
    planted.add_argument("--out-dir", required=True)
    planted.add_argument("--num-images", type=int, default=200)
    planted.add_argument("--num-classes", type=int, default=10)
    planted.add_argument("--rows", type=int, default=3)
    planted.add_argument("--cols", type=int, default=3)
    planted.add_argument("--cell", type=int, default=24)
    planted.add_argument("--max-extras", type=int, default=2)
    planted.add_argument("--seed", type=int, default=0)
    planted.add_argument("--split", default="train")
    planted.set_defaults(func=_cmd_make_planted)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
