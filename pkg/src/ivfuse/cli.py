"""Command-line surface: fuse, train, mask, eval, ablate.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure. Commands
never write into their input directories; artifacts go under --out.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import ConfigError, RunConfig, default_config_text, load_config
from .dataset import (DatasetError, generate_dataset, load_pairs,
                      semantic_generator_for)
from .imgio import save_image
from .metrics import evaluate_dataset
from .model import FusionModel, fuse
from .sig import write_mask
from .training import TrainingDiverged, load_model, train

USAGE_EXIT = 1
RUNTIME_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ivfuse",
                     description="Text-guided infrared/visible image fusion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="run configuration file (key = value lines)")

    p_fuse = sub.add_parser("fuse", help="fuse every pair of a dataset")
    add_common(p_fuse)
    p_fuse.add_argument("--in", dest="dataset", required=True, help="dataset root (vis/ + ir/)")
    p_fuse.add_argument("--out", required=True, help="output directory for fused images")
    p_fuse.add_argument("--checkpoint", help="model checkpoint (omit for a seeded random model)")
    p_fuse.add_argument("--jobs", type=int, help="override config jobs bound")

    p_train = sub.add_parser("train", help="train a fusion model")
    add_common(p_train)
    p_train.add_argument("--in", dest="dataset", required=True)
    p_train.add_argument("--out", required=True, help="checkpoints + loss history directory")
    p_train.add_argument("--resume", help="resume from this checkpoint")

    p_mask = sub.add_parser("mask", help="precompute mask semantics and previews")
    add_common(p_mask)
    p_mask.add_argument("--in", dest="dataset", required=True)
    p_mask.add_argument("--out", required=True)

    p_eval = sub.add_parser("eval", help="metric report for fused images")
    add_common(p_eval, config_required=False)
    p_eval.add_argument("--fused", required=True, help="directory of fused images")
    p_eval.add_argument("--in", dest="dataset", help="dataset root supplying vis/ and ir/")
    p_eval.add_argument("--vis", help="visible image directory (overrides --in)")
    p_eval.add_argument("--ir", help="infrared image directory (overrides --in)")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--per-source", action="store_true",
                        help="also write per-source VIF debug columns")

    p_ablate = sub.add_parser("ablate", help="train and evaluate all pipeline variants")
    add_common(p_ablate)
    p_ablate.add_argument("--in", dest="dataset", required=True)
    p_ablate.add_argument("--out", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic fixture dataset")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--pairs", type=int, default=4)
    p_synth.add_argument("--size", type=int, default=96)
    p_synth.add_argument("--seed", type=int, default=0)

    p_cfg = sub.add_parser("init-config", help="print a documented default config")
    p_cfg.add_argument("--out", help="write here instead of stdout")
    return parser


def _load(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return RunConfig().validate()


def _semantics(config: RunConfig, dataset, pairs, cache_dir):
    return semantic_generator_for(
        dataset, pairs, text_dim=config.text_dim, cache_dir=cache_dir,
        noise_level=config.noise_level, noise_seed=config.noise_seed,
        threshold_policy=config.threshold_policy, tau=config.tau,
        keyword=config.keyword or None,
        fixtures_path=config.fixtures or None)


def _pair_semantics(generator, pair):
    mask = pair.mask or generator.mask_for_pair(pair.i_vis, pair.i_ir, pair.pair_id)
    text = pair.text or generator.text_for_pair(pair.i_vis)
    return mask, text


def cmd_fuse(args) -> int:
    config = _load(args)
    pairs = load_pairs(args.dataset)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    generator = _semantics(config, args.dataset, pairs, out_dir / "cache")
    if args.checkpoint:
        model = load_model(args.checkpoint, config.model_config())
    else:
        model = FusionModel(config.model_config(), variant=config.variant, seed=config.seed)
    jobs = args.jobs or config.jobs
    semantics = {p.pair_id: _pair_semantics(generator, p) for p in pairs}

    def run_one(pair):
        try:
            return pair.pair_id, fuse(model, pair, semantics[pair.pair_id]), None
        except Exception as e:
            return pair.pair_id, None, str(e)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(run_one, pairs))
    else:
        outputs = [run_one(pair) for pair in pairs]
    written = 0
    failures = [(pid, err) for pid, _, err in outputs if err is not None]
    for pair_id, image, err in outputs:
        if err is None:
            save_image(image, out_dir / f"{pair_id}.png")
            written += 1
    if failures:
        for pair_id, err in failures:
            print(f"fuse failed for {pair_id}: {err}", file=sys.stderr)
        return RUNTIME_EXIT
    print(f"fused {written} pairs -> {out_dir}")
    return 0


def cmd_train(args) -> int:
    config = _load(args)
    pairs = load_pairs(args.dataset)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    generator = _semantics(config, args.dataset, pairs, out_dir / "cache")
    semantics = {p.pair_id: _pair_semantics(generator, p) for p in pairs}
    result = train(config.train_config(), pairs, semantics, out_dir,
                   resume_from=args.resume)
    print(f"trained {result.steps} steps, final loss {result.final_loss:.6f}; "
          f"checkpoint {result.checkpoint_path}")
    return 0


def cmd_mask(args) -> int:
    config = _load(args)
    pairs = load_pairs(args.dataset)
    out_dir = Path(args.out)
    masks_dir = out_dir / "masks"
    preview_dir = out_dir / "previews"
    masks_dir.mkdir(parents=True, exist_ok=True)
    preview_dir.mkdir(parents=True, exist_ok=True)
    generator = _semantics(config, args.dataset, pairs, out_dir / "cache")
    for pair in pairs:
        mask = pair.mask or generator.mask_for_pair(pair.i_vis, pair.i_ir, pair.pair_id)
        write_mask(masks_dir / f"{pair.pair_id}.mask", mask.m)
        save_image(mask.m[None], preview_dir / f"{pair.pair_id}.png")
    print(f"wrote {len(pairs)} masks -> {masks_dir}")
    return 0


def cmd_eval(args) -> int:
    if args.vis and args.ir:
        vis_dir, ir_dir = args.vis, args.ir
    elif args.dataset:
        vis_dir = Path(args.dataset) / "vis"
        ir_dir = Path(args.dataset) / "ir"
    else:
        print("eval: provide --in DATASET or both --vis and --ir", file=sys.stderr)
        return USAGE_EXIT
    report = evaluate_dataset(args.fused, vis_dir, ir_dir)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.to_csv(out_dir / "report.csv")
    (out_dir / "report.txt").write_text(report.to_text(), encoding="utf-8")
    if args.per_source:
        report.per_source_csv(out_dir / "report_per_source.csv")
    sys.stdout.write(report.to_text())
    return 0


ABLATION_ORDER = (("no-mgca", "(a) w/o MGCA"), ("no-tivr", "(b) w/o TIVR"),
                  ("no-gaf", "(c) w/o GAF"), ("full", "(d) full"))


def cmd_ablate(args) -> int:
    from dataclasses import replace

    config = _load(args)
    pairs = load_pairs(args.dataset)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    generator = _semantics(config, args.dataset, pairs, out_dir / "cache")
    semantics = {p.pair_id: _pair_semantics(generator, p) for p in pairs}

    rows = []
    for variant, label in ABLATION_ORDER:
        variant_dir = out_dir / variant
        variant_dir.mkdir(exist_ok=True)
        train_cfg = replace(config.train_config(), variant=variant)
        result = train(train_cfg, pairs, semantics, variant_dir)
        model = load_model(result.checkpoint_path, config.model_config())
        fused_dir = variant_dir / "fused"
        fused_dir.mkdir(exist_ok=True)
        for pair in pairs:
            save_image(fuse(model, pair, semantics[pair.pair_id]),
                       fused_dir / f"{pair.pair_id}.png")
        report = evaluate_dataset(fused_dir, Path(args.dataset) / "vis",
                                  Path(args.dataset) / "ir")
        means = report.means
        rows.append((label, means))
        report.to_csv(variant_dir / "report.csv")

    header = f"{'setting':<16}" + "".join(f"{c:>10}" for c in ("EN", "SD", "SCD", "VIF", "QABF"))
    lines = [header]
    for label, means in rows:
        lines.append(f"{label:<16}" + "".join(f"{means[c]:>10.3f}"
                                              for c in ("EN", "SD", "SCD", "VIF", "QABF")))
    table = "\n".join(lines) + "\n"
    (out_dir / "ablation.txt").write_text(table, encoding="utf-8")
    with open(out_dir / "ablation.csv", "w", encoding="utf-8") as f:
        f.write("setting,EN,SD,SCD,VIF,QABF\n")
        for label, means in rows:
            f.write(label + "," + ",".join(f"{means[c]:.6f}"
                                           for c in ("EN", "SD", "SCD", "VIF", "QABF")) + "\n")
    sys.stdout.write(table)
    return 0


def cmd_synth(args) -> int:
    generate_dataset(args.out, args.pairs, (args.size, args.size), seed=args.seed)
    print(f"wrote {args.pairs} synthetic pairs -> {args.out}")
    return 0


def cmd_init_config(args) -> int:
    text = default_config_text()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {
    "fuse": cmd_fuse,
    "train": cmd_train,
    "mask": cmd_mask,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "synth": cmd_synth,
    "init-config": cmd_init_config,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DatasetError) as e:
        print(f"ivfuse {args.command}: {e}", file=sys.stderr)
        return USAGE_EXIT
    except TrainingDiverged as e:
        print(f"ivfuse {args.command}: {e}", file=sys.stderr)
        return RUNTIME_EXIT
    except Exception as e:
        print(f"ivfuse {args.command}: {e}", file=sys.stderr)
        traceback.print_exc()
        return RUNTIME_EXIT


if __name__ == "__main__":
    raise SystemExit(main())
