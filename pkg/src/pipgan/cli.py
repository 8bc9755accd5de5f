"""Command-line entry point: synth-data, train, generate, evaluate, ablate.

Exit codes: 0 success, 1 runtime error, 2 usage error. Every command writes
its resolved configuration beside its outputs.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .ablation import AblationSettings, run_ablation
from .config import build_train_config, load_config, write_resolved_config
from .datamodel import infer_schemas, load_image, load_manifest, pair_for_stage, split_subjects
from .errors import PipganError
from .evaluation import evaluate_pairs
from .pipeline import PipelineConfig, compose, save_grid
from .synth import SynthSpec, synth_generate
from .training import train_stage

log = logging.getLogger("pipgan")


def _parse_targets(value: str, schema):
    """'4' means the first 4 non-neutral categories; 'a,b' or '0,2' are explicit."""
    value = value.strip()
    if "," in value:
        parts = [p for p in value.split(",") if p]
        return [int(p) if p.isdigit() else schema.index_of(p) for p in parts]
    if value.isdigit():
        count = int(value)
        pool = schema.non_neutral()
        if count > len(pool):
            raise ValueError(
                f"requested {count} {schema.name} targets but only {len(pool)} "
                f"non-neutral categories exist"
            )
        return pool[:count]
    return [schema.index_of(value)]


def cmd_synth_data(args) -> int:
    spec = SynthSpec(n_subjects=args.subjects, k_pose=args.poses, k_expr=args.exprs,
                     image_size=args.size, seed=args.seed)
    manifest = synth_generate(spec, args.out)
    write_resolved_config(args.out, {
        "command": "synth-data", "subjects": args.subjects, "poses": args.poses,
        "exprs": args.exprs, "size": args.size, "seed": args.seed,
    })
    print(f"wrote {spec.n_subjects * spec.k_pose * spec.k_expr} images, manifest {manifest}")
    return 0


def cmd_train(args) -> int:
    manifest = Path(args.data)
    pose_schema, expr_schema = infer_schemas(manifest, args.pose_neutral, args.expr_neutral)
    rows = load_manifest(manifest, pose_schema, expr_schema)
    schema = pose_schema if args.stage == "pose" else expr_schema

    flat = load_config(args.config) if args.config else {}
    overrides = {
        "seed": args.seed,
        "max_steps": args.max_steps,
        "batch_size": args.batch_size,
        "image_size": args.size,
        "base_width": args.base_width,
    }
    config = build_train_config(args.stage, schema, flat, overrides)

    train_rows, eval_rows = split_subjects(rows, args.ratio, config.seed)
    role = args.role or ("first" if args.stage == "pose" else "second")
    other = expr_schema if args.stage == "pose" else pose_schema
    fixed = {other.name: other.categories[other.neutral_index]} if role == "first" else None
    root = manifest.parent
    train_records = pair_for_stage(train_rows, args.stage, pose_schema, expr_schema,
                                   root=root, image_size=config.image_size, fixed=fixed)
    eval_records = pair_for_stage(eval_rows, args.stage, pose_schema, expr_schema,
                                  root=root, image_size=config.image_size, fixed=fixed)

    def progress(state, snapshot):
        log.info("step %d: eval L1 %.4f, PSNR %.2f dB",
                 snapshot["step"], snapshot["mean_l1"], snapshot["mean_psnr"])

    ckpt = train_stage(config, train_records, eval_records, out_dir=args.out,
                       progress=progress)
    write_resolved_config(args.out, {"command": "train", "stage": args.stage,
                                     "data": str(manifest), **config.to_dict()})
    print(f"trained {args.stage} stage for {ckpt.state.step} steps -> {ckpt.path}")
    return 0


def cmd_generate(args) -> int:
    config = PipelineConfig(order=args.order, stage1_checkpoint=args.stage1,
                            stage2_checkpoint=args.stage2)
    model = compose(config)
    pose_set = _parse_targets(args.poses, model.pose_schema)
    expr_set = _parse_targets(args.exprs, model.expr_schema)
    image = load_image(args.input, model.image_size)
    result = model.expand(image, pose_set, expr_set, keep_intermediates=True)
    subject = Path(args.input).stem
    written = save_grid(result, args.out, subject, model.pose_schema, model.expr_schema,
                        order=args.order)
    write_resolved_config(args.out, {
        "command": "generate", "order": args.order, "stage1": str(args.stage1),
        "stage2": str(args.stage2), "input": str(args.input),
        "pose_targets": pose_set, "expr_targets": expr_set, "seed": args.seed,
    })
    print(f"wrote {result.count} grid images ({len(written)} files) to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    manifest = None
    if args.pairs:
        manifest = [line.strip() for line in Path(args.pairs).read_text().splitlines()
                    if line.strip()]
    report = evaluate_pairs(args.generated, args.target, manifest)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(out)
    agg = report.aggregate
    print(f"n_pairs={report.n_pairs} psnr={agg['psnr_db']:.4f} "
          f"mse={agg['mse']:.5f} rmse={agg['rmse']:.4f}")
    return 0


def cmd_ablate(args) -> int:
    manifest = Path(args.data)
    pose_schema, expr_schema = infer_schemas(manifest, args.pose_neutral, args.expr_neutral)
    rows = load_manifest(manifest, pose_schema, expr_schema)
    flat = load_config(args.config) if args.config else {}
    base = build_train_config("pose", pose_schema, flat)
    settings = AblationSettings(
        image_size=args.size, base_width=args.base_width, batch_size=args.batch_size,
        max_steps=args.steps, seed=args.seed, split_ratio=args.ratio,
        learning_rate=base.learning_rate,
    )
    table = run_ablation(rows, pose_schema, expr_schema, manifest.parent, args.out,
                         settings=settings)
    write_resolved_config(args.out, {"command": "ablate", "data": str(manifest),
                                     "steps": args.steps, "size": args.size,
                                     "base_width": args.base_width, "seed": args.seed})
    print(table.text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pipgan", description=__doc__)
    parser.add_argument("--version", action="version", version=f"pipgan {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="render the synthetic glyph dataset")
    p.add_argument("--subjects", type=int, default=8)
    p.add_argument("--poses", type=int, default=5)
    p.add_argument("--exprs", type=int, default=7)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train one generator stage")
    p.add_argument("--stage", choices=("pose", "expression"), required=True)
    p.add_argument("--data", required=True, help="manifest CSV path")
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--base-width", type=int, default=None)
    p.add_argument("--ratio", type=float, default=0.8, help="train subject fraction")
    p.add_argument("--role", choices=("first", "second"), default=None,
                   help="pairing role; defaults: pose=first, expression=second")
    p.add_argument("--pose-neutral", default=None)
    p.add_argument("--expr-neutral", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="expand one neutral image to the attribute grid")
    p.add_argument("--order", choices=("PE", "EP"), default="PE")
    p.add_argument("--stage1", required=True, help="first-stage checkpoint")
    p.add_argument("--stage2", required=True, help="second-stage checkpoint")
    p.add_argument("--input", required=True, help="neutral input image")
    p.add_argument("--poses", default="4", help="count, or comma list of indices/names")
    p.add_argument("--exprs", default="6", help="count, or comma list of indices/names")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated images against targets")
    p.add_argument("--generated", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--pairs", default=None, help="file with one pair id per line")
    p.add_argument("--out", required=True, help="report CSV path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the 8-method comparison on one dataset")
    p.add_argument("--data", required=True, help="manifest CSV path")
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--base-width", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--pose-neutral", default=None)
    p.add_argument("--expr-neutral", default=None)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PipganError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
