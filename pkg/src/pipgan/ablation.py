"""Eight-method ablation harness over one dataset.

Each method trains its own stage(s) under a loss-weight configuration, expands
every test subject's neutral image into the non-neutral attribute grid, and is
scored against the dataset's ground-truth images. The "Pix2pix" row stands in
for a single model handling both attributes at once: one stage conditioned on
joint (pose, expression) classes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import torch

from .datamodel import (
    AttributeSchema,
    ConditionVector,
    SampleRecord,
    load_image,
    pair_for_stage,
    save_image,
    split_subjects,
)
from .evaluation import AblationTable, MetricsReport, ablation_report, evaluate_pairs
from .losses import LossWeights
from .networks import image_to_tensor, tensor_to_image
from .pipeline import PipelineModel, contact_sheet
from .training import TrainConfig, train_stage

log = logging.getLogger(__name__)

# Table row label -> (pipeline order or "single", cascade on, gradient penalty on,
# parallel classification on)
METHODS = (
    ("Ours", "PE", True, True, True),
    ("PE + Cascade +GP", "PE", True, True, False),
    ("PE + Cascade", "PE", True, False, False),
    ("PE + GP", "PE", False, True, False),
    ("PE", "PE", False, False, False),
    ("EP+GP", "EP", False, True, False),
    ("EP", "EP", False, False, False),
    ("Pix2pix", "single", False, False, False),
)


@dataclass
class AblationSettings:
    """Shared desk-scale hyperparameters for every ablation run."""

    image_size: int = 16
    base_width: int = 8
    batch_size: int = 8
    max_steps: int = 40
    seed: int = 0
    split_ratio: float = 0.8
    learning_rate: float = 2e-4


def _method_weights(cascade: bool, gp: bool, pc: bool) -> LossWeights:
    return LossWeights(
        xi1=1.0,
        xi2=1.0 if cascade else 0.0,
        xi3=1.0 if gp else 0.0,
        xi4=10.0 if pc else 0.0,
        xi5=50.0,
    )


def _stage_config(stage, schema, weights, settings) -> TrainConfig:
    return TrainConfig(
        stage=stage,
        schema=schema,
        image_size=settings.image_size,
        base_width=settings.base_width,
        batch_size=settings.batch_size,
        max_steps=settings.max_steps,
        seed=settings.seed,
        weights=weights,
        learning_rate=settings.learning_rate,
        eval_every=max(1, settings.max_steps),
    )


def _neutral_rows(rows, pose_schema, expr_schema):
    found = {}
    for r in rows:
        if r.pose == pose_schema.neutral_index and r.expression == expr_schema.neutral_index:
            found[r.subject_id] = r
    return found


def _grid_index(rows):
    return {(r.subject_id, r.pose, r.expression): r for r in rows}


def _joint_records(rows, pose_schema, expr_schema, pose_targets, expr_targets,
                   root, image_size):
    """Neutral image -> every grid combination, conditioned on joint classes."""
    neutral = _neutral_rows(rows, pose_schema, expr_schema)
    index = _grid_index(rows)
    k_joint = len(pose_targets) * len(expr_targets)
    records = []
    for sid, src in sorted(neutral.items()):
        src_img = load_image(Path(root) / src.path, image_size)
        for pi, p in enumerate(pose_targets):
            for ei, e in enumerate(expr_targets):
                row = index.get((sid, p, e))
                if row is None:
                    log.warning("subject %s missing grid target (%d, %d); pair skipped",
                                sid, p, e)
                    continue
                records.append(SampleRecord(
                    input_image=src_img,
                    target_image=load_image(Path(root) / row.path, image_size),
                    condition=ConditionVector(k=pi * len(expr_targets) + ei, dim=k_joint),
                    subject_id=sid,
                ))
    return records


def _export_targets(rows, subjects, pose_schema, expr_schema, pose_targets, expr_targets,
                    root, image_size, out_dir) -> list[str]:
    """Resize ground-truth grid images into out_dir; returns the pair id list."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = _grid_index(rows)
    ids = []
    for sid in sorted(subjects):
        for p in pose_targets:
            for e in expr_targets:
                row = index.get((sid, p, e))
                if row is None:
                    continue
                name = f"{sid}_{pose_schema.categories[p]}_{expr_schema.categories[e]}.png"
                save_image(load_image(Path(root) / row.path, image_size), out_dir / name)
                ids.append(name)
    return ids


def run_method(name, order, weights, train_rows, test_rows, pose_schema, expr_schema,
               pose_targets, expr_targets, root, settings, out_dir) -> MetricsReport:
    """Train one method configuration end to end and score its generations."""
    out_dir = Path(out_dir)
    gen_dir = out_dir / "generated"
    gen_dir.mkdir(parents=True, exist_ok=True)
    size = settings.image_size
    neutral_test = _neutral_rows(test_rows, pose_schema, expr_schema)

    if order == "single":
        records = _joint_records(train_rows, pose_schema, expr_schema,
                                 pose_targets, expr_targets, root, size)
        joint_schema = AttributeSchema(
            "joint", tuple(f"j{p}_{e}" for p in pose_targets for e in expr_targets), 0)
        cfg = _stage_config("joint", joint_schema, weights, settings)
        ckpt = train_stage(cfg, records, out_dir=out_dir / "stage_joint")
        gen = ckpt.state.generator.eval()
        for sid, src in sorted(neutral_test.items()):
            x = image_to_tensor(load_image(Path(root) / src.path, size))
            for pi, p in enumerate(pose_targets):
                for ei, e in enumerate(expr_targets):
                    with torch.no_grad():
                        out = gen.generate(x, pi * len(expr_targets) + ei)
                    name = f"{sid}_{pose_schema.categories[p]}_{expr_schema.categories[e]}.png"
                    save_image(tensor_to_image(out), gen_dir / name)
    else:
        pose_fixed = {"expression": expr_schema.categories[expr_schema.neutral_index]}
        expr_fixed = {"pose": pose_schema.categories[pose_schema.neutral_index]}
        if order == "PE":
            pose_records = pair_for_stage(train_rows, "pose", pose_schema, expr_schema,
                                          root=root, image_size=size, fixed=pose_fixed)
            expr_records = pair_for_stage(train_rows, "expression", pose_schema, expr_schema,
                                          root=root, image_size=size, fixed=None)
        else:
            expr_records = pair_for_stage(train_rows, "expression", pose_schema, expr_schema,
                                          root=root, image_size=size, fixed=expr_fixed)
            pose_records = pair_for_stage(train_rows, "pose", pose_schema, expr_schema,
                                          root=root, image_size=size, fixed=None)
        pose_ckpt = train_stage(_stage_config("pose", pose_schema, weights, settings),
                                pose_records, out_dir=out_dir / "stage_pose")
        expr_ckpt = train_stage(_stage_config("expression", expr_schema, weights, settings),
                                expr_records, out_dir=out_dir / "stage_expression")
        model = PipelineModel(
            pose_generator=pose_ckpt.state.generator,
            pose_schema=pose_schema,
            expr_generator=expr_ckpt.state.generator,
            expr_schema=expr_schema,
            order=order,
        )
        for sid, src in sorted(neutral_test.items()):
            image = load_image(Path(root) / src.path, size)
            result = model.expand(image, pose_targets, expr_targets)
            for (p, e), img in result.outputs.items():
                name = f"{sid}_{pose_schema.categories[p]}_{expr_schema.categories[e]}.png"
                save_image(img, gen_dir / name)
            save_image(contact_sheet(result, pose_targets, expr_targets),
                       gen_dir / f"{sid}_sheet.png")

    ids = _export_targets(test_rows, neutral_test, pose_schema, expr_schema,
                          pose_targets, expr_targets, root, size, out_dir / "targets")
    report = evaluate_pairs(gen_dir, out_dir / "targets", ids)
    report.write_csv(out_dir / "metrics.csv")
    return report


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name.lower()).strip("_")


def run_ablation(rows, pose_schema, expr_schema, root, out_dir,
                 settings: AblationSettings | None = None,
                 pose_targets=None, expr_targets=None,
                 methods=METHODS) -> AblationTable:
    """Run every method configuration and render the comparison table."""
    settings = settings or AblationSettings()
    out_dir = Path(out_dir)
    train_rows, test_rows = split_subjects(rows, settings.split_ratio, settings.seed)
    pose_targets = list(pose_targets) if pose_targets else pose_schema.non_neutral()
    expr_targets = list(expr_targets) if expr_targets else expr_schema.non_neutral()

    entries = []
    for name, order, cascade, gp, pc in methods:
        log.info("ablation method %s (order=%s)", name, order)
        report = run_method(
            name, order, _method_weights(cascade, gp, pc),
            train_rows, test_rows, pose_schema, expr_schema,
            pose_targets, expr_targets, root, settings, out_dir / _slug(name),
        )
        entries.append((name, report))
    table = ablation_report(entries)
    table.write(out_dir)
    return table
