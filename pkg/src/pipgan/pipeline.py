"""Composition of two trained stages and batch expansion to an attribute grid.

Order PE runs the pose stage first and feeds its outputs to the expression
stage; EP is the reverse. Outputs are always tagged (pose index, expression
index) regardless of order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .datamodel import AttributeSchema, save_image
from .errors import SchemaMismatchError, SizeMismatchError, UnknownCategoryError
from .networks import CodedGenerator, image_to_tensor, tensor_to_image
from .training import load_checkpoint

ORDERS = ("PE", "EP")


@dataclass(frozen=True)
class PipelineConfig:
    """Checkpoint paths plus target category lists for a two-stage run."""

    order: str
    stage1_checkpoint: str
    stage2_checkpoint: str
    pose_targets: tuple = ()
    expr_targets: tuple = ()

    def __post_init__(self):
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}, got {self.order!r}")


@dataclass
class ExpandResult:
    """Grid outputs keyed (pose index, expression index), plus stage-1 intermediates."""

    outputs: dict = field(default_factory=dict)
    intermediates: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.outputs)


class PipelineModel:
    """Immutable two-stage conditional generator; expand() is safe to call repeatedly."""

    def __init__(self, pose_generator: CodedGenerator, pose_schema: AttributeSchema,
                 expr_generator: CodedGenerator, expr_schema: AttributeSchema,
                 order: str = "PE"):
        if order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}, got {order!r}")
        if pose_generator.image_size != expr_generator.image_size:
            raise SizeMismatchError(
                f"stage image sizes differ: pose {pose_generator.image_size}px vs "
                f"expression {expr_generator.image_size}px"
            )
        for gen, schema, name in ((pose_generator, pose_schema, "pose"),
                                  (expr_generator, expr_schema, "expression")):
            if gen.num_classes != schema.size:
                raise SchemaMismatchError(
                    f"{name} generator has {gen.num_classes} classes but schema "
                    f"has {schema.size}"
                )
        self.pose_generator = pose_generator.eval()
        self.pose_schema = pose_schema
        self.expr_generator = expr_generator.eval()
        self.expr_schema = expr_schema
        self.order = order
        self.image_size = pose_generator.image_size

    def _check_targets(self, pose_set, expr_set):
        if not pose_set or not expr_set:
            raise ValueError("target sets must be nonempty")
        for k in pose_set:
            if not 0 <= k < self.pose_schema.size:
                raise UnknownCategoryError(f"pose index {k} out of range")
        for k in expr_set:
            if not 0 <= k < self.expr_schema.size:
                raise UnknownCategoryError(f"expression index {k} out of range")

    def expand(self, neutral_image, pose_set, expr_set, rng=None,
               keep_intermediates: bool = False) -> ExpandResult:
        """Map one neutral image through every (pose, expression) combination."""
        pose_set = list(pose_set)
        expr_set = list(expr_set)
        self._check_targets(pose_set, expr_set)
        x = image_to_tensor(neutral_image)
        if x.shape[2] != self.image_size:
            raise ValueError(
                f"input image is {x.shape[2]}px, pipeline expects {self.image_size}px"
            )
        result = ExpandResult()
        with torch.no_grad():
            if self.order == "PE":
                for p in pose_set:
                    mid = self.pose_generator.generate(x, p, rng=rng).clamp(0.0, 1.0)
                    if keep_intermediates:
                        result.intermediates[p] = tensor_to_image(mid)
                    for e in expr_set:
                        out = self.expr_generator.generate(mid, e, rng=rng)
                        result.outputs[(p, e)] = tensor_to_image(out)
            else:
                for e in expr_set:
                    mid = self.expr_generator.generate(x, e, rng=rng).clamp(0.0, 1.0)
                    if keep_intermediates:
                        result.intermediates[e] = tensor_to_image(mid)
                    for p in pose_set:
                        out = self.pose_generator.generate(mid, p, rng=rng)
                        result.outputs[(p, e)] = tensor_to_image(out)
        return result


def compose(config: PipelineConfig) -> PipelineModel:
    """Load both stage checkpoints and wire them in the configured order."""
    state1 = load_checkpoint(config.stage1_checkpoint)
    state2 = load_checkpoint(config.stage2_checkpoint)
    stages = {state1.config.stage: state1, state2.config.stage: state2}
    expected = {"pose", "expression"}
    if set(stages) != expected:
        raise SchemaMismatchError(
            f"pipeline needs one pose and one expression checkpoint, got stages "
            f"{sorted((state1.config.stage, state2.config.stage))}"
        )
    first = "pose" if config.order == "PE" else "expression"
    if state1.config.stage != first:
        raise SchemaMismatchError(
            f"order {config.order} expects the {first} checkpoint first, got "
            f"{state1.config.stage!r}"
        )
    model = PipelineModel(
        pose_generator=stages["pose"].generator,
        pose_schema=stages["pose"].config.schema,
        expr_generator=stages["expression"].generator,
        expr_schema=stages["expression"].config.schema,
        order=config.order,
    )
    if config.pose_targets or config.expr_targets:
        model._check_targets(list(config.pose_targets) or [model.pose_schema.neutral_index],
                             list(config.expr_targets) or [model.expr_schema.neutral_index])
    return model


def contact_sheet(result: ExpandResult, pose_set, expr_set) -> np.ndarray:
    """Tile grid outputs into one image: rows are poses, columns expressions."""
    sample = next(iter(result.outputs.values()))
    h, w, c = sample.shape
    sheet = np.zeros((h * len(pose_set), w * len(expr_set), c), dtype=np.float32)
    for i, p in enumerate(pose_set):
        for j, e in enumerate(expr_set):
            sheet[i * h:(i + 1) * h, j * w:(j + 1) * w] = result.outputs[(p, e)]
    return sheet


def save_grid(result: ExpandResult, out_dir, subject: str,
              pose_schema: AttributeSchema, expr_schema: AttributeSchema,
              order: str = "PE") -> list[Path]:
    """Write one PNG per grid cell, any intermediates, and the contact sheet."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    pose_set = sorted({p for p, _ in result.outputs})
    expr_set = sorted({e for _, e in result.outputs})
    for (p, e), img in sorted(result.outputs.items()):
        path = out_dir / f"{subject}_{pose_schema.categories[p]}_{expr_schema.categories[e]}.png"
        save_image(img, path)
        written.append(path)
    grid_names = {p.name for p in written}
    for key, img in sorted(result.intermediates.items()):
        if order == "PE":
            name = f"{subject}_{pose_schema.categories[key]}_{expr_schema.categories[expr_schema.neutral_index]}.png"
        else:
            name = f"{subject}_{pose_schema.categories[pose_schema.neutral_index]}_{expr_schema.categories[key]}.png"
        if name in grid_names:
            continue  # the grid already wrote this (pose, expression) cell
        path = out_dir / name
        save_image(img, path)
        written.append(path)
    sheet_path = out_dir / f"{subject}_sheet.png"
    save_image(contact_sheet(result, pose_set, expr_set), sheet_path)
    written.append(sheet_path)
    return written
