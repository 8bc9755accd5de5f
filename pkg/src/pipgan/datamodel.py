"""Dataset schemas, manifests, stage-wise pairing, and subject splits.

The canonical ingestion format is a manifest CSV with the header
``subject_id,pose,expression,path`` where pose/expression are category
names from the corresponding :class:`AttributeSchema` and ``path`` is an
image file path relative to the manifest's directory.
"""

from __future__ import annotations

import csv
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    DuplicateRecordError,
    MissingImageError,
    MissingSourceError,
    UnknownCategoryError,
)

log = logging.getLogger(__name__)

MANIFEST_HEADER = ["subject_id", "pose", "expression", "path"]


@dataclass(frozen=True)
class AttributeSchema:
    """One controllable attribute: an ordered category list plus its neutral entry."""

    name: str
    categories: tuple[str, ...]
    neutral_index: int = 0

    def __post_init__(self):
        cats = tuple(self.categories)
        object.__setattr__(self, "categories", cats)
        if not cats:
            raise ValueError("categories must be non-empty")
        if len(set(cats)) != len(cats):
            raise ValueError(f"categories must be unique, got {cats}")
        if not 0 <= self.neutral_index < len(cats):
            raise ValueError(
                f"neutral_index {self.neutral_index} out of range for {len(cats)} categories"
            )

    @property
    def size(self) -> int:
        return len(self.categories)

    def index_of(self, name: str) -> int:
        try:
            return self.categories.index(name)
        except ValueError:
            raise UnknownCategoryError(
                f"unknown {self.name} category {name!r}; known: {self.categories}"
            ) from None

    def onehot(self, k: int) -> "ConditionVector":
        return ConditionVector(k=k, dim=self.size)

    def non_neutral(self) -> list[int]:
        return [k for k in range(self.size) if k != self.neutral_index]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "categories": list(self.categories),
            "neutral_index": self.neutral_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeSchema":
        return cls(name=d["name"], categories=tuple(d["categories"]), neutral_index=d["neutral_index"])


@dataclass(frozen=True)
class ConditionVector:
    """One-hot target-category encoding injected at the coded layer."""

    k: int
    dim: int

    def __post_init__(self):
        if not 0 <= self.k < self.dim:
            raise ValueError(f"category index {self.k} out of range for dim {self.dim}")

    @property
    def encoding(self) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float32)
        vec[self.k] = 1.0
        return vec


@dataclass(frozen=True)
class ManifestRow:
    """One dataset image: subject identity plus its pose/expression indices."""

    subject_id: str
    pose: int
    expression: int
    path: str


@dataclass
class SampleRecord:
    """One (input image, target image, condition) training pair for a stage."""

    input_image: np.ndarray
    target_image: np.ndarray
    condition: ConditionVector
    subject_id: str

    def __post_init__(self):
        if self.input_image.shape != self.target_image.shape:
            raise ValueError(
                f"input/target shape mismatch: {self.input_image.shape} vs {self.target_image.shape}"
            )
        for name, img in (("input", self.input_image), ("target", self.target_image)):
            if img.min() < 0.0 or img.max() > 1.0:
                raise ValueError(f"{name} image values outside [0, 1]")


def load_image(path, image_size: int | None = None) -> np.ndarray:
    """Decode an image to float32 HxWx3 in [0, 1], resizing and center-cropping to a square."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        if image_size is not None and im.size != (image_size, image_size):
            w, h = im.size
            scale = image_size / min(w, h)
            im = im.resize((max(image_size, round(w * scale)), max(image_size, round(h * scale))),
                           Image.BILINEAR)
            w, h = im.size
            left = (w - image_size) // 2
            top = (h - image_size) // 2
            im = im.crop((left, top, left + image_size, top + image_size))
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return arr


def save_image(image: np.ndarray, path) -> None:
    """Write a float [0, 1] HxWx3 array as an 8-bit PNG."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data).save(path, format="PNG")


def load_manifest(path, pose_schema: AttributeSchema, expr_schema: AttributeSchema) -> list[ManifestRow]:
    """Read and validate a manifest CSV, returning rows in file order."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    rows: list[ManifestRow] = []
    seen: set[tuple[str, int, int]] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != MANIFEST_HEADER:
            raise ValueError(
                f"manifest header must be {','.join(MANIFEST_HEADER)}, got {reader.fieldnames}"
            )
        for raw in reader:
            row = ManifestRow(
                subject_id=raw["subject_id"],
                pose=pose_schema.index_of(raw["pose"]),
                expression=expr_schema.index_of(raw["expression"]),
                path=raw["path"],
            )
            key = (row.subject_id, row.pose, row.expression)
            if key in seen:
                raise DuplicateRecordError(
                    f"duplicate manifest entry for subject={row.subject_id} "
                    f"pose={raw['pose']} expression={raw['expression']}"
                )
            seen.add(key)
            if not (path.parent / row.path).is_file():
                raise MissingImageError(f"image file missing: {path.parent / row.path}")
            rows.append(row)
    return rows


def infer_schemas(path, pose_neutral: str | None = None,
                  expr_neutral: str | None = None) -> tuple[AttributeSchema, AttributeSchema]:
    """Derive attribute schemas from a manifest's category names.

    Categories keep first-appearance order; the neutral entry defaults to the
    middle category unless named explicitly.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    poses: dict[str, None] = {}
    exprs: dict[str, None] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != MANIFEST_HEADER:
            raise ValueError(
                f"manifest header must be {','.join(MANIFEST_HEADER)}, got {reader.fieldnames}"
            )
        for raw in reader:
            poses.setdefault(raw["pose"])
            exprs.setdefault(raw["expression"])

    def build(name, cats, neutral_name):
        cats = tuple(cats)
        neutral = cats.index(neutral_name) if neutral_name else len(cats) // 2
        return AttributeSchema(name, cats, neutral)

    return build("pose", poses, pose_neutral), build("expression", exprs, expr_neutral)


def write_manifest(rows, path, pose_schema: AttributeSchema, expr_schema: AttributeSchema) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for row in rows:
            writer.writerow([
                row.subject_id,
                pose_schema.categories[row.pose],
                expr_schema.categories[row.expression],
                row.path,
            ])


@dataclass(frozen=True)
class StagePair:
    """A pairing of manifest rows before image loading: source -> target under category k."""

    source: ManifestRow
    target: ManifestRow
    condition_k: int


def stage_pairs(
    rows,
    stage: str,
    pose_schema: AttributeSchema,
    expr_schema: AttributeSchema,
    fixed: dict | None = None,
    include_identity: bool = False,
) -> list[StagePair]:
    """Pair manifest rows for one stage without touching image files.

    ``stage`` names the varying attribute ("pose" or "expression"). When
    ``fixed`` pins the other attribute to a category name, only matching rows
    participate and each subject contributes one source group. When ``fixed``
    is None the other attribute ranges freely: each (subject, other-category)
    group pairs its neutral-of-stage row against that group's remaining rows.
    """
    if stage == "pose":
        vary_schema, other_schema = pose_schema, expr_schema
        vary_of = lambda r: r.pose
        other_of = lambda r: r.expression
        other_name = "expression"
    elif stage == "expression":
        vary_schema, other_schema = expr_schema, pose_schema
        vary_of = lambda r: r.expression
        other_of = lambda r: r.pose
        other_name = "pose"
    else:
        raise ValueError(f"stage must be 'pose' or 'expression', got {stage!r}")

    if fixed:
        extra = set(fixed) - {other_name}
        if extra:
            raise ValueError(f"fixed constraints {extra} do not apply to stage {stage!r}")
        pinned = other_schema.index_of(fixed[other_name])
        rows = [r for r in rows if other_of(r) == pinned]

    groups: dict[tuple[str, int], dict[int, ManifestRow]] = {}
    for row in rows:
        groups.setdefault((row.subject_id, other_of(row)), {})[vary_of(row)] = row

    neutral = vary_schema.neutral_index
    missing_sources = {subj for (subj, _), members in groups.items() if neutral not in members}
    if missing_sources:
        raise MissingSourceError(missing_sources)

    pairs: list[StagePair] = []
    for (subj, _), members in sorted(groups.items()):
        source = members[neutral]
        for k in range(vary_schema.size):
            if k == neutral and not include_identity:
                continue
            if k not in members:
                log.warning("subject %s missing %s target %s; pair skipped",
                            subj, stage, vary_schema.categories[k])
                continue
            pairs.append(StagePair(source=source, target=members[k], condition_k=k))
    return pairs


def pair_for_stage(
    rows,
    stage: str,
    pose_schema: AttributeSchema,
    expr_schema: AttributeSchema,
    root,
    image_size: int,
    fixed: dict | None = None,
    include_identity: bool = False,
) -> list[SampleRecord]:
    """Load images for every stage pairing, emitting stage training records."""
    vary_schema = pose_schema if stage == "pose" else expr_schema
    pairs = stage_pairs(rows, stage, pose_schema, expr_schema,
                        fixed=fixed, include_identity=include_identity)
    root = Path(root)
    cache: dict[str, np.ndarray] = {}

    def cached(rel):
        if rel not in cache:
            cache[rel] = load_image(root / rel, image_size)
        return cache[rel]

    return [
        SampleRecord(
            input_image=cached(p.source.path),
            target_image=cached(p.target.path),
            condition=vary_schema.onehot(p.condition_k),
            subject_id=p.source.subject_id,
        )
        for p in pairs
    ]


def split_subjects(rows, ratio: float, seed: int):
    """Split manifest rows into subject-disjoint train/test partitions."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    subjects = sorted({r.subject_id for r in rows})
    if len(subjects) < 2:
        raise ValueError(f"need at least 2 subjects to split, got {len(subjects)}")
    rng = random.Random(seed)
    rng.shuffle(subjects)
    n_train = round(ratio * len(subjects))
    if n_train == 0 or n_train == len(subjects):
        raise ValueError(
            f"ratio {ratio} leaves an empty partition for {len(subjects)} subjects"
        )
    train_ids = set(subjects[:n_train])
    train = [r for r in rows if r.subject_id in train_ids]
    test = [r for r in rows if r.subject_id not in train_ids]
    return train, test
