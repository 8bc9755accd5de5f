"""Deterministic synthetic glyph-face dataset for desk-scale verification.

Each subject is a colored elliptical glyph on a dark background. The pose
index moves the glyph horizontally (a fixed per-step x offset) and shears
it; the expression index bends the mouth arc from frown to smile. All
randomness comes from the spec seed, so regeneration is byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import AttributeSchema, ManifestRow, save_image, write_manifest

BACKGROUND = 0.08
POSE_STEP_FRACTION = 1.0 / 16.0  # horizontal glyph shift per pose index, in image widths
SHEAR_STEP = 0.12


@dataclass(frozen=True)
class SynthSpec:
    """Size and seed parameters of one synthetic dataset."""

    n_subjects: int
    k_pose: int
    k_expr: int
    image_size: int
    seed: int = 0

    def __post_init__(self):
        size = self.image_size
        if size < 16 or (size & (size - 1)) != 0:
            raise ValueError(f"image_size must be a power of two >= 16, got {size}")
        if self.n_subjects < 2 or self.k_pose < 2 or self.k_expr < 2:
            raise ValueError("n_subjects, k_pose and k_expr must each be >= 2")


def synth_schemas(k_pose: int, k_expr: int) -> tuple[AttributeSchema, AttributeSchema]:
    """Attribute schemas used by synthetic datasets (neutral = middle category)."""
    pose = AttributeSchema("pose", tuple(f"pose{i}" for i in range(k_pose)), k_pose // 2)
    expr = AttributeSchema("expression", tuple(f"expr{i}" for i in range(k_expr)), k_expr // 2)
    return pose, expr


def _subject_params(rng: np.random.Generator) -> dict:
    hue = rng.uniform(0.0, 1.0)
    # simple hue wheel; keeps faces saturated and distinct from the dark background
    base = np.array([
        0.5 + 0.45 * np.cos(2 * np.pi * (hue + shift))
        for shift in (0.0, 1.0 / 3.0, 2.0 / 3.0)
    ])
    return {
        "color": np.clip(base, 0.15, 1.0),
        "rx": rng.uniform(0.22, 0.27),
        "ry": rng.uniform(0.26, 0.31),
        "eye_dx": rng.uniform(0.34, 0.46),
        "eye_r": rng.uniform(0.055, 0.075),
        "mouth_w": rng.uniform(0.40, 0.55),
    }


def _soft_mask(signed: np.ndarray, softness: float) -> np.ndarray:
    """Map a signed inside-distance to [0, 1] coverage with ~1px anti-aliasing."""
    return np.clip(0.5 - signed / softness, 0.0, 1.0)


def render_glyph(spec: SynthSpec, params: dict, pose: int, expr: int) -> np.ndarray:
    """Render one subject at one (pose, expression) as float HxWx3 in [0, 1]."""
    size = spec.image_size
    neutral_p = spec.k_pose // 2
    neutral_e = spec.k_expr // 2

    offset = (pose - neutral_p) * size * POSE_STEP_FRACTION
    shear = (pose - neutral_p) * SHEAR_STEP
    span = max(neutral_e, spec.k_expr - 1 - neutral_e)
    curvature = (expr - neutral_e) / span  # -1 (frown) .. +1 (smile)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    cx = size / 2.0 + offset
    cy = size / 2.0
    rx = params["rx"] * size
    ry = params["ry"] * size
    xs = xx - cx - shear * (yy - cy)  # sheared face coordinate

    img = np.full((size, size, 3), BACKGROUND, dtype=np.float64)

    face = _soft_mask((np.sqrt((xs / rx) ** 2 + ((yy - cy) / ry) ** 2) - 1.0) * min(rx, ry), 1.0)
    img = img * (1 - face[..., None]) + face[..., None] * params["color"]

    eye_y = cy - 0.35 * ry
    eye_r = params["eye_r"] * size
    for side in (-1.0, 1.0):
        ex = side * params["eye_dx"] * rx
        dist = np.sqrt((xs - ex) ** 2 + (yy - eye_y) ** 2)
        eye = _soft_mask(dist - eye_r, 1.0)
        img = img * (1 - eye[..., None]) + eye[..., None] * np.array([0.05, 0.05, 0.10])

    mouth_w = params["mouth_w"] * rx
    mouth_y = cy + 0.45 * ry
    bend = 0.35 * ry * curvature
    u = np.clip(xs / mouth_w, -1.0, 1.0)
    curve_y = mouth_y + bend * (u ** 2 - 0.5) * 2.0
    band = np.maximum(np.abs(yy - curve_y) - 0.9, np.abs(xs) - mouth_w)
    mouth = _soft_mask(band, 1.0)
    img = img * (1 - mouth[..., None]) + mouth[..., None] * np.array([0.35, 0.05, 0.08])

    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synth_generate(spec: SynthSpec, out_dir) -> Path:
    """Render the full subject x pose x expression grid and write its manifest."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    pose_schema, expr_schema = synth_schemas(spec.k_pose, spec.k_expr)

    rng = np.random.default_rng(spec.seed)
    rows: list[ManifestRow] = []
    for idx in range(spec.n_subjects):
        sid = f"s{idx:02d}"
        params = _subject_params(rng)
        for p in range(spec.k_pose):
            for e in range(spec.k_expr):
                rel = f"images/{sid}_{pose_schema.categories[p]}_{expr_schema.categories[e]}.png"
                save_image(render_glyph(spec, params, p, e), out_dir / rel)
                rows.append(ManifestRow(subject_id=sid, pose=p, expression=e, path=rel))

    manifest = out_dir / "manifest.csv"
    write_manifest(rows, manifest, pose_schema, expr_schema)
    return manifest
