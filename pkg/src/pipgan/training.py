"""Per-stage adversarial training loop, optimization, and checkpointing.

One train step runs, in order: a discriminator update (adversarial loss plus
weighted gradient penalty), a generator classification pass on the real
labeled images, a generator generation pass (adversarial + cascade + L1),
and a single generator optimizer step after both passes have accumulated
gradients.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses
from .datamodel import AttributeSchema
from .errors import CheckpointError, NonFiniteLossError, SchemaMismatchError
from .evaluation import image_metrics
from .losses import LossParts, LossWeights
from .networks import CascadeFeatures, CodedGenerator, PatchDiscriminator

CHECKPOINT_FORMAT_VERSION = 1
LOG_HEADER = ["step", "loss_adv_d", "loss_adv_g", "loss_pc", "loss_cascade",
              "loss_gp", "loss_l1", "total"]


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters and stage descriptor for one generator stage."""

    stage: str
    schema: AttributeSchema
    image_size: int = 64
    in_channels: int = 3
    base_width: int = 64
    disc_base_width: int | None = None
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 8
    max_steps: int = 2000
    d_steps_per_g_step: int = 1
    seed: int = 0
    noise_mode: str = "off"
    weights: LossWeights = field(default_factory=LossWeights)
    lambda_mode: str | tuple = "uniform"
    g_adv_mode: str = "non_saturating"
    gp_in_generator: bool = False
    cascade_weights_path: str | None = None
    cascade_seed: int = 0
    eval_every: int = 200

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.d_steps_per_g_step < 1:
            raise ValueError("d_steps_per_g_step must be >= 1")

    def to_dict(self) -> dict:
        d = {
            "stage": self.stage,
            "schema": self.schema.to_dict(),
            "image_size": self.image_size,
            "in_channels": self.in_channels,
            "base_width": self.base_width,
            "disc_base_width": self.disc_base_width,
            "learning_rate": self.learning_rate,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "batch_size": self.batch_size,
            "max_steps": self.max_steps,
            "d_steps_per_g_step": self.d_steps_per_g_step,
            "seed": self.seed,
            "noise_mode": self.noise_mode,
            "weights": list(self.weights.as_tuple()),
            "lambda_mode": (list(self.lambda_mode)
                            if isinstance(self.lambda_mode, (list, tuple)) else self.lambda_mode),
            "g_adv_mode": self.g_adv_mode,
            "gp_in_generator": self.gp_in_generator,
            "cascade_weights_path": self.cascade_weights_path,
            "cascade_seed": self.cascade_seed,
            "eval_every": self.eval_every,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["schema"] = AttributeSchema.from_dict(d["schema"])
        d["weights"] = LossWeights(*d["weights"])
        if isinstance(d["lambda_mode"], list):
            d["lambda_mode"] = tuple(d["lambda_mode"])
        return cls(**d)


@dataclass
class StepLosses:
    step: int
    adv_d: float
    adv_g: float
    pc: float
    cascade: float
    gp: float
    l1: float
    total: float

    def as_row(self):
        return [self.step, self.adv_d, self.adv_g, self.pc, self.cascade,
                self.gp, self.l1, self.total]


@dataclass
class TrainState:
    """Everything the training loop mutates: parameters, moments, counters, RNG."""

    config: TrainConfig
    generator: CodedGenerator
    discriminator: PatchDiscriminator
    cascade: CascadeFeatures
    g_opt: torch.optim.Adam
    d_opt: torch.optim.Adam
    rng: torch.Generator
    sampler: random.Random
    step: int = 0
    loss_log: list = field(default_factory=list)
    metric_history: list = field(default_factory=list)


def build_state(config: TrainConfig) -> TrainState:
    """Seeded construction of both networks, the frozen cascade, and optimizers."""
    losses.ensure_double_backward()
    torch.manual_seed(config.seed)
    gen = CodedGenerator(
        image_size=config.image_size,
        num_classes=config.schema.size,
        in_channels=config.in_channels,
        base_width=config.base_width,
        noise_mode=config.noise_mode,
    )
    disc = PatchDiscriminator(
        image_size=config.image_size,
        in_channels=config.in_channels,
        base_width=config.disc_base_width or config.base_width,
    )
    cascade = CascadeFeatures(weights_path=config.cascade_weights_path, seed=config.cascade_seed)
    betas = (config.adam_beta1, config.adam_beta2)
    g_opt = torch.optim.Adam(gen.parameters(), lr=config.learning_rate, betas=betas)
    d_opt = torch.optim.Adam(disc.parameters(), lr=config.learning_rate, betas=betas)
    rng = torch.Generator().manual_seed(config.seed + 1)
    sampler = random.Random(config.seed + 2)
    return TrainState(config=config, generator=gen, discriminator=disc, cascade=cascade,
                      g_opt=g_opt, d_opt=d_opt, rng=rng, sampler=sampler)


def collate(records) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack sample records into (inputs, targets, conditions, labels) tensors."""
    if not records:
        raise ValueError("batch must be nonempty")
    dims = {r.condition.dim for r in records}
    if len(dims) != 1:
        raise ValueError(f"records mix condition dimensions: {sorted(dims)}")
    x = torch.from_numpy(np.stack([r.input_image.transpose(2, 0, 1) for r in records]))
    y = torch.from_numpy(np.stack([r.target_image.transpose(2, 0, 1) for r in records]))
    c = torch.from_numpy(np.stack([r.condition.encoding for r in records]))
    labels = torch.tensor([r.condition.k for r in records], dtype=torch.long)
    return x, y, c, labels


def _check_finite(value, term: str, step: int) -> float:
    if isinstance(value, torch.Tensor):
        value = float(value.detach())
    if not math.isfinite(value):
        raise NonFiniteLossError(term, step, value)
    return value


def train_step(state: TrainState, batch) -> TrainState:
    """One alternating update; see the module docstring for the phase order."""
    cfg = state.config
    xi = cfg.weights
    x, y, c, labels = collate(batch)
    gen, disc = state.generator, state.discriminator
    gen.train()
    disc.train()
    step = state.step

    # phase 1: discriminator update(s); generator output detached
    gp_value = 0.0
    adv_d_value = 0.0
    for _ in range(cfg.d_steps_per_g_step):
        with torch.no_grad():
            fake = gen.generate(x, c, rng=state.rng)
        d_loss = losses.adversarial_d_loss(disc(x, y), disc(x, fake))
        adv_d_value = _check_finite(d_loss, "adversarial_d", step)
        if xi.xi3 > 0:
            gp = losses.gradient_penalty(disc, x, y, fake, rng=state.rng)
            gp_value = _check_finite(gp, "gradient_penalty", step)
            d_loss = d_loss + xi.xi3 * gp
        state.d_opt.zero_grad()
        d_loss.backward()
        state.d_opt.step()

    # phase 2: classification pass on the real labeled images (targets carry
    # the condition class); gradients accumulate on encoder + class head only
    state.g_opt.zero_grad()
    enc_real = gen.encode(y)
    pc = losses.classification_loss(gen.classify_code(enc_real.y_c1), labels)
    pc_value = _check_finite(pc, "classification", step)
    if xi.xi4 > 0:
        (xi.xi4 * pc).backward()

    # phase 3: generation pass
    enc = gen.encode(x)
    y_c2 = gen.inject_condition(enc.x_c1, c)
    fake = gen.decode(y_c2, enc.skips, rng=state.rng)
    adv_g = losses.adversarial_g_loss(disc(x, fake), mode=cfg.g_adv_mode)
    cas = losses.cascade_loss(state.cascade, y, fake, lambdas=cfg.lambda_mode)
    l1 = losses.l1_loss(y, fake)
    adv_g_value = _check_finite(adv_g, "adversarial_g", step)
    cas_value = _check_finite(cas, "cascade", step)
    l1_value = _check_finite(l1, "l1", step)
    g_loss = xi.xi1 * adv_g + xi.xi2 * cas + xi.xi5 * l1
    if cfg.gp_in_generator and xi.xi3 > 0:
        # literal total-loss coupling: penalty gradients reach the generator
        gp_g = losses.gradient_penalty(disc, x, y, fake, rng=state.rng, attach_fake=True)
        gp_value = _check_finite(gp_g, "gradient_penalty", step)
        g_loss = g_loss + xi.xi3 * gp_g
    g_loss.backward()

    # phase 4: single generator step after both passes
    state.g_opt.step()

    total = (xi.xi1 * adv_g_value + xi.xi2 * cas_value + xi.xi3 * gp_value
             + xi.xi4 * pc_value + xi.xi5 * l1_value)
    state.loss_log.append(StepLosses(step=step + 1, adv_d=adv_d_value, adv_g=adv_g_value,
                                     pc=pc_value, cascade=cas_value, gp=gp_value,
                                     l1=l1_value, total=total))
    state.step += 1
    return state


def generator_total(parts: LossParts, weights: LossWeights):
    """Weighted generator objective; exposed for diagnostics and tests."""
    return losses.total_generator_loss(parts, weights)


def _batches(n: int, batch_size: int, rng: random.Random):
    """Endless subject-shuffled index batches; partial tail batches are dropped."""
    size = min(batch_size, n)
    while True:
        idx = list(range(n))
        rng.shuffle(idx)
        for start in range(0, n - size + 1, size):
            yield idx[start:start + size]


def evaluate_records(state: TrainState, records, max_records: int | None = None) -> dict:
    """Mean L1 and PSNR of conditional generations against record targets."""
    gen = state.generator
    was_training = gen.training
    noise_mode = gen.noise_mode
    gen.eval()
    gen.noise_mode = "off"
    eval_records = records[:max_records] if max_records else records
    l1s, psnrs = [], []
    with torch.no_grad():
        x, y, c, _ = collate(eval_records)
        out = gen.generate(x, c)
        for i in range(out.shape[0]):
            gen_img = out[i].numpy().transpose(1, 2, 0)
            tgt_img = y[i].numpy().transpose(1, 2, 0)
            psnr, mse, _ = image_metrics(gen_img, tgt_img)
            l1s.append(float(np.abs(gen_img - tgt_img).mean()))
            psnrs.append(psnr)
    gen.noise_mode = noise_mode
    gen.train(was_training)
    return {"mean_l1": float(np.mean(l1s)), "mean_psnr": float(np.mean(psnrs))}


@dataclass
class Checkpoint:
    """A saved or in-memory training state plus its sidecar metadata."""

    state: TrainState
    meta: dict
    path: Path | None = None


def write_log_csv(loss_log, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_HEADER)
    for entry in loss_log:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in entry.as_row()])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def train_stage(config: TrainConfig, train_records, eval_records=None,
                out_dir=None, progress=None) -> Checkpoint:
    """Run the full stage loop with periodic evaluation snapshots.

    Returns the final checkpoint; when ``out_dir`` is given, also writes the
    parameter archive, metadata sidecar, and append-style loss log there.
    """
    if not train_records:
        raise ValueError("training set is empty")
    state = build_state(config)
    batches = _batches(len(train_records), config.batch_size, state.sampler)
    eval_set = eval_records if eval_records else train_records
    for _ in range(config.max_steps):
        batch = [train_records[i] for i in next(batches)]
        train_step(state, batch)
        if state.step % config.eval_every == 0 or state.step == config.max_steps:
            snapshot = evaluate_records(state, eval_set)
            snapshot["step"] = state.step
            state.metric_history.append(snapshot)
            if progress is not None:
                progress(state, snapshot)
    meta = checkpoint_meta(state)
    ckpt = Checkpoint(state=state, meta=meta)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt.path = save_checkpoint(state, out_dir / "checkpoint.pt")
        write_log_csv(state.loss_log, out_dir / "train_log.csv")
    return ckpt


def checkpoint_meta(state: TrainState) -> dict:
    cfg = state.config.to_dict()
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "stage": state.config.stage,
        "schema": state.config.schema.to_dict(),
        "config": cfg,
        "config_hash": config_hash(cfg),
        "step": state.step,
        "metric_history": state.metric_history,
    }


def _meta_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def save_checkpoint(state: TrainState, path) -> Path:
    """Write the binary parameter archive and its human-readable sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "generator": state.generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "cascade": state.cascade.state_dict(),
        "g_opt": state.g_opt.state_dict(),
        "d_opt": state.d_opt.state_dict(),
        "step": state.step,
        "torch_rng": state.rng.get_state(),
        "sampler_rng": state.sampler.getstate(),
    }
    torch.save(payload, path)
    _meta_path(path).write_text(json.dumps(checkpoint_meta(state), indent=2), encoding="utf-8")
    return path


def load_checkpoint(path, schema: AttributeSchema | None = None) -> TrainState:
    """Rebuild a training state from an archive; optionally enforce a schema."""
    path = Path(path)
    meta_path = _meta_path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint archive not found: {path}")
    if not meta_path.is_file():
        raise CheckpointError(f"checkpoint metadata sidecar not found: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from exc
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {meta.get('format_version')!r}, "
            f"expected {CHECKPOINT_FORMAT_VERSION}"
        )
    config = TrainConfig.from_dict(meta["config"])
    if schema is not None and schema.to_dict() != config.schema.to_dict():
        raise SchemaMismatchError(
            f"checkpoint schema {config.schema.to_dict()} does not match "
            f"expected {schema.to_dict()}"
        )
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint archive {path}: {exc}") from exc
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError("archive/sidecar version mismatch")

    state = build_state(config)
    head = payload["generator"].get("pc_head.weight")
    if head is None or head.shape[0] != config.schema.size:
        raise SchemaMismatchError(
            f"archive class head has {None if head is None else head.shape[0]} outputs, "
            f"schema expects {config.schema.size}"
        )
    try:
        state.generator.load_state_dict(payload["generator"])
        state.discriminator.load_state_dict(payload["discriminator"])
        state.cascade.load_state_dict(payload["cascade"])
        state.g_opt.load_state_dict(payload["g_opt"])
        state.d_opt.load_state_dict(payload["d_opt"])
    except (KeyError, RuntimeError) as exc:
        raise CheckpointError(f"incomplete checkpoint archive: {exc}") from exc
    state.step = payload["step"]
    state.rng.set_state(payload["torch_rng"])
    state.sampler.setstate(payload["sampler_rng"])
    state.metric_history = meta.get("metric_history", [])
    return state
