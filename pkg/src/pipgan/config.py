"""Flat key=value run configuration: TOML parsing, key mapping, hashing.

Recognized keys (dotted or nested tables, both accepted):

    train.image_size        train.base_width       train.disc_base_width
    train.learning_rate     train.adam_beta1       train.adam_beta2
    train.batch_size        train.max_steps        train.d_steps_per_g_step
    train.seed              train.noise_mode       train.eval_every
    train.g_adv_mode        train.gp_in_generator
    loss.xi1 .. loss.xi5    loss.lambda_mode
    cascade.weights_path    cascade.seed

The ``PIPGAN_CASCADE_WEIGHTS`` environment variable overrides
``cascade.weights_path``; explicit CLI flags override everything.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .datamodel import AttributeSchema
from .losses import LossWeights
from .training import TrainConfig, config_hash

CASCADE_ENV_VAR = "PIPGAN_CASCADE_WEIGHTS"

_TRAIN_KEYS = {
    "train.image_size": ("image_size", int),
    "train.base_width": ("base_width", int),
    "train.disc_base_width": ("disc_base_width", int),
    "train.learning_rate": ("learning_rate", float),
    "train.adam_beta1": ("adam_beta1", float),
    "train.adam_beta2": ("adam_beta2", float),
    "train.batch_size": ("batch_size", int),
    "train.max_steps": ("max_steps", int),
    "train.d_steps_per_g_step": ("d_steps_per_g_step", int),
    "train.seed": ("seed", int),
    "train.noise_mode": ("noise_mode", str),
    "train.eval_every": ("eval_every", int),
    "train.g_adv_mode": ("g_adv_mode", str),
    "train.gp_in_generator": ("gp_in_generator", bool),
    "cascade.weights_path": ("cascade_weights_path", str),
    "cascade.seed": ("cascade_seed", int),
}


def flatten(table: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in table.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def load_config(path) -> dict:
    """Parse a TOML config file into a flat dotted-key dictionary."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        return flatten(tomllib.load(fh))


def build_train_config(stage: str, schema: AttributeSchema, flat: dict | None = None,
                       overrides: dict | None = None) -> TrainConfig:
    """Merge file keys and explicit overrides into a stage training config."""
    flat = dict(flat or {})
    kwargs = {"stage": stage, "schema": schema}
    known = set(_TRAIN_KEYS) | {f"loss.xi{i}" for i in range(1, 6)} | {"loss.lambda_mode"}
    unknown = [k for k in flat if k not in known]
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for key, (attr, cast) in _TRAIN_KEYS.items():
        if key in flat and flat[key] is not None:
            kwargs[attr] = cast(flat[key])
    xi = list(LossWeights().as_tuple())
    for i in range(5):
        key = f"loss.xi{i + 1}"
        if key in flat:
            xi[i] = float(flat[key])
    kwargs["weights"] = LossWeights(*xi)
    if "loss.lambda_mode" in flat:
        mode = flat["loss.lambda_mode"]
        kwargs["lambda_mode"] = tuple(mode) if isinstance(mode, list) else mode
    for name, value in (overrides or {}).items():
        if value is not None:
            if name == "weights" and not isinstance(value, LossWeights):
                value = LossWeights(*value)
            kwargs[name] = value
    env_weights = os.environ.get(CASCADE_ENV_VAR)
    if env_weights:
        kwargs["cascade_weights_path"] = env_weights
    return TrainConfig(**kwargs)


def write_resolved_config(out_dir, payload: dict, name: str = "run_config.json") -> Path:
    """Record the resolved configuration (and its hash) beside a command's outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    body = dict(payload)
    body["config_hash"] = config_hash(payload)
    path = out_dir / name
    path.write_text(json.dumps(body, indent=2, sort_keys=True), encoding="utf-8")
    return path
