"""Scikit-learn style estimator wrappers around the stage and pipeline trainers.

``StageGenerator`` is fit on stage sample records and then transforms images
under one-hot conditions; ``PipelineGenerator`` composes two stages and
expands neutral images into the full attribute grid. Both follow the
standard estimator contract: constructor arguments are stored verbatim,
``fit`` returns ``self``, fitted state lives in trailing-underscore
attributes, and ``get_params``/``set_params`` come from ``BaseEstimator``.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from .datamodel import AttributeSchema
from .losses import LossWeights
from .networks import image_to_tensor
from .pipeline import ExpandResult, PipelineModel
from .training import TrainConfig, evaluate_records, load_checkpoint, save_checkpoint, train_stage
from .validation import check_conditions, check_image_array, check_records


class StageGenerator(BaseEstimator):
    """One conditional image-to-image stage with a fit/transform surface."""

    def __init__(self, stage="pose", schema=None, image_size=32, base_width=32,
                 disc_base_width=None, learning_rate=2e-4, adam_beta1=0.5,
                 adam_beta2=0.999, batch_size=8, max_steps=2000,
                 d_steps_per_g_step=1, seed=0, noise_mode="off",
                 loss_weights=(1.0, 1.0, 1.0, 10.0, 50.0), lambda_mode="uniform",
                 g_adv_mode="non_saturating", gp_in_generator=False,
                 cascade_weights_path=None, cascade_seed=0, eval_every=200):
        self.stage = stage
        self.schema = schema
        self.image_size = image_size
        self.base_width = base_width
        self.disc_base_width = disc_base_width
        self.learning_rate = learning_rate
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.d_steps_per_g_step = d_steps_per_g_step
        self.seed = seed
        self.noise_mode = noise_mode
        self.loss_weights = loss_weights
        self.lambda_mode = lambda_mode
        self.g_adv_mode = g_adv_mode
        self.gp_in_generator = gp_in_generator
        self.cascade_weights_path = cascade_weights_path
        self.cascade_seed = cascade_seed
        self.eval_every = eval_every

    def _resolve_schema(self, records) -> AttributeSchema:
        if self.schema is not None:
            return self.schema
        dim = records[0].condition.dim
        return AttributeSchema(self.stage, tuple(f"c{i}" for i in range(dim)), 0)

    def build_config(self, records=None) -> TrainConfig:
        schema = self._resolve_schema(check_records(records)) if records else self.schema
        if schema is None:
            raise ValueError("schema is required when no records are given")
        return TrainConfig(
            stage=self.stage,
            schema=schema,
            image_size=self.image_size,
            base_width=self.base_width,
            disc_base_width=self.disc_base_width,
            learning_rate=self.learning_rate,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            batch_size=self.batch_size,
            max_steps=self.max_steps,
            d_steps_per_g_step=self.d_steps_per_g_step,
            seed=self.seed,
            noise_mode=self.noise_mode,
            weights=LossWeights(*self.loss_weights),
            lambda_mode=self.lambda_mode,
            g_adv_mode=self.g_adv_mode,
            gp_in_generator=self.gp_in_generator,
            cascade_weights_path=self.cascade_weights_path,
            cascade_seed=self.cascade_seed,
            eval_every=self.eval_every,
        )

    def fit(self, X, y=None, eval_records=None, out_dir=None):
        """Train this stage on sample records; ``y`` is unused (targets ride in X)."""
        records = check_records(X)
        first = records[0].input_image
        if first.shape[0] != self.image_size:
            raise ValueError(
                f"records are {first.shape[0]}px but image_size={self.image_size}"
            )
        config = self.build_config(records)
        ckpt = train_stage(config, records, eval_records=eval_records, out_dir=out_dir)
        self.state_ = ckpt.state
        self.schema_ = config.schema
        self.history_ = ckpt.state.metric_history
        self.n_steps_ = ckpt.state.step
        return self

    def transform(self, X, conditions) -> np.ndarray:
        """Generate images for X under the given target classes."""
        check_is_fitted(self, "state_")
        arr = check_image_array(X, self.image_size)
        single = np.asarray(X).ndim == 3
        onehot = check_conditions(conditions, self.schema_.size, arr.shape[0])
        gen = self.state_.generator.eval()
        with torch.no_grad():
            out = gen.generate(image_to_tensor(arr), torch.from_numpy(onehot))
        result = out.numpy().transpose(0, 2, 3, 1)
        return result[0] if single else result

    def predict(self, X, conditions) -> np.ndarray:
        return self.transform(X, conditions)

    def score(self, X, y=None) -> float:
        """Mean PSNR (dB) of conditional generations against record targets."""
        check_is_fitted(self, "state_")
        records = check_records(X)
        return evaluate_records(self.state_, records)["mean_psnr"]

    def save(self, path):
        check_is_fitted(self, "state_")
        return save_checkpoint(self.state_, path)

    @classmethod
    def from_checkpoint(cls, path) -> "StageGenerator":
        state = load_checkpoint(path)
        cfg = state.config
        est = cls(stage=cfg.stage, schema=cfg.schema, image_size=cfg.image_size,
                  base_width=cfg.base_width, disc_base_width=cfg.disc_base_width,
                  learning_rate=cfg.learning_rate, adam_beta1=cfg.adam_beta1,
                  adam_beta2=cfg.adam_beta2, batch_size=cfg.batch_size,
                  max_steps=cfg.max_steps, d_steps_per_g_step=cfg.d_steps_per_g_step,
                  seed=cfg.seed, noise_mode=cfg.noise_mode,
                  loss_weights=cfg.weights.as_tuple(), lambda_mode=cfg.lambda_mode,
                  g_adv_mode=cfg.g_adv_mode, gp_in_generator=cfg.gp_in_generator,
                  cascade_weights_path=cfg.cascade_weights_path,
                  cascade_seed=cfg.cascade_seed, eval_every=cfg.eval_every)
        est.state_ = state
        est.schema_ = cfg.schema
        est.history_ = state.metric_history
        est.n_steps_ = state.step
        return est


class PipelineGenerator(BaseEstimator):
    """Two chained stages expanding neutral images into a pose x expression grid."""

    def __init__(self, pose_stage=None, expr_stage=None, order="PE",
                 pose_targets=None, expr_targets=None):
        self.pose_stage = pose_stage
        self.expr_stage = expr_stage
        self.order = order
        self.pose_targets = pose_targets
        self.expr_targets = expr_targets

    def fit(self, X, y=None):
        """X is a (pose records, expression records) pair; each stage is cloned and fit."""
        pose_records, expr_records = X
        pose = clone(self.pose_stage) if self.pose_stage is not None else StageGenerator(stage="pose")
        expr = clone(self.expr_stage) if self.expr_stage is not None else StageGenerator(stage="expression")
        self.pose_stage_ = pose.fit(pose_records)
        self.expr_stage_ = expr.fit(expr_records)
        self._build_model()
        return self

    @classmethod
    def from_fitted(cls, pose_stage: StageGenerator, expr_stage: StageGenerator,
                    order="PE", pose_targets=None, expr_targets=None) -> "PipelineGenerator":
        est = cls(pose_stage=pose_stage, expr_stage=expr_stage, order=order,
                  pose_targets=pose_targets, expr_targets=expr_targets)
        check_is_fitted(pose_stage, "state_")
        check_is_fitted(expr_stage, "state_")
        est.pose_stage_ = pose_stage
        est.expr_stage_ = expr_stage
        est._build_model()
        return est

    def _build_model(self):
        self.model_ = PipelineModel(
            pose_generator=self.pose_stage_.state_.generator,
            pose_schema=self.pose_stage_.schema_,
            expr_generator=self.expr_stage_.state_.generator,
            expr_schema=self.expr_stage_.schema_,
            order=self.order,
        )

    def _targets(self):
        pose = (list(self.pose_targets) if self.pose_targets is not None
                else self.pose_stage_.schema_.non_neutral())
        expr = (list(self.expr_targets) if self.expr_targets is not None
                else self.expr_stage_.schema_.non_neutral())
        return pose, expr

    def expand(self, image, rng=None, keep_intermediates=False) -> ExpandResult:
        check_is_fitted(self, "model_")
        pose, expr = self._targets()
        return self.model_.expand(image, pose, expr, rng=rng,
                                  keep_intermediates=keep_intermediates)

    def transform(self, X) -> np.ndarray:
        """Neutral images -> (N, |poses|, |exprs|, H, W, 3) generated grid."""
        check_is_fitted(self, "model_")
        arr = check_image_array(X, self.model_.image_size)
        single = np.asarray(X).ndim == 3
        pose, expr = self._targets()
        grids = []
        for img in arr:
            result = self.model_.expand(img, pose, expr)
            grid = np.stack([
                np.stack([result.outputs[(p, e)] for e in expr]) for p in pose
            ])
            grids.append(grid)
        out = np.stack(grids)
        return out[0] if single else out

    def predict(self, X) -> np.ndarray:
        return self.transform(X)
