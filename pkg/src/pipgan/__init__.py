"""Two-stage conditional image-to-image GAN for multi-attribute face synthesis."""

from .datamodel import (
    AttributeSchema,
    ConditionVector,
    ManifestRow,
    SampleRecord,
    infer_schemas,
    load_manifest,
    pair_for_stage,
    split_subjects,
    stage_pairs,
)
from .errors import PipganError
from .estimators import PipelineGenerator, StageGenerator
from .evaluation import MetricsReport, ablation_report, evaluate_pairs, image_metrics
from .losses import LossWeights
from .networks import CascadeFeatures, CodedGenerator, HybridCritic, PatchDiscriminator
from .pipeline import PipelineConfig, PipelineModel, compose
from .synth import SynthSpec, synth_generate, synth_schemas
from .training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train_stage

__version__ = "0.1.0"

__all__ = [
    "AttributeSchema",
    "CascadeFeatures",
    "Checkpoint",
    "CodedGenerator",
    "ConditionVector",
    "HybridCritic",
    "LossWeights",
    "ManifestRow",
    "MetricsReport",
    "PatchDiscriminator",
    "PipelineConfig",
    "PipelineGenerator",
    "PipelineModel",
    "PipganError",
    "SampleRecord",
    "StageGenerator",
    "SynthSpec",
    "TrainConfig",
    "ablation_report",
    "compose",
    "evaluate_pairs",
    "image_metrics",
    "infer_schemas",
    "load_checkpoint",
    "load_manifest",
    "pair_for_stage",
    "save_checkpoint",
    "split_subjects",
    "stage_pairs",
    "synth_generate",
    "synth_schemas",
    "train_stage",
]
