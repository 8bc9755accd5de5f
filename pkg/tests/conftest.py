import numpy as np
import pytest
import torch

from pipgan.datamodel import load_manifest, pair_for_stage
from pipgan.synth import SynthSpec, synth_generate, synth_schemas
from pipgan.training import TrainConfig, train_stage


@pytest.fixture(scope="session")
def synth16(tmp_path_factory):
    """Small 16px synthetic dataset shared across tests."""
    root = tmp_path_factory.mktemp("synth16")
    spec = SynthSpec(n_subjects=4, k_pose=5, k_expr=3, image_size=16, seed=11)
    manifest = synth_generate(spec, root)
    pose_schema, expr_schema = synth_schemas(5, 3)
    rows = load_manifest(manifest, pose_schema, expr_schema)
    return {
        "spec": spec,
        "root": root,
        "manifest": manifest,
        "rows": rows,
        "pose_schema": pose_schema,
        "expr_schema": expr_schema,
    }


@pytest.fixture(scope="session")
def pose_records16(synth16):
    es = synth16["expr_schema"]
    return pair_for_stage(
        synth16["rows"], "pose", synth16["pose_schema"], es,
        root=synth16["root"], image_size=16,
        fixed={"expression": es.categories[es.neutral_index]},
    )


@pytest.fixture(scope="session")
def expr_records16(synth16):
    return pair_for_stage(
        synth16["rows"], "expression", synth16["pose_schema"], synth16["expr_schema"],
        root=synth16["root"], image_size=16, fixed=None,
    )


def tiny_config(stage, schema, **kw):
    defaults = dict(stage=stage, schema=schema, image_size=16, base_width=8,
                    batch_size=8, max_steps=2, seed=3, eval_every=100)
    defaults.update(kw)
    return TrainConfig(**defaults)


@pytest.fixture(scope="session")
def tiny_checkpoints(tmp_path_factory, synth16, pose_records16, expr_records16):
    """Barely-trained pose and expression checkpoints for composition tests."""
    out = tmp_path_factory.mktemp("ckpts")
    pose_ckpt = train_stage(tiny_config("pose", synth16["pose_schema"]),
                            pose_records16, out_dir=out / "pose")
    expr_ckpt = train_stage(tiny_config("expression", synth16["expr_schema"]),
                            expr_records16, out_dir=out / "expression")
    return {"pose": pose_ckpt, "expression": expr_ckpt, "dir": out}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(99)
