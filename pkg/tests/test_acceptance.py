"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they complete.
"""

import math
import time

import numpy as np
import pytest
import torch
from torch import nn

from pipgan.ablation import METHODS, AblationSettings, run_ablation
from pipgan.datamodel import (
    AttributeSchema,
    load_manifest,
    pair_for_stage,
    stage_pairs,
)
from pipgan.evaluation import MetricsReport, ablation_report, image_metrics
from pipgan.losses import (
    LossParts,
    LossWeights,
    adversarial_d_loss,
    classification_loss,
    gradient_penalty,
    total_generator_loss,
)
from pipgan.networks import CodedGenerator
from pipgan.pipeline import PipelineModel
from pipgan.synth import SynthSpec, synth_generate, synth_schemas
from pipgan.training import TrainConfig, collate, load_checkpoint, save_checkpoint, train_stage

from test_datamodel import make_rows
from test_evaluation import metrics_oracle
from test_gradcheck import (
    FD_STEP,
    MicroCritic,
    MicroFeatures,
    MicroGenerator,
    assert_mostly_close,
    relative_errors,
    seeded,
)
from test_synth import dataset_digest

OVERFIT_BASE_WIDTH = 16
OVERFIT_MAX_STEPS = 2000
OVERFIT_WALL_LIMIT_S = 15 * 60


def report(criterion, ok, detail=""):
    line = f"[criterion {criterion:>2}] {'PASS' if ok else 'FAIL'} {detail}"
    print(line, flush=True)
    assert ok, line


@pytest.fixture(scope="module")
def synth32(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept32")
    spec = SynthSpec(n_subjects=8, k_pose=5, k_expr=7, image_size=32, seed=7)
    manifest = synth_generate(spec, root)
    pose_schema, expr_schema = synth_schemas(5, 7)
    rows = load_manifest(manifest, pose_schema, expr_schema)
    return {"root": root, "manifest": manifest, "rows": rows, "spec": spec,
            "pose_schema": pose_schema, "expr_schema": expr_schema}


@pytest.fixture(scope="module")
def pose_records32(synth32):
    es = synth32["expr_schema"]
    return pair_for_stage(synth32["rows"], "pose", synth32["pose_schema"], es,
                          root=synth32["root"], image_size=32,
                          fixed={"expression": es.categories[es.neutral_index]})


def test_criterion_1_metric_oracle_equivalence():
    start = time.monotonic()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        a = rng.random((8, 8, 3))
        b = rng.random((8, 8, 3))
        got = image_metrics(a, b)
        expected = metrics_oracle(a, b)
        worst = max(worst, *(abs(g - e) for g, e in zip(got, expected)))
    offset = image_metrics(np.full((8, 8, 3), 0.3), np.full((8, 8, 3), 0.2))
    offset_dev = max(abs(offset[0] - 20.0), abs(offset[1] - 0.01), abs(offset[2] - 0.1))
    elapsed = time.monotonic() - start
    report(1, worst < 1e-9 and offset_dev < 1e-12 and elapsed < 5.0,
           f"oracle dev {worst:.1e}, offset dev {offset_dev:.1e}, {elapsed:.2f}s")


def test_criterion_2_table_consistency():
    rng = np.random.default_rng(1)
    jensen_ok = True
    for _ in range(50):
        rep = MetricsReport()
        for i in range(rng.integers(2, 12)):
            mse = float(rng.uniform(1e-6, 0.3))
            rep.add(f"p{i}", -10 * math.log10(mse), mse, math.sqrt(mse))
        agg = rep.aggregate
        jensen_ok &= agg["rmse"] <= math.sqrt(agg["mse"]) + 1e-12
    golden = MetricsReport()
    golden.add("pair", 17.0296, 0.01394, 0.1158)
    line = ablation_report([("Ours", golden)]).csv_text.splitlines()[1]
    golden_ok = line == "Ours,17.0296,0.01394,0.1158"
    published_gap = 0.1158 < math.sqrt(0.01394)
    report(2, jensen_ok and golden_ok and published_gap,
           f"golden row {line!r}")


def test_criterion_3_gradient_penalty_analytic():
    start = time.monotonic()
    devs = []
    for scale in (0.5, 1.0, 3.0):
        w = torch.zeros(48, dtype=torch.float64)
        w[7] = scale
        critic = lambda cond, v: (v.flatten(1) @ w).view(-1, 1, 1, 1)
        g = torch.Generator().manual_seed(3)
        cond = torch.rand(2, 3, 4, 4, generator=g, dtype=torch.float64)
        real = torch.rand(2, 3, 4, 4, generator=g, dtype=torch.float64)
        fake = torch.rand(2, 3, 4, 4, generator=g, dtype=torch.float64)
        gp = float(gradient_penalty(critic, cond, real, fake).detach())
        devs.append(abs(gp - (scale - 1.0) ** 2))
    linear_ok = max(devs) < 1e-6

    critic = seeded(MicroCritic(), 30)
    g = torch.Generator().manual_seed(31)
    cond = torch.rand(1, 3, 4, 4, generator=g, dtype=torch.float64)
    x_hat = torch.rand(1, 3, 4, 4, generator=g, dtype=torch.float64).requires_grad_(True)

    def score(v):
        return critic(cond, v).flatten(1).mean(dim=1).sum()

    analytic = torch.autograd.grad(score(x_hat), x_hat)[0]
    fd = torch.zeros_like(x_hat)
    with torch.no_grad():
        flat, fd_flat = x_hat.view(-1), fd.view(-1)
        for idx in range(flat.numel()):
            orig = flat[idx].item()
            flat[idx] = orig + FD_STEP
            up = float(score(x_hat))
            flat[idx] = orig - FD_STEP
            down = float(score(x_hat))
            flat[idx] = orig
            fd_flat[idx] = (up - down) / (2 * FD_STEP)
    grad_dev = float((analytic - fd).abs().max())
    elapsed = time.monotonic() - start
    report(3, linear_ok and grad_dev < 1e-4 and elapsed < 30.0,
           f"linear dev {max(devs):.1e}, grad dev {grad_dev:.1e}, {elapsed:.1f}s")


def test_criterion_4_loss_gradient_checks():
    start = time.monotonic()
    g = torch.Generator().manual_seed(40)
    x = torch.rand(2, 3, 8, 8, generator=g, dtype=torch.float64)
    y = torch.rand(2, 3, 8, 8, generator=g, dtype=torch.float64)
    labels = torch.tensor([1, 3])
    checks = {}

    critic = seeded(MicroCritic(), 41)
    gen = seeded(MicroGenerator(), 42)
    with torch.no_grad():
        fake = gen(x)
    from pipgan.losses import adversarial_g_loss, cascade_loss, l1_loss
    checks["adversarial_d"] = relative_errors(
        critic, lambda: adversarial_d_loss(critic(x, y), critic(x, fake)))
    checks["adversarial_g"] = relative_errors(
        gen, lambda: adversarial_g_loss(critic(x, gen(x))))
    torch.manual_seed(43)
    head = nn.Sequential(nn.Conv2d(3, 4, 3, stride=2, padding=1), nn.Flatten(),
                         nn.Linear(4 * 16, 5)).double()
    checks["classification"] = relative_errors(
        head, lambda: classification_loss(head(x), labels))
    feats = seeded(MicroFeatures(), 44)
    feats.requires_grad_(False)
    checks["cascade"] = relative_errors(gen, lambda: cascade_loss(feats, y, gen(x)))
    alpha = torch.full((2, 1, 1, 1), 0.3, dtype=torch.float64)
    checks["gradient_penalty"] = relative_errors(
        critic, lambda: gradient_penalty(critic, x, y, fake, alpha=alpha))
    checks["l1"] = relative_errors(gen, lambda: l1_loss(y, gen(x)))

    for name, errors in checks.items():
        assert_mostly_close(errors)
    elapsed = time.monotonic() - start
    fractions = {n: sum(1 for e in v if e < 1e-3) / len(v) for n, v in checks.items()}
    report(4, elapsed < 300.0,
           "pass fractions " + ", ".join(f"{n}={f:.2f}" for n, f in fractions.items())
           + f", {elapsed:.0f}s")


def test_criterion_5_short_circuit_invariant():
    torch.manual_seed(50)
    gen = CodedGenerator(image_size=16, num_classes=5, base_width=8)
    g = torch.Generator().manual_seed(51)
    images = torch.rand(2, 3, 16, 16, generator=g)
    gen.zero_grad()
    enc = gen.encode(images)
    loss = classification_loss(gen.classify_code(enc.y_c1), torch.tensor([0, 3]))
    loss.backward()
    wc2_grad_zero = gen.cond_inject.weight.grad is None or \
        bool((gen.cond_inject.weight.grad == 0).all())

    with torch.no_grad():
        gen.code_bias_2.copy_(gen.code_bias_1)
    enc = gen.encode(images)
    y_c2 = gen.inject_condition(enc.x_c1, torch.zeros(2, 5))
    bitwise = torch.equal(y_c2, enc.y_c1)
    report(5, wc2_grad_zero and bitwise,
           f"w_c2 grad zero {wc2_grad_zero}, bitwise identity {bitwise}")


def test_criterion_6_closed_form_losses():
    devs = []
    for k in (2, 5, 7):
        loss = float(classification_loss(torch.zeros(3, k, dtype=torch.float64),
                                         torch.tensor([0, k - 1, k // 2])))
        devs.append(abs(loss - math.log(k)))
    ln_k_ok = max(devs) < 1e-9
    balanced = float(adversarial_d_loss(torch.zeros(2, 1, 4, 4), torch.zeros(2, 1, 4, 4)))
    balanced_ok = abs(balanced - 2 * math.log(2)) < 1e-6
    total = total_generator_loss(LossParts(1.0, 1.0, 1.0, 1.0, 1.0),
                                 LossWeights(1.0, 1.0, 1.0, 10.0, 50.0))
    total_ok = total == 63.0
    report(6, ln_k_ok and balanced_ok and total_ok,
           f"lnK dev {max(devs):.1e}, 2ln2 dev {abs(balanced - 2 * math.log(2)):.1e}, "
           f"total {total}")


def condition_control_fraction(state, records):
    """Fraction of records whose conditional output is L1-closest to its own class target."""
    gen = state.generator.eval()
    by_subject = {}
    for r in records:
        by_subject.setdefault(r.subject_id, {})[r.condition.k] = r.target_image
    with torch.no_grad():
        x, _, c, _ = collate(records)
        out = gen.generate(x, c).numpy().transpose(0, 2, 3, 1)
    hits = 0
    for i, r in enumerate(records):
        dists = {k: float(np.abs(out[i] - target).mean())
                 for k, target in by_subject[r.subject_id].items()}
        hits += min(dists, key=dists.get) == r.condition.k
    return hits / len(records)


def test_criterion_7_synthetic_overfit(synth32, pose_records32):
    start = time.monotonic()
    config = TrainConfig(
        stage="pose",
        schema=synth32["pose_schema"],
        image_size=32,
        base_width=OVERFIT_BASE_WIDTH,
        learning_rate=2e-4,           # stated optimizer default
        weights=LossWeights(1.0, 1.0, 1.0, 10.0, 50.0),
        batch_size=8,
        max_steps=OVERFIT_MAX_STEPS,
        seed=0,
        eval_every=500,
    )
    ckpt = train_stage(config, pose_records32)
    elapsed = time.monotonic() - start
    final_l1 = ckpt.state.metric_history[-1]["mean_l1"]
    control = condition_control_fraction(ckpt.state, pose_records32)
    report(7, final_l1 < 0.05 and control >= 0.90 and elapsed <= OVERFIT_WALL_LIMIT_S,
           f"L1 {final_l1:.4f} (< 0.05), control {control:.2f} (>= 0.90), "
           f"{elapsed / 60:.1f} min")


def test_criterion_8_pipeline_count_protocol(tmp_path):
    torch.manual_seed(80)
    pose_gen = CodedGenerator(image_size=16, num_classes=5, base_width=8)
    expr_gen = CodedGenerator(image_size=16, num_classes=7, base_width=8)
    ps = AttributeSchema("pose", tuple(f"p{i}" for i in range(5)), 2)
    es = AttributeSchema("expression", tuple(f"e{i}" for i in range(7)), 3)
    image = np.random.default_rng(81).random((16, 16, 3)).astype(np.float32)
    counts = {}
    for order in ("PE", "EP"):
        model = PipelineModel(pose_gen, ps, expr_gen, es, order=order)
        result = model.expand(image, [0, 1, 3, 4], [0, 1, 2, 4, 5, 6])
        counts[order] = result.count
    from pipgan.pipeline import save_grid
    model = PipelineModel(pose_gen, ps, expr_gen, es, order="PE")
    result = model.expand(image, [0, 1, 3, 4], [0, 1, 2, 4, 5, 6])
    written = save_grid(result, tmp_path, "s", ps, es)
    sheet_ok = (tmp_path / "s_sheet.png").exists()

    fei_pose = AttributeSchema("pose", tuple(f"p{i}" for i in range(11)), 0)
    fei_expr = AttributeSchema("expression", ("neutral",), 0)
    fei = stage_pairs(make_rows(1, 11, 1), "pose", fei_pose, fei_expr,
                      fixed={"expression": "neutral"})
    yale_pose = AttributeSchema("pose", ("front",), 0)
    yale_expr = AttributeSchema("expression", tuple(f"e{i}" for i in range(6)), 0)
    yale = stage_pairs(make_rows(1, 1, 6), "expression", yale_pose, yale_expr,
                       fixed={"pose": "front"})
    report(8, counts["PE"] == 24 and counts["EP"] == 24 and sheet_ok
           and len(fei) == 10 and len(yale) == 5,
           f"grid PE={counts['PE']} EP={counts['EP']}, FEI {len(fei)}, Yale {len(yale)}")


def test_criterion_9_determinism_and_roundtrip(synth16, pose_records16, tmp_path):
    from conftest import tiny_config
    config = tiny_config("pose", synth16["pose_schema"], max_steps=200, seed=13)
    first = train_stage(config, pose_records16)
    second = train_stage(config, pose_records16)
    trace_a = np.array([e.total for e in first.state.loss_log])
    trace_b = np.array([e.total for e in second.state.loss_log])
    drift = float(np.abs(trace_a - trace_b).max())

    x, _, c, _ = collate(pose_records16[:2])
    first.state.generator.eval()
    before = first.state.generator.generate(x, c)
    path = save_checkpoint(first.state, tmp_path / "ck.pt")
    loaded = load_checkpoint(path)
    loaded.generator.eval()
    exact = torch.equal(before, loaded.generator.generate(x, c))

    spec = SynthSpec(n_subjects=2, k_pose=3, k_expr=3, image_size=16, seed=21)
    synth_generate(spec, tmp_path / "a")
    synth_generate(spec, tmp_path / "b")
    regen = dataset_digest(tmp_path / "a") == dataset_digest(tmp_path / "b")
    report(9, drift <= 1e-6 and exact and regen,
           f"trace drift {drift:.2e} over 200 steps, roundtrip exact {exact}, "
           f"regen identical {regen}")


def test_criterion_10_ablation_harness(synth16, tmp_path):
    start = time.monotonic()
    settings = AblationSettings(image_size=16, base_width=8, batch_size=8,
                                max_steps=8, seed=0, split_ratio=0.8)
    table = run_ablation(synth16["rows"], synth16["pose_schema"], synth16["expr_schema"],
                         synth16["root"], tmp_path, settings=settings)
    names = [row[0] for row in table.rows]
    expected = [m[0] for m in METHODS]
    csv_rows = table.csv_text.strip().splitlines()
    report(10, names == expected and len(csv_rows) == 9 and (tmp_path / "ablation.csv").exists(),
           f"8 methods in {time.monotonic() - start:.0f}s: {', '.join(names)}")
