import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pipgan.estimators import PipelineGenerator, StageGenerator
from pipgan.validation import check_conditions, check_image_array, check_records


def fast_stage(stage="pose", **kw):
    defaults = dict(stage=stage, image_size=16, base_width=8, batch_size=8,
                    max_steps=2, seed=0, eval_every=100)
    defaults.update(kw)
    return StageGenerator(**defaults)


class TestValidationHelpers:
    def test_image_array_coercion(self):
        single = np.zeros((8, 8, 3))
        batch = check_image_array(single)
        assert batch.shape == (1, 8, 8, 3) and batch.dtype == np.float32
        with pytest.raises(ValueError):
            check_image_array(np.zeros((8, 4, 3)))
        with pytest.raises(ValueError):
            check_image_array(np.zeros((8, 8, 3)) + 2.0)
        with pytest.raises(ValueError):
            check_image_array(single, image_size=16)

    def test_condition_coercion(self):
        onehot = check_conditions([0, 2], 3, 2)
        np.testing.assert_array_equal(onehot, [[1, 0, 0], [0, 0, 1]])
        scalar = check_conditions(1, 3, 2)
        np.testing.assert_array_equal(scalar, [[0, 1, 0], [0, 1, 0]])
        with pytest.raises(ValueError):
            check_conditions([3], 3, 1)
        with pytest.raises(ValueError):
            check_conditions(np.full((1, 3), 0.5), 3, 1)

    def test_record_checks(self, pose_records16):
        assert check_records(pose_records16) == list(pose_records16)
        with pytest.raises(ValueError):
            check_records([])
        with pytest.raises(TypeError):
            check_records([1, 2])


class TestStageGenerator:
    def test_get_set_params_and_clone(self):
        est = fast_stage(learning_rate=1e-3)
        assert est.get_params()["learning_rate"] == 1e-3
        est.set_params(batch_size=4)
        assert est.batch_size == 4
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_not_fitted_errors(self):
        est = fast_stage()
        with pytest.raises(NotFittedError):
            est.transform(np.zeros((16, 16, 3)), 0)
        with pytest.raises(NotFittedError):
            est.score([])

    def test_fit_transform_roundtrip(self, pose_records16, synth16):
        est = fast_stage(schema=synth16["pose_schema"])
        est.fit(pose_records16)
        assert est.n_steps_ == 2
        single = est.transform(pose_records16[0].input_image, 1)
        assert single.shape == (16, 16, 3)
        batch = est.transform(np.stack([r.input_image for r in pose_records16[:3]]), [0, 1, 2])
        assert batch.shape == (3, 16, 16, 3)
        np.testing.assert_array_equal(est.predict(pose_records16[0].input_image, 1), single)

    def test_fit_leaves_params_untouched(self, pose_records16):
        est = fast_stage()
        params_before = est.get_params()
        est.fit(pose_records16)
        assert est.get_params() == params_before

    def test_schema_inferred_when_absent(self, pose_records16):
        est = fast_stage()
        est.fit(pose_records16)
        assert est.schema_.size == 5

    def test_wrong_record_size_rejected(self, pose_records16):
        est = fast_stage(image_size=32)
        with pytest.raises(ValueError):
            est.fit(pose_records16)

    def test_score_returns_psnr(self, pose_records16, synth16):
        est = fast_stage(schema=synth16["pose_schema"])
        est.fit(pose_records16)
        score = est.score(pose_records16[:4])
        assert np.isfinite(score) and score > 0

    def test_checkpoint_roundtrip(self, pose_records16, synth16, tmp_path):
        est = fast_stage(schema=synth16["pose_schema"]).fit(pose_records16)
        path = est.save(tmp_path / "stage.pt")
        loaded = StageGenerator.from_checkpoint(path)
        x = pose_records16[0].input_image
        np.testing.assert_array_equal(loaded.transform(x, 2), est.transform(x, 2))


class TestPipelineGenerator:
    def test_fit_and_grid_transform(self, pose_records16, expr_records16, synth16):
        est = PipelineGenerator(
            pose_stage=fast_stage("pose", schema=synth16["pose_schema"]),
            expr_stage=fast_stage("expression", schema=synth16["expr_schema"]),
        )
        est.fit((pose_records16, expr_records16))
        image = pose_records16[0].input_image
        grid = est.transform(image)
        assert grid.shape == (4, 2, 16, 16, 3)  # non-neutral: 4 poses x 2 expressions
        result = est.expand(image)
        assert result.count == 8

    def test_from_fitted_and_targets(self, pose_records16, expr_records16, synth16):
        pose = fast_stage("pose", schema=synth16["pose_schema"]).fit(pose_records16)
        expr = fast_stage("expression", schema=synth16["expr_schema"]).fit(expr_records16)
        est = PipelineGenerator.from_fitted(pose, expr, pose_targets=[0, 1], expr_targets=[2])
        grid = est.transform(pose_records16[0].input_image)
        assert grid.shape == (2, 1, 16, 16, 3)

    def test_unfitted_transform_raises(self):
        with pytest.raises(NotFittedError):
            PipelineGenerator().transform(np.zeros((16, 16, 3)))
