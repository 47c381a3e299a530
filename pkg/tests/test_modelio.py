import numpy as np
import pytest

from pairsense.learning import (
    CenterPredictor,
    RandomPredictor,
    TrainingSet,
    fit_krr,
    fit_linear,
    fit_multistage,
)
from pairsense.modelio import ModelIOError, TrainedModel, load_model, save_model
from pairsense.nets import fit_mlp, fit_svm


def roundtrip(tm, tmp_path, name):
    path = tmp_path / f"{name}.model"
    save_model(tm, path)
    return load_model(path)


class TestModelRoundTrips:
    def test_linear(self, rng, tmp_path):
        X, Y = rng.normal(size=(30, 4)), rng.normal(size=(30, 2))
        tm = TrainedModel(kind="linear", model=fit_linear(X, Y), config_digest="abc", seed=3)
        again = roundtrip(tm, tmp_path, "lin")
        assert again.config_digest == "abc" and again.seed == 3
        assert np.array_equal(again.predict(X), tm.predict(X))

    def test_krr_with_mask_and_calibration(self, rng, tmp_path):
        X, Y = rng.normal(size=(20, 6)), rng.normal(size=(20, 3))
        mask = np.array([True, False, True, True, False, True])
        model = fit_krr(X[:, mask], Y, 1e-3, 2.0)
        tm = TrainedModel(
            kind="krr", model=model, config_digest="d", channel_mask=mask, calibration={"lam": 1e-3, "sigma": 2.0}
        )
        again = roundtrip(tm, tmp_path, "krr")
        assert np.array_equal(again.channel_mask, mask)
        assert again.calibration == {"lam": 1e-3, "sigma": 2.0}
        assert np.allclose(again.predict(X), tm.predict(X), atol=1e-15)

    def test_mlp_both_heads(self, rng, tmp_path):
        X = rng.normal(size=(200, 8))
        y1 = (X[:, 0] > 0).astype(float)
        y6 = rng.integers(0, 6, 200)
        for name, y, head in (("touch", y1, "sigmoid"), ("tip", y6, "softmax")):
            model = fit_mlp(X, y, head=head, epochs=2, seed=1, hidden=32)
            tm = TrainedModel(kind="mlp", model=model, config_digest="x", seed=1)
            again = roundtrip(tm, tmp_path, name)
            assert np.array_equal(again.predict(X), tm.predict(X))
            assert again.model.loss_curve == model.loss_curve

    def test_svm(self, rng, tmp_path):
        X = rng.normal(size=(50, 4))
        y = (X[:, 1] > 0).astype(float)
        tm = TrainedModel(kind="svm", model=fit_svm(X, y), config_digest="s")
        again = roundtrip(tm, tmp_path, "svm")
        assert np.array_equal(again.predict(X), tm.predict(X))

    def test_multistage(self, rng, tmp_path):
        X = rng.uniform(0, 10, size=(900, 4))
        d = rng.uniform(0, 5, 900)
        X[:, 3] = 3 * d
        Y = np.stack([X[:, 0], X[:, 1], d], axis=1)
        ts = TrainingSet(X=X, Y=Y, event_ids=np.arange(900) // 5)
        model = fit_multistage(ts, lam=1e-4)
        tm = TrainedModel(kind="multistage", model=model, config_digest="m")
        again = roundtrip(tm, tmp_path, "ms")
        assert np.allclose(again.predict(X[:20]), tm.predict(X[:20]), atol=1e-12)

    def test_baseline_predictors(self, tmp_path):
        c = TrainedModel(kind="center", model=CenterPredictor(center=(16.0, 16.0)), config_digest="c")
        r = TrainedModel(kind="random", model=RandomPredictor(rect=(6, 6, 26, 26), seed=9), config_digest="r")
        for name, tm in (("c", c), ("r", r)):
            again = roundtrip(tm, tmp_path, name)
            assert np.array_equal(again.predict(np.zeros((5, 2))), tm.predict(np.zeros((5, 2))))

    def test_depth_clamped_nonnegative(self, rng, tmp_path):
        X, Y = rng.normal(size=(25, 3)), rng.normal(size=(25, 3)) - 10.0
        tm = TrainedModel(kind="linear", model=fit_linear(X, Y), config_digest="z")
        assert np.all(tm.predict(X)[:, 2] >= 0.0)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.model"
        p.write_bytes(b"NOT A MODEL")
        with pytest.raises(ModelIOError):
            load_model(p)
