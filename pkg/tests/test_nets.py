import numpy as np
import pytest

from pairsense.learning import LearningError, Standardizer
from pairsense.nets import (
    LinearSvmModel,
    fit_mlp,
    fit_svm,
    fit_tip_classifier,
    fit_touch_classifier,
    gradient_check,
    init_mlp,
)


@pytest.fixture
def toy(rng):
    X = rng.normal(size=(400, 10))
    y_touch = (X[:, 0] + 0.4 * X[:, 1] > 0).astype(float)
    y_tip = rng.integers(0, 6, 400)
    return X, y_touch, y_tip


class TestGradientCheck:
    @pytest.mark.parametrize("head", ["sigmoid", "softmax"])
    def test_init_and_after_one_epoch(self, toy, head):
        X, y_touch, y_tip = toy
        y = y_touch if head == "sigmoid" else y_tip
        std = Standardizer.fit(X)
        Z = std.transform(X)
        model = init_mlp(10, head, std, seed=0, hidden=128)
        assert gradient_check(model, Z[:8], y[:8]) < 1e-4
        trained = fit_mlp(X, y, head=head, epochs=1, seed=0, hidden=128)
        assert gradient_check(trained, Z[:8], y[:8]) < 1e-4

    def test_zero_weights_zero_batch(self):
        std = Standardizer.fit(np.random.default_rng(0).normal(size=(10, 6)))
        model = init_mlp(6, "sigmoid", std, seed=0, hidden=16)
        for p in model.params():
            p *= 0.0
        err = gradient_check(model, np.zeros((4, 6)), np.zeros(4))
        assert err < 1e-8

    def test_big_batch_rejected(self, toy):
        X, y_touch, _ = toy
        std = Standardizer.fit(X)
        model = init_mlp(10, "sigmoid", std, seed=0, hidden=16)
        with pytest.raises(LearningError):
            gradient_check(model, std.transform(X[:20]), y_touch[:20])


class TestMlpTraining:
    def test_touch_learns_separable(self, toy):
        X, y_touch, _ = toy
        m = fit_touch_classifier(X, y_touch, kind="mlp", epochs=10, seed=0)
        assert (m.predict(X) == y_touch).mean() > 0.95

    def test_training_seeded(self, toy):
        X, y_touch, _ = toy
        a = fit_mlp(X, y_touch, "sigmoid", epochs=2, seed=5, hidden=64)
        b = fit_mlp(X, y_touch, "sigmoid", epochs=2, seed=5, hidden=64)
        assert np.array_equal(a.W1, b.W1)
        assert a.loss_curve == b.loss_curve

    def test_loss_curve_decreases(self, toy):
        X, y_touch, _ = toy
        m = fit_mlp(X, y_touch, "sigmoid", epochs=6, seed=0, hidden=64)
        assert m.loss_curve[-1] < m.loss_curve[0]

    def test_single_class_rejected(self, toy):
        X, _, _ = toy
        with pytest.raises(LearningError):
            fit_touch_classifier(X, np.zeros(len(X)), kind="mlp")

    def test_missing_tip_class_rejected(self, toy):
        X, _, _ = toy
        with pytest.raises(LearningError):
            fit_tip_classifier(X, np.zeros(len(X), dtype=int))

    def test_contradictory_labels_learn_nothing(self, rng):
        # one frame duplicated with all six labels: accuracy stays at chance
        x = rng.normal(size=(1, 8))
        X = np.tile(x, (6, 1))
        X = np.tile(X, (20, 1))
        y = np.tile(np.arange(6), 20)
        m = fit_tip_classifier(X, y, epochs=20, seed=0)
        acc = (m.predict(x) == np.arange(6)[:, None]).mean()
        assert acc <= 1 / 6 + 1e-9


class TestSvm:
    def test_separable_100_percent(self, rng):
        X = np.concatenate([rng.normal(-2, 0.4, (50, 4)), rng.normal(2, 0.4, (50, 4))])
        y = np.concatenate([np.zeros(50), np.ones(50)])
        m = fit_svm(X, y)
        assert (m.predict(X) == y).mean() == 1.0

    def test_decision_sign_matches_predict(self, rng):
        X = rng.normal(size=(60, 3))
        y = (X[:, 0] > 0).astype(float)
        m = fit_svm(X, y)
        assert np.array_equal(m.predict(X), (m.decision(X) >= 0).astype(int))

    def test_single_class_rejected(self, rng):
        with pytest.raises(LearningError):
            fit_svm(rng.normal(size=(10, 2)), np.ones(10))

    def test_touch_front_svm(self, rng):
        X = np.concatenate([rng.normal(-1.5, 0.5, (60, 5)), rng.normal(1.5, 0.5, (60, 5))])
        y = np.concatenate([np.zeros(60), np.ones(60)])
        m = fit_touch_classifier(X, y, kind="svm")
        assert isinstance(m, LinearSvmModel)
        assert (m.predict(X) == y).mean() > 0.98
