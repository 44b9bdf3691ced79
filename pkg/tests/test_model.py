"""Tests for geotweet.model: class weights, objective, training, prediction, persistence."""

import math
from pathlib import Path

import h5py
import numpy as np
import pytest

from geotweet.errors import (
    ContractError,
    EmptyTrainingSet,
    FingerprintMismatch,
    FormatError,
    SingleClassData,
    TrainConfigError,
    ZeroClassCount,
)
from geotweet.features import FeatureVector, build_vocabulary, featurize, featurize_matrix
from geotweet.model import (
    MaxEntModel,
    TrainConfig,
    class_weights,
    load_model,
    nll_and_gradient,
    order_classes,
    predict,
    predict_matrix,
    save_model,
    train,
    train_matrix,
)


def _vec(pairs: dict[int, float], dims: int) -> FeatureVector:
    idx = sorted(pairs)
    return FeatureVector(
        np.array(idx, dtype=np.int64), np.array([pairs[i] for i in idx], dtype=np.float64), dims
    )


def _random_model(k: int = 3, dims: int = 5, seed: int = 0) -> MaxEntModel:
    rng = np.random.default_rng(seed)
    return MaxEntModel(
        classes=[f"C{i}" for i in range(k)],
        weights=rng.normal(size=(k, dims)),
        biases=rng.normal(size=k),
    )


def _with(model: MaxEntModel, weights=None, biases=None) -> MaxEntModel:
    return MaxEntModel(
        classes=model.classes,
        weights=model.weights if weights is None else weights,
        biases=model.biases if biases is None else biases,
    )


@pytest.fixture
def tz_data(labeled_corpus):
    vocab = build_vocabulary(labeled_corpus, ["tz"])
    X = featurize_matrix(labeled_corpus, vocab)
    return vocab, X, [t.country for t in labeled_corpus]


class TestClassWeights:
    def test_inverse_frequency(self):
        w = class_weights({"A": 3, "B": 1})
        assert w["A"] == pytest.approx(4 / (2 * 3))
        assert w["B"] == pytest.approx(4 / (2 * 1))

    def test_count_weighted_mean_is_one(self):
        counts = {"A": 17, "B": 5, "C": 1, "D": 40}
        w = class_weights(counts)
        n = sum(counts.values())
        assert sum(counts[c] * w[c] for c in counts) / n == pytest.approx(1.0)

    def test_balanced_classes_weight_one(self):
        assert set(class_weights({"A": 4, "B": 4}).values()) == {1.0}

    def test_zero_count(self):
        with pytest.raises(ZeroClassCount) as exc_info:
            class_weights({"A": 0, "B": 2})
        assert exc_info.value.classes == ["A"]

    def test_single_class(self):
        with pytest.raises(SingleClassData):
            class_weights({"A": 3})

    def test_order_classes(self):
        assert order_classes(["B", "A", "C", "A", "B", "D"]) == ["A", "B", "C", "D"]


class TestObjective:
    def test_zero_model_is_uniform(self):
        model = MaxEntModel.zeros(["A", "B", "C"], 4)
        batch = [(_vec({0: 1.0}, 4), 0, 1.0), (_vec({2: 1.0, 3: 1.0}, 4), 2, 1.0)]
        value, _ = nll_and_gradient(model, batch, 0.0)
        assert value == pytest.approx(2 * math.log(3))

    def test_example_weight_scales_loss(self):
        model = _random_model()
        v = _vec({1: 1.0}, 5)
        one, _ = nll_and_gradient(model, [(v, 1, 1.0)], 0.0)
        three, _ = nll_and_gradient(model, [(v, 1, 3.0)], 0.0)
        assert three == pytest.approx(3 * one)

    def test_l2_penalty(self):
        model = _random_model()
        v = _vec({0: 1.0}, 5)
        base, _ = nll_and_gradient(model, [(v, 0, 1.0)], 0.0)
        reg, _ = nll_and_gradient(model, [(v, 0, 1.0)], 2.0)
        assert reg - base == pytest.approx(float(np.sum(model.weights**2)))

    def test_scaling_all_example_weights_keeps_the_minimizer(self):
        # Loss and gradient scale together, so the stationary points do not move.
        model = _random_model(seed=4)
        batch = [(_vec({0: 1.0, 3: 2.0}, 5), 0, 0.5), (_vec({1: 1.0}, 5), 2, 1.5)]
        value, grad = nll_and_gradient(model, batch, 0.0)
        scaled_value, scaled_grad = nll_and_gradient(
            model, [(v, y, 7.0 * w) for v, y, w in batch], 0.0
        )
        assert scaled_value == pytest.approx(7.0 * value)
        assert scaled_grad.weights == pytest.approx(7.0 * grad.weights)
        assert scaled_grad.biases == pytest.approx(7.0 * grad.biases)

    def test_gradient_matches_finite_differences(self):
        model = _random_model(k=3, dims=5, seed=4)
        batch = [
            (_vec({0: 1.0, 3: 2.0}, 5), 0, 0.5),
            (_vec({1: 1.0}, 5), 2, 2.0),
            (_vec({2: 1.0, 4: 1.0}, 5), 1, 1.0),
            (_vec({}, 5), 1, 1.5),
        ]
        l2 = 0.3
        _, grad = nll_and_gradient(model, batch, l2)
        eps = 1e-6
        for k in range(3):
            for d in range(5):
                plus = model.weights.copy()
                minus = model.weights.copy()
                plus[k, d] += eps
                minus[k, d] -= eps
                f_plus, _ = nll_and_gradient(_with(model, weights=plus), batch, l2)
                f_minus, _ = nll_and_gradient(_with(model, weights=minus), batch, l2)
                assert grad.weights[k, d] == pytest.approx(
                    (f_plus - f_minus) / (2 * eps), rel=1e-4, abs=1e-6
                )
            plus_b = model.biases.copy()
            minus_b = model.biases.copy()
            plus_b[k] += eps
            minus_b[k] -= eps
            f_plus, _ = nll_and_gradient(_with(model, biases=plus_b), batch, l2)
            f_minus, _ = nll_and_gradient(_with(model, biases=minus_b), batch, l2)
            assert grad.biases[k] == pytest.approx(
                (f_plus - f_minus) / (2 * eps), rel=1e-4, abs=1e-6
            )

    def test_bad_class_index(self):
        model = _random_model()
        with pytest.raises(ContractError):
            nll_and_gradient(model, [(_vec({0: 1.0}, 5), 3, 1.0)], 0.0)

    def test_dims_mismatch(self):
        with pytest.raises(ContractError):
            nll_and_gradient(_random_model(), [(_vec({0: 1.0}, 4), 0, 1.0)], 0.0)


class TestTrain:
    def test_separable_data_fits_perfectly(self, tz_data):
        _, X, labels = tz_data
        model = train_matrix(X, labels, TrainConfig(max_epochs=30))
        pred, probs = predict_matrix(model, X)
        assert pred == labels
        assert np.allclose(probs.sum(axis=1), 1.0)

    def test_classes_ordered_by_frequency(self, tz_data):
        _, X, labels = tz_data
        model = train_matrix(X, labels, TrainConfig(max_epochs=2))
        assert model.classes == ["XA", "XB", "XC"]

    def test_objective_never_increases(self, tz_data):
        _, X, labels = tz_data
        model = train_matrix(X, labels, TrainConfig(max_epochs=40, learning_rate=5.0, tol=1e-9))
        history = np.array(model.history)
        assert np.all(np.diff(history) <= 1e-12)
        assert history[-1] < history[0]

    def test_deterministic(self, tz_data):
        _, X, labels = tz_data
        a = train_matrix(X, labels, TrainConfig(max_epochs=15))
        b = train_matrix(X, labels, TrainConfig(max_epochs=15))
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.biases, b.biases)

    def test_l2_shrinks_weights(self, tz_data):
        _, X, labels = tz_data
        cfg = TrainConfig(max_epochs=40, tol=1e-9)
        free = train_matrix(X, labels, cfg)
        shrunk = train_matrix(X, labels, cfg.with_l2(100.0))
        assert np.linalg.norm(shrunk.weights) < np.linalg.norm(free.weights)

    def test_class_weighting_balances_uninformative_data(self):
        # Every example has the same vector, so only the class prior can be learned.
        v = _vec({0: 1.0}, 1)
        dataset = [(v, "A")] * 9 + [(v, "B")]
        weighted = train(dataset, TrainConfig(max_epochs=30))
        unweighted = train(dataset, TrainConfig(max_epochs=30, class_weighting=False))
        assert predict(weighted, v).probabilities == pytest.approx([0.5, 0.5])
        p = predict(unweighted, v)
        assert p.label == "A"
        assert p.probability > 0.55

    def test_scaled_class_weights_give_the_same_predictions(self, tz_data, monkeypatch):
        _, X, labels = tz_data
        cfg = TrainConfig(max_epochs=15, l2_lambda=0.0)
        base = predict_matrix(train_matrix(X, labels, cfg), X)
        balanced = class_weights

        def scaled(counts):
            return {c: 5.0 * w for c, w in balanced(counts).items()}

        monkeypatch.setattr("geotweet.model.class_weights", scaled)
        pred, probs = predict_matrix(train_matrix(X, labels, cfg), X)
        assert pred == base[0]
        assert probs == pytest.approx(base[1], abs=1e-4)

    def test_vocab_fingerprint_recorded(self, tz_data):
        vocab, X, labels = tz_data
        model = train_matrix(X, labels, TrainConfig(max_epochs=2), vocab_fingerprint="abc")
        assert model.vocab_fingerprint == "abc"
        assert model.config == TrainConfig(max_epochs=2)

    def test_single_class(self):
        with pytest.raises(SingleClassData):
            train([(_vec({0: 1.0}, 1), "A")] * 3, TrainConfig())

    def test_empty(self):
        with pytest.raises(EmptyTrainingSet):
            train([], TrainConfig())

    @pytest.mark.parametrize(
        "kwargs",
        [{"tol": 0.0}, {"max_epochs": 0}, {"learning_rate": -1.0}, {"l2_lambda": -0.1}],
    )
    def test_invalid_config(self, kwargs):
        with pytest.raises(TrainConfigError):
            TrainConfig(**kwargs).validate()


class TestPredict:
    def test_probabilities_sum_to_one(self):
        model = _random_model()
        p = predict(model, _vec({0: 1.0, 4: 2.0}, 5))
        assert p.probabilities.sum() == pytest.approx(1.0)
        assert p.label == model.classes[int(np.argmax(p.probabilities))]

    def test_bias_only_scores(self):
        model = MaxEntModel(["A", "B"], np.zeros((2, 1)), np.array([1.0, 0.0]))
        p = predict(model, _vec({0: 1.0}, 1))
        assert p.label == "A"
        assert p.probabilities == pytest.approx([0.7311, 0.2689], abs=1e-4)

    def test_shift_invariance(self):
        model = _random_model(seed=2)
        shifted = _with(model, weights=model.weights + 3.0, biases=model.biases - 11.0)
        for pairs in ({0: 1.0}, {1: 2.0, 4: 1.0}, {}):
            v = _vec(pairs, 5)
            assert predict(shifted, v).probabilities == pytest.approx(
                predict(model, v).probabilities
            )

    def test_tie_goes_to_first_class(self):
        model = MaxEntModel.zeros(["B", "A"], 3)
        assert predict(model, _vec({1: 1.0}, 3)).label == "B"

    def test_matrix_matches_single(self, tz_data, labeled_corpus):
        vocab, X, labels = tz_data
        model = train_matrix(X, labels, TrainConfig(max_epochs=5))
        pred, probs = predict_matrix(model, X)
        single = predict(model, featurize(labeled_corpus[3], ["tz"], vocab))
        assert single.label == pred[3]
        assert single.probabilities == pytest.approx(probs[3])

    def test_dims_mismatch(self):
        with pytest.raises(ContractError):
            predict(_random_model(dims=5), _vec({0: 1.0}, 6))

    def test_model_needs_two_classes(self):
        with pytest.raises(SingleClassData):
            MaxEntModel(["A"], np.zeros((1, 2)), np.zeros(1))


class TestPersistence:
    def test_roundtrip(self, tmp_path: Path, tz_data):
        vocab, X, labels = tz_data
        cfg = TrainConfig(max_epochs=5, l2_lambda=0.1)
        model = train_matrix(X, labels, cfg, vocab_fingerprint=vocab.fingerprint)
        path = save_model(tmp_path / "m" / "model.h5", model)
        loaded = load_model(path, vocab)
        assert loaded.classes == model.classes
        assert np.array_equal(loaded.weights, model.weights)
        assert np.array_equal(loaded.biases, model.biases)
        assert loaded.config == cfg
        assert loaded.history == pytest.approx(model.history)
        assert predict_matrix(loaded, X)[0] == predict_matrix(model, X)[0]

    def test_format_attrs(self, tmp_path: Path):
        path = save_model(tmp_path / "model.h5", _random_model())
        with h5py.File(path, "r") as f:
            assert f.attrs["format_version"] == 1
            assert "created_at" in f.attrs
        assert not (tmp_path / "model.h5.tmp").exists()

    def test_fingerprint_mismatch(self, tmp_path: Path, tz_data, labeled_corpus):
        vocab, X, labels = tz_data
        model = train_matrix(X, labels, TrainConfig(max_epochs=2), vocab_fingerprint="0" * 64)
        path = save_model(tmp_path / "model.h5", model)
        with pytest.raises(FingerprintMismatch):
            load_model(path, vocab)

    def test_not_an_hdf5_file(self, tmp_path: Path):
        path = tmp_path / "model.h5"
        path.write_text("not hdf5")
        with pytest.raises(FormatError):
            load_model(path)

    def test_newer_format_rejected(self, tmp_path: Path):
        path = save_model(tmp_path / "model.h5", _random_model())
        with h5py.File(path, "a") as f:
            f.attrs["format_version"] = 99
        with pytest.raises(FormatError, match="format_version"):
            load_model(path)
