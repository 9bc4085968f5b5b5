"""Three-way raster judge: classification, training, confusion reporting."""

import numpy as np
import pytest

from strokeforge import autograd as ag
from strokeforge.discriminator import (
    Discriminator,
    DiscriminatorConfig,
    confusion,
    confusion_from_predictions,
    train_discriminator,
)

SMALL32 = dict(kernels_per_layer=(4, 4, 8, 8, 8, 8), dense_widths=(16, 8), image_size=32)


def synthetic_classes(count_per_class, size=128, seed=0):
    """Separable raster classes: circles, straight lines, crosses."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    yy, xx = np.mgrid[0:size, 0:size]
    thick = max(size // 48, 1)
    for i in range(count_per_class * 3):
        cls = i % 3
        img = np.zeros((size, size), dtype=np.float32)
        if cls == 0:  # ring
            cx, cy = rng.integers(size // 3, 2 * size // 3, 2)
            r = rng.integers(size // 6, size // 4)
            d = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
            img[np.abs(d - r) < thick + 0.5] = 1.0
        elif cls == 1:  # one straight full-width bar
            if rng.random() < 0.5:
                row = rng.integers(8, size - 8)
                img[row : row + thick, 8 : size - 8] = 1.0
            else:
                col = rng.integers(8, size - 8)
                img[8 : size - 8, col : col + thick] = 1.0
        else:  # cross of two full-span bars
            cx = rng.integers(size // 4, 3 * size // 4)
            cy = rng.integers(size // 4, 3 * size // 4)
            img[cy : cy + thick, 8 : size - 8] = 1.0
            img[8 : size - 8, cx : cx + thick] = 1.0
        images.append(img)
        labels.append(cls)
    return np.stack(images), np.asarray(labels)


class TestConfig:
    def test_full_scale_defaults(self):
        cfg = DiscriminatorConfig()
        assert cfg.kernels_per_layer == (64, 64, 128, 128, 256, 256)
        assert cfg.strides == (1, 2, 1, 2, 1, 2)
        assert cfg.kernel == 3
        assert cfg.classes == 3

    def test_six_layers_enforced(self):
        with pytest.raises(ag.ShapeError):
            DiscriminatorConfig(kernels_per_layer=(4, 4), strides=(1, 2))

    def test_three_classes_enforced(self):
        with pytest.raises(ag.ShapeError):
            DiscriminatorConfig(classes=2)


class TestClassify:
    def test_probabilities_sum_to_one(self):
        model = Discriminator(DiscriminatorConfig(**SMALL32), rng=np.random.default_rng(0))
        probs = model.classify(np.random.default_rng(1).random((32, 32)).astype(np.float32))
        assert probs.shape == (3,)
        assert abs(probs.sum() - 1.0) < 1e-6

    def test_zero_head_uniform(self):
        model = Discriminator(DiscriminatorConfig(**SMALL32), rng=np.random.default_rng(0))
        w, b = model.dense.layers[-1]
        w.data = np.zeros_like(w.data)
        b.data = np.zeros_like(b.data)
        probs = model.classify(np.ones((32, 32), dtype=np.float32))
        assert np.allclose(probs, 1.0 / 3.0, atol=1e-7)

    def test_argmax_tie_breaks_to_lowest_index(self):
        model = Discriminator(DiscriminatorConfig(**SMALL32), rng=np.random.default_rng(0))
        w, b = model.dense.layers[-1]
        w.data = np.zeros_like(w.data)
        b.data = np.zeros_like(b.data)  # three-way tie
        image = np.zeros((1, 32, 32), dtype=np.float32)
        assert model.predict(image)[0] == 0
        b.data = np.array([0.0, 4.0, 4.0], dtype=np.float32)  # two-way tie
        assert model.predict(image)[0] == 1

    def test_wrong_size_rejected(self):
        model = Discriminator(DiscriminatorConfig(**SMALL32), rng=np.random.default_rng(0))
        with pytest.raises(ag.ShapeError, match="32x32"):
            model.classify(np.zeros((64, 64), dtype=np.float32))

    def test_deterministic_for_fixed_weights(self):
        model = Discriminator(DiscriminatorConfig(**SMALL32), rng=np.random.default_rng(2))
        image = np.random.default_rng(3).random((32, 32)).astype(np.float32)
        assert np.array_equal(model.classify(image), model.classify(image))


class TestTraining:
    def test_missing_class_rejected(self):
        images = np.zeros((6, 32, 32), dtype=np.float32)
        labels = np.array([0, 0, 0, 1, 1, 1])  # no "human" examples
        with pytest.raises(ag.ShapeError, match="human"):
            train_discriminator(images, labels, config=DiscriminatorConfig(**SMALL32))

    def test_learns_separable_classes(self):
        images, labels = synthetic_classes(20, size=32, seed=1)
        model, _, acc = train_discriminator(
            images, labels, config=DiscriminatorConfig(**SMALL32), steps=60,
            batch_size=16, lr=3e-3, seed=0, val_images=images, val_labels=labels)
        assert np.mean(list(acc.values())) > 0.8

    def test_shuffled_labels_stay_at_chance(self):
        images, labels = synthetic_classes(20, size=32, seed=2)
        rng = np.random.default_rng(3)
        shuffled = labels.copy()
        rng.shuffle(shuffled)
        val_images, val_labels = synthetic_classes(10, size=32, seed=4)
        rng.shuffle(val_labels)  # labels carry no signal at all
        model, _, acc = train_discriminator(
            images, shuffled, config=DiscriminatorConfig(**SMALL32), steps=40,
            batch_size=16, lr=3e-3, seed=0, val_images=val_images, val_labels=val_labels)
        overall = np.mean(list(acc.values()))
        assert abs(overall - 1.0 / 3.0) < 0.10


class TestConfusion:
    def test_perfect_predictions_identity(self):
        labels = np.repeat([0, 1, 2], 50)
        matrix = confusion_from_predictions(labels, labels)
        assert np.allclose(np.diag(matrix.percent), 100.0)
        assert matrix.percent.sum() == pytest.approx(300.0)

    def test_rows_sum_to_hundred(self):
        rng = np.random.default_rng(5)
        labels = np.repeat([0, 1, 2], 40)
        preds = rng.integers(0, 3, size=len(labels))
        matrix = confusion_from_predictions(labels, preds)
        assert np.all(np.abs(matrix.percent.sum(axis=1) - 100.0) < 0.1)

    def test_golden_matrix_from_stored_predictions(self):
        # stored prediction fixture: 1000 sketches per class
        rows = ((706, 220, 74), (232, 632, 136), (9, 39, 952))
        true_labels, predictions = [], []
        for cls, counts in enumerate(rows):
            for pred, count in enumerate(counts):
                true_labels.extend([cls] * count)
                predictions.extend([pred] * count)
        matrix = confusion_from_predictions(true_labels, predictions)
        expected = np.array([[70.6, 22.0, 7.4], [23.2, 63.2, 13.6], [0.9, 3.9, 95.2]])
        assert np.allclose(matrix.percent, expected, atol=1e-9)
        text = matrix.to_text()
        for value in ("70.6%", "22.0%", "7.4%", "23.2%", "63.2%", "13.6%", "0.9%", "3.9%", "95.2%"):
            assert value in text
        csv = matrix.to_csv()
        assert "sketch-rnn,70.6,22.0,7.4" in csv
        assert "refiner,23.2,63.2,13.6" in csv
        assert "human,0.9,3.9,95.2" in csv

    def test_mislead_rate_is_generated_to_human_cell(self):
        rows = ((706, 220, 74), (232, 632, 136), (9, 39, 952))
        true_labels, predictions = [], []
        for cls, counts in enumerate(rows):
            for pred, count in enumerate(counts):
                true_labels.extend([cls] * count)
                predictions.extend([pred] * count)
        matrix = confusion_from_predictions(true_labels, predictions)
        assert matrix.mislead_rate("refiner") == pytest.approx(13.6)
        assert matrix.mislead_rate("sketch-rnn") == pytest.approx(7.4)
        assert matrix.mislead_rate(1) == matrix.percent[1, 2]

    def test_single_class_eval_flags_missing_rows(self):
        labels = np.zeros(10, dtype=int)
        preds = np.zeros(10, dtype=int)
        matrix = confusion_from_predictions(labels, preds)
        assert matrix.missing_rows == ["refiner", "human"]
        assert np.isnan(matrix.percent[1]).all()
        assert "n/a" in matrix.to_text()

    def test_confusion_runs_model(self):
        model = Discriminator(DiscriminatorConfig(**SMALL32), rng=np.random.default_rng(0))
        images = np.random.default_rng(1).random((9, 32, 32)).astype(np.float32)
        labels = np.repeat([0, 1, 2], 3)
        matrix = confusion(model, images, labels)
        assert matrix.counts.sum() == 9

    def test_empty_eval_rejected(self):
        model = Discriminator(DiscriminatorConfig(**SMALL32), rng=np.random.default_rng(0))
        with pytest.raises(ag.ShapeError, match="empty"):
            confusion(model, np.zeros((0, 32, 32)), [])
