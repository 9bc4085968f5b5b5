"""Three-way CNN judge over sketch rasters and its confusion-matrix report.

Classes are fixed in the order (sketch-rnn, refiner, human) everywhere:
row/column order of the confusion matrix, label integers, and corpus
directory names.  The headline "mislead rate" of a generated class is the
probability its sketches are predicted human, i.e. that row's last cell.
"""

import io
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .netblocks import ConvStack, DenseStack, replicate_channels
from .raster import RASTER_SIZE

CLASS_NAMES = ("sketch-rnn", "refiner", "human")


@dataclass
class DiscriminatorConfig:
    kernels_per_layer: tuple = (64, 64, 128, 128, 256, 256)
    strides: tuple = (1, 2, 1, 2, 1, 2)
    kernel: int = 3
    dense_widths: tuple = (512, 128)
    in_channels: int = 1
    image_size: int = RASTER_SIZE
    classes: int = 3

    def __post_init__(self):
        if len(self.kernels_per_layer) != 6 or len(self.strides) != 6:
            raise ag.ShapeError("discriminator wants six conv layers")
        if self.classes != 3:
            raise ag.ShapeError("discriminator is a 3-class judge")

    def as_dict(self):
        return {
            "kernels_per_layer": list(self.kernels_per_layer),
            "strides": list(self.strides),
            "kernel": self.kernel,
            "dense_widths": list(self.dense_widths),
            "in_channels": self.in_channels,
            "image_size": self.image_size,
            "classes": self.classes,
        }

    @classmethod
    def small(cls, **overrides):
        base = dict(kernels_per_layer=(4, 4, 8, 8, 8, 8), dense_widths=(32, 16))
        base.update(overrides)
        return cls(**base)


class Discriminator:
    def __init__(self, config=None, rng=None):
        self.config = config or DiscriminatorConfig()
        rng = rng or np.random.default_rng(0)
        cfg = self.config
        self.conv = ConvStack(rng, cfg.kernels_per_layer, cfg.strides, cfg.kernel, prefix="conv")
        # first conv maps the raster's channel count onto kernels_per_layer[0]
        self.conv.kernels[0] = ag.conv_init(rng, cfg.kernels_per_layer[0], cfg.in_channels, cfg.kernel, cfg.kernel)
        spatial = cfg.image_size
        for stride in cfg.strides:
            spatial = -(-spatial // stride)
        self.flat_size = spatial * spatial * cfg.kernels_per_layer[-1]
        self.dense = DenseStack(rng, (self.flat_size,) + tuple(cfg.dense_widths) + (cfg.classes,), prefix="dense")

    def params(self):
        out = self.conv.params()
        out.update(self.dense.params())
        return out

    def load_arrays(self, arrays, requires_grad=True):
        for name, p in self.params().items():
            p.data = arrays[name].astype(np.float32).copy()
            p.requires_grad = requires_grad
            p.grad = None
        return self

    def _check_images(self, images):
        size = self.config.image_size
        images = np.asarray(images, dtype=np.float32)
        if images.ndim == 2:
            images = images[None, None]
        elif images.ndim == 3:
            images = images[:, None]
        if images.shape[-2:] != (size, size):
            raise ag.ShapeError(f"discriminator expects {size}x{size} rasters, got {images.shape[-2:]}")
        return images

    def logits(self, images):
        images = self._check_images(images)
        x = Tensor(replicate_channels(images, self.config.in_channels))
        feat = self.conv.forward(x)
        flat = ag.reshape(feat, (feat.shape[0], self.flat_size))
        return self.dense.forward(flat)

    def penultimate(self, images):
        """Activations of the last hidden dense layer (feature extractor)."""
        images = self._check_images(images)
        x = Tensor(replicate_channels(images, self.config.in_channels))
        feat = self.conv.forward(x)
        h = ag.reshape(feat, (feat.shape[0], self.flat_size))
        for w, b in self.dense.layers[:-1]:
            h = ag.elu(ag.dense(h, w, b))
        return h.data.copy()

    def classify(self, image):
        """Raster -> probability vector over (sketch-rnn, refiner, human)."""
        probs = ag.softmax(self.logits(image), axis=-1).data
        return probs[0] if probs.shape[0] == 1 and np.asarray(image).ndim == 2 else probs

    def predict(self, images):
        """Argmax class indices; ties resolve to the lowest class index."""
        probs = ag.softmax(self.logits(images), axis=-1).data
        return np.argmax(probs, axis=-1)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train_discriminator(images, labels, config=None, steps=200, batch_size=32,
                        lr=1e-3, seed=0, val_images=None, val_labels=None,
                        checkpoint_path=None, log_fh=None):
    """Cross-entropy training of the judge.

    images: [N, H, W] float32, labels: [N] ints in {0, 1, 2}.  Requires at
    least 3 examples of every class.  Returns (model, records) where records
    are (step, loss) pairs; per-class validation accuracy is computed when a
    validation set is given.
    """
    from .optim import Adam
    from .vae import TrainingDiverged

    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=3)
    if np.any(counts < 3):
        missing = [CLASS_NAMES[i] for i in range(3) if counts[i] < 3]
        raise ag.ShapeError(f"need at least 3 examples per class, short on: {', '.join(missing)}")

    config = config or DiscriminatorConfig.small()
    model = Discriminator(config, rng=np.random.default_rng(seed))
    params = model.params()
    opt = Adam(params, lr=lr)
    rng = np.random.default_rng(seed + 1)
    one_hot = np.eye(3, dtype=np.float32)[labels]
    records = []
    for step in range(steps):
        idx = rng.integers(0, len(images), size=min(batch_size, len(images)))
        try:
            logits = model.logits(images[idx])
            logp = logits - ag.reshape(ag.logsumexp(logits, axis=-1), (len(idx), 1))
            loss = ag.sum_(ag.mul(Tensor(one_hot[idx]), logp)) * (-1.0 / len(idx))
            ag.zero_grad(params)
            grads = ag.backward(loss, params)
        except ag.NonFiniteError as err:
            raise TrainingDiverged(f"non-finite loss at step {step}: {err}") from err
        opt.step(grads)
        records.append((step, loss.item()))
        if log_fh:
            print(f"{step},{loss.item():.6f}", file=log_fh)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, {n: p.data for n, p in params.items()},
                        meta={"kind": "discriminator", "config": config.as_dict()})
    if val_images is not None:
        acc = per_class_accuracy(model, val_images, val_labels)
        return model, records, acc
    return model, records


def load_discriminator(path, requires_grad=False):
    arrays, meta = load_checkpoint(path)
    cfg = dict(meta["config"])
    for key in ("kernels_per_layer", "strides", "dense_widths"):
        cfg[key] = tuple(cfg[key])
    model = Discriminator(DiscriminatorConfig(**cfg), rng=np.random.default_rng(0))
    model.load_arrays(arrays, requires_grad=requires_grad)
    return model, meta


def predict_in_batches(model, images, batch_size=32):
    images = np.asarray(images, dtype=np.float32)
    out = []
    for start in range(0, len(images), batch_size):
        out.append(model.predict(images[start : start + batch_size]))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def per_class_accuracy(model, images, labels):
    labels = np.asarray(labels)
    preds = predict_in_batches(model, images)
    return {
        CLASS_NAMES[c]: float((preds[labels == c] == c).mean())
        for c in range(3)
        if np.any(labels == c)
    }


# ---------------------------------------------------------------------------
# confusion matrix
# ---------------------------------------------------------------------------

@dataclass
class ConfusionMatrix:
    """Row-normalized percentages; rows are true classes, columns predictions.
    Rows with no evaluation examples hold NaN and are flagged."""

    percent: np.ndarray
    counts: np.ndarray

    @property
    def missing_rows(self):
        return [CLASS_NAMES[i] for i in range(3) if self.counts[i].sum() == 0]

    def mislead_rate(self, generated_class):
        """P(predicted human | true class) for a generated class row."""
        row = CLASS_NAMES.index(generated_class) if isinstance(generated_class, str) else generated_class
        return float(self.percent[row, CLASS_NAMES.index("human")])

    def to_csv(self):
        buf = io.StringIO()
        print("label," + ",".join(CLASS_NAMES), file=buf)
        for i, name in enumerate(CLASS_NAMES):
            cells = ",".join("" if np.isnan(v) else f"{v:.1f}" for v in self.percent[i])
            print(f"{name},{cells}", file=buf)
        return buf.getvalue()

    def to_text(self):
        width = 16
        lines = ["".join(s.ljust(width) for s in ("label \\ predict",) + CLASS_NAMES)]
        for i, name in enumerate(CLASS_NAMES):
            cells = tuple("n/a" if np.isnan(v) else f"{v:.1f}%" for v in self.percent[i])
            lines.append("".join(s.ljust(width) for s in (name,) + cells))
        return "\n".join(lines)


def confusion_from_predictions(true_labels, predicted_labels):
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    counts = np.zeros((3, 3), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        counts[t, p] += 1
    with np.errstate(invalid="ignore"):
        percent = 100.0 * counts / counts.sum(axis=1, keepdims=True)
    return ConfusionMatrix(percent=percent, counts=counts)


def confusion(model, images, labels):
    """Evaluate the judge on labeled rasters and tabulate row percentages."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ag.ShapeError("confusion: empty evaluation set")
    preds = predict_in_batches(model, images)
    return confusion_from_predictions(labels, preds)
