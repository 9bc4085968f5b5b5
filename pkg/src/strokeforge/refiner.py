"""CNN decoder that adjusts the recurrent decoder's next-stroke distribution.

The network looks at a raster of everything drawn so far and produces the
same mixture head as the recurrent decoder.  The two raw heads are combined
as ``alpha * rnn + (1 - alpha) * cnn`` before the mixture nonlinearities,
so the blended output satisfies the usual parameter constraints by
construction.  Training draws a random crop of each sketch, renders the
prefix for the CNN, and teacher-forces the recurrent decoder (frozen)
through the whole sketch while the loss counts only the suffix labels.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .data import PEN_END, pad_points, random_crop
from .kernels import draw_lines
from .netblocks import ConvStack, freeze, replicate_channels
from .raster import RASTER_SIZE, render, transform_points
from .vae import gmm_nll, pen_cross_entropy, split_mixture

FULL_CONV_DEPTHS = (3, 128, 128, 256, 256, 512)
FULL_CONV_STRIDES = (1, 2, 1, 2, 2, 2)


@dataclass
class RefinerConfig:
    conv_depths: tuple = FULL_CONV_DEPTHS
    conv_strides: tuple = FULL_CONV_STRIDES
    kernel: int = 3
    dense_widths: tuple = (1024, 512)
    mixture_count: int = 20
    blend_alpha: float = 0.5
    image_size: int = RASTER_SIZE

    def __post_init__(self):
        if len(self.conv_depths) != 6 or len(self.conv_strides) != 6:
            raise ag.ShapeError(
                f"refiner wants 6 conv layers, got {len(self.conv_depths)} depths / {len(self.conv_strides)} strides"
            )
        if not 0.0 <= self.blend_alpha <= 1.0:
            raise ValueError(f"blend_alpha must lie in [0, 1], got {self.blend_alpha}")

    @property
    def head_size(self):
        return 6 * self.mixture_count + 3

    def as_dict(self):
        return {
            "conv_depths": list(self.conv_depths),
            "conv_strides": list(self.conv_strides),
            "kernel": self.kernel,
            "dense_widths": list(self.dense_widths),
            "mixture_count": self.mixture_count,
            "blend_alpha": self.blend_alpha,
            "image_size": self.image_size,
        }

    @classmethod
    def small(cls, **overrides):
        base = dict(conv_depths=(1, 4, 4, 8, 8, 8), conv_strides=FULL_CONV_STRIDES,
                    dense_widths=(32, 16), mixture_count=5)
        base.update(overrides)
        return cls(**base)


class CNNRefiner:
    """Conv stack (ReLU) -> flatten -> 3 dense layers (ELU) with a skip from
    the first dense output, linearly projected, into the third dense input."""

    def __init__(self, config=None, rng=None):
        self.config = config or RefinerConfig()
        rng = rng or np.random.default_rng(0)
        cfg = self.config
        self.conv = ConvStack(rng, cfg.conv_depths, cfg.conv_strides, cfg.kernel, prefix="conv")
        spatial = cfg.image_size
        for stride in cfg.conv_strides:
            spatial = -(-spatial // stride)
        self.flat_size = spatial * spatial * cfg.conv_depths[-1]
        w1, w2 = cfg.dense_widths
        self.dense1 = ag.dense_init(rng, self.flat_size, w1)
        self.dense2 = ag.dense_init(rng, w1, w2)
        self.skip_proj = ag.dense_init(rng, w1, w2)
        self.dense3 = ag.dense_init(rng, w2, cfg.head_size)

    def params(self):
        out = self.conv.params()
        for prefix, (w, b) in (
            ("dense1", self.dense1),
            ("dense2", self.dense2),
            ("skip_proj", self.skip_proj),
            ("dense3", self.dense3),
        ):
            out[f"{prefix}.weights"] = w
            out[f"{prefix}.bias"] = b
        return out

    def load_arrays(self, arrays, requires_grad=True):
        for name, p in self.params().items():
            p.data = arrays[name].astype(np.float32).copy()
            p.requires_grad = requires_grad
            p.grad = None
        return self

    def _check_image(self, images):
        size = self.config.image_size
        if images.ndim == 2:
            images = images[None, None, :, :]
        elif images.ndim == 3:
            images = images[:, None, :, :]
        if images.shape[-2:] != (size, size):
            raise ag.ShapeError(f"refiner expects {size}x{size} images, got {images.shape[-2:]}")
        return images

    def conv_features(self, images):
        """[B, 1, H, W] (or [H, W]) -> conv stack output before flattening."""
        images = self._check_image(np.asarray(images, dtype=np.float32))
        x = Tensor(replicate_channels(images, self.config.conv_depths[0]))
        return self.conv.forward(x)

    def head(self, images):
        """Raw mixture head [B, 6M+3] for a batch of rasters."""
        feat = self.conv_features(images)
        b = feat.shape[0]
        flat = ag.reshape(feat, (b, self.flat_size))
        d1 = ag.elu(ag.dense(flat, *self.dense1))
        d2 = ag.elu(ag.dense(d1, *self.dense2))
        d3_in = d2 + ag.dense(d1, *self.skip_proj)
        return ag.dense(d3_in, *self.dense3)

    def refine(self, image):
        """128x128 raster -> MixtureParams for the next stroke point."""
        return split_mixture(self.head(image), self.config.mixture_count)


def blend_heads(rnn_head, cnn_head, alpha):
    """Convex combination of raw heads; endpoints return the input untouched
    so alpha in {0, 1} is bit-exact."""
    if rnn_head.shape != cnn_head.shape:
        raise ag.ShapeError(f"blend: head sizes differ, {rnn_head.shape} vs {cnn_head.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"blend alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return rnn_head
    if alpha == 0.0:
        return cnn_head
    return rnn_head * float(alpha) + cnn_head * float(1.0 - alpha)


def blend(rnn_head, cnn_head, alpha, mixture_count):
    """Blend raw heads, then parameterize into MixtureParams."""
    return split_mixture(blend_heads(rnn_head, cnn_head, alpha), mixture_count)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def crop_losses(baseline, refiner, sequence, rng, alpha, offset_scale=1.0):
    """Losses for one random crop of one sketch.

    The prefix raster feeds the CNN once; its head is blended into every
    teacher-forced decoder step of the suffix.  Offset loss runs through the
    end-of-sketch marker, pen loss through the padded maximum, both divided
    by the padded maximum length.
    """
    pair = random_crop(sequence, rng)
    max_len = baseline.config.max_seq_len
    m = baseline.config.mixture_count

    raster = render(pair.prefix, offset_scale=offset_scale, size=refiner.config.image_size)
    cnn_head = refiner.head(raster)  # [1, 6M+3]

    padded = pad_points(sequence.points[:max_len], max_len)
    latent = baseline.encode_batch(padded[None], rng=rng)
    heads = baseline.teacher_forced_heads(padded[None], latent.z)

    cut = len(pair.prefix)
    stop = int(np.flatnonzero(padded[:, PEN_END] == 1)[0]) + 1
    offset_total = Tensor(np.zeros((), dtype=np.float32))
    pen_total = Tensor(np.zeros((), dtype=np.float32))
    for t in range(cut, max_len):
        mix = split_mixture(blend_heads(heads[t], cnn_head, alpha), m)
        if t < stop:
            offset_total = offset_total + gmm_nll(mix, float(padded[t, 0]), float(padded[t, 1]))
        pen_total = pen_total + pen_cross_entropy(mix.pen_logits, padded[t, 2:5])
    return offset_total * (1.0 / max_len), pen_total * (1.0 / max_len)


def train_refiner(sequences, baseline, config=None, steps=500, batch_size=8,
                  lr=1e-6, seed=0, offset_scale=1.0, checkpoint_path=None,
                  log_fh=None, meta=None):
    """Train the CNN decoder against a frozen recurrent baseline.

    ``baseline`` may be a SketchVAE or a checkpoint path.  Only CNN
    parameters receive gradients; the baseline is left bit-identical.
    Returns (refiner, records) with records (step, offset, pen, kl=0, total).
    """
    from .optim import Adam
    from .vae import LOSS_CSV_HEADER, TrainingDiverged, load_baseline

    if isinstance(baseline, (str, bytes)) or hasattr(baseline, "__fspath__"):
        baseline, _ = load_baseline(baseline, requires_grad=False)
    else:
        freeze(baseline.params())

    config = config or RefinerConfig.small(mixture_count=baseline.config.mixture_count)
    if config.mixture_count != baseline.config.mixture_count:
        raise ag.ShapeError(
            f"refiner mixture count {config.mixture_count} != baseline {baseline.config.mixture_count}"
        )
    refiner = CNNRefiner(config, rng=np.random.default_rng(seed))
    params = refiner.params()
    opt = Adam(params, lr=lr)
    rng = np.random.default_rng(seed + 1)
    alpha = config.blend_alpha
    records = []
    if log_fh:
        print(LOSS_CSV_HEADER, file=log_fh)
    usable = [s for s in sequences if len(s) >= 2]
    if not usable:
        raise ag.ShapeError("train_refiner: no sequences of length >= 2")
    for step in range(steps):
        idx = rng.integers(0, len(usable), size=min(batch_size, len(usable)))
        try:
            offset_acc = Tensor(np.zeros((), dtype=np.float32))
            pen_acc = Tensor(np.zeros((), dtype=np.float32))
            for i in idx:
                l_offset, l_pen = crop_losses(baseline, refiner, usable[i], rng, alpha, offset_scale)
                offset_acc = offset_acc + l_offset
                pen_acc = pen_acc + l_pen
            scale = 1.0 / len(idx)
            total = (offset_acc + pen_acc) * scale
            ag.zero_grad(params)
            grads = ag.backward(total, params)
        except ag.NonFiniteError as err:
            raise TrainingDiverged(f"non-finite loss at step {step}: {err}") from err
        opt.step(grads)
        row = (step, offset_acc.item() * scale, pen_acc.item() * scale, 0.0, total.item())
        records.append(row)
        if log_fh:
            print(f"{step},{row[1]:.6f},{row[2]:.6f},{row[3]:.6f},{row[4]:.6f}", file=log_fh)
    if checkpoint_path:
        arrays = {name: p.data for name, p in params.items()}
        save_checkpoint(checkpoint_path, arrays,
                        meta={"kind": "refiner", "config": config.as_dict(), "lr": lr, **(meta or {})})
    return refiner, records


def load_refiner(path, requires_grad=False):
    arrays, meta = load_checkpoint(path)
    cfg_dict = dict(meta["config"])
    cfg_dict["conv_depths"] = tuple(cfg_dict["conv_depths"])
    cfg_dict["conv_strides"] = tuple(cfg_dict["conv_strides"])
    cfg_dict["dense_widths"] = tuple(cfg_dict["dense_widths"])
    config = RefinerConfig(**cfg_dict)
    refiner = CNNRefiner(config, rng=np.random.default_rng(0))
    refiner.load_arrays(arrays, requires_grad=requires_grad)
    return refiner, meta


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

class _IncrementalRaster:
    """Raster of the points generated so far.

    Adds only the newest segment while the bounding box is stable; rerenders
    from scratch when the box grows or every ``rerender_every`` steps, since
    the box fit moves every previously drawn pixel.
    """

    def __init__(self, offset_scale, size, rerender_every=32):
        self.offset_scale = offset_scale
        self.size = size
        self.rerender_every = rerender_every
        self.absolute = [(0.0, 0.0)]  # pen positions, origin anchor first
        self.pen_down = [True]
        self.image = None
        self.box = None
        self.count = 0

    def _sync(self, points):
        for row in points[len(self.absolute) - 1 :]:
            px, py = self.absolute[-1]
            self.absolute.append((px + float(row[0]) * self.offset_scale,
                                  py + float(row[1]) * self.offset_scale))
            self.pen_down.append(bool(row[2] == 1))

    def update(self, points):
        self._sync(points)
        self.count += 1
        pts = np.asarray(self.absolute, dtype=np.float64)
        box = (pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max())
        grew = self.box is None or box != self.box
        if grew or self.count % self.rerender_every == 0:
            self.box = box
            rows = np.asarray(points, dtype=np.float32).reshape(-1, 5) if len(points) else np.zeros((0, 5), np.float32)
            self.image = render(rows, self.offset_scale, size=self.size, viewport=box)
        elif len(self.absolute) >= 2:
            # box unchanged: the fit transform is identical, so only the
            # newest transition needs drawing
            pix = np.rint(transform_points(pts[-2:], self.size, self.box)).astype(np.int64)
            if self.pen_down[-2]:
                draw_lines(self.image, np.ascontiguousarray(pix.reshape(1, 4)))
            for x, y in pix:
                if 0 <= x < self.size and 0 <= y < self.size:
                    self.image[y, x] = 1.0
        return self.image


def refined_sample(baseline, refiner, z, temperature=1.0, alpha=None, rng=None,
                   offset_scale=1.0, max_seq_len=None):
    """Sample with the CNN decoder in the loop.

    At each step the points generated so far are rasterized, the CNN head is
    computed and blended with the recurrent head, and the next point is
    sampled from the blended mixture.  alpha=1 reproduces the plain sampler
    byte for byte (the CNN still runs, which is why this path is slower).
    """
    from .vae import sample_sketch

    if alpha is None:
        alpha = refiner.config.blend_alpha
    raster = _IncrementalRaster(offset_scale, refiner.config.image_size)

    def hook(head, points):
        image = raster.update(points)
        cnn_head = refiner.head(image)
        return blend_heads(head, cnn_head, alpha)

    return sample_sketch(baseline, z, temperature=temperature, rng=rng,
                         max_seq_len=max_seq_len, step_hook=hook)


def sampling_times(baseline, refiner, z, seed, temperature=1.0, max_seq_len=None):
    """(plain_seconds, refined_seconds) for the same seed and alpha=1."""
    from .vae import sample_sketch

    t0 = time.perf_counter()
    sample_sketch(baseline, z, temperature, np.random.default_rng(seed), max_seq_len)
    t1 = time.perf_counter()
    refined_sample(baseline, refiner, z, temperature, 1.0, np.random.default_rng(seed),
                   max_seq_len=max_seq_len)
    t2 = time.perf_counter()
    return t1 - t0, t2 - t1
