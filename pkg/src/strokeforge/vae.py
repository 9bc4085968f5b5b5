"""Sequence VAE over stroke-5 sketches.

Bidirectional LSTM encoder -> diagonal Gaussian latent -> autoregressive
LSTM decoder whose head parameterizes a bivariate Gaussian mixture over the
next offset plus a 3-way pen-state categorical.  Training minimizes

    offset_loss + pen_loss + kl_weight * kl_loss

under teacher forcing.  The offset loss sums the mixture negative log
density over steps up to and including the end-of-sketch marker and then
divides by the padded maximum length (not by the stop index); the pen loss
runs over every padded step.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import save_checkpoint
from .data import PEN_END, StrokeSequence, pad_points

START_TOKEN = np.array([0.0, 0.0, 1.0, 0.0, 0.0], dtype=np.float32)

# tanh output is shrunk by this factor so |corr| stays strictly below 1
# even where float32 tanh saturates to exactly +-1
_CORR_SHRINK = 1.0 - 1e-6
_SIGMA_FLOOR = 1e-6
_DENSITY_FLOOR_LOG = math.log(1e-30)
_LOG_TWO_PI = math.log(2.0 * math.pi)


@dataclass
class VAEConfig:
    latent_dim: int = 128
    encoder_hidden: int = 256
    decoder_hidden: int = 512
    mixture_count: int = 20
    max_seq_len: int = 250

    @property
    def head_size(self):
        return 6 * self.mixture_count + 3

    def as_dict(self):
        return {
            "latent_dim": self.latent_dim,
            "encoder_hidden": self.encoder_hidden,
            "decoder_hidden": self.decoder_hidden,
            "mixture_count": self.mixture_count,
            "max_seq_len": self.max_seq_len,
        }


def small_config(**overrides):
    """Small dimensions for fast local runs and tests."""
    base = dict(latent_dim=32, encoder_hidden=64, decoder_hidden=128, mixture_count=5, max_seq_len=48)
    base.update(overrides)
    return VAEConfig(**base)


@dataclass
class LatentCode:
    mu: Tensor
    sigma: Tensor
    z: Tensor
    logvar: Tensor
    noise: np.ndarray


@dataclass
class MixtureParams:
    """Per-step mixture head: simplex weights, bivariate normal parameters
    (positive sigmas, |corr| < 1), and raw pen-state logits."""

    weights: Tensor
    mu_x: Tensor
    mu_y: Tensor
    sigma_x: Tensor
    sigma_y: Tensor
    corr: Tensor
    pen_logits: Tensor


def split_mixture(head, mixture_count):
    """Parameterize a raw head tensor [..., 6M+3] into MixtureParams."""
    m = mixture_count
    if head.shape[-1] != 6 * m + 3:
        raise ag.ShapeError(f"mixture head size {head.shape[-1]} != 6*{m}+3")
    return MixtureParams(
        weights=ag.softmax(ag.narrow(head, 0, m), axis=-1),
        mu_x=ag.narrow(head, m, m),
        mu_y=ag.narrow(head, 2 * m, m),
        sigma_x=ag.maximum(ag.exp(ag.narrow(head, 3 * m, m)), _SIGMA_FLOOR),
        sigma_y=ag.maximum(ag.exp(ag.narrow(head, 4 * m, m)), _SIGMA_FLOOR),
        corr=ag.mul(ag.tanh(ag.narrow(head, 5 * m, m)), _CORR_SHRINK),
        pen_logits=ag.narrow(head, 6 * m, 3),
    )


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def gmm_nll(params, target_dx, target_dy):
    """Negative log density of (dx, dy) under the bivariate mixture.

    Broadcasts over leading axes; mixture components live on the last axis.
    The mixture density is floored at 1e-30 before the log.
    """
    dx = ag._lift(target_dx)
    dy = ag._lift(target_dy)
    if dx.data.size > 1 or params.weights.ndim > 1:
        # vector targets broadcast against the component axis
        dx = ag.reshape(dx, (-1, 1))
        dy = ag.reshape(dy, (-1, 1))
    zx = (dx - params.mu_x) / params.sigma_x
    zy = (dy - params.mu_y) / params.sigma_y
    one_minus_r2 = 1.0 - ag.square(params.corr)
    quad = ag.square(zx) + ag.square(zy) - 2.0 * params.corr * zx * zy
    log_norm = (
        -quad / (2.0 * one_minus_r2)
        - ag.log(params.sigma_x)
        - ag.log(params.sigma_y)
        - 0.5 * ag.log(one_minus_r2)
        - _LOG_TWO_PI
    )
    log_mix = ag.logsumexp(ag.log(ag.maximum(params.weights, 1e-30)) + log_norm, axis=-1)
    return -ag.maximum(log_mix, _DENSITY_FLOOR_LOG)


def stop_index(target_points):
    """1-based index of the end-of-sketch marker."""
    ends = np.flatnonzero(np.asarray(target_points)[:, PEN_END] == 1)
    if len(ends) == 0:
        raise ag.ShapeError("targets carry no end-of-sketch (p3) point")
    return int(ends[0]) + 1

def log_softmax(logits, axis=-1):
    lse = ag.logsumexp(logits, axis=axis)
    return logits - ag.reshape(lse, lse.shape + (1,))


def pen_cross_entropy(pen_logits, pen_targets):
    """Cross-entropy between one-hot targets and softmaxed logits."""
    return -ag.sum_(ag.mul(ag._lift(pen_targets), log_softmax(pen_logits)), axis=-1)


def offset_loss(step_params, target_points, max_seq_len=None):
    """Mixture NLL summed through the stop index, divided by the max length.

    ``step_params`` is a list of MixtureParams, one per step, aligned with
    ``target_points`` [N, 5].  Steps past the stop index never contribute.
    """
    target_points = np.asarray(target_points, dtype=np.float32)
    stop = stop_index(target_points)
    if max_seq_len is None:
        max_seq_len = len(step_params)
    if len(step_params) < stop:
        raise ag.ShapeError(f"{len(step_params)} step params < stop index {stop}")
    total = Tensor(np.zeros((), dtype=np.float32))
    for i in range(stop):
        total = total + gmm_nll(step_params[i], float(target_points[i, 0]), float(target_points[i, 1]))
    return total * (1.0 / max_seq_len)


def pen_loss(step_params, target_points, max_seq_len=None):
    """Pen-state cross-entropy over every step up to the padded maximum."""
    if max_seq_len is None:
        max_seq_len = len(step_params)
    padded = pad_points(np.asarray(target_points, dtype=np.float32), max_seq_len)
    total = Tensor(np.zeros((), dtype=np.float32))
    for i in range(max_seq_len):
        total = total + pen_cross_entropy(step_params[i].pen_logits, padded[i, 2:5])
    return total * (1.0 / max_seq_len)


def kl_loss(latent):
    """Closed-form KL of the diagonal Gaussian posterior from N(0, I),
    averaged over latent dimensions (and batch, if present)."""
    z_dim = latent.mu.shape[-1]
    inner = 1.0 + latent.logvar - ag.square(latent.mu) - ag.exp(latent.logvar)
    total = ag.sum_(inner) * (-0.5 / z_dim)
    if latent.mu.ndim > 1:
        total = total * (1.0 / latent.mu.shape[0])
    return total


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class SketchVAE:
    def __init__(self, config=None, rng=None):
        self.config = config or VAEConfig()
        rng = rng or np.random.default_rng(0)
        cfg = self.config
        self.enc_fw = ag.lstm_init(rng, 5, cfg.encoder_hidden)
        self.enc_bw = ag.lstm_init(rng, 5, cfg.encoder_hidden)
        self.mu_head = ag.dense_init(rng, 2 * cfg.encoder_hidden, cfg.latent_dim)
        self.logvar_head = ag.dense_init(rng, 2 * cfg.encoder_hidden, cfg.latent_dim)
        self.init_head = ag.dense_init(rng, cfg.latent_dim, 2 * cfg.decoder_hidden)
        self.dec = ag.lstm_init(rng, 5 + cfg.latent_dim, cfg.decoder_hidden)
        self.out_head = ag.dense_init(rng, cfg.decoder_hidden, cfg.head_size)

    def params(self):
        out = {}
        out.update(self.enc_fw.tensors("enc_fw"))
        out.update(self.enc_bw.tensors("enc_bw"))
        for prefix, (w, b) in (
            ("mu_head", self.mu_head),
            ("logvar_head", self.logvar_head),
            ("init_head", self.init_head),
            ("out_head", self.out_head),
        ):
            out[f"{prefix}.weights"] = w
            out[f"{prefix}.bias"] = b
        out.update(self.dec.tensors("dec"))
        return out

    def load_arrays(self, arrays, requires_grad=True):
        params = self.params()
        for name, p in params.items():
            if arrays[name].shape != p.data.shape:
                raise ag.ShapeError(f"checkpoint tensor {name} has shape {arrays[name].shape}, expected {p.data.shape}")
            p.data = arrays[name].astype(np.float32).copy()
            p.requires_grad = requires_grad
            p.grad = None
        return self

    # -- encoder ------------------------------------------------------------

    def encode_batch(self, padded, rng=None, noise=None):
        """padded: [B, S, 5] array -> LatentCode with z = mu + sigma * eps."""
        padded = np.asarray(padded, dtype=np.float32)
        if padded.ndim != 3 or padded.shape[1] == 0:
            raise ag.ShapeError(f"encode expects a nonempty [B, S, 5] batch, got {padded.shape}")
        b, steps, _ = padded.shape
        hidden = self.config.encoder_hidden
        h_fw = Tensor(np.zeros((b, hidden), dtype=np.float32))
        c_fw = Tensor(np.zeros((b, hidden), dtype=np.float32))
        h_bw = Tensor(np.zeros((b, hidden), dtype=np.float32))
        c_bw = Tensor(np.zeros((b, hidden), dtype=np.float32))
        for t in range(steps):
            h_fw, c_fw = ag.lstm_cell(Tensor(padded[:, t]), h_fw, c_fw, self.enc_fw)
            h_bw, c_bw = ag.lstm_cell(Tensor(padded[:, steps - 1 - t]), h_bw, c_bw, self.enc_bw)
        h = ag.concat([h_fw, h_bw], axis=-1)
        mu = ag.dense(h, *self.mu_head)
        logvar = ag.dense(h, *self.logvar_head)
        sigma = ag.exp(logvar * 0.5)
        if noise is None:
            noise = (rng or np.random.default_rng()).standard_normal(mu.shape).astype(np.float32)
        z = mu + sigma * Tensor(noise)
        return LatentCode(mu=mu, sigma=sigma, z=z, logvar=logvar, noise=noise)

    def encode(self, sequence, rng=None, noise=None):
        """Encode one StrokeSequence (padded/truncated to max_seq_len)."""
        points = sequence.points if hasattr(sequence, "points") else np.asarray(sequence)
        if len(points) == 0:
            raise ag.ShapeError("encode: empty sequence")
        padded = pad_points(points[: self.config.max_seq_len], self.config.max_seq_len)
        return self.encode_batch(padded[None, :, :], rng=rng, noise=noise)

    # -- decoder ------------------------------------------------------------

    def initial_state(self, z):
        hidden = self.config.decoder_hidden
        s = ag.tanh(ag.dense(z, *self.init_head))
        return ag.narrow(s, 0, hidden), ag.narrow(s, hidden, hidden)

    def decode_head(self, prev_point, z, state=None):
        """One decoder step on a raw [B, 5] previous point; returns the raw
        head tensor [B, 6M+3] and the new recurrent state."""
        if state is None:
            state = self.initial_state(z)
        prev = prev_point if isinstance(prev_point, Tensor) else Tensor(np.asarray(prev_point, dtype=np.float32).reshape(-1, 5))
        x = ag.concat([prev, z], axis=-1)
        h, c = ag.lstm_cell(x, state[0], state[1], self.dec)
        return ag.dense(h, *self.out_head), (h, c)

    def decode_step(self, prev_point, z, state=None):
        """Single decoder step returning (MixtureParams, new state)."""
        head, state = self.decode_head(prev_point, z, state)
        return split_mixture(head, self.config.mixture_count), state

    def teacher_forced_heads(self, padded, z):
        """Raw decoder heads for each step of a padded [B, S, 5] batch,
        feeding ground-truth previous points (start token first)."""
        padded = np.asarray(padded, dtype=np.float32)
        b, steps, _ = padded.shape
        inputs = np.concatenate([np.tile(START_TOKEN, (b, 1, 1)), padded[:, :-1]], axis=1)
        state = None
        heads = []
        for t in range(steps):
            head, state = self.decode_head(Tensor(inputs[:, t]), z, state)
            heads.append(head)
        return heads


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _temperature_scale(probs, temperature):
    lp = np.log(np.maximum(probs, 1e-30)) / temperature
    lp -= lp.max()
    p = np.exp(lp)
    return p / p.sum()


def _categorical(probs, rng):
    return int(np.searchsorted(np.cumsum(probs), rng.random()))


def sample_sketch(model, z, temperature=1.0, rng=None, max_seq_len=None, step_hook=None):
    """Autoregressive sampling from the decoder.

    Starts from the fixed (0, 0, 1, 0, 0) token; at each step the mixture
    component and pen state are drawn from temperature-sharpened
    categoricals and the offset from the chosen bivariate normal with
    sigma scaled by sqrt(temperature).  Stops at the end-of-sketch state or
    at ``max_seq_len``.  ``step_hook(head, points) -> head`` lets a parallel
    decoder adjust the raw head before sampling (see refiner.refined_sample).
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    rng = rng or np.random.default_rng()
    if not isinstance(z, Tensor):
        z = Tensor(np.asarray(z, dtype=np.float32).reshape(1, -1))
    max_seq_len = max_seq_len or model.config.max_seq_len
    sqrt_temp = math.sqrt(temperature)

    state = None
    prev = START_TOKEN.reshape(1, 5)
    points = []
    z = z.detach()
    for _ in range(max_seq_len):
        head, state = model.decode_head(Tensor(prev), z, state)
        state = (state[0].detach(), state[1].detach())  # no graph across sampled steps
        if step_hook is not None:
            head = step_hook(head, points)
        mix = split_mixture(head, model.config.mixture_count)
        weights = mix.weights.data.reshape(-1)
        j = _categorical(_temperature_scale(weights, temperature), rng)
        noise = rng.standard_normal(2)
        sx = float(mix.sigma_x.data.reshape(-1)[j]) * sqrt_temp
        sy = float(mix.sigma_y.data.reshape(-1)[j]) * sqrt_temp
        rho = float(mix.corr.data.reshape(-1)[j])
        dx = float(mix.mu_x.data.reshape(-1)[j]) + sx * noise[0]
        dy = float(mix.mu_y.data.reshape(-1)[j]) + sy * (rho * noise[0] + math.sqrt(1.0 - rho * rho) * noise[1])
        pen_probs = ag.softmax(mix.pen_logits, axis=-1).data.reshape(-1)
        pen = _categorical(_temperature_scale(pen_probs, temperature), rng)
        point = np.zeros(5, dtype=np.float32)
        point[0] = dx
        point[1] = dy
        point[2 + pen] = 1.0
        points.append(point)
        prev = point.reshape(1, 5)
        if pen == 2:
            break
    points = np.asarray(points, dtype=np.float32)
    points[-1, 2:5] = (0.0, 0.0, 1.0)  # hard cap: force end-of-sketch
    return StrokeSequence(points, source_id="sampled")


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class LossBreakdown:
    offset: float
    pen: float
    kl: float
    stop: int
    max_seq_len: int

    @property
    def reconstruction(self):
        return self.offset + self.pen

    def total(self, kl_weight=1.0):
        return self.offset + self.pen + kl_weight * self.kl


class TrainingDiverged(RuntimeError):
    pass


LOSS_CSV_HEADER = "step,L_S,L_P,L_KL,total"


def batch_losses(model, batch_points, rng, kl_weight=1.0, noise=None):
    """Teacher-forced losses for a [B, S, 5] padded batch.

    Returns (total Tensor, LossBreakdown, LatentCode).  With kl_weight == 0
    the KL term is left out of the graph entirely.
    """
    batch_points = np.asarray(batch_points, dtype=np.float32)
    b, steps, _ = batch_points.shape
    latent = model.encode_batch(batch_points, rng=rng, noise=noise)
    heads = model.teacher_forced_heads(batch_points, latent.z)

    stops = np.argmax(batch_points[:, :, PEN_END] == 1, axis=1)  # 0-based stop rows
    offset_total = Tensor(np.zeros((), dtype=np.float32))
    pen_total = Tensor(np.zeros((), dtype=np.float32))
    for t in range(steps):
        mix = split_mixture(heads[t], model.config.mixture_count)
        nll = gmm_nll(mix, batch_points[:, t, 0], batch_points[:, t, 1])
        mask = (t <= stops).astype(np.float32)
        offset_total = offset_total + ag.sum_(nll * Tensor(mask))
        pen_total = pen_total + ag.sum_(pen_cross_entropy(mix.pen_logits, batch_points[:, t, 2:5]))
    scale = 1.0 / (steps * b)
    l_offset = offset_total * scale
    l_pen = pen_total * scale
    l_kl = kl_loss(latent)
    total = l_offset + l_pen
    if kl_weight != 0.0:
        total = total + kl_weight * l_kl
    breakdown = LossBreakdown(
        offset=l_offset.item(), pen=l_pen.item(), kl=l_kl.item(),
        stop=int(stops.max()) + 1, max_seq_len=steps,
    )
    return total, breakdown, latent


def make_batches(sequences, batch_size, steps, max_seq_len, seed):
    """Deterministic random batches of padded points, cycling the dataset."""
    rng = np.random.default_rng(seed)
    padded = np.stack([pad_points(s.points[:max_seq_len], max_seq_len) for s in sequences])
    for _ in range(steps):
        idx = rng.integers(0, len(sequences), size=min(batch_size, len(sequences)))
        yield padded[idx]


def train_baseline(sequences, config=None, steps=500, batch_size=8, lr=1e-3,
                   kl_weight=1.0, seed=0, checkpoint_path=None, log_fh=None,
                   meta=None):
    """Train the sequence VAE; returns (model, records).

    Records are (step, offset, pen, kl, total) tuples, also streamed to
    ``log_fh`` as CSV.  Aborts with the step index if the loss goes
    non-finite.
    """
    from .optim import Adam

    if not sequences:
        raise ag.ShapeError("train_baseline: empty training set")
    config = config or small_config()
    rng = np.random.default_rng(seed + 1)
    model = SketchVAE(config, rng=np.random.default_rng(seed))
    params = model.params()
    opt = Adam(params, lr=lr)
    records = []
    if log_fh:
        print(LOSS_CSV_HEADER, file=log_fh)
    for step, batch in enumerate(make_batches(sequences, batch_size, steps, config.max_seq_len, seed + 2)):
        try:
            total, breakdown, _ = batch_losses(model, batch, rng, kl_weight=kl_weight)
            ag.zero_grad(params)
            grads = ag.backward(total, params)
        except ag.NonFiniteError as err:
            raise TrainingDiverged(f"non-finite loss at step {step}: {err}") from err
        opt.step(grads)
        row = (step, breakdown.offset, breakdown.pen, breakdown.kl, breakdown.total(kl_weight))
        records.append(row)
        if log_fh:
            print(f"{step},{row[1]:.6f},{row[2]:.6f},{row[3]:.6f},{row[4]:.6f}", file=log_fh)
    if checkpoint_path:
        arrays = {name: p.data for name, p in params.items()}
        save_checkpoint(checkpoint_path, arrays, meta={"kind": "baseline", "config": config.as_dict(), **(meta or {})})
    return model, records


def load_baseline(path, requires_grad=False):
    from .checkpoint import load_checkpoint

    arrays, meta = load_checkpoint(path)
    config = VAEConfig(**meta["config"])
    model = SketchVAE(config, rng=np.random.default_rng(0))
    model.load_arrays(arrays, requires_grad=requires_grad)
    return model, meta
