"""Release criteria, one test per criterion, tolerances pinned inline.

Run with ``pytest tests/test_acceptance.py``; the terminal summary prints one
PASS/FAIL line per criterion (see conftest.py).
"""

import math
import time

import numpy as np
import pytest
from conftest import record_note
from oracles import check_gradients, ladder_gradient_check, silhouette_score

from strokeforge import autograd as ag
from strokeforge import refiner as rf
from strokeforge import vae
from strokeforge.autograd import Tensor
from strokeforge.data import StrokeSequence, absolute_to_stroke5, parse_ndjson, stroke5_to_absolute
from strokeforge.discriminator import (
    DiscriminatorConfig,
    confusion,
    confusion_from_predictions,
    predict_in_batches,
    train_discriminator,
)
from strokeforge.raster import normalize_rgb, render
from strokeforge.refiner import CNNRefiner, RefinerConfig, refined_sample, train_refiner
from strokeforge.tsne import tsne
from strokeforge.vae import MixtureParams, SketchVAE, gmm_nll, kl_loss, pen_loss, sample_sketch, small_config, train_baseline

pytestmark = pytest.mark.acceptance

DESK = dict(latent_dim=16, encoder_hidden=24, decoder_hidden=32, mixture_count=3, max_seq_len=24)


def fixture_sketches(count=8, seed=7, min_len=8, max_len=16):
    """Short smooth-ish stroke sequences for overfit runs."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        n = int(rng.integers(min_len, max_len))
        pts = np.zeros((n, 5), dtype=np.float32)
        angle = np.cumsum(rng.uniform(-0.8, 0.8, n))
        pts[:, 0] = np.cos(angle)
        pts[:, 1] = np.sin(angle)
        pts[:, 2] = 1.0
        pts[n // 2, 2:5] = (0, 1, 0)
        pts[-1, 2:5] = (0, 0, 1)
        out.append(StrokeSequence(pts, f"fixture{i}"))
    return out


def test_01_gradient_correctness_all_primitives_and_refine_composite():
    """Reverse mode vs central finite differences, rel. error < 1e-3,
    random tensors of at most 64 elements, whole criterion under 2 minutes."""
    started = time.perf_counter()
    rng = np.random.default_rng(0)

    # dense
    check_gradients(lambda t: ag.sum_(ag.square(ag.dense(*t))),
                    [rng.standard_normal((2, 4)), rng.standard_normal((4, 3)), rng.standard_normal(3)])
    # conv2d, both strides
    check_gradients(lambda t: ag.sum_(ag.square(ag.conv2d(t[0], t[1], stride=1))),
                    [rng.standard_normal((1, 2, 4, 4)), rng.standard_normal((2, 2, 3, 3))])
    check_gradients(lambda t: ag.sum_(ag.square(ag.conv2d(t[0], t[1], stride=2))),
                    [rng.standard_normal((1, 1, 6, 5)), rng.standard_normal((2, 1, 3, 3))])

    # lstm cell
    def lstm_loss(t):
        h2, c2 = ag.lstm_cell(t[0], t[1], t[2], ag.LSTMParams(t[3], t[4], t[5]))
        return ag.sum_(ag.square(h2)) + ag.sum_(ag.square(c2))

    check_gradients(lstm_loss, [rng.standard_normal((2, 3)), rng.standard_normal((2, 2)),
                                rng.standard_normal((2, 2)), rng.standard_normal((3, 8)),
                                rng.standard_normal((2, 8)), rng.standard_normal(8)])

    # activations
    for op in (ag.relu, ag.elu, ag.tanh, ag.sigmoid):
        x = rng.standard_normal((4, 4))
        x[np.abs(x) < 0.05] = 0.3  # clear of kinks
        check_gradients(lambda t, op=op: ag.sum_(ag.square(op(t[0]))), [x])
    mix_weights = Tensor(rng.standard_normal((3, 5)))
    check_gradients(lambda t: ag.sum_(ag.mul(ag.softmax(t[0], axis=-1), mix_weights)),
                    [rng.standard_normal((3, 5))])

    # loss operations
    def gmm_loss(t):
        mix = MixtureParams(weights=ag.softmax(t[0]), mu_x=t[1], mu_y=t[2],
                            sigma_x=ag.exp(t[3]), sigma_y=ag.exp(t[4]),
                            corr=ag.mul(ag.tanh(t[5]), 1.0 - 1e-6),
                            pen_logits=Tensor(np.zeros(3)))
        return gmm_nll(mix, 0.3, -0.6)

    check_gradients(gmm_loss, [rng.standard_normal(4) * 0.5 for _ in range(6)])
    check_gradients(lambda t: vae.pen_cross_entropy(t[0], np.array([0.0, 1.0, 0.0])),
                    [rng.standard_normal(3)])
    check_gradients(
        lambda t: kl_loss(vae.LatentCode(mu=t[0], sigma=None, z=None, logvar=t[1], noise=None)),
        [rng.standard_normal(6), rng.standard_normal(6) * 0.5])

    # composite CNN decoder at reduced dimensions
    cfg = RefinerConfig.small(conv_depths=(1, 4, 4, 8, 8, 8), dense_widths=(8, 6),
                              mixture_count=2, image_size=16)
    net = CNNRefiner(cfg, rng=np.random.default_rng(1))
    params = net.params()
    for p in params.values():
        p.data = p.data.astype(np.float64)
    image = np.random.default_rng(2).random((1, 1, 16, 16))
    worst = ladder_gradient_check(lambda: ag.sum_(ag.square(net.head(image))), params, tol=1e-3)
    record_note("refine() composite worst rel. error", f"{worst:.1e}")

    elapsed = time.perf_counter() - started
    record_note("gradient suite seconds", f"{elapsed:.1f}")
    assert elapsed < 120.0


def test_02_loss_analytics_closed_forms():
    one = MixtureParams(weights=Tensor(np.array([1.0])), mu_x=Tensor(np.array([0.0])),
                        mu_y=Tensor(np.array([0.0])), sigma_x=Tensor(np.array([1.0])),
                        sigma_y=Tensor(np.array([1.0])), corr=Tensor(np.array([0.0])),
                        pen_logits=Tensor(np.zeros(3)))
    assert gmm_nll(one, 0.0, 0.0).item() == pytest.approx(math.log(2 * math.pi), abs=1e-5)

    zero_latent = vae.LatentCode(mu=Tensor(np.zeros(4)), sigma=None, z=None,
                                 logvar=Tensor(np.zeros(4)), noise=None)
    assert abs(kl_loss(zero_latent).item()) <= 1e-9

    uniform_steps = [
        MixtureParams(weights=Tensor(np.array([1.0])), mu_x=Tensor(np.array([0.0])),
                      mu_y=Tensor(np.array([0.0])), sigma_x=Tensor(np.array([1.0])),
                      sigma_y=Tensor(np.array([1.0])), corr=Tensor(np.array([0.0])),
                      pen_logits=Tensor(np.zeros(3)))
        for _ in range(3)
    ]
    targets = np.array([[0, 0, 1, 0, 0], [0, 0, 0, 1, 0], [0, 0, 0, 0, 1]], dtype=np.float32)
    assert pen_loss(uniform_steps, targets, 3).item() == pytest.approx(math.log(3.0), abs=1e-6)

    # truncation: anything after the stop index changes the offset loss by exactly 0
    rng = np.random.default_rng(3)
    stop_targets = np.array([[0.2, -0.1, 1, 0, 0], [0.4, 0.3, 0, 0, 1]], dtype=np.float32)
    base = vae.offset_loss(uniform_steps[:2] + [uniform_steps[2]], stop_targets, 6)
    for _ in range(10):
        junk = MixtureParams(
            weights=Tensor(rng.dirichlet(np.ones(1))), mu_x=Tensor(rng.uniform(-9, 9, 1)),
            mu_y=Tensor(rng.uniform(-9, 9, 1)), sigma_x=Tensor(rng.uniform(0.1, 4, 1)),
            sigma_y=Tensor(rng.uniform(0.1, 4, 1)), corr=Tensor(rng.uniform(-0.9, 0.9, 1)),
            pen_logits=Tensor(rng.standard_normal(3)))
        perturbed = vae.offset_loss(uniform_steps[:2] + [junk], stop_targets, 6)
        assert perturbed.item() - base.item() == 0.0


def test_03_mixture_monte_carlo_normalization():
    rng = np.random.default_rng(7)
    w = rng.dirichlet(np.ones(3))
    mu_x, mu_y = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
    sx, sy = rng.uniform(0.6, 1.2, 3), rng.uniform(0.6, 1.2, 3)
    corr = rng.uniform(-0.6, 0.6, 3)
    mix = MixtureParams(weights=Tensor(w), mu_x=Tensor(mu_x), mu_y=Tensor(mu_y),
                        sigma_x=Tensor(sx), sigma_y=Tensor(sy), corr=Tensor(corr),
                        pen_logits=Tensor(np.zeros(3)))
    lo_x, hi_x = mu_x.min() - 6 * sx.max(), mu_x.max() + 6 * sx.max()
    lo_y, hi_y = mu_y.min() - 6 * sy.max(), mu_y.max() + 6 * sy.max()
    n = 100_000
    xs = rng.uniform(lo_x, hi_x, n)
    ys = rng.uniform(lo_y, hi_y, n)
    density = np.exp(-gmm_nll(mix, xs, ys).data)
    integral = density.mean() * (hi_x - lo_x) * (hi_y - lo_y)
    record_note("mixture MC integral", f"{integral:.4f}")
    assert abs(integral - 1.0) < 0.02


def test_04_blend_alpha_one_recovers_plain_sampler_for_20_seeds():
    baseline = SketchVAE(small_config(**DESK), rng=np.random.default_rng(0))
    net = CNNRefiner(RefinerConfig.small(mixture_count=3), rng=np.random.default_rng(1))
    for seed in range(20):
        z = np.random.default_rng(1000 + seed).standard_normal(DESK["latent_dim"]).astype(np.float32)
        plain = sample_sketch(baseline, z, 0.9, np.random.default_rng(seed))
        blended = refined_sample(baseline, net, z, 0.9, 1.0, np.random.default_rng(seed))
        assert plain.points.tobytes() == blended.points.tobytes(), f"seed {seed} diverged"


def test_05_overfit_regression_baseline_and_frozen_refiner():
    sketches = fixture_sketches()
    config = small_config(**DESK)

    started = time.perf_counter()
    _, records = train_baseline(sketches, config=config, steps=500, batch_size=8,
                                lr=1e-3, seed=0)
    baseline_seconds = time.perf_counter() - started
    first = records[0][1] + records[0][2]
    last = float(np.mean([r[1] + r[2] for r in records[-10:]]))
    drop = (first - last) / first
    record_note("baseline overfit drop", f"{drop:.1%} in {baseline_seconds:.0f}s")
    assert drop >= 0.50
    assert baseline_seconds < 600

    frozen = SketchVAE(config, rng=np.random.default_rng(0))
    before = {name: p.data.tobytes() for name, p in frozen.params().items()}
    started = time.perf_counter()
    _, refiner_records = train_refiner(sketches, frozen, config=RefinerConfig.small(mixture_count=3),
                                       steps=500, batch_size=8, lr=1e-3, seed=0)
    refiner_seconds = time.perf_counter() - started
    rel_first = refiner_records[0][4]
    rel_last = float(np.mean([r[4] for r in refiner_records[-10:]]))
    rel_drop = (rel_first - rel_last) / rel_first
    record_note("refiner overfit drop", f"{rel_drop:.1%} in {refiner_seconds:.0f}s")
    assert rel_drop >= 0.30
    assert refiner_seconds < 600
    after = {name: p.data.tobytes() for name, p in frozen.params().items()}
    assert before == after, "frozen baseline parameters changed"


def test_06_discriminator_sanity_on_synthetic_classes():
    from test_discriminator import synthetic_classes

    images, labels = synthetic_classes(100, size=128, seed=5)  # 300 rasters
    order = np.random.default_rng(0).permutation(len(images))
    images, labels = images[order], labels[order]
    started = time.perf_counter()
    model, _, _ = train_discriminator(images[60:], labels[60:],
                                      config=DiscriminatorConfig.small(), steps=200,
                                      batch_size=16, lr=2e-3, seed=0,
                                      val_images=images[:60], val_labels=labels[:60])
    elapsed = time.perf_counter() - started
    accuracy = float((predict_in_batches(model, images[:60]) == labels[:60]).mean())
    record_note("discriminator accuracy", f"{accuracy:.1%} in {elapsed:.0f}s")
    assert accuracy >= 0.90
    assert elapsed < 300

    matrix = confusion(model, images[:60], labels[:60])
    sums = matrix.percent.sum(axis=1)
    assert np.all(np.abs(sums[~np.isnan(sums)] - 100.0) <= 0.1)


def test_07_confusion_table_golden_formatting():
    rows = ((706, 220, 74), (232, 632, 136), (9, 39, 952))
    true_labels, predictions = [], []
    for cls, counts in enumerate(rows):
        for pred, count in enumerate(counts):
            true_labels.extend([cls] * count)
            predictions.extend([pred] * count)
    matrix = confusion_from_predictions(true_labels, predictions)
    expected = np.array([[70.6, 22.0, 7.4], [23.2, 63.2, 13.6], [0.9, 3.9, 95.2]])
    assert np.allclose(matrix.percent, expected, atol=1e-9)
    csv = matrix.to_csv()
    assert "sketch-rnn,70.6,22.0,7.4" in csv
    assert "refiner,23.2,63.2,13.6" in csv
    assert "human,0.9,3.9,95.2" in csv
    assert matrix.mislead_rate("refiner") == pytest.approx(13.6)
    assert matrix.mislead_rate("sketch-rnn") == pytest.approx(7.4)


def test_08_tsne_two_cluster_fixture():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((50, 64))
    b = rng.standard_normal((50, 64))
    b[:, 0] += 12.0
    features = np.vstack([a, b])
    labels = np.array([0] * 50 + [1] * 50)

    run = tsne(features, perplexity=15.0, seed=3, iterations=400)
    score = silhouette_score(run.points, labels)
    record_note("tsne silhouette", f"{score:.3f}")
    assert score > 0.5
    assert run.kl_trace[-1] < run.kl_trace[100]
    rerun = tsne(features, perplexity=15.0, seed=3, iterations=400)
    assert np.array_equal(run.points, rerun.points)


def test_09_rasterizer_ink_convention_and_geometry():
    # dark-to-one mapping, bit-exact across all 256 gray levels
    for v in range(256):
        expected = 1.0 - v / 255.0
        assert normalize_rgb(v, v, v) == (expected, expected, expected)

    single = render(StrokeSequence(np.array([[0, 0, 0, 0, 1]], dtype=np.float32)))
    assert single.sum() == 1.0

    from strokeforge.data import polylines_to_stroke5

    base = [[[0, 10, 20], [0, 15, 5]], [[40, 50], [0, 0]]]
    moved = [[[x + 37 for x in xs], [y - 12 for y in ys]] for xs, ys in base]
    assert np.array_equal(render(StrokeSequence(polylines_to_stroke5(base))),
                          render(StrokeSequence(polylines_to_stroke5(moved))))


def test_10_stroke5_round_trip_over_100_sketches(tmp_path):
    import json

    rng = np.random.default_rng(11)
    path = tmp_path / "sketches.ndjson"
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(100):
            strokes = []
            for _ in range(int(rng.integers(1, 4))):
                n = int(rng.integers(2, 10))
                strokes.append([rng.integers(0, 256, n).tolist(), rng.integers(0, 256, n).tolist()])
            fh.write(json.dumps({"key_id": str(i), "drawing": strokes}) + "\n")
    sequences, stats = parse_ndjson(path)
    assert stats.parsed == 100
    for seq in sequences:
        pens = seq.points[:, 2:5]
        assert np.all(pens.sum(axis=1) == 1)
        assert np.all(np.isin(pens, (0.0, 1.0)))
        absolute = stroke5_to_absolute(seq.points)
        back = absolute_to_stroke5(absolute, pens)
        assert np.array_equal(back, seq.points)


def test_11_refined_sampling_slower_than_baseline():
    baseline = SketchVAE(small_config(**DESK), rng=np.random.default_rng(0))
    net = CNNRefiner(RefinerConfig.small(mixture_count=3), rng=np.random.default_rng(1))
    z = np.zeros(DESK["latent_dim"], dtype=np.float32)
    plain_total = refined_total = 0.0
    for seed in range(3):
        plain, refined = rf.sampling_times(baseline, net, z, seed=seed, temperature=1.0)
        plain_total += plain
        refined_total += refined
    ratio = refined_total / plain_total
    record_note("refined/baseline sampling time ratio", f"{ratio:.1f}x")
    assert ratio > 1.0
