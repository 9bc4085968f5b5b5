"""Exact O(N^2) t-SNE for visualizing sketch feature populations.

Per-point Gaussian bandwidths are found by binary search so each
conditional distribution's entropy matches log(perplexity); the symmetrized
affinities are then matched by a Student-t kernel in 2-D via gradient
descent with momentum (0.5 until iteration 250, then 0.8) and x4 early
exaggeration for the first 100 iterations.  Small N keeps the quadratic
cost irrelevant here, so no tree approximation is used.
"""

from dataclasses import dataclass

import numpy as np

EPS = 1e-12
ENTROPY_TOL = 1e-4
EXAGGERATION = 4.0
EXAGGERATION_ITERS = 100
MOMENTUM_SWITCH_ITER = 250


@dataclass
class EmbeddingRun:
    perplexity: float
    iterations: int
    learning_rate: float
    points: np.ndarray  # [N, 2]
    kl_trace: list  # KL(P || Q) against the un-exaggerated P, per iteration
    entropy_converged: bool  # binary search hit the target for every point


def _deduplicate(features, rng):
    """Jitter exact duplicate rows by 1e-8 so affinities stay defined."""
    features = np.asarray(features, dtype=np.float64).copy()
    _, first_idx, inverse = np.unique(features, axis=0, return_index=True, return_inverse=True)
    mask = first_idx[inverse] != np.arange(len(features))  # repeats of an earlier row
    if mask.any():
        features[mask] += rng.standard_normal((mask.sum(), features.shape[1])) * 1e-8
    return features


def _squared_distances(x):
    norms = (x * x).sum(axis=1)
    d2 = norms[:, None] + norms[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def _conditional_affinities(d2, perplexity, max_iters=64):
    """Binary-search per-point precisions to hit entropy log(perplexity)."""
    n = d2.shape[0]
    target = np.log(perplexity)
    p = np.zeros((n, n), dtype=np.float64)
    converged = True
    for i in range(n):
        beta, beta_lo, beta_hi = 1.0, 0.0, np.inf
        row = d2[i].copy()
        row[i] = np.inf  # exclude self
        for _ in range(max_iters):
            logits = -row * beta
            logits -= logits.max()
            num = np.exp(logits)
            num[i] = 0.0
            total = num.sum()
            prob = num / total
            # Shannon entropy of the conditional distribution
            entropy = -np.sum(prob[prob > 0] * np.log(prob[prob > 0]))
            diff = entropy - target
            if abs(diff) <= ENTROPY_TOL:
                break
            if diff > 0:  # too flat: sharpen
                beta_lo = beta
                beta = beta * 2.0 if np.isinf(beta_hi) else (beta + beta_hi) / 2.0
            else:
                beta_hi = beta
                beta = beta / 2.0 if beta_lo == 0.0 else (beta + beta_lo) / 2.0
        else:
            converged = False
        p[i] = prob
    return p, converged


def joint_affinities(features, perplexity):
    d2 = _squared_distances(np.asarray(features, dtype=np.float64))
    cond, converged = _conditional_affinities(d2, perplexity)
    p = (cond + cond.T) / (2.0 * len(cond))
    return np.maximum(p, EPS), converged


def _student_t(y):
    num = 1.0 / (1.0 + _squared_distances(y))
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    return np.maximum(q, EPS), num


def kl_divergence(p, q):
    return float(np.sum(p * np.log(p / q)))


def tsne(features, perplexity=30.0, seed=0, iterations=1000, learning_rate=100.0):
    """Embed an [N, D] feature matrix into 2-D.

    Requires N >= 10 and perplexity < N / 3.  Deterministic for a fixed
    seed.  The KL trace is recorded against the true (un-exaggerated)
    affinities so early and late iterations are comparable.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 10 or features.shape[1] < 2:
        raise ValueError(f"tsne expects an [N >= 10, D >= 2] matrix, got {features.shape}")
    n = features.shape[0]
    if perplexity >= n / 3:
        raise ValueError(f"perplexity {perplexity} must be below N/3 = {n / 3:.1f}")

    rng = np.random.default_rng(seed)
    features = _deduplicate(features, rng)
    p_true, converged = joint_affinities(features, perplexity)

    y = rng.standard_normal((n, 2)) * 1e-4
    velocity = np.zeros_like(y)
    kl_trace = []
    for it in range(iterations):
        p = p_true * EXAGGERATION if it < EXAGGERATION_ITERS else p_true
        q, num = _student_t(y)
        kl_trace.append(kl_divergence(p_true, q))
        coeff = (p - q) * num
        grad = 4.0 * ((np.diag(coeff.sum(axis=1)) - coeff) @ y)
        momentum = 0.5 if it < MOMENTUM_SWITCH_ITER else 0.8
        velocity = momentum * velocity - learning_rate * grad
        y = y + velocity
        y = y - y.mean(axis=0)
    return EmbeddingRun(
        perplexity=perplexity,
        iterations=iterations,
        learning_rate=learning_rate,
        points=y,
        kl_trace=kl_trace,
        entropy_converged=converged,
    )


# ---------------------------------------------------------------------------
# feature sources
# ---------------------------------------------------------------------------

def feature_extract(images, mode="flat", discriminator=None):
    """Rasters -> [N, D] features.

    "flat" flattens each raster (D = H*W); "discriminator-penultimate" uses
    the judge's last hidden dense activations and needs a trained model.
    """
    images = np.asarray(images, dtype=np.float32)
    if mode == "flat":
        return images.reshape(len(images), -1).astype(np.float64)
    if mode == "discriminator-penultimate":
        if discriminator is None:
            raise ValueError("discriminator-penultimate mode needs a trained discriminator")
        feats = []
        for start in range(0, len(images), 32):
            feats.append(discriminator.penultimate(images[start : start + 32]))
        return np.concatenate(feats).astype(np.float64)
    raise ValueError(f"unknown feature mode: {mode}")


def class_concentration(points, labels):
    """Mean intra-class pairwise distance in the embedding, per label."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    stats = {}
    for label in np.unique(labels):
        cluster = points[labels == label]
        if len(cluster) < 2:
            stats[str(label)] = 0.0
            continue
        dist = np.sqrt(((cluster[:, None] - cluster[None, :]) ** 2).sum(-1))
        iu = np.triu_indices(len(cluster), k=1)
        stats[str(label)] = float(dist[iu].mean())
    return stats
