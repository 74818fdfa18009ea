"""Distribution-level evaluation statistics over pluggable feature providers.

The heavy lifting of feature extraction is intentionally swappable: any
callable mapping an image stack to an M x d matrix (or M x K probability
rows) can drive these statistics.
"""
from __future__ import annotations

import numpy as np


class MetricError(ValueError):
    pass


def _check_features(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise MetricError(f"{name}: expected an M x d matrix, got shape {x.shape}")
    if x.shape[0] < 2:
        raise MetricError(f"{name}: need at least 2 samples, got {x.shape[0]}")
    if not np.isfinite(x).all():
        raise MetricError(f"{name}: non-finite features")
    return x


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a, b) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The cross term uses the symmetrized product S_a^{1/2} S_b S_a^{1/2}
    (same trace, guaranteed PSD argument); negative eigenvalues from
    round-off are clamped to zero and the result floored at 0.
    """
    a, b = _check_features(a, "frechet a"), _check_features(b, "frechet b")
    if a.shape[1] != b.shape[1]:
        raise MetricError(f"frechet: dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    sa = np.cov(a, rowvar=False).reshape(a.shape[1], a.shape[1])
    sb = np.cov(b, rowvar=False).reshape(b.shape[1], b.shape[1])
    ra = _sqrtm_psd(sa)
    middle = ra @ sb @ ra
    vals = np.linalg.eigvalsh((middle + middle.T) / 2.0)
    cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    d2 = float(((mu_a - mu_b) ** 2).sum() + np.trace(sa) + np.trace(sb) - 2.0 * cross)
    if d2 < -1e-8:
        raise MetricError(f"frechet distance went negative: {d2}")
    return max(d2, 0.0)


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def kid(a, b) -> float:
    """Unbiased squared MMD with the cubic kernel k(x,y) = (x.y/d + 1)^3."""
    a, b = _check_features(a, "kid a"), _check_features(b, "kid b")
    if a.shape[1] != b.shape[1]:
        raise MetricError(f"kid: dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    m, n = a.shape[0], b.shape[0]
    kaa = polynomial_kernel(a, a)
    kbb = polynomial_kernel(b, b)
    kab = polynomial_kernel(a, b)
    term_a = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
    term_b = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
    term_ab = kab.mean()
    return float(term_a + term_b - 2.0 * term_ab)


def inception_score(probs, n_splits: int = 10, tol: float = 1e-6):
    """exp of the mean KL between conditional rows and the split marginal;
    returns (mean, std) over splits."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise MetricError(f"inception_score: expected M x K rows, got shape {probs.shape}")
    m = probs.shape[0]
    if not (1 <= n_splits <= m):
        raise MetricError(f"n_splits must be in [1, {m}]")
    if (probs < 0).any() or np.abs(probs.sum(axis=1) - 1.0).max() > tol:
        raise MetricError("rows must lie on the probability simplex")
    scores = []
    for chunk in np.array_split(probs, n_splits):
        marginal = chunk.mean(axis=0)
        safe = np.clip(chunk, 1e-16, None)
        kl = (chunk * (np.log(safe) - np.log(np.clip(marginal, 1e-16, None)))).sum(axis=1)
        scores.append(float(np.exp(kl.mean())))
    return float(np.mean(scores)), float(np.std(scores))


# ---------------------------------------------------------------------------
# feature providers

class RandomProjectionProvider:
    """Fixed random linear projection of pixels; class probabilities come
    from a softmax over a second fixed projection."""

    provider_id = "pixels"

    def __init__(self, input_shape, dim: int = 64, n_classes: int = 8, seed: int = 7):
        rng = np.random.default_rng(seed)
        n = int(np.prod(input_shape))
        self._w = rng.standard_normal((n, dim)) / np.sqrt(n)
        self._wc = rng.standard_normal((n, n_classes)) / np.sqrt(n)

    def features(self, images: np.ndarray) -> np.ndarray:
        flat = images.reshape(images.shape[0], -1)
        return flat @ self._w

    def class_probs(self, images: np.ndarray) -> np.ndarray:
        flat = images.reshape(images.shape[0], -1)
        logits = flat @ self._wc * 4.0
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)


class ToyClassifierProvider:
    """Multinomial logistic regression fit on labeled toy images; features
    are the penultimate (logit) layer, class probabilities its softmax."""

    provider_id = "classifier"

    def __init__(self, images: np.ndarray, labels: np.ndarray, n_classes: int,
                 epochs: int = 200, lr: float = 0.5, seed: int = 7):
        rng = np.random.default_rng(seed)
        flat = images.reshape(images.shape[0], -1)
        n = flat.shape[1]
        self._w = rng.standard_normal((n, n_classes)) * 0.01
        self._b = np.zeros(n_classes)
        onehot = np.eye(n_classes)[labels]
        for _ in range(epochs):
            p = self._softmax(flat @ self._w + self._b)
            g = flat.T @ (p - onehot) / flat.shape[0]
            gb = (p - onehot).mean(axis=0)
            self._w -= lr * g
            self._b -= lr * gb

    @staticmethod
    def _softmax(z):
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def features(self, images: np.ndarray) -> np.ndarray:
        flat = images.reshape(images.shape[0], -1)
        return flat @ self._w + self._b

    def class_probs(self, images: np.ndarray) -> np.ndarray:
        return self._softmax(self.features(images))


def evaluate_sets(real: np.ndarray, fake: np.ndarray, provider, n_splits: int = 4) -> dict:
    """The full metric report used by the CLI: IS over the fake set plus
    FID and KID between real and fake feature sets."""
    fr = provider.features(real)
    ff = provider.features(fake)
    is_mean, is_std = inception_score(provider.class_probs(fake), n_splits=min(n_splits, fake.shape[0]))
    return {
        "is_mean": is_mean,
        "is_std": is_std,
        "fid": frechet_distance(fr, ff),
        "kid": kid(fr, ff),
        "provider": provider.provider_id,
    }
