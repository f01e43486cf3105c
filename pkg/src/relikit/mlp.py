"""Two-layer perceptron with hand-written gradients, float64 throughout.

The network maps a per-pixel feature vector to one raw scalar:
``raw = w2 . tanh(W1 x + b1) + b2``. A temperature is obtained as
``softplus(raw) + t_floor`` so it is always positive. The loss is the
(optionally weighted) mean NLL of per-pixel class logits divided by the
predicted temperature; its gradient with respect to the temperature is
``(z_y - sum_k p_k z_k) / t^2``, back-propagated through softplus and the
network by hand. :func:`loss_and_grads` is checked against central finite
differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inverse(y: float) -> float:
    if y <= 0:
        raise ValueError("softplus is positive")
    return float(y + np.log1p(-np.exp(-y)))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class MlpParams:
    w1: np.ndarray  # (hidden, input)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float

    def copy(self) -> "MlpParams":
        return MlpParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), float(self.b2))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.w1.reshape(-1), self.b1, self.w2, [self.b2]])

    def from_vector(self, vec: np.ndarray) -> "MlpParams":
        h, d = self.w1.shape
        parts = np.split(np.asarray(vec, dtype=np.float64), [h * d, h * d + h, h * d + 2 * h])
        return MlpParams(parts[0].reshape(h, d), parts[1], parts[2], float(parts[3][0]))


def init_params(input_dim: int, hidden: int, rng: np.random.Generator, raw_bias: float) -> MlpParams:
    return MlpParams(
        w1=rng.normal(0.0, 1.0 / np.sqrt(input_dim), size=(hidden, input_dim)),
        b1=np.zeros(hidden),
        w2=rng.normal(0.0, 1.0 / np.sqrt(hidden), size=hidden),
        b2=float(raw_bias),
    )


def raw_output(params: MlpParams, features: np.ndarray) -> np.ndarray:
    hidden = np.tanh(features @ params.w1.T + params.b1)
    return hidden @ params.w2 + params.b2


def loss_and_grads(params: MlpParams, features: np.ndarray, logits: np.ndarray,
                   labels: np.ndarray, t_floor: float,
                   weights: np.ndarray | None = None) -> tuple[float, MlpParams, np.ndarray]:
    """Weighted mean NLL of temperature-scaled logits, and its gradients.

    Returns (loss, gradients shaped like the parameters, per-pixel
    temperatures). ``weights`` defaults to uniform and is normalized to
    sum to one.
    """
    features = np.asarray(features, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = features.shape[0]
    rows = np.arange(n)
    hidden = np.tanh(features @ params.w1.T + params.b1)
    raw = hidden @ params.w2 + params.b2
    t = softplus(raw) + t_floor
    scaled = logits / t[:, None]
    shift = scaled.max(axis=1, keepdims=True)
    expd = np.exp(scaled - shift)
    norm = expd.sum(axis=1)
    lse = shift[:, 0] + np.log(norm)
    nll = lse - scaled[rows, labels]
    if weights is None:
        scale = np.full(n, 1.0 / n)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        total = weights.sum()
        if total <= 0:
            raise ValueError("weights must have positive sum")
        scale = weights / total
    loss = float((nll * scale).sum())
    probs = expd / norm[:, None]
    dloss_dt = (logits[rows, labels] - (probs * logits).sum(axis=1)) / t**2
    g_raw = dloss_dt * sigmoid(raw) * scale
    g_b2 = float(g_raw.sum())
    g_w2 = hidden.T @ g_raw
    g_hidden = np.outer(g_raw, params.w2) * (1.0 - hidden**2)
    g_w1 = g_hidden.T @ features
    g_b1 = g_hidden.sum(axis=0)
    return loss, MlpParams(g_w1, g_b1, g_w2, g_b2), t


def sgd_train(params: MlpParams, features: np.ndarray, logits: np.ndarray, labels: np.ndarray,
              t_floor: float, learning_rate: float, epochs: int, batch_pixels: int,
              rng: np.random.Generator, weights: np.ndarray | None = None) -> list[float]:
    """Mini-batch gradient descent in place; returns the per-epoch full-data loss."""
    n = features.shape[0]
    batch_pixels = max(1, min(batch_pixels, n))
    curve = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_pixels):
            batch = order[start : start + batch_pixels]
            _, grads, _ = loss_and_grads(
                params, features[batch], logits[batch], labels[batch], t_floor,
                None if weights is None else weights[batch],
            )
            params.w1 -= learning_rate * grads.w1
            params.b1 -= learning_rate * grads.b1
            params.w2 -= learning_rate * grads.w2
            params.b2 -= learning_rate * grads.b2
        loss, _, _ = loss_and_grads(params, features, logits, labels, t_floor, weights)
        curve.append(loss)
    return curve
