"""Small numpy softmax classifier / MLP shared by the region and pixel models.

Supports zero or one tanh hidden layer. The loss is the summed cross-entropy
over the batch plus optional L2 on the weights; trainers divide by the batch
size themselves where a mean is wanted.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteLoss

_LOG_FLOOR = 1e-12


@dataclass
class MlpParams:
    weights: list  # one or two arrays, each (fan_in, fan_out)
    biases: list
    feat_mean: np.ndarray = None
    feat_std: np.ndarray = None

    @property
    def n_classes(self):
        return self.weights[-1].shape[1]

    def copy(self):
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            feat_mean=None if self.feat_mean is None else self.feat_mean.copy(),
            feat_std=None if self.feat_std is None else self.feat_std.copy(),
        )


def init_params(n_in, n_out, hidden=None, rng=None, scale=0.01):
    rng = np.random.default_rng(rng)
    dims = [n_in, n_out] if hidden is None else [n_in, hidden, n_out]
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(scale * rng.standard_normal((a, b)))
        biases.append(np.zeros(b))
    return MlpParams(weights=weights, biases=biases)


def standardize(params, X):
    if params.feat_mean is None:
        return X
    return (X - params.feat_mean) / params.feat_std


def fit_standardizer(params, X, eps=1e-8):
    params.feat_mean = X.mean(axis=0)
    params.feat_std = X.std(axis=0) + eps


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params, X):
    """Returns (probs, caches) for standardized input X."""
    X = standardize(params, X)
    if len(params.weights) == 1:
        logits = X @ params.weights[0] + params.biases[0]
        return softmax(logits), (X, None)
    hidden = np.tanh(X @ params.weights[0] + params.biases[0])
    logits = hidden @ params.weights[1] + params.biases[1]
    return softmax(logits), (X, hidden)


def predict_proba(params, X):
    return forward(params, X)[0]


def loss_and_grad(params, X, y, l2=0.0):
    """Summed cross-entropy (+ L2/2 * ||W||^2) with analytic gradients.

    Returns (loss, grad_weights, grad_biases); gradients match the summed
    loss, so duplicating a sample doubles its contribution exactly.
    """
    probs, (Xs, hidden) = forward(params, X)
    n = len(y)
    p_true = probs[np.arange(n), y]
    loss = -np.log(np.maximum(p_true, _LOG_FLOOR)).sum()
    loss += 0.5 * l2 * sum(float((w ** 2).sum()) for w in params.weights)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss became {loss}")

    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    if len(params.weights) == 1:
        gw = [Xs.T @ dlogits + l2 * params.weights[0]]
        gb = [dlogits.sum(axis=0)]
    else:
        gw1 = hidden.T @ dlogits + l2 * params.weights[1]
        gb1 = dlogits.sum(axis=0)
        dhidden = (dlogits @ params.weights[1].T) * (1.0 - hidden ** 2)
        gw0 = Xs.T @ dhidden + l2 * params.weights[0]
        gb0 = dhidden.sum(axis=0)
        gw, gb = [gw0, gw1], [gb0, gb1]
    return loss, gw, gb


def numeric_gradient(params, X, y, l2=0.0, h=1e-5):
    """Central finite differences of loss_and_grad's loss, same structure."""
    def loss_of(p):
        return loss_and_grad(p, X, y, l2=l2)[0]

    gw, gb = [], []
    for which, arrays in (("w", params.weights), ("b", params.biases)):
        for li, arr in enumerate(arrays):
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                lp = loss_of(params)
                arr[idx] = orig - h
                lm = loss_of(params)
                arr[idx] = orig
                g[idx] = (lp - lm) / (2 * h)
            (gw if which == "w" else gb).append(g)
    return gw, gb


def max_relative_gradient_error(params, X, y, l2=0.0, h=1e-5):
    """Max relative error between analytic and central-difference gradients."""
    _, gw, gb = loss_and_grad(params, X, y, l2=l2)
    nw, nb = numeric_gradient(params, X, y, l2=l2, h=h)
    worst = 0.0
    for a, n in zip(gw + gb, nw + nb):
        denom = np.maximum(np.abs(a) + np.abs(n), 1e-8)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)

    @property
    def initial(self):
        return self.losses[0]

    @property
    def final(self):
        return self.losses[-1]


def gd_step(params, gw, gb, lr, velocity=None, momentum=0.0):
    if momentum and velocity is not None:
        for i in range(len(params.weights)):
            velocity[0][i] = momentum * velocity[0][i] - lr * gw[i]
            velocity[1][i] = momentum * velocity[1][i] - lr * gb[i]
            params.weights[i] += velocity[0][i]
            params.biases[i] += velocity[1][i]
    else:
        for i in range(len(params.weights)):
            params.weights[i] -= lr * gw[i]
            params.biases[i] -= lr * gb[i]
