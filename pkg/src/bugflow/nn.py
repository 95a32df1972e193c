"""Small feed-forward network in numpy, trained with Adam.

Layout: fixed affine input normalization, three ReLU hidden layers and a
single output unit. The output is a logit (binary cross-entropy) or a
linear value (mean squared error).
"""

from __future__ import annotations

import numpy as np

from bugflow.errors import DataError

HIDDEN = (64, 32, 16)


def _softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


class MLP:
    def __init__(self, n_inputs, hidden=HIDDEN, seed=0, mean=None, std=None):
        rng = np.random.default_rng(seed)
        sizes = (n_inputs, *hidden, 1)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            # He initialization for ReLU layers
            self.weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        # a zero output layer starts the network at its output bias
        self.weights[-1][:] = 0.0
        self.mean = np.zeros(n_inputs) if mean is None else np.asarray(mean, dtype=float)
        self.std = np.ones(n_inputs) if std is None else np.asarray(std, dtype=float)

    @property
    def params(self):
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def normalize(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def forward(self, X):
        """Return the output column (pre-activation) and the layer activations."""
        a = self.normalize(X)
        acts = [a]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            a = z if i == last else np.maximum(z, 0.0)
            acts.append(a)
        return acts[-1][:, 0], acts

    def loss(self, X, y, loss):
        out, _ = self.forward(X)
        if loss == "bce":
            return float(np.mean(_softplus(out) - y * out))
        return float(np.mean((out - y) ** 2))

    def loss_and_grads(self, X, y, loss):
        out, acts = self.forward(X)
        n = out.shape[0]
        if loss == "bce":
            value = float(np.mean(_softplus(out) - y * out))
            dout = (sigmoid(out) - y) / n
        elif loss == "mse":
            diff = out - y
            value = float(np.mean(diff**2))
            dout = 2.0 * diff / n
        else:
            raise ValueError(f"unknown loss {loss!r}")
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = dout[:, None]
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = acts[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        grads = [g for pair in zip(grads_w, grads_b) for g in pair]
        return value, grads

    def to_json(self):
        return {
            "hidden": [W.shape[1] for W in self.weights[:-1]],
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_json(cls, data):
        weights = [np.array(W, dtype=float) for W in data["weights"]]
        net = cls(weights[0].shape[0], tuple(data["hidden"]), mean=data["mean"], std=data["std"])
        net.weights = weights
        net.biases = [np.array(b, dtype=float) for b in data["biases"]]
        return net


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def fit(X, y, loss, seed=0, epochs=200, batch=32, lr=1e-3, hidden=HIDDEN):
    """Train a fresh network; returns ``(net, per_epoch_loss)``.

    The normalization constants are the column mean and standard deviation
    of ``X`` (zero-variance columns are left unscaled).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if n < 2 * batch:
        raise DataError(f"need at least {2 * batch} training examples, got {n}")
    std = X.std(axis=0)
    std[std == 0] = 1.0
    net = MLP(X.shape[1], hidden, seed=seed, mean=X.mean(axis=0), std=std)
    # start the output at the target's base rate / mean
    if loss == "bce":
        p = min(max(float(y.mean()), 1e-6), 1 - 1e-6)
        net.biases[-1][:] = np.log(p / (1 - p))
    else:
        net.biases[-1][:] = y.mean()
    opt = Adam(net.params, lr=lr)
    rng = np.random.default_rng([seed, 1])
    history = [net.loss(X, y, loss)]
    for epoch in range(epochs):
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, batch)):
            idx = order[start : start + batch]
            value, grads = net.loss_and_grads(X[idx], y[idx], loss)
            if not np.isfinite(value):
                raise DataError(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.step(grads)
        history.append(net.loss(X, y, loss))
    return net, history
