"""Differentiable building blocks: activations, losses, dense layers,
embedding tables and Adam. Everything is float64 and single-threaded;
gradients are analytic and checked against finite differences in the tests.
"""

import numpy as np

from . import kernels
from .errors import ConfigError, UsageError

ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")

# Probabilities are clipped to [P_CLIP, 1 - P_CLIP] before any log.
P_CLIP = 1e-7


def activation_apply(kind, x):
    """Apply an activation elementwise. Unknown kinds are a config error."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "sigmoid":
        # exp overflow on very negative logits saturates to exactly 0.0,
        # which is the intended limit, so the warning carries no information
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-x))
    if kind == "tanh":
        return np.tanh(x)
    if kind == "identity":
        return x
    raise ConfigError(f"unknown activation kind: {kind!r}")


def activation_grad_from_output(kind, out):
    """Derivative of the activation expressed through its own output.

    For relu the subgradient at 0 is taken as 0 (out == 0 gives 0).
    """
    if kind == "relu":
        return (out > 0.0).astype(np.float64)
    if kind == "sigmoid":
        return out * (1.0 - out)
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "identity":
        return np.ones_like(out)
    raise ConfigError(f"unknown activation kind: {kind!r}")


def _weights_pair(class_weights):
    """Normalize class weights to an array [w_for_0, w_for_1]."""
    if class_weights is None:
        return np.array([1.0, 1.0])
    if isinstance(class_weights, dict):
        return np.array([float(class_weights[0]), float(class_weights[1])])
    w = np.asarray(class_weights, dtype=np.float64)
    if w.shape != (2,):
        raise UsageError("class weights must map the two classes 0 and 1")
    return w


def weighted_bce_loss(p, y, class_weights=None):
    """Mean class-weighted binary cross-entropy.

    Probabilities are clipped to [P_CLIP, 1 - P_CLIP]; each instance is
    weighted by the weight of its true class.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise UsageError(f"length mismatch: {p.shape} vs {y.shape}")
    w = _weights_pair(class_weights)
    pc = np.clip(p, P_CLIP, 1.0 - P_CLIP)
    per = -y * np.log(pc) - (1.0 - y) * np.log(1.0 - pc)
    return float(np.mean(w[y.astype(np.int64)] * per))


def bce_dlogit(p, y, class_weights=None):
    """Gradient of weighted_bce_loss w.r.t. the pre-sigmoid logit.

    Exact for the clipped loss: zero where the clip is active, otherwise
    the usual fused form w * (p - y) / n.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = _weights_pair(class_weights)
    inside = (p > P_CLIP) & (p < 1.0 - P_CLIP)
    return w[y.astype(np.int64)] * (p - y) * inside / p.shape[0]


def mae_loss(yhat, target):
    """Mean absolute error."""
    yhat = np.asarray(yhat, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if yhat.shape != target.shape:
        raise UsageError(f"length mismatch: {yhat.shape} vs {target.shape}")
    return float(np.mean(np.abs(yhat - target)))


def mae_dlogit_tanh(yhat, target):
    """Gradient of mae_loss w.r.t. the pre-tanh logit.

    sign(0) = 0, i.e. the symmetric subgradient at the kink.
    """
    yhat = np.asarray(yhat, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return np.sign(yhat - target) * (1.0 - yhat * yhat) / yhat.shape[0]


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class DenseLayer:
    """Fully connected layer out = act(x @ W.T + b), W is (out_dim, in_dim).

    forward returns a cache consumed by backward, so prediction can run
    concurrently without mutating the layer.
    """

    def __init__(self, in_dim, out_dim, activation, rng):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation kind: {activation!r}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.weights = glorot_uniform(rng, (out_dim, in_dim), in_dim, out_dim)
        self.bias = np.zeros(out_dim)

    def forward(self, x):
        if x.shape[1] != self.in_dim:
            raise UsageError(f"expected input dim {self.in_dim}, got {x.shape[1]}")
        out = activation_apply(self.activation, x @ self.weights.T + self.bias)
        return out, (x, out)

    def backward(self, cache, dout):
        """Return (dx, dweights, dbias) for the cached forward pass."""
        if cache is None:
            raise UsageError("backward called before forward")
        x, out = cache
        if dout.shape != out.shape:
            raise UsageError(f"gradient shape {dout.shape} does not match output {out.shape}")
        dz = dout * activation_grad_from_output(self.activation, out)
        return dz @ self.weights, dz.T @ x, dz.sum(axis=0)

    def params(self):
        return [self.weights, self.bias]


class EmbeddingTable:
    """vocab_size x dim lookup table; rows are gathered by integer index."""

    def __init__(self, vocab_size, dim, rng):
        if vocab_size < 1 or dim < 1:
            raise ConfigError("vocab_size and dim must be positive")
        self.vocab_size = vocab_size
        self.dim = dim
        # Fan-scaled like a (vocab, dim) dense weight. The small rows keep
        # early pairwise-interaction scores (and with them the raw head
        # inputs) near zero, so heads start unsaturated.
        self.weights = glorot_uniform(rng, (vocab_size, dim), vocab_size, dim)

    def lookup(self, idx):
        return self.weights[idx]


class Adam:
    """Bias-corrected Adam over a fixed list of parameter tensors.

    step() mutates the parameters in place and advances the step counter
    by exactly 1. m/v accumulators mirror the parameter shapes.
    """

    def __init__(self, params, learning_rate=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        if len(params) != len(self.m) or len(grads) != len(params):
            raise UsageError("parameter/gradient count does not match optimizer state")
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape or p.shape != m.shape:
                raise UsageError(f"shape mismatch in adam step: {p.shape} vs {g.shape}")
            kernels.adam_update(p, g, m, v, self.learning_rate,
                                self.beta1, self.beta2, self.epsilon, self.t)

    def state_copy(self):
        return (self.t, [m.copy() for m in self.m], [v.copy() for v in self.v])

    def load_state(self, state):
        self.t, m, v = state[0], state[1], state[2]
        self.m = [a.copy() for a in m]
        self.v = [a.copy() for a in v]
