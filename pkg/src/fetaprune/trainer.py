"""Minibatch SGD with momentum for dense ReLU classifiers, and synthetic data.

Defaults follow the usual desk-scale recipe: lr 0.01, momentum 0.9,
batch 32, 30 epochs, with the learning rate multiplied by ``decay`` after
every epoch.
"""
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .linalg import ParameterError, make_rng, relu
from .net import DenseNet, LabeledSet, Layer, accuracy

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    decay: float = 0.95
    batch: int = 32
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ParameterError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ParameterError("momentum must be in [0, 1)")
        if not self.decay > 0:
            raise ParameterError("decay must be positive")
        if self.batch < 1:
            raise ParameterError("batch must be >= 1")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    mean_loss: float
    train_acc: float


def init_net(sizes, seed=0, output="softmax", bias=True):
    """Glorot-uniform weights, zero biases. ``sizes`` = [d_in, h1, ..., n_classes]."""
    rng = make_rng(seed)
    layers = []
    for i, (d_in, d_out) in enumerate(zip(sizes, sizes[1:])):
        lim = math.sqrt(6.0 / (d_in + d_out))
        W = rng.uniform(-lim, lim, size=(d_in, d_out))
        act = output if i == len(sizes) - 2 else "relu"
        layers.append(Layer(W, np.zeros(d_out) if bias else None, act))
    return DenseNet(tuple(layers))


def _log_softmax(F):
    F = F - F.max(axis=0, keepdims=True)
    return F - np.log(np.sum(np.exp(F), axis=0, keepdims=True))


def loss_and_grads(net, X, y, loss="cross_entropy"):
    """Mean loss over the columns of X and its gradient for every layer.

    Returns ``(loss, [(dW, db), ...])``; ``db`` is None for bias-free layers.
    ``loss`` is ``"cross_entropy"`` (softmax on the outputs) or ``"squared"``
    (half squared distance of the outputs to one-hot targets).
    """
    n = X.shape[1]
    acts = [X]
    pre = []
    Z = X
    for layer in net.layers:
        P = layer.preact(Z)
        pre.append(P)
        Z = relu(P) if layer.activation == "relu" else P
        acts.append(Z)
    F = acts[-1]
    Y = np.zeros_like(F)
    Y[y, np.arange(n)] = 1.0
    if loss == "cross_entropy":
        logp = _log_softmax(F)
        value = -float(np.sum(logp * Y)) / n
        dF = (np.exp(logp) - Y) / n
    elif loss == "squared":
        R = F - Y
        value = 0.5 * float(np.sum(R * R)) / n
        dF = R / n
    else:
        raise ParameterError(f"unknown loss {loss!r}")
    grads = [None] * len(net.layers)
    dZ = dF
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        dP = dZ * (pre[i] > 0) if layer.activation == "relu" else dZ
        dW = acts[i] @ dP.T
        db = dP.sum(axis=1) if layer.bias is not None else None
        grads[i] = (dW, db)
        if i:
            dZ = layer.weights @ dP
    return value, grads


def train(net, data, cfg, masks=None, progress=None):
    """Train ``net`` on ``data``; returns ``(new_net, [EpochStats, ...])``.

    ``masks`` optionally gives one 0/1 array per layer (or None): masked
    weights start at zero and stay zero. Used for retraining after pruning.
    """
    if data.y.min(initial=0) < 0 or data.y.max(initial=0) >= net.n_classes:
        raise ParameterError("labels out of range for this network")
    if data.X.shape[0] != net.d_in:
        raise ParameterError(f"data has {data.X.shape[0]} features, network expects {net.d_in}")
    if cfg.epochs == 0:
        return net, []
    rng = make_rng(cfg.seed)
    Ws = [np.array(layer.weights) for layer in net.layers]
    bs = [None if layer.bias is None else np.array(layer.bias) for layer in net.layers]
    if masks is not None:
        masks = [None if mk is None else np.asarray(mk, dtype=np.float64) for mk in masks]
        Ws = [W if mk is None else W * mk for W, mk in zip(Ws, masks)]
    vW = [np.zeros_like(W) for W in Ws]
    vb = [None if b is None else np.zeros_like(b) for b in bs]
    acts = [layer.activation for layer in net.layers]

    def current():
        return DenseNet(tuple(Layer(W, b, a) for W, b, a in zip(Ws, bs, acts)))

    m = len(data)
    trace = []
    lr = cfg.lr
    for epoch in range(cfg.epochs):
        order = rng.permutation(m)
        total = 0.0
        for start in range(0, m, cfg.batch):
            idx = order[start:start + cfg.batch]
            value, grads = loss_and_grads(current(), data.X[:, idx], data.y[idx])
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, lr={lr:g}")
            total += value * len(idx)
            for i, (dW, db) in enumerate(grads):
                if masks is not None and masks[i] is not None:
                    dW = dW * masks[i]
                vW[i] = cfg.momentum * vW[i] - lr * dW
                Ws[i] = Ws[i] + vW[i]
                if db is not None:
                    vb[i] = cfg.momentum * vb[i] - lr * db
                    bs[i] = bs[i] + vb[i]
        mean_loss = total / m
        if not math.isfinite(mean_loss) or not all(np.all(np.isfinite(W)) for W in Ws):
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}, lr={lr:g}")
        stats = EpochStats(epoch, lr, mean_loss, accuracy(current(), data))
        trace.append(stats)
        if progress:
            progress(stats)
        log.debug("epoch %d lr %.5f loss %.5f acc %.4f", epoch, lr, mean_loss, stats.train_acc)
        lr *= cfg.decay
    return current(), trace


def zero_masks(net):
    """Masks keeping exactly the nonzero weights of every layer."""
    return [(layer.weights != 0).astype(np.float64) for layer in net.layers]


def grad_check(net, data, n_params=200, eps=1e-5, seed=0, loss="cross_entropy", grad_fn=None):
    """Max relative error between analytic and central-difference gradients.

    Probes up to ``n_params`` randomly chosen weights/biases. ``grad_fn``
    replaces :func:`loss_and_grads` for the analytic side (test hook).
    """
    grad_fn = grad_fn or loss_and_grads
    _, grads = grad_fn(net, data.X, data.y, loss=loss)
    params = []
    for li, layer in enumerate(net.layers):
        params += [(li, "W", k) for k in range(layer.weights.size)]
        if layer.bias is not None:
            params += [(li, "b", k) for k in range(layer.bias.size)]
    rng = make_rng(seed)
    if len(params) > n_params:
        pick = rng.choice(len(params), size=n_params, replace=False)
        params = [params[i] for i in sorted(pick)]

    def perturbed(li, kind, k, delta):
        layer = net.layers[li]
        if kind == "W":
            W = np.array(layer.weights)
            W.flat[k] += delta
            return net.with_layer(li, weights=W)
        b = np.array(layer.bias)
        b[k] += delta
        return net.with_layer(li, bias=b)

    worst = 0.0
    for li, kind, k in params:
        plus, _ = loss_and_grads(perturbed(li, kind, k, eps), data.X, data.y, loss=loss)
        minus, _ = loss_and_grads(perturbed(li, kind, k, -eps), data.X, data.y, loss=loss)
        numeric = (plus - minus) / (2 * eps)
        dW, db = grads[li]
        analytic = dW.flat[k] if kind == "W" else db[k]
        err = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-7)
        worst = max(worst, err)
    return worst


@dataclass
class SynthSpec:
    n_ambient: int = 64
    k_intrinsic: int = 8
    n_classes: int = 10
    m: int = 2000
    noise: float = 0.0
    seed: int = 0
    class_sep: float = 3.0
    warp: float = 0.05

    def __post_init__(self):
        if self.n_ambient < 1 or self.k_intrinsic < 1:
            raise ParameterError("dimensions must be positive")
        if self.k_intrinsic > self.n_ambient:
            raise ParameterError("k_intrinsic cannot exceed n_ambient")
        if self.n_classes < 2 or self.m < self.n_classes:
            raise ParameterError("need n_classes >= 2 and m >= n_classes")
        if self.noise < 0:
            raise ParameterError("noise must be nonnegative")

    def to_dict(self):
        return asdict(self)


def make_synthetic(spec, m=None, sample_seed=None):
    """Class-conditional Gaussians on a k-dimensional curved sheet in R^n.

    Latent points are drawn around per-class means (mean spread scaled by
    1/sqrt(k) so class overlap does not depend on k), embedded by a fixed
    random linear map, bent by ``x + warp * tanh(x)`` and perturbed by
    isotropic noise. The geometry (means, embedding) depends only on
    ``spec.seed``; ``sample_seed`` draws a fresh sample from the same
    distribution, e.g. a test set.
    """
    geo = make_rng(spec.seed)
    k, n = spec.k_intrinsic, spec.n_ambient
    means = geo.standard_normal((k, spec.n_classes)) * (spec.class_sep / math.sqrt(k))
    E = geo.standard_normal((n, k)) / math.sqrt(k)
    m = spec.m if m is None else m
    rng = geo if sample_seed is None else make_rng((spec.seed << 20) ^ (sample_seed + 1))
    y = np.arange(m) % spec.n_classes
    y = y[rng.permutation(m)]
    Z = means[:, y] + rng.standard_normal((k, m))
    X = E @ Z
    X = X + spec.warp * np.tanh(X)
    if spec.noise > 0:
        X = X + spec.noise * rng.standard_normal(X.shape)
    return LabeledSet(X, y)
