"""Dense ReLU classifiers: forward passes, activation taps, scores, margins.

Data matrices hold one sample per column. A layer with weights ``W``
(``d_in x d_out``) maps ``z`` to ``act(W.T @ z + b)``.
"""
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import fta
from .linalg import ParameterError, as_matrix, make_rng, relu, spectral_norm

ACTIVATIONS = ("relu", "softmax", "linear")
SQRT2 = math.sqrt(2.0)


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray
    bias: np.ndarray = None
    activation: str = "relu"

    def __post_init__(self):
        W = as_matrix(self.weights, "weights")
        object.__setattr__(self, "weights", _frozen(W))
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float64).reshape(-1)
            if b.shape[0] != W.shape[1]:
                raise ParameterError(f"bias length {b.shape[0]} != d_out {W.shape[1]}")
            object.__setattr__(self, "bias", _frozen(b))
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")

    @property
    def d_in(self):
        return self.weights.shape[0]

    @property
    def d_out(self):
        return self.weights.shape[1]

    def preact(self, Z):
        out = self.weights.T @ Z
        if self.bias is not None:
            out = out + self.bias[:, None]
        return out

    def replace(self, weights=None, bias=None):
        return Layer(
            self.weights if weights is None else weights,
            self.bias if bias is None else bias,
            self.activation,
        )


@dataclass(frozen=True)
class DenseNet:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ParameterError("a network needs at least one layer")
        for i, (a, b) in enumerate(zip(layers, layers[1:])):
            if a.d_out != b.d_in:
                raise ParameterError(f"layer {i} outputs {a.d_out} but layer {i + 1} expects {b.d_in}")
        for i, layer in enumerate(layers[:-1]):
            if layer.activation != "relu":
                raise ParameterError(f"hidden layer {i} must be relu, got {layer.activation}")
        if layers[-1].d_out < 2:
            raise ParameterError("classifier needs at least 2 outputs")

    @property
    def n_classes(self):
        return self.layers[-1].d_out

    @property
    def d_in(self):
        return self.layers[0].d_in

    def with_layer(self, index, weights=None, bias=None):
        layers = list(self.layers)
        layers[index] = layers[index].replace(weights, bias)
        return DenseNet(tuple(layers))


@dataclass(frozen=True)
class LayerTap:
    """Input/output activations of one ReLU layer over a sample set."""

    layer_index: int
    A: np.ndarray  # d_in x m
    B: np.ndarray  # d_out x m, post-ReLU

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        if A.shape[1] != B.shape[1]:
            raise ParameterError(f"A has {A.shape[1]} samples, B has {B.shape[1]}")
        if np.any(B < 0):
            raise ParameterError("tap outputs must be nonnegative")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))

    @property
    def m(self):
        return self.A.shape[1]

    def augmented_A(self):
        """A with a trailing all-ones row, for weights with the bias stacked last."""
        return np.vstack([self.A, np.ones((1, self.m))])


@dataclass(frozen=True)
class LabeledSet:
    X: np.ndarray  # N x m
    y: np.ndarray = field(default=None)

    def __post_init__(self):
        X = as_matrix(self.X, "X")
        y = np.asarray(self.y).reshape(-1).astype(np.int64)
        if y.shape[0] != X.shape[1]:
            raise ParameterError(f"{X.shape[1]} samples but {y.shape[0]} labels")
        object.__setattr__(self, "X", _frozen(X))
        y.flags.writeable = False
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.X.shape[1]

    def subset(self, idx):
        return LabeledSet(self.X[:, idx], self.y[idx])


def _check_input(net, X):
    X = as_matrix(X, "X")
    if X.shape[0] != net.d_in:
        raise ParameterError(f"input has {X.shape[0]} rows, network expects {net.d_in}")
    return X


def activations(net, X):
    """Per-layer outputs; entry i is the input of layer i, the last entry the logits."""
    Z = _check_input(net, X)
    outs = [Z]
    for layer in net.layers:
        Z = layer.preact(Z)
        if layer.activation == "relu":
            Z = relu(Z)
        outs.append(Z)
    return outs


def forward(net, X):
    """Network outputs before any softmax (logits), one column per sample."""
    return activations(net, X)[-1]


def predict(net, X):
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(forward(net, X), axis=0)


def accuracy(net, data):
    if len(data) == 0:
        return 0.0
    return float(np.mean(predict(net, data.X) == data.y))


def capture(net, X, layer_index):
    """Tap the input and post-ReLU output of a hidden ReLU layer."""
    if not 0 <= layer_index < len(net.layers):
        raise ParameterError(f"layer index {layer_index} out of range")
    layer = net.layers[layer_index]
    if layer.activation != "relu":
        raise ParameterError(f"layer {layer_index} is {layer.activation}; only relu layers can be tapped")
    acts = activations(net, X)
    A, B = acts[layer_index], acts[layer_index + 1]
    if np.max(np.abs(relu(layer.preact(A)) - B), initial=0.0) > 1e-9:
        raise RuntimeError("captured output does not match the layer recomputation")
    return LayerTap(layer_index, A, B)


def score_logits(F, predicted=None):
    """Score of each column of logits ``F``.

    ``sqrt(2) * min_{j != c} (F[c] - F[j])`` where ``c`` is ``predicted``
    (default: the argmax). Negative when ``c`` is not the top class.
    """
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[0] < 2:
        raise ParameterError("score needs at least two classes")
    n = F.shape[1]
    c = np.argmax(F, axis=0) if predicted is None else np.broadcast_to(np.asarray(predicted), (n,))
    cols = np.arange(n)
    top = F[c, cols]
    others = F.copy()
    others[c, cols] = -np.inf
    return SQRT2 * (top - others.max(axis=0))


def score(net, x, predicted=None):
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    return float(score_logits(forward(net, x), predicted)[0])


def min_score(net, data, use_labels=False):
    """Smallest score over a set and the (lowest) index achieving it.

    By default each sample is scored against the class the network predicts.
    With ``use_labels`` it is scored against its true label, which makes
    misclassified samples score <= 0.
    """
    if len(data) == 0:
        raise ParameterError("min_score over an empty set")
    s = score_logits(forward(net, data.X), data.y if use_labels else None)
    i = int(np.argmin(s))
    return float(s[i]), i


def layer_spectral_norms(net, seed=0):
    return [spectral_norm(layer.weights, rng=make_rng(seed)) for layer in net.layers]


@dataclass
class MarginBound:
    gamma: float
    score: float
    index: int
    spectral_norms: list
    valid: bool


def margin_lower_bound(net, data, seed=0):
    """Lower bound on the input-space margin: min score / prod of spectral norms.

    Samples are scored against their labels; if any scores <= 0 (a training
    error or a tie) the bound is 0 and ``valid`` is False. The product runs
    over every layer including the output layer.
    """
    s, i = min_score(net, data, use_labels=True)
    norms = layer_spectral_norms(net, seed)
    if s <= 0:
        return MarginBound(0.0, s, i, norms, False)
    return MarginBound(s / float(np.prod(norms)), s, i, norms, True)


# --- persistence --------------------------------------------------------

MODEL_FORMAT = "fetaprune-model/1"


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_net(net, directory, name="model"):
    """Write FTA1 tensors plus a JSON manifest; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for i, layer in enumerate(net.layers):
        entry = {"activation": layer.activation, "weights": f"{name}_l{i}_W.fta"}
        fta.save(os.path.join(directory, entry["weights"]), layer.weights)
        if layer.bias is not None:
            entry["bias"] = f"{name}_l{i}_b.fta"
            fta.save(os.path.join(directory, entry["bias"]), layer.bias[None, :])
        entries.append(entry)
    path = os.path.join(directory, f"{name}.json")
    _dump_json({"format": MODEL_FORMAT, "layers": entries}, path)
    return path


def load_net(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ParameterError(f"{path}: not a {MODEL_FORMAT} manifest")
    base = os.path.dirname(os.path.abspath(path))
    layers = []
    for entry in doc["layers"]:
        W = fta.load(os.path.join(base, entry["weights"]))
        b = fta.load(os.path.join(base, entry["bias"])).reshape(-1) if "bias" in entry else None
        layers.append(Layer(W, b, entry["activation"]))
    return DenseNet(tuple(layers))


def save_set(data, directory, name):
    os.makedirs(directory, exist_ok=True)
    fta.save(os.path.join(directory, f"{name}_X.fta"), data.X)
    fta.save(os.path.join(directory, f"{name}_y.fta"), data.y[None, :].astype(np.float64))


def load_set(directory, name):
    X = fta.load(os.path.join(directory, f"{name}_X.fta"))
    y = np.rint(fta.load(os.path.join(directory, f"{name}_y.fta"))).reshape(-1)
    return LabeledSet(X, y.astype(np.int64))
