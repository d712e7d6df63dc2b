"""Margin-based generalization-error bounds for pruned networks.

For a classifier whose training set lies on a C_M-regular k-dimensional
manifold and which attains input-space margin ``gamma``,

    GE <= A * gamma**(-k/2) + B,
    A = sqrt(ln 2 * N_y * 2**(k+1) * C_M**k / m),   B = sqrt(2 ln(1/delta) / m).

Pruning shrinks the usable margin by a penalty: for a single layer it is the
layer's worst-case output error times the spectral-norm product of the layers
after it, divided by the product over all layers; for perturbations ``H_i``
of several layers it is ``e * D**2 * sum_i |H_i|_2 / |W_i|_2``.

The bounds are diagnostics. At realistic sizes they are vacuous (far above
1), which every report states in its ``disclaimer``.
"""
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .linalg import ParameterError, make_rng, pca_project, relu, spectral_norm
from .net import capture, margin_lower_bound

DISCLAIMER = "diagnostic only: margin-based GE bounds are typically vacuous at realistic scales"
UNCHECKED_DECISIONS = "unchecked-hypothesis:decisions-unchanged-after-pruning"


@dataclass(frozen=True)
class ManifoldParams:
    C_M: float
    k: int
    delta: float
    m: int
    N_y: int

    def __post_init__(self):
        if not self.C_M > 0:
            raise ParameterError("C_M must be positive")
        if self.k < 1 or self.m < 1 or self.N_y < 2:
            raise ParameterError("need k >= 1, m >= 1, N_y >= 2")
        if not 0 < self.delta < 1:
            raise ParameterError("delta must be in (0, 1)")


def a_const(mp):
    return math.sqrt(math.log(2) * mp.N_y * 2.0 ** (mp.k + 1) * mp.C_M ** mp.k / mp.m)


def b_const(mp):
    return math.sqrt(2.0 * math.log(1.0 / mp.delta) / mp.m)


def margin_ge_bound(gamma, mp):
    """GE bound of an unpruned classifier with margin ``gamma`` (None if gamma <= 0)."""
    if gamma <= 0:
        return None
    return a_const(mp) * gamma ** (-mp.k / 2.0) + b_const(mp)


@dataclass
class BoundReport:
    gamma: float
    penalty: float
    effective_margin: float
    A_const: float
    B_const: float
    ge_bound: float  # None when the effective margin is not positive
    ingredients: dict
    flags: list = field(default_factory=list)
    disclaimer: str = DISCLAIMER

    def to_dict(self):
        return asdict(self)


def ge_from_ingredients(doc):
    """Recompute ``ge_bound`` from a serialized report (dict)."""
    ing = doc["ingredients"]
    mp = ManifoldParams(ing["C_M"], ing["k"], ing["delta"], ing["m"], ing["N_y"])
    return _finish(ing["gamma"], ing["penalty"], mp)[1]


def _finish(gamma, penalty, mp):
    eff = gamma - penalty
    return eff, (a_const(mp) * eff ** (-mp.k / 2.0) + b_const(mp) if eff > 0 else None)


def _report(gamma, penalty, mp, ingredients, flags):
    eff, ge = _finish(gamma, penalty, mp)
    if ge is None:
        flags.append("vacuous-precondition")
    ingredients.update(asdict(mp), gamma=gamma, penalty=penalty)
    return BoundReport(gamma, penalty, eff, a_const(mp), b_const(mp), ge, ingredients, flags)


def max_layer_output_error(tap, W, U, bias=None, pruned_bias=None):
    """Largest per-sample l2 distance between the pruned and original layer outputs."""
    A = np.asarray(tap.A)
    Zw = W.T @ A
    Zu = U.T @ A
    if bias is not None:
        Zw = Zw + np.asarray(bias)[:, None]
    pb = bias if pruned_bias is None else pruned_bias
    if pb is not None:
        Zu = Zu + np.asarray(pb)[:, None]
    D = relu(Zu) - relu(Zw)
    return float(np.sqrt(np.max(np.sum(D * D, axis=0), initial=0.0)))


def single_layer_bound(net, layer, U, data, mp, pruned_bias=None, seed=0):
    """GE bound after replacing the weights of one hidden layer by ``U``.

    The margin and spectral norms are those of the unpruned ``net``; the
    layer error is measured on ``data`` (the training set).
    """
    margin = margin_lower_bound(net, data, seed)
    norms = margin.spectral_norms
    W = net.layers[layer].weights
    tap = capture(net, data.X, layer)
    c1 = max_layer_output_error(tap, W, U, net.layers[layer].bias, pruned_bias)
    downstream = float(np.prod(norms[layer + 1:]))
    penalty = c1 * downstream / float(np.prod(norms))
    flags = [UNCHECKED_DECISIONS]
    if not margin.valid:
        flags.append("nonpositive-training-score")
    ingredients = {
        "kind": "single-layer",
        "layer": layer,
        "spectral_norms": norms,
        "min_score": margin.score,
        "min_score_index": margin.index,
        "C1": c1,
    }
    return _report(margin.gamma, penalty, mp, ingredients, flags)


def multi_layer_bound(net, perturbed, data, mp, seed=0):
    """GE bound when several layers are replaced: ``perturbed`` maps layer -> U."""
    perturbed = dict(perturbed)
    if not perturbed:
        raise ParameterError("no perturbed layers given")
    margin = margin_lower_bound(net, data, seed)
    norms = margin.spectral_norms
    L = len(net.layers)
    D = float(np.max(np.linalg.norm(data.X, axis=0)))
    h_norms = {}
    ratio_sum = 0.0
    flags = [UNCHECKED_DECISIONS]
    if not margin.valid:
        flags.append("nonpositive-training-score")
    for i in sorted(perturbed):
        H = net.layers[i].weights - np.asarray(perturbed[i], dtype=np.float64)
        h = spectral_norm(H, rng=make_rng(seed))
        h_norms[i] = h
        ratio_sum += h / norms[i]
        if h > norms[i] / L:
            flags.append(f"inadmissible-perturbation:layer{i}")
    penalty = math.e * D * D * ratio_sum
    ingredients = {
        "kind": "multi-layer",
        "spectral_norms": norms,
        "perturbation_norms": {str(i): v for i, v in h_norms.items()},
        "min_score": margin.score,
        "min_score_index": margin.index,
        "D": D,
    }
    return _report(margin.gamma, penalty, mp, ingredients, flags)


def estimate_intrinsic_dim(X, threshold=0.99):
    """Heuristic k: fewest principal components explaining ``threshold`` of the variance."""
    d, n = X.shape
    pca = pca_project(X, min(d, n))
    cum = np.cumsum(pca.explained_variance_ratio)
    return int(np.searchsorted(cum, threshold - 1e-12) + 1)
