"""Desk-scale experiment runners: sweeps over sparsity, layer and data dimension.

All runners return lists of row dicts in a fixed order and never touch the
filesystem; :func:`write_csv` serialises them.
"""
import csv
import time
from dataclasses import dataclass

import numpy as np

from .bounds import ManifoldParams, single_layer_bound
from .linalg import frobenius, pca_project, relu
from .net import DenseNet, LabeledSet, accuracy, capture
from .pruner import FetaConfig, PruneResult, ThresholdSpec, feta, hard_threshold, sparsity_of
from .trainer import SynthSpec, TrainConfig, init_net, make_synthetic, train

METHODS = ("threshold", "feta")
SPARSITY_COLUMNS = ["method", "sparsity", "accuracy", "layer_error", "wall_time"]
LAYER_COLUMNS = ["layer", "sparsity", "method", "accuracy", "margin", "penalty", "ge_bound", "flags"]
PCA_COLUMNS = ["k", "sparsity", "mean_accuracy", "std_accuracy"]


def relu_layers(net):
    return [i for i, layer in enumerate(net.layers) if layer.activation == "relu"]


def prune_layer(net, layer, X, method, sparsity, feta_cfg=None):
    """Prune one ReLU layer of ``net`` to ``sparsity`` using activations of ``X``.

    Returns ``(pruned_net, PruneResult)``. Sparsity 0 leaves the net as is.
    """
    L = net.layers[layer]
    tap = capture(net, X, layer)
    t0 = time.perf_counter()
    if sparsity == 0:
        res = PruneResult(np.array(L.weights), L.bias, sparsity_of(L.weights), [], [], 0.0,
                          0.0, 0.0, 0.0, 0)
    elif method == "threshold":
        U = hard_threshold(L.weights, ThresholdSpec("sparsity", sparsity))
        Z = U.T @ tap.A + (0.0 if L.bias is None else L.bias[:, None])
        res = PruneResult(U, L.bias, sparsity_of(U), [], [], frobenius(relu(Z) - tap.B),
                          time.perf_counter() - t0, 0.0, 0.0, 0)
    elif method == "feta":
        cfg = (feta_cfg or FetaConfig()).replace(target_sparsity=sparsity)
        res = feta(L.weights, tap, cfg, bias=L.bias)
    else:
        raise ValueError(f"unknown method {method!r}")
    return net.with_layer(layer, res.U, res.bias), res


def sparsity_sweep(net, train_set, test_set, layer, methods=METHODS, sparsities=(0.0, 0.5, 0.9),
                   feta_cfg=None):
    rows = []
    for method in methods:
        for s in sparsities:
            pruned, res = prune_layer(net, layer, train_set.X, method, s, feta_cfg)
            rows.append({
                "method": method,
                "sparsity": s,
                "accuracy": accuracy(pruned, test_set),
                "layer_error": res.layer_error,
                "wall_time": res.wall_time,
            })
    return rows


def layer_sweep(net, train_set, test_set, sparsities, method="threshold", mp=None, feta_cfg=None):
    """Prune each hidden layer alone at each sparsity; accuracy plus bound terms."""
    if mp is None:
        mp = ManifoldParams(C_M=1.0, k=2, delta=0.01, m=len(train_set), N_y=net.n_classes)
    rows = []
    for layer in relu_layers(net):
        for s in sparsities:
            pruned, res = prune_layer(net, layer, train_set.X, method, s, feta_cfg)
            rep = single_layer_bound(net, layer, res.U, train_set, mp, pruned_bias=res.bias)
            rows.append({
                "layer": layer,
                "sparsity": s,
                "method": method,
                "accuracy": accuracy(pruned, test_set),
                "margin": rep.effective_margin,
                "penalty": rep.penalty,
                "ge_bound": "" if rep.ge_bound is None else rep.ge_bound,
                "flags": ";".join(rep.flags),
            })
    return rows


def _project(pca, X):
    V = pca.components
    Xc = X - pca.mean[:, None]
    return V @ (V.T @ Xc) + pca.mean[:, None]


def pca_sweep(train_set, test_set, k_values, hidden, sparsities, repeats, prune_layer_index=0,
              train_cfg=None, method="threshold", seed=0):
    """Accuracy after pruning one layer of nets trained on rank-k PCA inputs.

    For each k the training inputs are replaced by their rank-k PCA
    reconstruction (test inputs use the same projection), ``repeats`` nets
    with distinct seeds are trained, and the chosen layer is pruned at each
    sparsity. Rows report mean and population std of test accuracy.
    """
    train_cfg = train_cfg or TrainConfig()
    rows = []
    for k in k_values:
        pca = pca_project(train_set.X, k)
        tr = LabeledSet(pca.reconstruction, train_set.y)
        te = LabeledSet(_project(pca, test_set.X), test_set.y)
        accs = _train_and_prune(tr, te, hidden, sparsities, repeats, prune_layer_index, train_cfg,
                                method, seed)
        for s, a in zip(sparsities, accs.T):
            rows.append({"k": k, "sparsity": s, "mean_accuracy": float(a.mean()),
                         "std_accuracy": float(a.std())})
    return rows


def _train_and_prune(tr, te, hidden, sparsities, repeats, layer, train_cfg, method, seed):
    n_classes = int(max(tr.y.max(), te.y.max())) + 1
    accs = np.zeros((repeats, len(sparsities)))
    for r in range(repeats):
        s_r = seed * 1000 + r
        net = init_net([tr.X.shape[0], *hidden, n_classes], seed=s_r)
        cfg = TrainConfig(**{**train_cfg.to_dict(), "seed": s_r})
        net, _ = train(net, tr, cfg)
        for j, s in enumerate(sparsities):
            pruned, _ = prune_layer(net, layer, tr.X, method, s)
            accs[r, j] = accuracy(pruned, te)
    return accs


def intrinsic_dim_sweep(k_values, sparsity, repeats, hidden=(64, 32), n_ambient=64, m=2000,
                        m_test=1000, train_cfg=None, seed=0, **synth):
    """Mean accuracy drop from pruning the first layer, per true intrinsic dimension.

    Data come from :func:`make_synthetic`; each repeat uses a different data
    seed and net seed. Returns rows ``{k, baseline, pruned, drop}`` with the
    drop averaged over repeats.
    """
    train_cfg = train_cfg or TrainConfig()
    rows = []
    for k in k_values:
        base, pruned = [], []
        for r in range(repeats):
            spec = SynthSpec(n_ambient=n_ambient, k_intrinsic=k, m=m, seed=seed * 1000 + r, **synth)
            tr = make_synthetic(spec)
            te = make_synthetic(spec, m=m_test, sample_seed=1)
            accs = _train_and_prune(tr, te, hidden, (0.0, sparsity), 1, 0, train_cfg, "threshold",
                                    seed * 1000 + r)
            base.append(accs[0, 0])
            pruned.append(accs[0, 1])
        base, pruned = np.array(base), np.array(pruned)
        rows.append({"k": k, "baseline": float(base.mean()), "pruned": float(pruned.mean()),
                     "drop": float(np.mean(base - pruned))})
    return rows


def write_csv(rows, path, columns):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({c: _fmt(row[c]) for c in columns})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


# --- shipped fixtures ----------------------------------------------------------

@dataclass(frozen=True)
class Fixture:
    net: DenseNet
    train: LabeledSet
    test: LabeledSet


FIXTURE_DATA = dict(n_ambient=64, k_intrinsic=16, n_classes=10, m=2000, class_sep=4.0)


def fixture(hidden=(64, 32), seed=0, data_seed=1, train_cfg=None):
    """Synthetic 64-d, 10-class data (2000 train / 1000 test) and a net trained on it."""
    spec = SynthSpec(seed=data_seed, **FIXTURE_DATA)
    tr = make_synthetic(spec)
    te = make_synthetic(spec, m=1000, sample_seed=0)
    cfg = train_cfg or TrainConfig(seed=seed)
    net, _ = train(init_net([spec.n_ambient, *hidden, spec.n_classes], seed=seed), tr, cfg)
    return Fixture(net, tr, te)
