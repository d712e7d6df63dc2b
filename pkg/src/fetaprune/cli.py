"""Command-line pipeline: synth -> train -> capture -> prune -> eval/retrain -> bound, plus sweeps.

Every command writes its artifacts to ``--out`` together with
``run_manifest.json`` (input and output SHA-256 hashes, resolved config,
seed, versions). Artifacts are byte-reproducible from the same inputs and
seed, except ``timing.json`` and the ``wall_time`` column of sparsity sweeps;
those files are listed as nondeterministic in the manifest and not hashed.

Exit codes: 0 ok, 2 usage/schema, 3 numerical abort, 4 I/O.
"""
import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys

import numpy as np

from . import __version__, fta, kernels
from .bounds import ManifoldParams, estimate_intrinsic_dim, multi_layer_bound, single_layer_bound
from .experiments import (
    LAYER_COLUMNS,
    PCA_COLUMNS,
    SPARSITY_COLUMNS,
    layer_sweep,
    pca_sweep,
    prune_layer,
    relu_layers,
    sparsity_sweep,
    write_csv,
)
from .linalg import ParameterError
from .net import LabeledSet, accuracy, capture, load_net, load_set, margin_lower_bound, save_net, save_set
from .pruner import FetaConfig, SolverDiverged, ThresholdSpec, hard_threshold, sparsity_of
from .trainer import SynthSpec, TrainConfig, TrainingDiverged, init_net, make_synthetic, train, zero_masks

log = logging.getLogger("fetaprune")

EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 2, 3, 4
DATASET_FORMAT = "fetaprune-dataset/1"
# outputs carrying wall-clock times; listed in the manifest but not hashed
NONDETERMINISTIC = ("timing.json", "sparsity_sweep.csv")


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# --- helpers -------------------------------------------------------------------

def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_config(path):
    if not path:
        return {}
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_USAGE, f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise CliError(EXIT_USAGE, f"{path}: config must be a JSON object")
    return cfg


def build(cls, fields, what):
    """Instantiate a config dataclass, rejecting unknown keys."""
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(fields) - names
    if unknown:
        raise CliError(EXIT_USAGE, f"unknown {what} keys: {sorted(unknown)}")
    return cls(**fields)


def split_keys(cfg, allowed):
    unknown = set(cfg) - set(allowed)
    if unknown:
        raise CliError(EXIT_USAGE, f"unknown config keys: {sorted(unknown)}")
    return cfg


def dataset_files(directory):
    meta = os.path.join(directory, "dataset.json")
    with open(meta) as fh:
        doc = json.load(fh)
    if doc.get("format") != DATASET_FORMAT:
        raise CliError(EXIT_USAGE, f"{meta}: not a {DATASET_FORMAT} descriptor")
    files = [meta]
    for name in doc["sets"]:
        files += [os.path.join(directory, f"{name}_X.fta"), os.path.join(directory, f"{name}_y.fta")]
    return doc, files


def load_dataset(directory):
    doc, _ = dataset_files(directory)
    sets = {name: load_set(directory, name) for name in doc["sets"]}
    train_set = sets["train"]
    return train_set, sets.get("test", train_set)


def save_dataset(directory, train_set, test_set=None, extra=None):
    os.makedirs(directory, exist_ok=True)
    names = ["train"] + (["test"] if test_set is not None else [])
    save_set(train_set, directory, "train")
    if test_set is not None:
        save_set(test_set, directory, "test")
    doc = {"format": DATASET_FORMAT, "sets": names}
    if extra:
        doc.update(extra)
    dump_json(doc, os.path.join(directory, "dataset.json"))


def model_files(path):
    with open(path) as fh:
        doc = json.load(fh)
    base = os.path.dirname(path)
    files = [path]
    for entry in doc.get("layers", []):
        files += [os.path.join(base, entry[k]) for k in ("weights", "bias") if k in entry]
    return files


def write_manifest(out, command, config, seed, inputs):
    outputs, volatile = {}, []
    for root, _, names in os.walk(out):
        for name in sorted(names):
            if name == "run_manifest.json":
                continue
            full = os.path.join(root, name)
            rel = os.path.relpath(full, out)
            if name in NONDETERMINISTIC:
                volatile.append(rel)
            else:
                outputs[rel] = sha256(full)
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {p: sha256(p) for p in sorted(set(inputs))},
        "outputs": dict(sorted(outputs.items())),
        "nondeterministic": sorted(volatile),
        "versions": {
            "fetaprune": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "kernels": kernels.BACKEND,
        },
    }
    dump_json(manifest, os.path.join(out, "run_manifest.json"))


def write_trace(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lr", "mean_loss", "train_acc"])
        for s in trace:
            w.writerow([s.epoch, repr(s.lr), repr(s.mean_loss), repr(s.train_acc)])


def manifold_params(cfg, net, train_set):
    k = cfg.get("k", "pca99")
    if k == "pca99":
        k = estimate_intrinsic_dim(train_set.X, 0.99)
    return ManifoldParams(
        C_M=float(cfg.get("C_M", 1.0)),
        k=int(k),
        delta=float(cfg.get("delta", 0.01)),
        m=len(train_set),
        N_y=net.n_classes,
    )


def seed_of(args, cfg, default=0):
    if args.seed is not None:
        return args.seed
    return int(cfg.get("seed", default))


# --- commands --------------------------------------------------------------------

def cmd_synth(args):
    cfg = read_config(args.config)
    m_test = int(cfg.pop("m_test", 1000))
    cfg["seed"] = seed_of(args, cfg)
    spec = build(SynthSpec, cfg, "synth")
    tr = make_synthetic(spec)
    te = make_synthetic(spec, m=m_test, sample_seed=0)
    save_dataset(args.out, tr, te, {"synth": spec.to_dict()})
    return {**spec.to_dict(), "m_test": m_test}, spec.seed, []


def cmd_pack_csv(args):
    def read(path):
        rows = np.loadtxt(path, delimiter=",", ndmin=2, skiprows=args.skip_header)
        y = rows[:, 0]
        if np.any(y != np.rint(y)) or np.any(y < 0):
            raise CliError(EXIT_USAGE, f"{path}: labels must be nonnegative integers")
        return LabeledSet(rows[:, 1:].T * args.scale, y.astype(np.int64))

    tr = read(args.csv)
    te = read(args.test_csv) if args.test_csv else None
    save_dataset(args.out, tr, te)
    inputs = [args.csv] + ([args.test_csv] if args.test_csv else [])
    return {"scale": args.scale, "skip_header": args.skip_header}, None, inputs


def cmd_train(args):
    cfg = read_config(args.config)
    hidden = cfg.pop("hidden", [64, 32])
    n_classes = int(cfg.pop("n_classes", 0))
    cfg["seed"] = seed_of(args, cfg)
    tc = build(TrainConfig, cfg, "train")
    tr, te = load_dataset(args.data)
    n_classes = n_classes or int(max(tr.y.max(), te.y.max())) + 1
    net = init_net([tr.X.shape[0], *hidden, n_classes], seed=tc.seed)
    net, trace = train(net, tr, tc)
    save_net(net, args.out)
    write_trace(trace, os.path.join(args.out, "loss.csv"))
    config = {**tc.to_dict(), "hidden": list(hidden), "n_classes": n_classes}
    return config, tc.seed, dataset_files(args.data)[1]


def cmd_retrain(args):
    cfg = read_config(args.config)
    cfg["seed"] = seed_of(args, cfg)
    tc = build(TrainConfig, cfg, "train")
    net = load_net(args.model)
    tr, _ = load_dataset(args.data)
    net, trace = train(net, tr, tc, masks=zero_masks(net))
    save_net(net, args.out)
    write_trace(trace, os.path.join(args.out, "loss.csv"))
    return tc.to_dict(), tc.seed, model_files(args.model) + dataset_files(args.data)[1]


def cmd_capture(args):
    net = load_net(args.model)
    tr, _ = load_dataset(args.data)
    layer = 0 if args.layer is None else args.layer
    tap = capture(net, tr.X, layer)
    os.makedirs(args.out, exist_ok=True)
    fta.save(os.path.join(args.out, "tap_A.fta"), tap.A)
    fta.save(os.path.join(args.out, "tap_B.fta"), tap.B)
    return {"layer": layer}, None, model_files(args.model) + dataset_files(args.data)[1]


def cmd_prune(args):
    job = split_keys(read_config(args.config),
                     {"model", "data", "layer", "method", "sparsity", "threshold", "feta", "seed"})
    model = args.model or job.get("model")
    data = args.data or job.get("data")
    if not model or not data:
        raise CliError(EXIT_USAGE, "prune needs --model and --data (or job keys)")
    layer = args.layer if args.layer is not None else int(job.get("layer", 0))
    method = args.method or job.get("method", "threshold")
    sparsity = args.sparsity if args.sparsity is not None else job.get("sparsity")
    net = load_net(model)
    tr, _ = load_dataset(data)
    seed = seed_of(args, job)
    fcfg = build(FetaConfig, {**job.get("feta", {}), "seed": seed}, "feta")
    if method == "threshold" and sparsity is None:
        spec = build(ThresholdSpec, job.get("threshold", {}), "threshold")
        L = net.layers[layer]
        tap = capture(net, tr.X, layer)
        U = hard_threshold(L.weights, spec)
        pruned_net = net.with_layer(layer, U)
        result = {"sparsity": sparsity_of(U), "threshold": dataclasses.asdict(spec),
                  "layer_error": float(np.linalg.norm(
                      np.maximum(pruned_net.layers[layer].preact(tap.A), 0) - tap.B))}
        wall = 0.0
    else:
        if sparsity is None:
            raise CliError(EXIT_USAGE, "feta needs --sparsity or a feta.target_sparsity / feta.lam setting")
        pruned_net, res = prune_layer(net, layer, tr.X, method, float(sparsity), fcfg)
        result, wall = res.record(timing=False), res.wall_time
        result["sparsity"] = res.sparsity
    os.makedirs(args.out, exist_ok=True)
    save_net(pruned_net, args.out)
    fta.save(os.path.join(args.out, "pruned_W.fta"), pruned_net.layers[layer].weights)
    dump_json({"layer": layer, "method": method, **result}, os.path.join(args.out, "result.json"))
    dump_json({"wall_time": wall}, os.path.join(args.out, "timing.json"))
    config = {"model": model, "data": data, "layer": layer, "method": method, "sparsity": sparsity,
              "feta": fcfg.to_dict() if method == "feta" else None}
    return config, seed, model_files(model) + dataset_files(data)[1]


def cmd_eval(args):
    net = load_net(args.model)
    tr, te = load_dataset(args.data)
    mb = margin_lower_bound(net, tr)
    report = {
        "train_accuracy": accuracy(net, tr),
        "test_accuracy": accuracy(net, te),
        "min_score": mb.score,
        "min_score_index": mb.index,
        "margin": mb.gamma,
        "margin_valid": mb.valid,
        "spectral_norms": mb.spectral_norms,
        "layer_sparsity": [sparsity_of(layer.weights) for layer in net.layers],
    }
    os.makedirs(args.out, exist_ok=True)
    dump_json(report, os.path.join(args.out, "eval.json"))
    return {}, None, model_files(args.model) + dataset_files(args.data)[1]


def cmd_bound(args):
    cfg = split_keys(read_config(args.config), {"C_M", "k", "delta", "seed"})
    net = load_net(args.model)
    tr, _ = load_dataset(args.data)
    mp = manifold_params(cfg, net, tr)
    inputs = model_files(args.model) + dataset_files(args.data)[1]
    if args.pruned:
        pruned = load_net(args.pruned)
        inputs += model_files(args.pruned)
        changed = [i for i, (a, b) in enumerate(zip(net.layers, pruned.layers))
                   if not np.array_equal(a.weights, b.weights)]
    else:
        pruned, changed = net, []
    if args.layer is not None or len(changed) <= 1:
        layer = args.layer if args.layer is not None else (changed[0] if changed else relu_layers(net)[0])
        rep = single_layer_bound(net, layer, pruned.layers[layer].weights, tr, mp,
                                 pruned_bias=pruned.layers[layer].bias)
    else:
        rep = multi_layer_bound(net, {i: pruned.layers[i].weights for i in changed}, tr, mp)
    os.makedirs(args.out, exist_ok=True)
    dump_json(rep.to_dict(), os.path.join(args.out, "bound.json"))
    return {**dataclasses.asdict(mp), "layer": args.layer}, None, inputs


def cmd_sweep_sparsity(args):
    cfg = split_keys(read_config(args.config), {"layer", "methods", "sparsities", "feta", "seed"})
    net = load_net(args.model)
    tr, te = load_dataset(args.data)
    layer = args.layer if args.layer is not None else int(cfg.get("layer", relu_layers(net)[-1]))
    methods = [args.method] if args.method else cfg.get("methods", ["threshold", "feta"])
    sparsities = [args.sparsity] if args.sparsity is not None else cfg.get("sparsities", [0.0, 0.5, 0.9])
    seed = seed_of(args, cfg)
    fcfg = build(FetaConfig, {**cfg.get("feta", {}), "seed": seed}, "feta")
    rows = sparsity_sweep(net, tr, te, layer, methods, sparsities, fcfg)
    os.makedirs(args.out, exist_ok=True)
    write_csv(rows, os.path.join(args.out, "sparsity_sweep.csv"), SPARSITY_COLUMNS)
    config = {"layer": layer, "methods": methods, "sparsities": sparsities, "feta": fcfg.to_dict()}
    return config, seed, model_files(args.model) + dataset_files(args.data)[1]


def cmd_sweep_layer(args):
    cfg = split_keys(read_config(args.config), {"sparsities", "method", "manifold", "feta", "seed"})
    net = load_net(args.model)
    tr, te = load_dataset(args.data)
    method = args.method or cfg.get("method", "threshold")
    sparsities = [args.sparsity] if args.sparsity is not None else cfg.get(
        "sparsities", [0.0, 0.25, 0.5, 0.75, 0.9, 0.95])
    seed = seed_of(args, cfg)
    mp = manifold_params(cfg.get("manifold", {}), net, tr)
    fcfg = build(FetaConfig, {**cfg.get("feta", {}), "seed": seed}, "feta")
    rows = layer_sweep(net, tr, te, sparsities, method, mp, fcfg)
    os.makedirs(args.out, exist_ok=True)
    write_csv(rows, os.path.join(args.out, "layer_sweep.csv"), LAYER_COLUMNS)
    config = {"method": method, "sparsities": sparsities, "manifold": dataclasses.asdict(mp)}
    return config, seed, model_files(args.model) + dataset_files(args.data)[1]


def cmd_sweep_pca(args):
    cfg = split_keys(read_config(args.config),
                     {"k_values", "hidden", "sparsities", "repeats", "layer", "train", "method", "seed"})
    tr, te = load_dataset(args.data)
    seed = seed_of(args, cfg)
    tc = build(TrainConfig, {**cfg.get("train", {}), "seed": seed}, "train")
    config = {
        "k_values": cfg.get("k_values", [2, tr.X.shape[0]]),
        "hidden": cfg.get("hidden", [64, 32]),
        "sparsities": [args.sparsity] if args.sparsity is not None else cfg.get("sparsities", [0.0, 0.9]),
        "repeats": int(cfg.get("repeats", 3)),
        "layer": args.layer if args.layer is not None else int(cfg.get("layer", 0)),
        "method": args.method or cfg.get("method", "threshold"),
    }
    rows = pca_sweep(tr, te, config["k_values"], config["hidden"], config["sparsities"],
                     config["repeats"], config["layer"], tc, config["method"], seed)
    os.makedirs(args.out, exist_ok=True)
    write_csv(rows, os.path.join(args.out, "pca_sweep.csv"), PCA_COLUMNS)
    return {**config, "train": tc.to_dict()}, seed, dataset_files(args.data)[1]


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic dataset", ()),
    "pack-csv": (cmd_pack_csv, "repackage label,feature... CSV files as FTA1", ()),
    "train": (cmd_train, "train a dense ReLU classifier", ("data",)),
    "capture": (cmd_capture, "dump the (A, B) activation tap of a layer", ("model", "data")),
    "prune": (cmd_prune, "prune one layer (threshold or feta)", ()),
    "eval": (cmd_eval, "accuracy, score and margin of a model", ("model", "data")),
    "retrain": (cmd_retrain, "retrain keeping pruned weights at zero", ("model", "data")),
    "bound": (cmd_bound, "generalization-error bound after pruning", ("model", "data")),
    "sweep-sparsity": (cmd_sweep_sparsity, "accuracy vs sparsity per method", ("model", "data")),
    "sweep-layer": (cmd_sweep_layer, "prune each layer alone across sparsities", ("model", "data")),
    "sweep-pca": (cmd_sweep_pca, "pruning robustness vs PCA input dimension", ("data",)),
}


def make_parser():
    p = argparse.ArgumentParser(prog="fetaprune", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_, required) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="64-bit seed (overrides config)")
        sp.add_argument("--model", required="model" in required, help="model manifest (JSON)")
        sp.add_argument("--data", required="data" in required, help="dataset directory")
        sp.add_argument("--layer", type=int, help="layer index")
        sp.add_argument("--method", choices=("threshold", "feta"))
        sp.add_argument("--sparsity", type=float)
        if name == "bound":
            sp.add_argument("--pruned", help="pruned model manifest")
        if name == "pack-csv":
            sp.add_argument("--csv", required=True)
            sp.add_argument("--test-csv")
            sp.add_argument("--scale", type=float, default=1.0, help="multiply features by this")
            sp.add_argument("--skip-header", type=int, default=0)
    return p


def run(argv=None):
    """Parse ``argv`` and execute; returns the process exit code."""
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    fn = COMMANDS[args.command][0]
    try:
        config, seed, inputs = fn(args)
        write_manifest(args.out, args.command, config, seed, inputs)
    except CliError as exc:
        return _fail(exc.code, "usage" if exc.code == EXIT_USAGE else "error", str(exc))
    except (TrainingDiverged, SolverDiverged, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numerical", str(exc))
    except (ParameterError, TypeError, KeyError) as exc:
        return _fail(EXIT_USAGE, "schema", str(exc))
    except (OSError, fta.FormatError, json.JSONDecodeError) as exc:
        return _fail(EXIT_IO, "io", str(exc))
    return 0


def _fail(code, kind, message):
    print(f"fetaprune: error={kind} exit={code}: {message}", file=sys.stderr)
    return code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
