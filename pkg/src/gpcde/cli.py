"""Command-line interface.

Subcommands: train, eval, density, sample, baseline, split, synth, and
natgrad-demo.  Data moves through headed CSV files; training runs are
described by a strict-schema JSON RunConfig.  All file writes are atomic
(temp file then rename) and all commands are deterministic given their
seeds.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import baselines, config as cfg, data as data_mod, density
from .persistence import load_model, save_model
from .trainer import deterministic_bound, train

_MODEL_KEYS = set(cfg.ModelConfig().to_dict())
_RUN_KEYS = {"data", "x_columns", "y_columns", "periodic", "test_size",
             "split_seed", "standardize", "output_dir", "model"}


class RunConfigError(ValueError):
    pass


def load_run_config(path):
    """Parse and validate a RunConfig JSON file (unknown keys rejected)."""
    with open(path) as fh:
        raw = json.load(fh)
    unknown = set(raw) - _RUN_KEYS
    if unknown:
        raise RunConfigError(f"unknown RunConfig keys: {sorted(unknown)}")
    for key in ("data", "y_columns"):
        if key not in raw:
            raise RunConfigError(f"RunConfig is missing required key {key!r}")
    model_raw = raw.get("model", {})
    unknown = set(model_raw) - _MODEL_KEYS
    if unknown:
        raise RunConfigError(f"unknown model keys: {sorted(unknown)}")
    raw["model"] = cfg.ModelConfig.from_dict(model_raw)
    raw.setdefault("x_columns", [])
    raw.setdefault("periodic", {})
    raw.setdefault("test_size", 0)
    raw.setdefault("split_seed", 0)
    raw.setdefault("standardize", True)
    raw.setdefault("output_dir", ".")
    return raw


def _atomic_write_csv(path, names, array):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    os.close(fd)
    try:
        data_mod.write_csv(tmp, names, array)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _write_curve(path, curve):
    rows = [[it, elbo, ms] for it, elbo, ms in curve]
    _atomic_write_csv(path, ["iteration", "elbo", "wall_ms"], rows)


def _standardize_pair(train_set, test_set, standardize):
    if not standardize:
        return train_set, test_set
    train_std = train_set.standardized()
    if test_set is not None:
        test_set = test_set.apply_stats(train_std.x_stats, train_std.y_stats)
    return train_std, test_set


# -- subcommand implementations ------------------------------------------

def cmd_train(args):
    run = load_run_config(args.config)
    dataset = data_mod.dataset_from_csv(run["data"], run["x_columns"],
                                        run["y_columns"], run["periodic"])
    out = run["output_dir"]
    os.makedirs(out, exist_ok=True)
    test_set = None
    if run["test_size"] > 0:
        tr_idx, te_idx = data_mod.split_farthest_point(
            dataset.X, run["test_size"], run["split_seed"])
        test_set = dataset.subset(te_idx)
        dataset = dataset.subset(tr_idx)
        _atomic_write_csv(
            os.path.join(out, "test.csv"),
            list(test_set.x_names) + list(test_set.y_names),
            np.column_stack([test_set.X, test_set.Y]))
    dataset, test_set = _standardize_pair(dataset, test_set,
                                          run["standardize"])
    trained = train(dataset, run["model"])
    save_model(trained, os.path.join(out, "model.gpcde"))
    _write_curve(os.path.join(out, "curve.csv"), trained.curve)
    print(f"trained {run['model'].iterations} iterations, "
          f"final bound {deterministic_bound(trained.model, dataset):.4f}")
    if test_set is not None:
        score = density.nlpp(trained.model, test_set.X, test_set.Y,
                             args.samples,
                             np.random.default_rng(args.seed))
        print(f"test nlpp {score:.4f}")
    return 0


def _load_eval_set(trained, path):
    """Read a test CSV with the model's column layout and apply the
    model's standardization statistics (no refit)."""
    names, table = data_mod.read_csv(path)
    index = {n: i for i, n in enumerate(names)}
    wanted = list(trained.x_names) + list(trained.y_names)
    missing = [c for c in wanted if c not in index]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    x = table[:, [index[c] for c in trained.x_names]] if trained.x_names \
        else np.zeros((table.shape[0], 0))
    y = table[:, [index[c] for c in trained.y_names]]
    ds = data_mod.ConditionedDataset(x, y, list(trained.x_names),
                                     list(trained.y_names))
    if trained.x_stats is not None:
        ds = ds.apply_stats(trained.x_stats, trained.y_stats)
    return ds


def cmd_eval(args):
    trained = load_model(args.model)
    ds = _load_eval_set(trained, args.data)
    score = density.nlpp(trained.model, ds.X, ds.Y, args.samples,
                         np.random.default_rng(args.seed))
    print(f"nlpp {score:.6f}")
    if args.out:
        _atomic_write_csv(args.out, ["nlpp"], [[score]])
    return 0


def _parse_axis(spec):
    lo, hi, num = spec.split(",")
    return np.linspace(float(lo), float(hi), int(num))


def cmd_density(args):
    trained = load_model(args.model)
    model = trained.model
    axes = [_parse_axis(a) for a in args.axis]
    if len(axes) != model.d_y:
        raise ValueError(f"model has {model.d_y} output dimensions, "
                         f"got {len(axes)} --axis specs")
    xstar = None
    if model.config.use_inputs:
        if args.condition is None:
            raise ValueError("model is conditional: --condition required")
        xstar = np.array([float(v) for v in args.condition.split(",")])
        if trained.x_stats is not None:
            xstar = (xstar - trained.x_stats.mean) / trained.x_stats.std
    grid = density.density_grid(model, xstar, axes, args.samples,
                                np.random.default_rng(args.seed))
    nodes = grid.nodes()
    cols = [f"y{i}" for i in range(nodes.shape[1])] + ["logdens"]
    _atomic_write_csv(args.out, cols,
                      np.column_stack([nodes, grid.logdens.ravel()]))
    print(f"wrote {nodes.shape[0]} grid nodes to {args.out}")
    return 0


def cmd_sample(args):
    trained = load_model(args.model)
    model = trained.model
    xstar = None
    if model.config.use_inputs:
        if args.condition is None:
            raise ValueError("model is conditional: --condition required")
        xstar = np.array([float(v) for v in args.condition.split(",")])
        if trained.x_stats is not None:
            xstar = (xstar - trained.x_stats.mean) / trained.x_stats.std
    draws = density.sample_conditional(model, xstar, args.n,
                                       np.random.default_rng(args.seed))
    if trained.y_stats is not None:
        draws = draws * trained.y_stats.std + trained.y_stats.mean
    _atomic_write_csv(args.out, list(trained.y_names), draws)
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def cmd_baseline(args):
    x_cols = args.x.split(",") if args.x else []
    y_cols = args.y.split(",")
    train_set = data_mod.dataset_from_csv(args.train, x_cols, y_cols)
    test_set = data_mod.dataset_from_csv(args.test, x_cols, y_cols)
    train_set, test_set = _standardize_pair(train_set, test_set,
                                            not args.no_standardize)
    h = args.bandwidth
    if h is None:
        h = baselines.kde_select_bandwidth(train_set.Y, args.folds,
                                           seed=args.seed)
        print(f"selected bandwidth {h:.6f}")
    if args.kind == "ukde":
        model = baselines.KdeModel(train_set.Y, h)
        score = baselines.kde_nlpp(model, None, test_set.Y)
    else:
        model = baselines.KdeModel(
            train_set.Y, h, mode=baselines.CONDITIONAL, X=train_set.X,
            k_neighbors=min(args.k, train_set.n))
        score = baselines.kde_nlpp(model, test_set.X, test_set.Y)
    print(f"nlpp {score:.6f}")
    return 0


def cmd_split(args):
    x_cols = args.x.split(",") if args.x else None
    names, table = data_mod.read_csv(args.data)
    if x_cols:
        index = {n: i for i, n in enumerate(names)}
        x = table[:, [index[c] for c in x_cols]]
    else:
        x = table
    tr, te = data_mod.split_farthest_point(x, args.test_size, args.seed)
    _atomic_write_csv(args.out_train, names, table[tr])
    _atomic_write_csv(args.out_test, names, table[te])
    print(f"wrote {len(tr)} train rows, {len(te)} test rows")
    return 0


_SYNTH = {
    "heteroscedastic": data_mod.heteroscedastic_sinusoid,
    "mixture": data_mod.conditional_mixture,
    "digits": data_mod.digits_like,
}


def cmd_synth(args):
    ds = _SYNTH[args.name](n=args.n, seed=args.seed)
    _atomic_write_csv(args.out, list(ds.x_names) + list(ds.y_names),
                      np.column_stack([ds.X, ds.Y]))
    print(f"wrote {ds.n} rows to {args.out}")
    return 0


def natgrad_demo(n=100, d_w=1, iterations=800, seed=0, out_dir=None,
                 quiet=False):
    """Train the same unconditional latent model three ways and report the
    held-out log-likelihoods: analytic q(u), natural-gradient q(u), and
    ordinary gradients only.

    Full batch, per-point Gaussian q(w), no recognition network; the three
    runs differ only in how the inducing posterior is updated.
    """
    full = data_mod.digits_like(n=n + n // 4, seed=seed)
    test = full.subset(np.arange(n, full.n))
    train_set = full.subset(np.arange(n)).standardized()
    test = test.apply_stats(train_set.x_stats, train_set.y_stats)

    results = {}
    for label, optimizer in (("analytic", "analytic"),
                             ("natgrad", "natgrad"),
                             ("adam", "adam")):
        c = cfg.ModelConfig(
            d_w=d_w, latent_mode=cfg.PERPOINT, use_inputs=False,
            deterministic_inner=True, num_inducing=20, batch_size=n,
            iterations=iterations, variational_optimizer=optimizer,
            natgrad_step=0.1, learning_rate=0.01, seed=seed)
        t0 = time.perf_counter()
        trained = train(train_set, c)
        loglik = -density.nlpp(trained.model, None, test.Y, 4000,
                               np.random.default_rng(seed))
        results[label] = (loglik, trained.curve)
        if not quiet:
            print(f"{label:>8}: test log-likelihood {loglik:+.4f} "
                  f"({time.perf_counter() - t0:.1f}s)")
        if out_dir is not None:
            _write_curve(os.path.join(out_dir, f"curve_{label}.csv"),
                         trained.curve)
    return results


def cmd_natgrad_demo(args):
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    results = natgrad_demo(n=args.n, iterations=args.iterations,
                           seed=args.seed, out_dir=args.out or None)
    gap = results["natgrad"][0] - results["adam"][0]
    print(f"natgrad advantage over ordinary gradients: {gap:+.4f} nats/point")
    return 0


# -- argument parsing -----------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="gpcde",
                                description="GP conditional density "
                                            "estimation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train a model from a RunConfig")
    s.add_argument("--config", required=True)
    s.add_argument("--samples", type=int, default=density.DEFAULT_SAMPLES)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="NLPP of a model on a test CSV")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--samples", type=int, default=density.DEFAULT_SAMPLES)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("density", help="export a conditional density grid")
    s.add_argument("--model", required=True)
    s.add_argument("--condition", default=None,
                   help="comma-separated condition values (original units)")
    s.add_argument("--axis", action="append", required=True,
                   help="per output dimension: min,max,num")
    s.add_argument("--samples", type=int, default=density.DEFAULT_SAMPLES)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_density)

    s = sub.add_parser("sample", help="draw outputs at a condition")
    s.add_argument("--model", required=True)
    s.add_argument("--condition", default=None)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("baseline", help="KDE baseline NLPP")
    s.add_argument("kind", choices=["ukde", "ckde"])
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--x", default="")
    s.add_argument("--y", required=True)
    s.add_argument("--k", type=int, default=50)
    s.add_argument("--bandwidth", type=float, default=None)
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-standardize", action="store_true")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("split", help="farthest-point train/test split")
    s.add_argument("--data", required=True)
    s.add_argument("--x", default="",
                   help="columns defining the distance; default all")
    s.add_argument("--test-size", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-train", required=True)
    s.add_argument("--out-test", required=True)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("synth", help="write a bundled synthetic dataset")
    s.add_argument("name", choices=sorted(_SYNTH))
    s.add_argument("--n", type=int, default=1200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("natgrad-demo",
                       help="compare analytic / natgrad / ordinary-gradient "
                            "training of the same latent model")
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--iterations", type=int, default=800)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="")
    s.set_defaults(func=cmd_natgrad_demo)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
