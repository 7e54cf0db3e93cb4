"""Command-line interface: experiments, shape dumps, gradient checks.

Every command is deterministic given its configuration and seed; CSV
outputs are byte-identical across runs.  The default output directory is
taken from the ``PNET_OUT`` environment variable (falling back to
``./pnet_out``).

Experiment configs are flat key-value dictionaries; any key can be
overridden on the command line with ``--set key=value`` (values parsed as
JSON, so lists and numbers work).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .activation import dv_da_many, evaluate_many
from .baseline import (
    BaselineNetwork,
    forward_batch_fixed,
    nguyen_widrow_init,
    save_baseline,
    train_fixed,
)
from .data import (
    Dataset,
    gen_abs,
    gen_activity_standin,
    gen_sign,
    gen_square,
    load_csv,
    save_csv,
    split_train_test,
)
from .network import forward_batch, init_network, load_network, save_network, fmt_float
from .oracle import check_network_gradients, random_check_case
from .training import (
    TrainConfig,
    TrainingDivergedError,
    classification_error,
    mse,
    train,
)

__all__ = ["EXPERIMENTS", "run_experiment", "run_shape", "main"]

_g = fmt_float


def default_out_dir() -> str:
    return os.environ.get("PNET_OUT", "pnet_out")


# Experiment defaults.  Keys mirror the configuration tables one-to-one;
# any of them can be overridden with --set.
EXPERIMENTS: dict[str, dict] = {
    # Sign fit: adaptive p only, starting from the explicit p=2 regime.
    "ex1": {
        "layer_sizes": [1, 5, 3, 1],
        "head": "regression",
        "lambda": 1.0,
        "initial_p_hidden": 2.0,
        "initial_p_output": 2.0,
        "initial_w": "normal",
        "alpha_w": 0.1,
        "alpha_p": 100.0,
        "max_iterations": 1000,
        "max_error": 1e-3,
        "activation_iterations": 100,
        "update": "incremental",
        "data": "sign",
        "data_n": 100,
        "data_lo": -5.0,
        "data_hi": 5.0,
        "grid_lo": -5.0,
        "grid_hi": 5.0,
        "grid_points": 201,
        "variants": ["adaptive"],
    },
    # Parabola fit: frozen vs adaptive p-network vs fixed-activation baseline.
    "ex2a": {
        "layer_sizes": [1, 10, 5, 3, 1],
        "head": "regression",
        "lambda": 1e-10,
        "initial_p_hidden": 100.0,
        "initial_p_output": 2.0,
        "initial_w": "normal",
        "alpha_w": 0.01,
        "alpha_p": 1e4,
        "max_iterations": 1000,
        "max_error": 1e-4,
        "activation_iterations": 10,
        "update": "incremental",
        "data": "square",
        "data_n": 100,
        "grid_lo": -1.0,
        "grid_hi": 1.0,
        "grid_points": 201,
        "variants": ["frozen", "adaptive", "baseline"],
        "baseline_hidden": "satlins",
        "baseline_output": "purelin",
        "baseline_initial_w": "nguyen-widrow",
        "baseline_max_gradient": 1e-4,
    },
    # As ex2a but fitting y = |x|.
    "ex2b": None,  # filled in below
    # Five-class activity classification on the synthetic stand-in pool.
    "ex3": {
        "layer_sizes": [60, 30, 15, 5],
        "head": "classification",
        "lambda": 1.0,
        "initial_p_hidden": 5.0,
        "initial_p_output": None,
        "initial_w": "normal",
        "alpha_w": 0.1,
        "alpha_p": 0.1,
        "max_iterations": 1000,
        "max_error": 1e-4,
        "activation_iterations": 10,
        "update": "batch",
        "data": "activity",
        "pool_per_class": 1000,
        "pool_seed": 977,
        "train_per_class": 500,
        "test_total": 500,
        "variants": ["frozen", "adaptive", "baseline"],
        "baseline_hidden": "tansig",
        "baseline_output": "softmax",
        "baseline_initial_w": "nguyen-widrow",
        "baseline_max_gradient": 1e-4,
    },
}
EXPERIMENTS["ex2b"] = {**EXPERIMENTS["ex2a"], "data": "abs"}

_TRUE_FUNCTIONS = {"sign": np.sign, "square": np.square, "abs": np.abs}


def _parse_overrides(items: list[str] | None, cfg: dict) -> dict:
    out = dict(cfg)
    for item in items or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        if key not in cfg:
            raise ValueError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(cfg))}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _write_csv(path: str, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _make_datasets(cfg: dict, seeds: list[int]):
    """Per-seed (train, test) datasets; test is None for the regression fits."""
    kind = cfg["data"]
    if kind == "activity":
        pool = gen_activity_standin(cfg["pool_per_class"], cfg["pool_seed"])
        return {
            s: split_train_test(pool, cfg["train_per_class"], cfg["test_total"], seed=s)
            for s in seeds
        }
    if kind == "sign":
        return {s: (gen_sign(cfg["data_n"], cfg["data_lo"], cfg["data_hi"], seed=s), None) for s in seeds}
    if kind == "square":
        return {s: (gen_square(cfg["data_n"], seed=s), None) for s in seeds}
    if kind == "abs":
        return {s: (gen_abs(cfg["data_n"], seed=s), None) for s in seeds}
    raise ValueError(f"unknown dataset kind {kind!r}")


def _train_variant(cfg: dict, variant: str, seed: int, data: Dataset):
    inner = cfg["activation_iterations"]
    if variant == "baseline":
        net = nguyen_widrow_init(
            cfg["layer_sizes"],
            cfg["head"],
            seed=seed,
            hidden_kind=cfg["baseline_hidden"],
            output_kind=cfg["baseline_output"],
        )
        tc = TrainConfig(
            alpha_w=cfg["alpha_w"],
            alpha_p=0.0,
            max_iters=cfg["max_iterations"],
            max_error=cfg["max_error"],
            inner_iters=inner,
            seed=seed,
        )
        return train_fixed(net, data, tc, max_gradient=cfg["baseline_max_gradient"])
    net = init_network(
        cfg["layer_sizes"],
        cfg["head"],
        cfg["lambda"],
        cfg["initial_p_hidden"],
        seed=seed,
        initial_p_output=cfg.get("initial_p_output"),
    )
    tc = TrainConfig(
        alpha_w=cfg["alpha_w"],
        alpha_p=cfg["alpha_p"] if variant == "adaptive" else 0.0,
        max_iters=cfg["max_iterations"],
        max_error=cfg["max_error"],
        inner_iters=inner,
        seed=seed,
        update=cfg["update"],
    )
    return train(net, data, tc)


def _final_errors(cfg: dict, net, train_data: Dataset, test_data: Dataset | None, grid=None):
    """(train_error, test_error) recomputed from the trained network."""
    inner = cfg["activation_iterations"]
    is_baseline = isinstance(net, BaselineNetwork)
    if cfg["head"] == "classification":
        e_train = classification_error(net, train_data, inner)
        e_test = classification_error(net, test_data, inner)
        return e_train, e_test, None
    if is_baseline:
        yhat_train = forward_batch_fixed(net, train_data.inputs).outputs[-1]
        yhat_grid = forward_batch_fixed(net, grid[0]).outputs[-1]
    else:
        yhat_train = forward_batch(net, train_data.inputs, inner).outputs[-1]
        yhat_grid = forward_batch(net, grid[0], inner).outputs[-1]
    return mse(yhat_train, train_data.targets), mse(yhat_grid, grid[1]), yhat_grid


def run_experiment(
    name: str,
    out_dir: str | None = None,
    repetitions: int = 5,
    seed: int = 1,
    overrides: list[str] | None = None,
) -> dict:
    """Run one named experiment; writes CSV logs and saved models.

    Returns a summary dictionary with one entry per (variant, seed):
    final train error, test/grid error, and iteration count.
    """
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    cfg = _parse_overrides(overrides, EXPERIMENTS[name])
    out_base = out_dir if out_dir is not None else default_out_dir()
    exp_dir = os.path.join(out_base, name)
    model_dir = os.path.join(exp_dir, "models")
    data_dir = os.path.join(exp_dir, "data")
    os.makedirs(model_dir, exist_ok=True)
    os.makedirs(data_dir, exist_ok=True)

    seeds = [seed + i for i in range(repetitions)]
    datasets = _make_datasets(cfg, seeds)
    for s in seeds:
        train_data, test_data = datasets[s]
        save_csv(train_data, os.path.join(data_dir, f"train_seed{s}.csv"))
        if test_data is not None:
            save_csv(test_data, os.path.join(data_dir, f"test_seed{s}.csv"))

    grid = None
    if cfg["head"] == "regression":
        x = np.linspace(cfg["grid_lo"], cfg["grid_hi"], cfg["grid_points"])[:, None]
        grid = (x, _TRUE_FUNCTIONS[cfg["data"]](x))

    error_rows, p_rows, summary_rows, pred_rows = [], [], [], []
    results = []
    per_variant: dict[str, list] = {}
    for variant in cfg["variants"]:
        for s in seeds:
            train_data, test_data = datasets[s]
            net, log = _train_variant(cfg, variant, s, train_data)
            e_train, e_test, yhat_grid = _final_errors(cfg, net, train_data, test_data, grid)
            for it, e in enumerate(log.errors, start=1):
                error_rows.append([str(it), variant, str(s), _g(e)])
            if log.p_history is not None:
                for it, snap in enumerate(log.p_history, start=1):
                    for (layer, neuron), pv in zip(log.p_labels, snap):
                        p_rows.append([str(it), str(layer), str(neuron + 1), _g(pv), variant, str(s)])
            if yhat_grid is not None:
                for xg, yt, yp in zip(grid[0][:, 0], grid[1][:, 0], yhat_grid[:, 0]):
                    pred_rows.append([variant, str(s), _g(xg), _g(yt), _g(yp)])
            summary_rows.append([variant, str(s), _g(e_train), _g(e_test)])
            model_path = os.path.join(model_dir, f"{variant}_seed{s}.txt")
            (save_baseline if isinstance(net, BaselineNetwork) else save_network)(net, model_path)
            rec = {
                "variant": variant,
                "seed": s,
                "train_error": e_train,
                "test_error": e_test,
                "iterations": int(log.errors.size),
            }
            results.append(rec)
            per_variant.setdefault(variant, []).append(rec)
            print(
                f"{name} {variant} seed {s}: iterations={rec['iterations']} "
                f"train_error={e_train:.6g} test_error={e_test:.6g}"
            )

    if cfg["data"] == "activity":
        for variant in cfg["variants"]:
            recs = per_variant[variant]
            tr = np.array([r["train_error"] for r in recs])
            te = np.array([r["test_error"] for r in recs])
            ddof = 1 if len(recs) > 1 else 0
            summary_rows.append([variant, "mean", _g(tr.mean()), _g(te.mean())])
            summary_rows.append([variant, "std", _g(tr.std(ddof=ddof)), _g(te.std(ddof=ddof))])

    _write_csv(os.path.join(exp_dir, "error_log.csv"), ["iter", "variant", "seed", "E"], error_rows)
    _write_csv(
        os.path.join(exp_dir, "p_evolution.csv"),
        ["iter", "layer", "neuron", "p", "variant", "seed"],
        p_rows,
    )
    _write_csv(
        os.path.join(exp_dir, "summary.csv"),
        ["variant", "seed", "train_error", "test_error"],
        summary_rows,
    )
    if pred_rows:
        _write_csv(
            os.path.join(exp_dir, "predictions.csv"),
            ["variant", "seed", "x", "y_true", "y_pred"],
            pred_rows,
        )
    return {"name": name, "dir": exp_dir, "results": results}


def run_shape(p_list, lam: float, a_min: float, a_max: float, n_points: int, out_path: str, inner_iters: int = 100) -> None:
    """Tabulate the activation and its input slope on a grid, per p."""
    if not a_min < a_max or n_points < 2:
        raise ValueError("need a_min < a_max and n_points >= 2")
    a = np.linspace(a_min, a_max, n_points)
    rows = []
    for p in p_list:
        v = evaluate_many(a, float(p), lam, inner_iters)
        dv = dv_da_many(v, float(p), lam)
        rows.extend([_g(p), _g(ai), _g(vi), _g(di)] for ai, vi, di in zip(a, v, dv))
    _write_csv(out_path, ["p", "a", "v", "dv_da"], rows)


def _parse_layer_spec(spec: str) -> list[int]:
    try:
        sizes = [int(tok) for tok in spec.replace("-", " ").replace(",", " ").split()]
    except ValueError as exc:
        raise ValueError(f"bad layer spec {spec!r}: {exc}") from exc
    if len(sizes) < 2:
        raise ValueError(f"layer spec needs at least two sizes, got {spec!r}")
    return sizes


def cmd_experiment(args) -> int:
    run_experiment(args.name, args.out, args.repetitions, args.seed, args.set)
    return 0


def cmd_shape(args) -> int:
    out_path = args.out
    if out_path is None:
        os.makedirs(default_out_dir(), exist_ok=True)
        out_path = os.path.join(default_out_dir(), "shape.csv")
    run_shape(args.p, args.lam, args.a_min, args.a_max, args.n_points, out_path, args.inner_iters)
    print(f"wrote {out_path}")
    return 0


def cmd_gradcheck(args) -> int:
    sizes = _parse_layer_spec(args.layers)
    net = init_network(sizes, args.head, args.lam, args.initial_p, seed=args.seed)
    X, Y = random_check_case(sizes, args.head, seed=args.seed, n_samples=args.samples)
    batch = Dataset(inputs=X, targets=Y, task=args.head)
    report = check_network_gradients(
        net, batch, h=args.h, inner_iters=args.inner_iters,
        corrupt=1.0 if args.inject_gradient_error else 0.0,
    )
    print(report.summary(args.tol))
    return 0 if report.passed(args.tol) else 1


_TRAIN_CONFIG_DEFAULTS = {
    "layer_sizes": None,  # required
    "head": None,  # required
    "lambda": 1.0,
    "initial_p_hidden": 2.0,
    "initial_p_output": None,
    "alpha_w": 0.1,
    "alpha_p": 0.0,
    "max_iterations": 1000,
    "max_error": 1e-4,
    "activation_iterations": 100,
    "update": "batch",
    "seed": 0,
}


def cmd_train(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        user_cfg = json.load(fh)
    unknown = set(user_cfg) - set(_TRAIN_CONFIG_DEFAULTS)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg = {**_TRAIN_CONFIG_DEFAULTS, **user_cfg}
    for key in ("layer_sizes", "head"):
        if cfg[key] is None:
            raise ValueError(f"config must set {key!r}")
    data = load_csv(args.data)
    net = init_network(
        cfg["layer_sizes"], cfg["head"], cfg["lambda"], cfg["initial_p_hidden"],
        seed=cfg["seed"], initial_p_output=cfg["initial_p_output"],
    )
    tc = TrainConfig(
        alpha_w=cfg["alpha_w"], alpha_p=cfg["alpha_p"],
        max_iters=cfg["max_iterations"], max_error=cfg["max_error"],
        inner_iters=cfg["activation_iterations"],
        seed=cfg["seed"], update=cfg["update"],
    )
    trained, log = train(net, data, tc)
    save_network(trained, args.model)
    if args.log:
        _write_csv(args.log, ["iter", "E"], [[str(t), _g(e)] for t, e in enumerate(log.errors, 1)])
    print(f"iterations {log.errors.size}")
    print(f"final_error {_g(log.errors[-1])}")
    return 0


def cmd_eval(args) -> int:
    net = load_network(args.model)
    data = load_csv(args.data)
    if isinstance(net, BaselineNetwork):
        yhat = forward_batch_fixed(net, data.inputs).outputs[-1]
    else:
        yhat = forward_batch(net, data.inputs, args.inner_iters).outputs[-1]
    print(f"mse {_g(mse(yhat, data.targets))}")
    if data.task == "classification":
        err = classification_error(net, data, args.inner_iters)
        print(f"classification_error {_g(err)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pnet",
        description="Train and inspect networks with implicit consensus activations.",
    )
    parser.add_argument("--version", action="version", version=f"pnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_exp = sub.add_parser("experiment", help="run a named experiment and write CSV logs")
    p_exp.add_argument("name", choices=sorted(EXPERIMENTS))
    p_exp.add_argument("--out", default=None, help="output directory (default: $PNET_OUT or ./pnet_out)")
    p_exp.add_argument("--repetitions", type=int, default=5)
    p_exp.add_argument("--seed", type=int, default=1, help="first seed; repetitions use seed, seed+1, ...")
    p_exp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (JSON value)")
    p_exp.set_defaults(func=cmd_experiment)

    p_shape = sub.add_parser("shape", help="tabulate activation shape v(a) and slope per p")
    p_shape.add_argument("--p", type=float, nargs="+", default=[1.01, 1.5, 2.0, 3.0, 5.0, 10.0, 100.0])
    p_shape.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p_shape.add_argument("--a-min", type=float, default=-3.0)
    p_shape.add_argument("--a-max", type=float, default=3.0)
    p_shape.add_argument("--n-points", type=int, default=601)
    p_shape.add_argument("--inner-iters", type=int, default=100)
    p_shape.add_argument("--out", default=None, help="output CSV path (default: <out dir>/shape.csv)")
    p_shape.set_defaults(func=cmd_shape)

    p_gc = sub.add_parser("gradcheck", help="compare backprop gradients against finite differences")
    p_gc.add_argument("--layers", default="2-3-2", help="layer sizes, e.g. 2-3-2")
    p_gc.add_argument("--head", choices=["regression", "classification"], default="regression")
    p_gc.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p_gc.add_argument("--initial-p", type=float, default=2.5)
    p_gc.add_argument("--seed", type=int, default=1)
    p_gc.add_argument("--samples", type=int, default=5)
    p_gc.add_argument("--h", type=float, default=None, help="finite-difference step (default: scaled 1e-6)")
    p_gc.add_argument("--tol", type=float, default=1e-3)
    p_gc.add_argument("--inner-iters", type=int, default=200)
    p_gc.add_argument("--inject-gradient-error", action="store_true",
                      help="self-test hook: corrupt one gradient so the check must fail")
    p_gc.set_defaults(func=cmd_gradcheck)

    p_train = sub.add_parser("train", help="train a network from a JSON config and CSV dataset")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--model", required=True, help="path to write the trained model")
    p_train.add_argument("--log", default=None, help="optional error-log CSV path")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a saved model on a CSV dataset")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--inner-iters", type=int, default=100)
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
