"""Command-line front door: simulation, weights, losses, sweeps, checks.

Every run is reproducible byte-for-byte from its flags and seed,
independent of --threads.  Flags override values from an optional JSON
config file (--config), which in turn override the built-in defaults.
Exit codes: 0 success, 1 runtime failure, 2 flag validation failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from bcl import __version__
from bcl.estimators import ScoreBatch, contrastive_loss
from bcl.harness import (
    SWEEP_AXES,
    SweepGrid,
    bias_gap_curve,
    export_long_csv,
    export_report,
    run_lemma_suite,
    run_mean_values,
    run_mse_sweep,
)
from bcl.simulate import (
    NormalProposal,
    SimConfig,
    UniformProposal,
    export_batch_csv,
    generate_batch,
)
from bcl.trainer import (
    SyntheticDataset,
    TrainConfig,
    save_params,
    train,
    write_metrics_csv,
)
from bcl.weights import MixtureParams, beta_from_classes, weight_batch

OUT_DIR_ENV = "BCL_OUT_DIR"

_SIM_DEFAULTS = {
    "alpha": 0.9,
    "beta": 0.5,
    "tau_pos": 0.1,
    "t": 0.5,
    "gamma": 0.1,
    "m": 1000,
    "n": 64,
    "seed": 0,
    "proposal": "uniform",
    "lo": -0.5,
    "hi": 0.5,
    "mean": 0.0,
    "sd": 1.0,
    "threads": 1,
}


def _in_range(name: str, lo: float, hi: float, *, lo_open: bool = False, hi_open: bool = False):
    """argparse type: float constrained to an interval, named in errors."""
    left = "(" if lo_open else "["
    right = ")" if hi_open else "]"
    desc = f"{left}{lo:g}, {hi:g}{right}"

    def parse(text: str) -> float:
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number in {desc} (got {text!r})")
        ok = math.isfinite(value)
        ok = ok and (value > lo if lo_open else value >= lo)
        ok = ok and (value < hi if hi_open else value <= hi)
        if not ok:
            raise argparse.ArgumentTypeError(f"{name} must be in {desc} (got {text})")
        return value

    return parse


def _positive_int(name: str):
    def parse(text: str) -> int:
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer >= 1 (got {text!r})")
        if value < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1 (got {text})")
        return value

    return parse


def _positive_float(name: str):
    def parse(text: str) -> float:
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number > 0 (got {text!r})")
        if not (math.isfinite(value) and value > 0):
            raise argparse.ArgumentTypeError(f"{name} must be > 0 (got {text})")
        return value

    return parse


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated number list (got {text!r})")


def _add_mixture_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--alpha",
        type=_in_range("alpha", 0.5, 1.0),
        help="encoder AUC / mixture coefficient, in [0.5, 1] (default 0.9)",
    )
    beta_group = parser.add_mutually_exclusive_group()
    beta_group.add_argument(
        "--beta",
        type=_in_range("beta", 0.5, 1.0),
        help="hard-negative emphasis, in [0.5, 1] (default 0.5)",
    )
    beta_group.add_argument(
        "--beta-from-classes",
        type=_positive_int("beta-from-classes"),
        metavar="C",
        help="derive beta = 1 - 1/C from a class count C >= 2",
    )
    parser.add_argument(
        "--tau-pos",
        type=_in_range("tau-pos", 0.0, 1.0, lo_open=True, hi_open=True),
        help="positive-class prior, in (0, 1) (default 0.1)",
    )


def _add_sim_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--t", type=_positive_float("t"), help="temperature scaling, > 0 (default 0.5)")
    parser.add_argument(
        "--gamma",
        type=_in_range("gamma", 0.0, 1.0),
        help="uniform-proposal slide amplitude, in [0, 1] (default 0.1)",
    )
    parser.add_argument("--m", type=_positive_int("m"), help="anchor count, >= 1 (default 1000)")
    parser.add_argument("--n", type=_positive_int("n"), help="negatives per anchor, >= 1 (default 64)")
    parser.add_argument("--seed", type=int, help="RNG seed (default 0)")
    parser.add_argument(
        "--proposal",
        choices=("uniform", "normal"),
        help="raw-score proposal family (default uniform)",
    )
    parser.add_argument("--lo", type=float, help="uniform proposal lower bound (default -0.5)")
    parser.add_argument("--hi", type=float, help="uniform proposal upper bound (default 0.5)")
    parser.add_argument("--mean", type=float, help="normal proposal mean (default 0)")
    parser.add_argument("--sd", type=_positive_float("sd"), help="normal proposal sd, > 0 (default 1)")


def _merged(args: argparse.Namespace, extra_defaults: dict | None = None) -> dict:
    """Built-in defaults, overridden by --config values, overridden by flags."""
    merged = dict(_SIM_DEFAULTS)
    if extra_defaults:
        merged.update(extra_defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path) as handle:
            merged.update(json.load(handle))
    for key, value in vars(args).items():
        if key in ("config", "command") or value is None:
            continue
        merged[key] = value
    return merged


def _mixture(opts: dict) -> MixtureParams:
    beta = opts["beta"]
    if opts.get("beta_from_classes"):
        beta = beta_from_classes(opts["beta_from_classes"])
    return MixtureParams(alpha=opts["alpha"], beta=beta, tau_pos=opts["tau_pos"])


def _sim_config(opts: dict) -> SimConfig:
    if opts["proposal"] == "normal":
        proposal = NormalProposal(opts["mean"], opts["sd"])
    else:
        proposal = UniformProposal(opts["lo"], opts["hi"], slide=opts["gamma"])
    return SimConfig(
        mixture=_mixture(opts),
        proposal=proposal,
        t=opts["t"],
        n_anchors=opts["m"],
        n_negatives=opts["n"],
        seed=opts["seed"],
    )


def _out_path(opts: dict, default_name: str) -> str:
    out = opts.get("out")
    if out:
        return out
    return os.path.join(os.environ.get(OUT_DIR_ENV, "."), default_name)


def _cmd_simulate(args: argparse.Namespace) -> int:
    opts = _merged(args)
    config = _sim_config(opts)
    batch = generate_batch(config)
    out = _out_path(opts, "sim.csv")
    export_batch_csv(batch, config, out)
    print(out)
    return 0


def _cmd_weights(args: argparse.Namespace) -> int:
    opts = _merged(args)
    params = _mixture(opts)
    weights = weight_batch(opts["scores"], params, midpoint=bool(opts.get("midpoint")))
    for score, weight in zip(opts["scores"], weights.weights):
        print(f"{float(score)!r},{float(weight)!r}")
    return 0


def _cmd_loss(args: argparse.Namespace) -> int:
    opts = _merged(args)
    batch = ScoreBatch(opts["pos_score"], np.asarray(opts["scores"]))
    if opts.get("weights") is not None:
        weights = np.asarray(opts["weights"])
    else:
        weights = weight_batch(opts["scores"], _mixture(opts)).weights
    print(repr(contrastive_loss(batch, weights)))
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    opts = _merged(args, {"reps": 20, "stat": "mse", "format": "csv"})
    grid = SweepGrid(
        axis=opts["axis"],
        values=opts["values"],
        base=_sim_config(opts),
        repetitions=opts["reps"],
        seed=opts["seed"],
    )
    runner = run_mse_sweep if opts["stat"] == "mse" else run_mean_values
    report = runner(grid, threads=opts["threads"])
    out = _out_path(opts, f"sweep_{opts['axis']}.{opts['format']}")
    export_report(report, opts["format"], out)
    if opts.get("long_out"):
        export_long_csv(report, opts["long_out"])
    print(out)
    return 0


def _cmd_lemmas(args: argparse.Namespace) -> int:
    opts = _merged(args)
    config = _sim_config(opts)
    if config.mixture.beta != 0.5:
        raise ValueError(f"beta must be 0.5 for the theory checks (got {config.mixture.beta})")
    report = run_lemma_suite(config)
    out = _out_path(opts, "lemmas.json")
    with open(out, "w") as handle:
        json.dump(report.to_dict(), handle, indent=2)
        handle.write("\n")
    data = report.to_dict()
    print(f"identity: max_abs_error={data['identity']['max_abs_error']:.3e} "
          f"{'PASS' if data['identity']['passed'] else 'FAIL'}")
    print(f"rate: slope={data['rate']['slope']:.4f} "
          f"{'PASS' if data['rate']['passed'] else 'FAIL'}")
    for bound in data["bounds"]:
        print(f"bound n={bound['n']}: measured={bound['measured']:.4f} "
              f"bound={bound['bound']:.4f} {'PASS' if bound['passed'] else 'FAIL'}")
    print(out)
    return 0


def _cmd_bias_curve(args: argparse.Namespace) -> int:
    opts = _merged(args, {"m_const": 1.0, "x_min": 0.0, "x_max": 20.0, "points": 201})
    grid = np.linspace(opts["x_min"], opts["x_max"], opts["points"])
    curve = bias_gap_curve(opts["m_const"], opts["tau_pos"], grid)
    out = _out_path(opts, "bias_curve.csv")
    with open(out, "w", newline="") as handle:
        handle.write("xhat,value,at_pole\n")
        for point in curve.points:
            value = "" if point.value is None else repr(point.value)
            handle.write(f"{point.xhat!r},{value},{int(point.at_pole)}\n")
    print(f"pole at xhat = {curve.pole!r}")
    print(out)
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    opts = _merged(
        args,
        {
            "classes": 2,
            "per_class": 80,
            "dim": 4,
            "epochs": 50,
            "lr": 0.5,
            "anchors_per_step": 16,
            "noise": 0.3,
            "n": 16,
            "loss": "bcl",
            "tau_pos": None,
            "beta": None,
        },
    )
    n_classes = opts["classes"]
    tau_pos = opts["tau_pos"] if opts["tau_pos"] is not None else 1.0 / n_classes
    beta = opts["beta"] if opts["beta"] is not None else beta_from_classes(n_classes)
    mixture = MixtureParams(alpha=opts["alpha"], beta=beta, tau_pos=tau_pos)
    dataset = SyntheticDataset.gaussian_blobs(
        n_classes, opts["per_class"], opts["dim"], seed=opts["seed"]
    )
    config = TrainConfig(
        mixture=mixture,
        epochs=opts["epochs"],
        learning_rate=opts["lr"],
        anchors_per_step=opts["anchors_per_step"],
        n_negatives=opts["n"],
        noise_scale=opts["noise"],
        seed=opts["seed"],
        t=opts["t"],
        unit_weights=opts["loss"] == "infonce",
    )
    params, metrics = train(dataset, config)
    out = _out_path(opts, "train_metrics.csv")
    write_metrics_csv(metrics, out)
    if opts.get("checkpoint"):
        save_params(params, opts["checkpoint"])
    last = metrics[-1]
    print(f"epoch {last.epoch}: loss={last.loss:.4f} alpha_hat={last.alpha_hat:.4f} "
          f"probe_accuracy={last.probe_accuracy:.4f}")
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bcl",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"bcl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a labeled score batch as CSV + config sidecar")
    _add_mixture_flags(p)
    _add_sim_flags(p)
    p.add_argument("--config", help="JSON file with flag defaults (flags win)")
    p.add_argument("--out", help=f"output CSV path (default sim.csv under ${OUT_DIR_ENV} or cwd)")

    p = sub.add_parser("weights", help="print importance weights for a score list")
    _add_mixture_flags(p)
    p.add_argument("--scores", type=_float_list, required=True, help="comma-separated scores, all > 0")
    p.add_argument("--midpoint", action="store_true", help="use (rank - 0.5)/n plotting positions")
    p.add_argument("--config", help="JSON file with flag defaults (flags win)")

    p = sub.add_parser("loss", help="weighted contrastive loss for one anchor")
    _add_mixture_flags(p)
    p.add_argument("--pos-score", type=_positive_float("pos-score"), required=True,
                   help="positive similarity score, > 0")
    p.add_argument("--scores", type=_float_list, required=True, help="comma-separated negative scores")
    p.add_argument("--weights", type=_float_list,
                   help="explicit weights; omit to compute them from the mixture flags")
    p.add_argument("--config", help="JSON file with flag defaults (flags win)")

    p = sub.add_parser("sweep", help="estimator MSE / mean sweep over one parameter axis")
    _add_mixture_flags(p)
    _add_sim_flags(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True, help="parameter to sweep")
    p.add_argument("--values", type=_float_list, required=True, help="comma-separated axis values")
    p.add_argument("--reps", type=_positive_int("reps"), help="repetitions per grid point (default 20)")
    p.add_argument("--stat", choices=("mse", "mean"), help="headline statistic (default mse)")
    p.add_argument("--format", choices=("csv", "json"), help="report format (default csv)")
    p.add_argument("--threads", type=_positive_int("threads"),
                   help="parallel task cap; results do not depend on it (default 1)")
    p.add_argument("--long-out", help="also write a plot-ready long CSV here")
    p.add_argument("--config", help="JSON file with flag defaults (flags win)")
    p.add_argument("--out", help=f"report path (default sweep_<axis>.<format> under ${OUT_DIR_ENV} or cwd)")

    p = sub.add_parser("lemmas", help="weight-posterior identity, convergence rate, loss-gap bound")
    _add_mixture_flags(p)
    _add_sim_flags(p)
    p.add_argument("--config", help="JSON file with flag defaults (flags win)")
    p.add_argument("--out", help=f"JSON report path (default lemmas.json under ${OUT_DIR_ENV} or cwd)")

    p = sub.add_parser("bias-curve", help="loss-vs-objective fractional map with its pole flagged")
    p.add_argument("--m-const", type=_positive_float("m-const"),
                   help="proportionality constant, > 0 (default 1)")
    p.add_argument("--tau-pos", type=_in_range("tau-pos", 0.0, 1.0, lo_open=True, hi_open=True),
                   help="positive-class prior, in (0, 1) (default 0.1)")
    p.add_argument("--x-min", type=float, help="grid start (default 0)")
    p.add_argument("--x-max", type=float, help="grid end (default 20)")
    p.add_argument("--points", type=_positive_int("points"), help="grid size (default 201)")
    p.add_argument("--config", help="JSON file with flag defaults (flags win)")
    p.add_argument("--out", help=f"CSV path (default bias_curve.csv under ${OUT_DIR_ENV} or cwd)")

    p = sub.add_parser("train", help="desk-scale contrastive training on Gaussian blobs")
    p.add_argument("--alpha", type=_in_range("alpha", 0.5, 1.0),
                   help="initial encoder AUC, in [0.5, 1]; re-estimated every epoch (default 0.9)")
    p.add_argument("--beta", type=_in_range("beta", 0.5, 1.0),
                   help="hard-negative emphasis, in [0.5, 1] (default 1 - 1/classes)")
    p.add_argument("--tau-pos", type=_in_range("tau-pos", 0.0, 1.0, lo_open=True, hi_open=True),
                   help="positive-class prior, in (0, 1) (default 1/classes)")
    p.add_argument("--t", type=_positive_float("t"), help="temperature scaling, > 0 (default 0.5)")
    p.add_argument("--classes", type=_positive_int("classes"), help="blob count, >= 2 (default 2)")
    p.add_argument("--per-class", type=_positive_int("per-class"), help="points per blob (default 80)")
    p.add_argument("--dim", type=_positive_int("dim"), help="input dimension (default 4)")
    p.add_argument("--epochs", type=_positive_int("epochs"), help="training epochs (default 50)")
    p.add_argument("--lr", type=_positive_float("lr"), help="SGD learning rate (default 0.5)")
    p.add_argument("--anchors-per-step", type=_positive_int("anchors-per-step"),
                   help="anchors per SGD step (default 16)")
    p.add_argument("--n", type=_positive_int("n"), help="negatives per anchor (default 16)")
    p.add_argument("--noise", type=_positive_float("noise"),
                   help="augmentation noise scale (default 0.3)")
    p.add_argument("--seed", type=int, help="RNG seed (default 0)")
    p.add_argument("--loss", choices=("bcl", "infonce"), help="training loss (default bcl)")
    p.add_argument("--checkpoint", help="also write a binary encoder checkpoint here")
    p.add_argument("--config", help="JSON file with flag defaults (flags win)")
    p.add_argument("--out", help=f"metrics CSV path (default train_metrics.csv under ${OUT_DIR_ENV} or cwd)")

    return parser


_COMMANDS = {
    "simulate": _cmd_simulate,
    "weights": _cmd_weights,
    "loss": _cmd_loss,
    "sweep": _cmd_sweep,
    "lemmas": _cmd_lemmas,
    "bias-curve": _cmd_bias_curve,
    "train": _cmd_train,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surface runtime failures as exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
