"""Command-line entry point: ``nesvb run|verify|variance|dataset``.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 at least one seed diverged (outputs are still written).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from . import __version__
from .experiments import (
    PROBE_POINT,
    RunConfig,
    budget_matched_estimator,
    measure_estimator_variance,
    run,
    write_outputs,
)
from .core import ParamVector
from .estimators import make_estimator
from .io import fmt, write_csv
from .models import NoisyScaleModel, gmm_generate_dataset, write_dataset_csv
from .stats import RngStream

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3
MIN_VARIANCE_TRIALS = 100

# flag dest -> RunConfig field
RUN_FLAGS = {
    "estimator": "estimator",
    "steps": "steps",
    "seeds": "n_seeds",
    "sigma": "sigma",
    "pairs": "n_pairs",
    "lr": "lr",
    "temperature": "temperature",
    "particles": "n_particles",
    "master_seed": "master_seed",
    "optimizer": "optimizer",
    "clip_norm": "clip_norm",
    "threads": "threads",
    "fitness_shaping": "fitness_shaping",
    "crn": "common_random_numbers",
    "control_variate": "control_variate",
    "trace_samples": "trace_elbo_samples",
}
CONFIG_ONLY_KEYS = {"out", "ablation", "experiment", "n_per_component", "divergence_bound", "n_samples"}


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    cfg = {f.name: f.default for f in dataclasses.fields(RunConfig)}
    cfg["out"] = "results"
    cfg["ablation"] = False
    return cfg


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a flat JSON object")
    known = set(RUN_FLAGS) | set(RUN_FLAGS.values()) | CONFIG_ONLY_KEYS
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return {RUN_FLAGS.get(k, k): v for k, v in data.items()}


def resolve_run_config(args) -> tuple[RunConfig, str]:
    """Merge built-in defaults < config file < command-line flags."""
    merged = {}
    if args.config:
        merged.update(load_config_file(args.config))
    for flag, key in RUN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            merged[key] = value
    if args.out is not None:
        merged["out"] = args.out
    if args.ablation:
        merged["ablation"] = True
    out = merged.pop("out", "results")
    ablation = merged.pop("ablation", False)
    merged.pop("experiment", None)
    experiment = args.experiment.strip().lower().replace("-", "_")
    if ablation and experiment == "noisy_scale":
        experiment = "noisy_scale_ablation"
    if "estimator" not in merged:
        raise ConfigError("an estimator is required (--estimator or config key 'estimator')")
    try:
        return RunConfig(experiment=experiment, **merged), out
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_run(args) -> int:
    try:
        cfg, out = resolve_run_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result = run(cfg)
    run_dir = write_outputs(result, out)
    s = result.summary
    print(f"{result.name}: {cfg.n_seeds} seeds x {cfg.steps} steps -> {run_dir}")
    print(f"  mean final ELBO {fmt(s['mean_final_elbo'])}")
    if "mean_accuracy" in s:
        print(f"  mean adjusted accuracy {fmt(s['mean_accuracy'])}")
    else:
        print(f"  mean final mean {fmt(s['mean_final_mean'])}, std {fmt(s['mean_final_std'])} "
              f"(exact {fmt(s['exact_posterior']['mean'])}, {fmt(s['exact_posterior']['std'])})")
    if result.diverged:
        print(f"  {s['n_diverged']} seed(s) diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import format_table, run_checks

    results = run_checks(quick=args.quick)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_variance(args) -> int:
    if args.trials < MIN_VARIANCE_TRIALS:
        print(f"config error: --trials must be >= {MIN_VARIANCE_TRIALS}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        configs = [budget_matched_estimator(n, args.budget, args.sigma) for n in args.estimators.split(",") if n]
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    model = NoisyScaleModel()
    params = ParamVector.from_slices(model.layout, **PROBE_POINT)
    rows = []
    for i, cfg in enumerate(configs):
        res = measure_estimator_variance(model, params, make_estimator(cfg), args.trials,
                                         RngStream(args.master_seed).child(i))
        rows.append((cfg.name, args.budget, *res.mean, *res.variance, res.trace))
    header = ("estimator", "evaluations", "mean_grad_mean", "mean_grad_log_var",
              "var_mean", "var_log_var", "trace_variance")
    if args.out:
        write_csv(args.out, header, rows)
    print(",".join(header))
    for r in rows:
        print(",".join(str(v) if isinstance(v, (int, str)) else fmt(v) for v in r))
    return EXIT_OK


def cmd_dataset(args) -> int:
    if args.n_per_component < 1:
        print("config error: --n-per-component must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    dataset = gmm_generate_dataset(args.n_per_component, RngStream(args.master_seed).child(0, 0, 2))
    write_dataset_csv(dataset, args.out)
    print(f"wrote {len(dataset)} points to {args.out}")
    return EXIT_OK


class _VersionAction(argparse.Action):
    def __init__(self, option_strings, dest, **kwargs):
        super().__init__(option_strings, dest, nargs=0, **kwargs)

    def __call__(self, parser, namespace, values, option_string=None):
        print(f"nesvb {__version__}")
        print(json.dumps(default_config(), indent=2, sort_keys=True))
        parser.exit()


def build_parser():
    p = argparse.ArgumentParser(prog="nesvb", description=__doc__.splitlines()[0])
    p.add_argument("--version", action=_VersionAction, help="print version and default config")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment over several seeds")
    r.add_argument("experiment", help="noisy-scale | noisy-scale-ablation | gmm")
    r.add_argument("--estimator")
    r.add_argument("--steps", type=int)
    r.add_argument("--seeds", type=int)
    r.add_argument("--sigma", type=float)
    r.add_argument("--pairs", type=int)
    r.add_argument("--lr", type=float)
    r.add_argument("--temperature", type=float)
    r.add_argument("--particles", type=int)
    r.add_argument("--optimizer", choices=("sgd", "adam"))
    r.add_argument("--clip-norm", type=float)
    r.add_argument("--trace-samples", type=int, help="ELBO draws per recorded trace row")
    r.add_argument("--fitness-shaping", action="store_const", const=True)
    r.add_argument("--crn", action="store_const", const=True,
                   help="common random numbers across mirrored NES pairs")
    r.add_argument("--control-variate", action="store_const", const=True)
    r.add_argument("--ablation", action="store_true")
    r.add_argument("--out")
    r.add_argument("--master-seed", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("--config", help="flat JSON object of defaults; flags take precedence")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="finite-difference gradient and estimator checks")
    v.add_argument("--quick", action="store_true")
    v.set_defaults(func=cmd_verify)

    var = sub.add_parser("variance", help="budget-matched estimator variance at the probe point")
    var.add_argument("--estimators", default="nesvb,reinforce,sgvb")
    var.add_argument("--trials", type=int, default=10_000)
    var.add_argument("--budget", type=int, default=50)
    var.add_argument("--sigma", type=float, default=0.1)
    var.add_argument("--master-seed", type=int, default=0)
    var.add_argument("--out")
    var.set_defaults(func=cmd_variance)

    d = sub.add_parser("dataset", help="write a synthetic GMM dataset as CSV")
    d.add_argument("--n-per-component", type=int, default=100)
    d.add_argument("--master-seed", type=int, default=0)
    d.add_argument("--out", default="gmm_dataset.csv")
    d.set_defaults(func=cmd_dataset)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
