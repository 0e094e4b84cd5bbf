"""Multi-seed experiment runs, trace recording and output files.

Randomness: the master seed owns one stream per seed index; each step draws
from ``child(step, purpose)`` of that stream, so seeds never share state and
can run in any order or concurrently.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import NonFiniteError, ParamVector, elbo_mean
from .estimators import EstimatorConfig, make_estimator
from .io import write_csv, write_json
from .models import (
    GmmModel,
    NoisyScaleModel,
    adjusted_accuracy,
    gmm_generate_dataset,
    write_dataset_csv,
)
from .optimizer import OptimizerState, step
from .stats import RngStream

log = logging.getLogger(__name__)

EXPERIMENTS = ("noisy_scale", "noisy_scale_ablation", "gmm")
VALID_ESTIMATORS = {
    "noisy_scale": ("nesvb", "sgvb", "reinforce", "rws"),
    "noisy_scale_ablation": ("nesvb", "sgvb", "rws"),
    "gmm": ("nesvb", "st_gumbel"),
}
DEFAULT_STEPS = {"noisy_scale": 2500, "noisy_scale_ablation": 2500, "gmm": 500}
DEFAULT_SIGMA = {"noisy_scale": 0.1, "noisy_scale_ablation": 0.1, "gmm": 0.05}

ESTIMATE, TRACE, DATASET = 0, 1, 2


def normalize_experiment_name(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    if key not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; valid: {', '.join(EXPERIMENTS)}")
    return key


@dataclass
class RunConfig:
    experiment: str = "noisy_scale"
    estimator: str = "nesvb"
    steps: int | None = None
    n_seeds: int = 5
    master_seed: int = 0
    sigma: float | None = None
    n_pairs: int = 25
    fitness_shaping: bool = False
    common_random_numbers: bool = False
    n_particles: int = 5
    temperature: float = 1.0
    n_samples: int = 1
    control_variate: bool = False
    optimizer: str = "adam"
    lr: float = 0.01
    clip_norm: float | None = None
    n_per_component: int = 100
    trace_elbo_samples: int = 1
    divergence_bound: float = 10.0
    threads: int | None = None

    def __post_init__(self):
        self.experiment = normalize_experiment_name(self.experiment)
        self.estimator = self.estimator_config().name
        if self.estimator not in VALID_ESTIMATORS[self.experiment]:
            raise ValueError(
                f"estimator {self.estimator!r} is not available for {self.experiment}; "
                f"valid: {', '.join(VALID_ESTIMATORS[self.experiment])}"
            )
        if self.steps is None:
            self.steps = DEFAULT_STEPS[self.experiment]
        if self.sigma is None:
            self.sigma = DEFAULT_SIGMA[self.experiment]
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        if self.trace_elbo_samples < 1:
            raise ValueError("trace_elbo_samples must be >= 1")
        OptimizerState(self.optimizer, self.lr, self.clip_norm)

    def estimator_config(self) -> EstimatorConfig:
        return EstimatorConfig(
            name=self.estimator,
            sigma=self.sigma if self.sigma is not None else 0.1,
            n_pairs=self.n_pairs,
            fitness_shaping=self.fitness_shaping,
            common_random_numbers=self.common_random_numbers,
            n_particles=self.n_particles,
            temperature=self.temperature,
            n_samples=self.n_samples,
            control_variate=self.control_variate,
        )

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class SeedTrace:
    seed: int
    param_names: tuple
    steps: list = field(default_factory=list)
    elbo: list = field(default_factory=list)
    param_rows: list = field(default_factory=list)
    final_params: ParamVector | None = None
    diverged: bool = False
    divergence_step: int | None = None
    error: str | None = None
    extra: dict = field(default_factory=dict)

    def rows(self):
        for s, e, p in zip(self.steps, self.elbo, self.param_rows):
            yield (s, self.seed, e, *p)

    def as_array(self):
        """(n_steps, 1 + n_params) array of elbo and parameter columns."""
        return np.column_stack([np.asarray(self.elbo), np.asarray(self.param_rows)])


@dataclass
class RunResult:
    config: RunConfig
    traces: list
    mean_trace: np.ndarray  # (steps + 1, 2 + n_params): step, elbo, params...
    summary: dict
    datasets: dict = field(default_factory=dict)
    assignments: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0

    @property
    def name(self):
        return f"{self.config.experiment}_{self.config.estimator}"

    @property
    def diverged(self):
        return any(t.diverged for t in self.traces)


def _noisy_columns(params: ParamVector):
    mean, log_var = float(params["mean"][0]), float(params["log_var"][0])
    return (mean, log_var, math.exp(0.5 * log_var))


def _gmm_columns(params: ParamVector):
    return (float(np.linalg.norm(params["weights"])), float(np.linalg.norm(params["bias"])))


def build_model(cfg: RunConfig, seed_stream: RngStream):
    if cfg.experiment == "gmm":
        dataset = gmm_generate_dataset(cfg.n_per_component, seed_stream.child(0, DATASET))
        return GmmModel(dataset), ("weight_norm", "bias_norm"), _gmm_columns
    model = NoisyScaleModel(deterministic=cfg.experiment == "noisy_scale_ablation")
    return model, ("mean", "log_var", "std"), _noisy_columns


def run_seed(cfg: RunConfig, seed: int):
    stream = RngStream(cfg.master_seed).child(seed)
    model, names, columns = build_model(cfg, stream)
    estimate = make_estimator(cfg.estimator_config())
    opt = OptimizerState(cfg.optimizer, cfg.lr, cfg.clip_norm)
    params = model.initial_params()
    trace = SeedTrace(seed, names)

    def record(s):
        elbo = elbo_mean(model, params, stream.child(s, TRACE), cfg.trace_elbo_samples).value
        trace.steps.append(s)
        trace.elbo.append(elbo)
        trace.param_rows.append(columns(params))
        if "log_var" in names and not trace.diverged:
            if abs(params["log_var"][0]) > cfg.divergence_bound:
                trace.diverged = True
                trace.divergence_step = s

    record(0)
    for s in range(1, cfg.steps + 1):
        try:
            g = estimate(model, params, stream.child(s, ESTIMATE))
            params = step(opt, params, g)
        except NonFiniteError as exc:
            trace.diverged = True
            trace.divergence_step = s
            trace.error = f"step {s}: {exc}"
            log.warning("seed %d diverged: %s", seed, trace.error)
            break
        record(s)
    trace.final_params = params
    if isinstance(model, GmmModel):
        assigned = model.assign(params.values)
        trace.extra["accuracy"] = adjusted_accuracy(model.dataset.labels, assigned, model.n_components)
        trace.extra["bayes_accuracy"] = adjusted_accuracy(
            model.dataset.labels, model.bayes_assign(), model.n_components)
        trace.extra["dataset"] = model.dataset
        trace.extra["assigned"] = assigned
    return trace


def mean_trace(traces, steps):
    """Across-seed arithmetic mean at every step; seeds that stopped early are skipped."""
    width = 1 + len(traces[0].param_names)
    stacked = np.full((len(traces), steps + 1, width), np.nan)
    for i, t in enumerate(traces):
        arr = t.as_array()
        stacked[i, : len(arr)] = arr
    counts = np.sum(~np.isnan(stacked[:, :, 0]), axis=0)
    sums = np.nansum(stacked, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts[:, None]
    return np.column_stack([np.arange(steps + 1), means])


def run(cfg: RunConfig) -> RunResult:
    t0 = time.perf_counter()
    seeds = range(cfg.n_seeds)
    threads = cfg.threads if cfg.threads is not None else (os.cpu_count() or 1)
    if threads > 1 and cfg.n_seeds > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            traces = list(pool.map(lambda k: run_seed(cfg, k), seeds))
    else:
        traces = [run_seed(cfg, k) for k in seeds]
    result = RunResult(cfg, traces, mean_trace(traces, cfg.steps), {})
    result.summary = summarize(result)
    for t in traces:
        if "dataset" in t.extra:
            result.datasets[t.seed] = t.extra.pop("dataset")
            result.assignments[t.seed] = t.extra.pop("assigned")
    result.wall_clock_seconds = time.perf_counter() - t0
    return result


def summarize(result: RunResult) -> dict:
    cfg = result.config
    per_seed = []
    for t in result.traces:
        entry = {
            "seed": t.seed,
            "final_params": {name: t.final_params[name].tolist() for name in t.final_params.layout},
            "diverged": t.diverged,
            "divergence_step": t.divergence_step,
            "error": t.error,
            "final_elbo": t.elbo[-1],
        }
        if "log_var" in t.param_names:
            entry["final_std"] = math.exp(0.5 * t.final_params["log_var"][0])
        entry.update({k: v for k, v in t.extra.items() if k in ("accuracy", "bayes_accuracy")})
        per_seed.append(entry)
    summary = {
        "experiment": cfg.experiment,
        "estimator": cfg.estimator,
        "config": cfg.to_dict(),
        "per_seed": per_seed,
        "n_diverged": sum(t.diverged for t in result.traces),
        "mean_final_elbo": float(np.mean([e["final_elbo"] for e in per_seed])),
    }
    if cfg.experiment == "gmm":
        summary["mean_accuracy"] = float(np.mean([e["accuracy"] for e in per_seed]))
        summary["mean_bayes_accuracy"] = float(np.mean([e["bayes_accuracy"] for e in per_seed]))
    else:
        model = NoisyScaleModel()
        post = model.posterior()
        summary["mean_final_mean"] = float(np.mean([e["final_params"]["mean"][0] for e in per_seed]))
        summary["mean_final_std"] = float(np.mean([e["final_std"] for e in per_seed]))
        summary["exact_posterior"] = {"mean": post.mean, "std": post.std_dev}
        summary["log_evidence"] = model.log_evidence()
    return summary


def write_outputs(result: RunResult, out_dir) -> Path:
    """Write traces, mean trace, summary (and GMM assignments) under ``out_dir/<experiment>_<estimator>``.

    Wall-clock time goes to a separate ``timing.json`` so that ``summary.json``
    stays byte-identical across reruns.
    """
    run_dir = Path(out_dir) / result.name
    names = result.traces[0].param_names
    header = ("step", "seed", "elbo", *names)
    for t in result.traces:
        write_csv(run_dir / f"trace_seed{t.seed}.csv", header, t.rows())
    mean_rows = ((int(r[0]), *r[1:]) for r in result.mean_trace)
    write_csv(run_dir / "mean_trace.csv", ("step", "elbo", *names), mean_rows)
    write_json(run_dir / "summary.json", result.summary)
    write_json(run_dir / "timing.json", {"wall_clock_seconds": result.wall_clock_seconds})
    for seed, dataset in result.datasets.items():
        write_dataset_csv(dataset, run_dir / f"assignments_seed{seed}.csv", result.assignments[seed])
    return run_dir


@dataclass
class VarianceResult:
    mean: np.ndarray
    variance: np.ndarray
    samples: np.ndarray

    @property
    def trace(self) -> float:
        return float(self.variance.sum())


def measure_estimator_variance(model, params, estimate, n_trials, rng) -> VarianceResult:
    """Per-coordinate mean and (population) variance of ``estimate`` over independent trials."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    samples = np.stack([estimate(model, params, rng.child(i)).grad for i in range(n_trials)])
    return VarianceResult(samples.mean(axis=0), samples.var(axis=0), samples)


def budget_matched_estimator(name: str, budget: int = 50, sigma: float = 0.1):
    """Estimator config spending ``budget`` ELBO evaluations per estimate."""
    name = EstimatorConfig(name=name).name
    if name == "nesvb":
        if budget % 2:
            raise ValueError("mirrored sampling needs an even budget")
        return EstimatorConfig(name="nesvb", sigma=sigma, n_pairs=budget // 2)
    if name == "rws":
        return EstimatorConfig(name="rws", n_particles=budget)
    return EstimatorConfig(name=name, n_samples=budget)


PROBE_POINT = {"mean": 8.5, "log_var": 0.0}
