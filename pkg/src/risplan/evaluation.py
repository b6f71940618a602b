"""Metrics and experiment harnesses built on the labeled datasets.

The exceed ratio E divides a plan's seeded sum-SNR objective by the stored
oracle optimum. Both sides use the same Monte-Carlo seed (common random
numbers), so E is exactly 1 for the oracle plan and never exceeds 1.
Scenarios whose oracle objective is zero make E undefined; they are excluded
from aggregates and surfaced as a count.
"""

from __future__ import annotations

import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .channel import RadioParams
from .dataset import (
    MAX_OBSTACLES,
    MAX_USERS,
    LabeledSample,
    load_dataset,
    sample_instance,
)
from .diffusion import (
    PlannerModel,
    SampleConfig,
    TrainConfig,
    generate_plan,
    load_planner,
    make_train_data,
    train_model,
)
from .errors import ConfigError, InfeasibleError, MetricUndefinedError
from .geometry import Region
from .solver import (
    ConstraintSet,
    DeploymentPlan,
    ProblemInstance,
    greedy_baseline,
    plan_objective,
    random_baseline,
)

__all__ = [
    "ExceedReport",
    "SweepResult",
    "GeneralizationMatrix",
    "EvalContext",
    "context_from_config",
    "exceed_ratio",
    "evaluate_method",
    "evaluate_samples",
    "sweep",
    "generalization_matrix",
    "METHODS",
]

METHODS = ("diffusion", "greedy", "random", "oracle")


@dataclass(frozen=True)
class EvalContext:
    """Instance-building knobs recovered from a dataset manifest."""

    params: RadioParams
    constraints: ConstraintSet
    n_mc: int
    objective: str
    gate_cascade: bool
    max_users: int = MAX_USERS
    max_obstacles: int = MAX_OBSTACLES


def context_from_config(config: dict) -> EvalContext:
    try:
        radio = RadioParams(**config["radio"])
        region = Region(*config["scenario"]["region"])
        con = config["constraints"]
        lab = config["labeling"]
        enc = config.get("encoding", {})
    except (KeyError, TypeError) as e:
        raise ConfigError(f"dataset manifest config is incomplete: {e}") from e
    return EvalContext(
        params=radio,
        constraints=ConstraintSet(l_count=con["l_count"], d_min=con["d_min"], region=region),
        n_mc=lab["n_mc"],
        objective=lab["objective"],
        gate_cascade=lab["gate_cascade"],
        max_users=enc.get("max_users", MAX_USERS),
        max_obstacles=enc.get("max_obstacles", MAX_OBSTACLES),
    )


def _instance_for(sample: LabeledSample, ctx: EvalContext) -> ProblemInstance:
    return sample_instance(
        sample, ctx.params, ctx.constraints, ctx.n_mc, ctx.objective, ctx.gate_cascade
    )


def exceed_ratio(pred: DeploymentPlan, instance: ProblemInstance, oracle_value: float) -> float:
    """gamma_pred / gamma_oracle under the instance's common random numbers."""
    if oracle_value <= 0.0:
        raise MetricUndefinedError(f"oracle objective {oracle_value} leaves E undefined")
    return plan_objective(instance, pred) / oracle_value


@dataclass(frozen=True)
class ExceedReport:
    method: str
    dataset: str
    values: tuple[float, ...]
    excluded: int

    @property
    def median(self) -> float:
        return statistics.median(self.values) if self.values else float("nan")

    @property
    def mean(self) -> float:
        return statistics.fmean(self.values) if self.values else float("nan")

    @property
    def frac_ge_95(self) -> float:
        if not self.values:
            return float("nan")
        return sum(1 for v in self.values if v >= 0.95) / len(self.values)

    def summary_json(self) -> dict:
        return {
            "method": self.method,
            "dataset": self.dataset,
            "n_scenarios": len(self.values),
            "excluded": self.excluded,
            "median_exceed": self.median,
            "mean_exceed": self.mean,
            "frac_ge_095": self.frac_ge_95,
        }


def _stable_seed(seed: int, index: int, tag: int) -> int:
    return int(np.random.SeedSequence((seed, index, tag)).generate_state(1, np.uint64)[0])


def _plan_for_method(
    method: str,
    sample: LabeledSample,
    ctx: EvalContext,
    planner: PlannerModel | None,
    sample_config: SampleConfig | None,
    seed: int,
    index: int,
) -> DeploymentPlan:
    instance = _instance_for(sample, ctx)
    if method == "oracle":
        return sample.target_plan
    if method == "greedy":
        return greedy_baseline(instance)
    if method == "random":
        return random_baseline(instance, _stable_seed(seed, index, 2))
    if method == "diffusion":
        if planner is None or sample_config is None:
            raise ConfigError("diffusion evaluation needs a planner and a sample config")
        cfg = replace(sample_config, seed=_stable_seed(seed, index, 3))
        return generate_plan(
            planner, sample.scenario, sample.scenario.grid(), ctx.constraints, cfg, instance
        )
    raise ConfigError(f"unknown method {method!r}")


def _evaluate_one(
    method: str,
    sample: LabeledSample,
    index: int,
    ctx: EvalContext,
    planner: PlannerModel | None,
    sample_config: SampleConfig | None,
    seed: int,
) -> float | None:
    """E for one scenario, or None when the metric is undefined/infeasible."""
    try:
        plan = _plan_for_method(method, sample, ctx, planner, sample_config, seed, index)
        return exceed_ratio(plan, _instance_for(sample, ctx), sample.oracle_objective)
    except (MetricUndefinedError, InfeasibleError):
        return None


# Per-process state for parallel evaluation; initialized once per worker.
_EVAL_STATE: dict = {}


def _eval_worker_init(data_path, checkpoint_path, method, sample_config, seed) -> None:
    manifest, samples = load_dataset(data_path)
    _EVAL_STATE.update(
        method=method,
        samples=samples,
        ctx=context_from_config(manifest.config),
        planner=load_planner(checkpoint_path) if checkpoint_path else None,
        sample_config=sample_config,
        seed=seed,
    )


def _eval_worker_run(index: int) -> float | None:
    s = _EVAL_STATE
    return _evaluate_one(
        s["method"], s["samples"][index], index, s["ctx"], s["planner"], s["sample_config"], s["seed"]
    )


def evaluate_samples(
    method: str,
    samples: list[LabeledSample],
    ctx: EvalContext,
    *,
    dataset: str = "",
    planner: PlannerModel | None = None,
    sample_config: SampleConfig | None = None,
    seed: int = 0,
) -> ExceedReport:
    """In-process evaluation over already-loaded samples."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    values: list[float] = []
    excluded = 0
    for index, sample in enumerate(samples):
        e = _evaluate_one(method, sample, index, ctx, planner, sample_config, seed)
        if e is None:
            excluded += 1
        else:
            values.append(e)
    return ExceedReport(method=method, dataset=dataset, values=tuple(values), excluded=excluded)


def evaluate_method(
    method: str,
    data_path: Path,
    *,
    checkpoint_path: Path | None = None,
    sample_config: SampleConfig | None = None,
    seed: int = 0,
    workers: int = 1,
) -> ExceedReport:
    """Evaluate a method over every scenario in a labeled dataset file.

    Per-scenario work depends only on (seed, index), so reports are identical
    for any worker count.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    manifest, samples = load_dataset(data_path)
    if workers <= 1 or len(samples) <= 1:
        ctx = context_from_config(manifest.config)
        planner = load_planner(checkpoint_path) if checkpoint_path else None
        return evaluate_samples(
            method,
            samples,
            ctx,
            dataset=manifest.name,
            planner=planner,
            sample_config=sample_config,
            seed=seed,
        )
    with ProcessPoolExecutor(
        max_workers=workers,
        initializer=_eval_worker_init,
        initargs=(data_path, checkpoint_path, method, sample_config, seed),
    ) as pool:
        results = list(pool.map(_eval_worker_run, range(len(samples)), chunksize=8))
    values = tuple(v for v in results if v is not None)
    return ExceedReport(
        method=method,
        dataset=manifest.name,
        values=values,
        excluded=sum(1 for v in results if v is None),
    )


@dataclass(frozen=True)
class SweepResult:
    parameter: str
    values: tuple[float, ...]
    median_e: tuple[float, ...]
    mean_e: tuple[float, ...]

    def rows(self) -> list[tuple[float, float, float]]:
        return list(zip(self.values, self.median_e, self.mean_e))


def sweep(
    parameter: str,
    values: list[float],
    *,
    eval_data_path: Path,
    train_data_path: Path | None = None,
    checkpoint_path: Path | None = None,
    train_config: TrainConfig | None = None,
    sample_config: SampleConfig | None = None,
    seed: int = 0,
    workers: int = 1,
) -> SweepResult:
    """Sensitivity scan over omega (re-sample only) or p_uncond / T (retrain).

    Retraining sweeps reuse the base seed per value so the only moving part
    is the swept parameter.
    """
    if parameter not in ("omega", "p_uncond", "T"):
        raise ConfigError(f"unknown sweep parameter {parameter!r}")
    if len(values) < 3:
        raise ConfigError("a sweep needs at least 3 values")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError("sweep values must be strictly increasing (no duplicates)")
    sample_config = sample_config or SampleConfig()
    medians: list[float] = []
    means: list[float] = []
    if parameter == "omega":
        if checkpoint_path is None:
            raise ConfigError("an omega sweep needs a trained checkpoint")
        for v in values:
            report = evaluate_method(
                "diffusion",
                eval_data_path,
                checkpoint_path=checkpoint_path,
                sample_config=replace(sample_config, omega=float(v)),
                seed=seed,
                workers=workers,
            )
            medians.append(report.median)
            means.append(report.mean)
    else:
        if train_data_path is None or train_config is None:
            raise ConfigError(f"a {parameter} sweep needs training data and a train config")
        manifest, samples = load_dataset(train_data_path)
        ctx = context_from_config(manifest.config)
        grid = samples[0].scenario.grid()
        data = make_train_data(samples, grid, train_config.target_mode, ctx.max_users, ctx.max_obstacles)
        for v in values:
            if parameter == "p_uncond":
                cfg = replace(train_config, p_uncond=float(v))
            else:
                cfg = replace(train_config, t_steps=int(v))
            planner, _ = train_model(data, cfg)
            report = _evaluate_planner(planner, eval_data_path, sample_config, seed, workers)
            medians.append(report.median)
            means.append(report.mean)
    return SweepResult(
        parameter=parameter,
        values=tuple(float(v) for v in values),
        median_e=tuple(medians),
        mean_e=tuple(means),
    )


def _evaluate_planner(
    planner: PlannerModel,
    eval_data_path: Path,
    sample_config: SampleConfig,
    seed: int,
    workers: int,
) -> ExceedReport:
    manifest, samples = load_dataset(eval_data_path)
    ctx = context_from_config(manifest.config)
    return evaluate_samples(
        "diffusion",
        samples,
        ctx,
        dataset=manifest.name,
        planner=planner,
        sample_config=sample_config,
        seed=seed,
    )


@dataclass(frozen=True)
class GeneralizationMatrix:
    train_names: tuple[str, ...]
    test_names: tuple[str, ...]
    median_e: tuple[tuple[float, ...], ...]  # rows = train sets

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.train_names), len(self.test_names))


def generalization_matrix(
    train_paths: list[Path],
    test_paths: list[Path],
    *,
    train_config: TrainConfig,
    sample_config: SampleConfig | None = None,
    seed: int = 0,
    workers: int = 1,
) -> GeneralizationMatrix:
    """Train one model per training set, evaluate it on every test set."""
    if not train_paths or not test_paths:
        raise ConfigError("the matrix needs at least one train set and one test set")
    sample_config = sample_config or SampleConfig()
    train_names: list[str] = []
    rows: list[tuple[float, ...]] = []
    test_names: list[str] | None = None
    for tpath in train_paths:
        manifest, samples = load_dataset(tpath)
        ctx = context_from_config(manifest.config)
        grid = samples[0].scenario.grid()
        data = make_train_data(samples, grid, train_config.target_mode, ctx.max_users, ctx.max_obstacles)
        planner, _ = train_model(data, train_config)
        train_names.append(manifest.name)
        row: list[float] = []
        names: list[str] = []
        for epath in test_paths:
            report = _evaluate_planner(planner, epath, sample_config, seed, workers)
            row.append(report.median)
            names.append(report.dataset)
        rows.append(tuple(row))
        test_names = names
    return GeneralizationMatrix(
        train_names=tuple(train_names),
        test_names=tuple(test_names or ()),
        median_e=tuple(rows),
    )
