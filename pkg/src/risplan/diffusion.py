"""The generative optimizer: noise schedule, training, and guided sampling.

Training follows the epsilon-prediction recipe: corrupt an encoded oracle
plan with the closed-form forward process, drop the condition with
probability p_uncond, and regress the injected noise. Sampling runs the
ancestral (DDPM) or accelerated (DDIM) reverse process with classifier-free
guidance, then projects the result to a feasible plan via decode_target.

In multihot mode a cardinality penalty nudges the implied clean sample
toward exactly L selected entries: the logistic map squashes the +-1-coded
scores to (0, 1) and the squared gap between their sum and L is added to the
loss.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import MAX_OBSTACLES, MAX_USERS, LabeledSample, decode_target, encode_condition, encode_target
from .errors import ConfigError, NumericError
from .geometry import Grid, Scenario
from .solver import ConstraintSet, DeploymentPlan, ProblemInstance, plan_objective
from . import tensorkit as tk

__all__ = [
    "NoiseSchedule",
    "linear_schedule",
    "forward_sample",
    "TrainConfig",
    "SampleConfig",
    "TrainData",
    "make_train_data",
    "TrainState",
    "train_epoch",
    "train_model",
    "PlannerModel",
    "save_planner",
    "load_planner",
    "guided_epsilon",
    "ddpm_sample",
    "ddim_sample",
    "generate_plan",
]

# Steepness of the logistic map used by the cardinality penalty: +-1-coded
# scores land close enough to {0, 1} that the penalty is ~0 at a clean target.
CARDINALITY_STEEPNESS = 6.0


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step corruption constants beta_t, alpha_t = 1 - beta_t, and their
    running product alpha_bar_t, indexed by t in 1..t_steps."""

    t_steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        if self.t_steps < 1 or len(self.beta) != self.t_steps:
            raise ConfigError("schedule length must equal t_steps >= 1")
        if np.any(self.beta <= 0.0) or np.any(self.beta >= 1.0):
            raise ConfigError("betas must lie strictly inside (0, 1)")
        if np.any(np.diff(self.alpha_bar) >= 0.0):
            raise ConfigError("alpha_bar must be strictly decreasing")

    def abar(self, t: int) -> float:
        """alpha_bar_t with the convention alpha_bar_0 = 1."""
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


def linear_schedule(
    t_steps: int, beta_start: float | None = None, beta_end: float | None = None
) -> NoiseSchedule:
    """Linearly spaced betas. Defaults rescale the canonical 1000-step range
    by 1000/T (clamped below 0.999) so that short schedules still corrupt the
    target to near-pure noise by step T."""
    if t_steps < 1:
        raise ConfigError("t_steps must be >= 1")
    scale = 1000.0 / t_steps
    if beta_end is None:
        beta_end = min(0.02 * scale, 0.999)
    if beta_start is None:
        beta_start = min(1e-4 * scale, beta_end)
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(f"betas must satisfy 0 < start <= end < 1, got ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, t_steps)
    alpha = 1.0 - beta
    return NoiseSchedule(t_steps=t_steps, beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))


def forward_sample(y0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form corruption sqrt(abar_t) y0 + sqrt(1 - abar_t) eps."""
    if not 1 <= t <= schedule.t_steps:
        raise ValueError(f"step {t} outside 1..{schedule.t_steps}")
    abar = schedule.abar(t)
    return float(math.sqrt(abar)) * y0 + float(math.sqrt(1.0 - abar)) * eps


@dataclass(frozen=True)
class TrainConfig:
    t_steps: int = 20
    omega: float = 180.0
    p_uncond: float = 0.1
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 300
    lambda_card: float = 0.01
    target_mode: str = "multihot"
    seed: int = 0
    ema_decay: float = 0.999
    beta_start: float | None = None
    beta_end: float | None = None
    hidden: int = 256
    time_dim: int = 64
    n_blocks: int = 4
    eval_every: int = 0  # epochs between in-training evals; 0 disables

    def __post_init__(self):
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ConfigError("p_uncond must lie in [0, 1]")
        if self.t_steps < 1:
            raise ConfigError("t_steps must be >= 1")
        if self.target_mode not in ("multihot", "coords"):
            raise ConfigError(f"unknown target mode {self.target_mode!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")


@dataclass(frozen=True)
class SampleConfig:
    omega: float = 180.0
    tau: tuple[int, ...] | None = None  # None = full T..1 sequence
    eta: float = 1.0
    n_samples: int = 8
    selection: str = "best_of_n"
    seed: int = 0

    def __post_init__(self):
        if self.selection not in ("first", "best_of_n"):
            raise ConfigError(f"unknown selection rule {self.selection!r}")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("eta must lie in [0, 1]")


def _resolve_tau(tau: tuple[int, ...] | None, t_steps: int) -> tuple[int, ...]:
    if tau is None:
        return tuple(range(t_steps, 0, -1))
    tau = tuple(int(v) for v in tau)
    if tau[0] != t_steps or tau[-1] != 1:
        raise ConfigError(f"tau must run from {t_steps} down to 1, got {tau}")
    if any(b >= a for a, b in zip(tau, tau[1:])):
        raise ConfigError("tau must be strictly decreasing")
    return tau


@dataclass
class TrainData:
    """Encoded dataset ready for the training loop."""

    conditions: np.ndarray  # (n, C) float32
    targets: np.ndarray     # (n, D) float32
    l_count: int
    target_mode: str

    @property
    def n(self) -> int:
        return len(self.targets)

    @property
    def target_dim(self) -> int:
        return self.targets.shape[1]

    @property
    def cond_dim(self) -> int:
        return self.conditions.shape[1]


def make_train_data(
    samples: Sequence[LabeledSample],
    grid: Grid,
    target_mode: str,
    max_users: int = MAX_USERS,
    max_obstacles: int = MAX_OBSTACLES,
) -> TrainData:
    if not samples:
        raise ConfigError("training requires a nonempty dataset")
    conds = np.stack([s.condition for s in samples]).astype(np.float32)
    targets = np.stack(
        [encode_target(s.target_plan, grid, target_mode) for s in samples]
    ).astype(np.float32)
    expected = 3 * (1 + max_users) + 6 * max_obstacles
    if conds.shape[1] != expected:
        raise ConfigError(f"condition length {conds.shape[1]} does not match layout {expected}")
    return TrainData(
        conditions=conds,
        targets=targets,
        l_count=samples[0].target_plan.l,
        target_mode=target_mode,
    )


@dataclass
class TrainState:
    """Everything the epoch loop mutates."""

    params: tk.DenoiserParams
    opt: tk.AdamState
    ema: tk.EmaState
    schedule: NoiseSchedule
    rng: np.random.Generator


def _train_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 11))))


def train_epoch(state: TrainState, data: TrainData, config: TrainConfig) -> float:
    """One pass over the shuffled dataset; returns the mean per-item loss."""
    n = data.n
    perm = state.rng.permutation(n)
    schedule = state.schedule
    sqrt_abar = np.sqrt(schedule.alpha_bar)
    sqrt_resid = np.sqrt(1.0 - schedule.alpha_bar)
    total = 0.0
    lam = config.lambda_card if data.target_mode == "multihot" else 0.0
    k_steep = np.float32(CARDINALITY_STEEPNESS)
    for start in range(0, n, config.batch_size):
        idx = perm[start : start + config.batch_size]
        b = len(idx)
        y0 = data.targets[idx]
        x = data.conditions[idx]
        t = state.rng.integers(1, schedule.t_steps + 1, size=b)
        eps = state.rng.standard_normal((b, data.target_dim), dtype=np.float32)
        s1 = sqrt_abar[t - 1].astype(np.float32)[:, None]
        s2 = sqrt_resid[t - 1].astype(np.float32)[:, None]
        y_t = s1 * y0 + s2 * eps
        cond_mask = state.rng.random(b) >= config.p_uncond
        eps_hat, cache = tk.forward_batch(state.params, y_t, t, x, cond_mask, want_cache=True)
        resid = eps_hat - eps
        loss_items = np.sum(resid.astype(np.float64) ** 2, axis=1)
        d_eps = (np.float32(2.0 / b) * resid).astype(np.float32)
        if lam > 0.0:
            # Reconstruct y0_hat by inverting the closed-form corruption, then
            # penalize the gap between the soft selection count and L. The
            # tanh form of the logistic stays finite for any argument.
            y0_hat = (y_t - s2 * eps_hat) / s1
            sig = np.float32(0.5) * (np.float32(1.0) + np.tanh(np.float32(0.5) * k_steep * y0_hat))
            gap = np.sum(sig, axis=1) - np.float32(data.l_count)
            loss_items = loss_items + lam * gap.astype(np.float64) ** 2
            d_gap_d_eps = -(s2 / s1) * k_steep * sig * (np.float32(1.0) - sig)
            d_eps = d_eps + np.float32(2.0 * lam / b) * gap[:, None] * d_gap_d_eps
        batch_loss = float(np.sum(loss_items))
        if not math.isfinite(batch_loss):
            raise NumericError(f"non-finite loss in batch starting at {start}")
        total += batch_loss
        grads = tk.backward_batch(state.params, cache, d_eps)
        tk.adam_step(state.params, grads, state.opt)
        tk.ema_update(state.ema, state.params)
    return total / n


@dataclass
class PlannerModel:
    """A trained denoiser (EMA weights) plus everything sampling needs."""

    params: tk.DenoiserParams
    schedule: NoiseSchedule
    target_mode: str
    l_count: int
    max_users: int = MAX_USERS
    max_obstacles: int = MAX_OBSTACLES


def save_planner(path: Path, state: TrainState, config: TrainConfig, data: TrainData) -> None:
    extra = {
        "t_steps": state.schedule.t_steps,
        "beta_start": float(state.schedule.beta[0]),
        "beta_end": float(state.schedule.beta[-1]),
        "target_mode": data.target_mode,
        "l_count": data.l_count,
        "max_users": MAX_USERS,
        "max_obstacles": MAX_OBSTACLES,
        "train_seed": config.seed,
    }
    tk.save_checkpoint(path, state.params, state.ema, extra)


def load_planner(path: Path) -> PlannerModel:
    _params, ema, extra = tk.load_checkpoint(path)
    schedule = linear_schedule(extra["t_steps"], extra["beta_start"], extra["beta_end"])
    return PlannerModel(
        params=ema.as_params(_params),
        schedule=schedule,
        target_mode=extra["target_mode"],
        l_count=extra["l_count"],
        max_users=extra.get("max_users", MAX_USERS),
        max_obstacles=extra.get("max_obstacles", MAX_OBSTACLES),
    )


def train_model(
    data: TrainData,
    config: TrainConfig,
    *,
    log_path: Path | None = None,
    checkpoint_path: Path | None = None,
    eval_fn: Callable[[PlannerModel], float] | None = None,
) -> tuple[PlannerModel, list[tuple[int, float, float | None]]]:
    """Full training run. Writes the checkpoint and a CSV log (epoch, loss,
    exceed_ratio) when paths are given; on a numeric abort the last good
    epoch's weights are written before the error propagates."""
    schedule = linear_schedule(config.t_steps, config.beta_start, config.beta_end)
    params = tk.init_denoiser(
        config.seed,
        data.target_dim,
        data.cond_dim,
        hidden=config.hidden,
        time_dim=config.time_dim,
        n_blocks=config.n_blocks,
    )
    state = TrainState(
        params=params,
        opt=tk.AdamState.for_params(params, config.learning_rate),
        ema=tk.EmaState.for_params(params, config.ema_decay),
        schedule=schedule,
        rng=_train_rng(config.seed),
    )
    rows: list[tuple[int, float, float | None]] = []
    last_good: TrainState | None = None
    for epoch in range(1, config.epochs + 1):
        try:
            loss = train_epoch(state, data, config)
        except NumericError:
            if checkpoint_path is not None and last_good is not None:
                save_planner(checkpoint_path, last_good, config, data)
            raise
        exceed: float | None = None
        if eval_fn is not None and config.eval_every > 0 and epoch % config.eval_every == 0:
            exceed = eval_fn(_planner_from_state(state, data))
        rows.append((epoch, loss, exceed))
        last_good = TrainState(
            params=state.params.copy(),
            opt=state.opt,
            ema=tk.EmaState(
                tensors={k: v.copy() for k, v in state.ema.tensors.items()},
                decay=state.ema.decay,
            ),
            schedule=schedule,
            rng=state.rng,
        )
    if checkpoint_path is not None:
        save_planner(checkpoint_path, state, config, data)
    if log_path is not None:
        write_training_log(log_path, rows)
    return _planner_from_state(state, data), rows


def _planner_from_state(state: TrainState, data: TrainData) -> PlannerModel:
    return PlannerModel(
        params=state.ema.as_params(state.params),
        schedule=state.schedule,
        target_mode=data.target_mode,
        l_count=data.l_count,
    )


def write_training_log(path: Path, rows: list[tuple[int, float, float | None]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "exceed_ratio"])
        for epoch, loss, exceed in rows:
            writer.writerow([epoch, repr(loss), "" if exceed is None else repr(exceed)])


# ---------------------------------------------------------------------------
# sampling


def guided_epsilon(
    params: tk.DenoiserParams,
    y_t: np.ndarray,
    t: int,
    x: np.ndarray,
    omega: float,
) -> np.ndarray:
    """Classifier-free guided prediction (1 + w) eps_cond - w eps_uncond.

    At w = 0 the unconditional pass is skipped entirely, which both saves a
    forward and makes the remaining prediction bitwise equal to the
    conditional output.
    """
    single = np.asarray(y_t).ndim == 1
    y = np.atleast_2d(np.asarray(y_t, dtype=np.float32))
    n = len(y)
    xr = np.asarray(x, dtype=np.float32)[None, :]
    if omega == 0.0:
        cond = np.repeat(xr, n, axis=0)
        out = tk.forward_batch(params, y, np.full(n, t), cond, np.ones(n, dtype=bool))
    else:
        cond = np.concatenate([np.repeat(xr, n, axis=0), np.zeros((n, xr.shape[1]), np.float32)])
        mask = np.concatenate([np.ones(n, dtype=bool), np.zeros(n, dtype=bool)])
        both = tk.forward_batch(params, np.concatenate([y, y]), np.full(2 * n, t), cond, mask)
        out = np.float32(1.0 + omega) * both[:n] - np.float32(omega) * both[n:]
    return out[0] if single else out


def _chain_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [
        np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 4, c))))
        for c in range(n)
    ]


def _stack_normal(rngs: list[np.random.Generator], dim: int) -> np.ndarray:
    return np.stack([r.standard_normal(dim, dtype=np.float32) for r in rngs])


def ddpm_sample(
    params: tk.DenoiserParams,
    x: np.ndarray,
    schedule: NoiseSchedule,
    omega: float,
    rng: np.random.Generator | list[np.random.Generator],
    eps_fn: Callable[[np.ndarray, int], np.ndarray] | None = None,
) -> np.ndarray:
    """Ancestral reverse process with the fixed posterior variance
    beta_t (1 - abar_{t-1}) / (1 - abar_t); noiseless at the final step."""
    rngs = rng if isinstance(rng, list) else [rng]
    n = len(rngs)
    y = _stack_normal(rngs, params.target_dim)
    for t in range(schedule.t_steps, 0, -1):
        eps_g = eps_fn(y, t) if eps_fn is not None else guided_epsilon(params, y, t, x, omega)
        beta = float(schedule.beta[t - 1])
        alpha = float(schedule.alpha[t - 1])
        abar = schedule.abar(t)
        mu = (y - np.float32(beta / math.sqrt(1.0 - abar)) * eps_g) / np.float32(math.sqrt(alpha))
        if t > 1:
            sigma = math.sqrt(beta * (1.0 - schedule.abar(t - 1)) / (1.0 - abar))
            y = mu + np.float32(sigma) * _stack_normal(rngs, params.target_dim)
        else:
            y = mu
    return y if isinstance(rng, list) else y[0]


def ddim_sample(
    params: tk.DenoiserParams,
    x: np.ndarray,
    schedule: NoiseSchedule,
    sample_config: SampleConfig,
    rng: np.random.Generator | list[np.random.Generator],
    eps_fn: Callable[[np.ndarray, int], np.ndarray] | None = None,
) -> np.ndarray:
    """Reverse process over a step subsequence tau with stochasticity eta
    (eta = 0 is fully deterministic, eta = 1 over the full sequence matches
    the ancestral update)."""
    tau = _resolve_tau(sample_config.tau, schedule.t_steps)
    eta = sample_config.eta
    omega = sample_config.omega
    rngs = rng if isinstance(rng, list) else [rng]
    y = _stack_normal(rngs, params.target_dim)
    for pos, t in enumerate(tau):
        t_prev = tau[pos + 1] if pos + 1 < len(tau) else 0
        eps_g = eps_fn(y, t) if eps_fn is not None else guided_epsilon(params, y, t, x, omega)
        abar = schedule.abar(t)
        y0_hat = (y - np.float32(math.sqrt(1.0 - abar)) * eps_g) / np.float32(math.sqrt(abar))
        if t_prev == 0:
            y = y0_hat
            continue
        abar_p = schedule.abar(t_prev)
        sigma = eta * math.sqrt((1.0 - abar_p) / (1.0 - abar)) * math.sqrt(1.0 - abar / abar_p)
        resid = max(1.0 - abar_p - sigma**2, 0.0)
        y = (
            np.float32(math.sqrt(abar_p)) * y0_hat
            + np.float32(math.sqrt(resid)) * eps_g
        )
        if sigma > 0.0:
            y = y + np.float32(sigma) * _stack_normal(rngs, params.target_dim)
    return y if isinstance(rng, list) else y[0]


def generate_plan(
    planner: PlannerModel,
    scenario: Scenario,
    grid: Grid,
    constraints: ConstraintSet,
    sample_config: SampleConfig,
    instance: ProblemInstance | None = None,
) -> DeploymentPlan:
    """Sample deployment(s) for a scenario and project to a feasible plan.

    With selection="best_of_n" the candidate with the highest seeded
    objective wins, which requires the labeled problem instance.
    """
    if sample_config.selection == "best_of_n" and sample_config.n_samples > 1 and instance is None:
        raise ConfigError("best_of_n selection needs the problem instance for scoring")
    x = encode_condition(scenario, planner.max_users, planner.max_obstacles).astype(np.float32)
    rngs = _chain_rngs(sample_config.seed, sample_config.n_samples)
    tau = _resolve_tau(sample_config.tau, planner.schedule.t_steps)
    full_tau = tau == tuple(range(planner.schedule.t_steps, 0, -1))
    if full_tau and sample_config.eta == 1.0:
        y0s = ddpm_sample(planner.params, x, planner.schedule, sample_config.omega, rngs)
    else:
        y0s = ddim_sample(planner.params, x, planner.schedule, sample_config, rngs)
    plans = []
    for c in range(sample_config.n_samples):
        y = np.nan_to_num(y0s[c].astype(np.float64), nan=0.0, posinf=1e9, neginf=-1e9)
        plans.append(decode_target(y, grid, constraints, planner.target_mode))
    if sample_config.selection == "first" or sample_config.n_samples == 1:
        return plans[0]
    values = [plan_objective(instance, p) for p in plans]
    return plans[int(np.argmax(values))]
