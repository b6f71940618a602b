"""Run configuration: one TOML file, strict keys, CLI overrides.

Every constant the pipeline depends on lives here with its default, so
`risplan show-config` prints the complete effective configuration. Unknown
sections or keys are rejected outright; overrides use `section.key=value`
syntax with TOML value parsing (bare words fall back to strings).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .channel import RadioParams
from .dataset import MAX_OBSTACLES, MAX_USERS, ScenarioConfig, radio_params_to_json
from .diffusion import SampleConfig, TrainConfig
from .errors import ConfigError
from .geometry import GridSpec, Point3, Region
from .solver import ConstraintSet

__all__ = ["RunConfig", "load_config", "default_config", "to_toml", "make_tau"]

_SCHEMA: dict[str, tuple[str, ...]] = {
    "radio": ("wavelength", "g_t", "g_r", "alpha", "p_tx", "noise_power", "gamma_th", "n_elements"),
    "region": ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max"),
    "grid": ("n_x", "n_y", "n_z"),
    "constraints": ("l_count", "d_min"),
    "scenario": ("n_users", "n_obstacles", "bs", "obstacle_size_min", "obstacle_size_max",
                 "user_height", "seed"),
    "labeling": ("n_mc", "objective", "gate_cascade"),
    "encoding": ("max_users", "max_obstacles", "target_mode"),
    "train": ("t_steps", "omega", "p_uncond", "learning_rate", "batch_size", "epochs",
              "lambda_card", "seed", "ema_decay", "beta_start", "beta_end", "hidden",
              "time_dim", "n_blocks", "eval_every"),
    "sample": ("omega", "ddim_steps", "eta", "n_samples", "selection", "seed"),
}

_DEFAULTS: dict[str, dict] = {
    "radio": {"wavelength": 0.1, "g_t": 1.0, "g_r": 1.0, "alpha": 2.7, "p_tx": 1.0,
              "noise_power": 1e-11, "gamma_th": 10.0, "n_elements": 64},
    "region": {"x_min": 0.0, "x_max": 100.0, "y_min": 0.0, "y_max": 100.0,
               "z_min": 2.0, "z_max": 10.0},
    "grid": {"n_x": 4, "n_y": 4, "n_z": 3},
    "constraints": {"l_count": 2, "d_min": -1.0},  # d_min < 0 => one grid cell diagonal
    "scenario": {"n_users": 3, "n_obstacles": 3, "bs": [10.0, 50.0, 9.0],
                 "obstacle_size_min": 8.0, "obstacle_size_max": 30.0,
                 "user_height": 1.5, "seed": 0},
    "labeling": {"n_mc": 256, "objective": "sum_snr", "gate_cascade": True},
    "encoding": {"max_users": MAX_USERS, "max_obstacles": MAX_OBSTACLES,
                 "target_mode": "multihot"},
    "train": {"t_steps": 20, "omega": 180.0, "p_uncond": 0.1, "learning_rate": 1e-4,
              "batch_size": 64, "epochs": 300, "lambda_card": 0.01, "seed": 0,
              "ema_decay": 0.999, "beta_start": -1.0, "beta_end": -1.0, "hidden": 256,
              "time_dim": 64, "n_blocks": 4, "eval_every": 0},
    "sample": {"omega": 180.0, "ddim_steps": 0, "eta": 1.0, "n_samples": 8,
               "selection": "best_of_n", "seed": 0},
}


def _cell_diagonal(region: Region, grid: GridSpec) -> float:
    """Distance between diagonally adjacent grid points (0 on 1-count axes)."""
    def step(lo: float, hi: float, n: int) -> float:
        return 0.0 if n == 1 else (hi - lo) / (n - 1)

    return math.sqrt(
        step(region.x_min, region.x_max, grid.n_x) ** 2
        + step(region.y_min, region.y_max, grid.n_y) ** 2
        + step(region.z_min, region.z_max, grid.n_z) ** 2
    )


def make_tau(t_steps: int, ddim_steps: int) -> tuple[int, ...] | None:
    """Evenly spaced DDIM subsequence from T down to 1; None = full sequence."""
    if ddim_steps <= 0 or ddim_steps >= t_steps:
        return None
    if ddim_steps == 1:
        raise ConfigError("ddim_steps must be >= 2 so tau can span T..1")
    raw = [round(t_steps - i * (t_steps - 1) / (ddim_steps - 1)) for i in range(ddim_steps)]
    tau: list[int] = []
    for v in raw:
        if not tau or v < tau[-1]:
            tau.append(int(v))
    return tuple(tau)


@dataclass(frozen=True)
class RunConfig:
    """Fully-resolved configuration for every CLI command."""

    radio: RadioParams
    region: Region
    grid_spec: GridSpec
    constraints: ConstraintSet
    scenario: ScenarioConfig
    n_mc: int
    objective: str
    gate_cascade: bool
    max_users: int
    max_obstacles: int
    target_mode: str
    train: TrainConfig
    sample: SampleConfig
    raw: dict = field(repr=False, default_factory=dict)

    def manifest_config(self) -> dict:
        """The JSON-ready dict embedded in dataset manifests."""
        return {
            "radio": radio_params_to_json(self.radio),
            "constraints": {"l_count": self.constraints.l_count, "d_min": self.constraints.d_min},
            "scenario": {
                "region": [self.region.x_min, self.region.x_max, self.region.y_min,
                           self.region.y_max, self.region.z_min, self.region.z_max],
                "grid_spec": [self.grid_spec.n_x, self.grid_spec.n_y, self.grid_spec.n_z],
                "n_users": self.scenario.n_users,
                "n_obstacles": self.scenario.n_obstacles,
                "bs": "random" if self.scenario.bs is None else list(self.scenario.bs.as_tuple()),
                "obstacle_size_min": self.scenario.obstacle_size_min,
                "obstacle_size_max": self.scenario.obstacle_size_max,
                "user_height": self.scenario.user_height,
                "seed": self.scenario.seed,
            },
            "labeling": {"n_mc": self.n_mc, "objective": self.objective,
                         "gate_cascade": self.gate_cascade},
            "encoding": {"max_users": self.max_users, "max_obstacles": self.max_obstacles,
                         "target_mode": self.target_mode},
        }


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = {k: dict(v) for k, v in base.items()}
    for section, values in override.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table of key = value pairs")
        for key, value in values.items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            out[section][key] = value
    return out


def _parse_override(item: str) -> tuple[str, str, object]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    target, _, raw_value = item.partition("=")
    if "." not in target:
        raise ConfigError(f"override target {target!r} must be section.key")
    section, _, key = target.partition(".")
    try:
        value = tomllib.loads(f"v = {raw_value}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw_value  # bare word: treat as string
    return section, key, value


def _build(doc: dict) -> RunConfig:
    radio = RadioParams(**doc["radio"])
    region = Region(**doc["region"])
    grid_spec = GridSpec(**doc["grid"])
    d_min = doc["constraints"]["d_min"]
    if d_min < 0:
        d_min = _cell_diagonal(region, grid_spec)
    constraints = ConstraintSet(l_count=doc["constraints"]["l_count"], d_min=d_min, region=region)
    s = doc["scenario"]
    bs_value = s["bs"]
    if isinstance(bs_value, str):
        if bs_value != "random":
            raise ConfigError("scenario.bs must be [x, y, z] or the string 'random'")
        bs = None
    else:
        bs = Point3(*[float(v) for v in bs_value])
    scenario = ScenarioConfig(
        region=region,
        grid_spec=grid_spec,
        n_users=s["n_users"],
        n_obstacles=s["n_obstacles"],
        bs=bs,
        obstacle_size_min=s["obstacle_size_min"],
        obstacle_size_max=s["obstacle_size_max"],
        user_height=s["user_height"],
        seed=s["seed"],
    )
    lab = doc["labeling"]
    if lab["objective"] not in ("sum_snr", "coverage"):
        raise ConfigError(f"unknown labeling objective {lab['objective']!r}")
    enc = doc["encoding"]
    t = dict(doc["train"])
    for opt in ("beta_start", "beta_end"):
        if t[opt] is not None and t[opt] < 0:
            t[opt] = None
    train = TrainConfig(target_mode=enc["target_mode"], **t)
    sm = dict(doc["sample"])
    tau = make_tau(train.t_steps, sm.pop("ddim_steps"))
    sample = SampleConfig(tau=tau, **sm)
    return RunConfig(
        radio=radio,
        region=region,
        grid_spec=grid_spec,
        constraints=constraints,
        scenario=scenario,
        n_mc=lab["n_mc"],
        objective=lab["objective"],
        gate_cascade=lab["gate_cascade"],
        max_users=enc["max_users"],
        max_obstacles=enc["max_obstacles"],
        target_mode=enc["target_mode"],
        train=train,
        sample=sample,
        raw=doc,
    )


def default_config() -> RunConfig:
    return _build(_merge(_DEFAULTS, {}))


def load_config(path: Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Defaults, then the TOML file (if any), then --set overrides, strictly."""
    doc = _merge(_DEFAULTS, {})
    if path is not None:
        try:
            with open(path, "rb") as fh:
                file_doc = tomllib.load(fh)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"config file is not valid TOML: {e}") from e
        doc = _merge(doc, file_doc)
    for item in overrides or []:
        section, key, value = _parse_override(item)
        doc = _merge(doc, {section: {key: value}})
    try:
        return _build(doc)
    except TypeError as e:
        raise ConfigError(f"bad config value: {e}") from e


def _toml_value(v: object) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot render {v!r} as TOML")


def to_toml(config: RunConfig) -> str:
    """Render the effective configuration (resolved values included)."""
    doc = {k: dict(v) for k, v in config.raw.items()}
    doc["constraints"]["d_min"] = config.constraints.d_min
    lines: list[str] = []
    for section in _SCHEMA:
        lines.append(f"[{section}]")
        for key in _SCHEMA[section]:
            lines.append(f"{key} = {_toml_value(doc[section][key])}")
        lines.append("")
    return "\n".join(lines)
