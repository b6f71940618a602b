"""Scenario generation, oracle labeling, fixed-length encodings, and disk formats.

Condition layout (version 1)
----------------------------
    [ bs.xyz | user.xyz x max_users | (obs.min.xyz, obs.max.xyz) x max_obstacles ]

Every coordinate is affinely mapped from its region axis interval to [-1, 1];
slots beyond the actual user/obstacle count are filled with the sentinel -2.

Dataset files are JSON Lines (one sample per line, UTF-8) with fields
`version`, `scenario`, `condition`, `target_indices`, `target_mode`,
`oracle_objective`, `mc_seed`. A manifest JSON sits alongside
(`<stem>.manifest.json`) carrying the sample count, the generating config,
and a sha256 digest of the data file.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import RadioParams
from .errors import ConfigError, DatasetFormatError, InfeasibleError
from .geometry import Box3, Grid, GridSpec, Point3, Region, Scenario, distance
from .solver import ConstraintSet, DeploymentPlan, ProblemInstance, exhaustive_oracle, feasible

__all__ = [
    "MAX_USERS",
    "MAX_OBSTACLES",
    "CONDITION_VERSION",
    "FORMAT_VERSION",
    "ScenarioConfig",
    "LabeledSample",
    "DatasetManifest",
    "dataset_name",
    "condition_length",
    "generate_scenario",
    "label_scenario",
    "encode_condition",
    "encode_target",
    "decode_target",
    "save_dataset",
    "load_dataset",
    "manifest_path",
    "build_labeled_samples",
    "sample_instance",
]

MAX_USERS = 10
MAX_OBSTACLES = 10
SENTINEL = -2.0
CONDITION_VERSION = 1
FORMAT_VERSION = 1

_OBSTACLE_RETRIES = 1000


def dataset_name(n_obstacles: int, n_users: int) -> str:
    suffix = "users" if n_users != 1 else "user"
    return f"{n_obstacles}obs_{n_users}{suffix}"


def condition_length(max_users: int = MAX_USERS, max_obstacles: int = MAX_OBSTACLES) -> int:
    return 3 * (1 + max_users) + 6 * max_obstacles


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to draw scenario index i deterministically."""

    region: Region
    grid_spec: GridSpec
    n_users: int = 3
    n_obstacles: int = 3
    bs: Point3 | None = Point3(10.0, 50.0, 9.0)  # None => uniform in region
    obstacle_size_min: float = 8.0
    obstacle_size_max: float = 30.0
    user_height: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.n_users <= MAX_USERS:
            raise ConfigError(f"n_users must be in [0, {MAX_USERS}]")
        if not 0 <= self.n_obstacles <= MAX_OBSTACLES:
            raise ConfigError(f"n_obstacles must be in [0, {MAX_OBSTACLES}]")
        if not 0 < self.obstacle_size_min <= self.obstacle_size_max:
            raise ConfigError("obstacle sizes must satisfy 0 < min <= max")


def _scenario_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, index))))


def generate_scenario(config: ScenarioConfig, index: int) -> Scenario:
    """Scenario i: BS, then users, then obstacles, in one documented draw order.

    Obstacles that would swallow the BS are redrawn up to 1000 times and
    dropped if still colliding, so pathological configs degrade gracefully.
    """
    rng = _scenario_rng(config.seed, index)
    region = config.region
    if config.bs is None:
        bs = Point3(
            float(rng.uniform(region.x_min, region.x_max)),
            float(rng.uniform(region.y_min, region.y_max)),
            float(rng.uniform(region.z_min, region.z_max)),
        )
    else:
        bs = config.bs
    users = tuple(
        Point3(
            float(rng.uniform(region.x_min, region.x_max)),
            float(rng.uniform(region.y_min, region.y_max)),
            config.user_height,
        )
        for _ in range(config.n_users)
    )
    obstacles: list[Box3] = []
    for _ in range(config.n_obstacles):
        for _attempt in range(_OBSTACLE_RETRIES):
            cx = float(rng.uniform(region.x_min, region.x_max))
            cy = float(rng.uniform(region.y_min, region.y_max))
            cz = float(rng.uniform(region.z_min, region.z_max))
            sx, sy, sz = (
                float(rng.uniform(config.obstacle_size_min, config.obstacle_size_max))
                for _ in range(3)
            )
            box = Box3(
                Point3(cx - sx / 2, cy - sy / 2, cz - sz / 2),
                Point3(cx + sx / 2, cy + sy / 2, cz + sz / 2),
            )
            if not box.contains(bs):
                obstacles.append(box)
                break
    return Scenario(
        region=region,
        bs=bs,
        users=users,
        obstacles=tuple(obstacles),
        grid_spec=config.grid_spec,
    )


def _axis_norm(value: float, lo: float, hi: float) -> float:
    return 2.0 * (value - lo) / (hi - lo) - 1.0


def _axis_denorm(value: float, lo: float, hi: float) -> float:
    return lo + (value + 1.0) * (hi - lo) / 2.0


def _norm_point(p: Point3, region: Region) -> list[float]:
    return [
        _axis_norm(p.x, region.x_min, region.x_max),
        _axis_norm(p.y, region.y_min, region.y_max),
        _axis_norm(p.z, region.z_min, region.z_max),
    ]


def encode_condition(
    scenario: Scenario,
    max_users: int = MAX_USERS,
    max_obstacles: int = MAX_OBSTACLES,
) -> np.ndarray:
    """Fixed-length environment vector; see the module docstring for layout."""
    if scenario.n_users > max_users:
        raise ValueError(f"scenario has {scenario.n_users} users, limit {max_users}")
    if len(scenario.obstacles) > max_obstacles:
        raise ValueError(f"scenario has {len(scenario.obstacles)} obstacles, limit {max_obstacles}")
    region = scenario.region
    out = list(_norm_point(scenario.bs, region))
    for k in range(max_users):
        if k < scenario.n_users:
            out.extend(_norm_point(scenario.users[k], region))
        else:
            out.extend([SENTINEL] * 3)
    for j in range(max_obstacles):
        if j < len(scenario.obstacles):
            box = scenario.obstacles[j]
            out.extend(_norm_point(box.min, region))
            out.extend(_norm_point(box.max, region))
        else:
            out.extend([SENTINEL] * 6)
    return np.array(out, dtype=np.float64)


def encode_target(plan: DeploymentPlan, grid: Grid, mode: str) -> np.ndarray:
    """Plan as a diffusion target: normalized coordinates or a +-1 multi-hot."""
    if mode == "coords":
        out: list[float] = []
        for p in plan.coords:  # plan.coords follow ascending grid index
            out.extend(_norm_point(p, grid.region))
        return np.array(out, dtype=np.float64)
    if mode == "multihot":
        y = -np.ones(grid.m, dtype=np.float64)
        y[list(plan.indices)] = 1.0
        return y
    raise ValueError(f"unknown target mode {mode!r}")


def _spacing_ok(grid: Grid, i: int, kept: list[int], d_min: float) -> bool:
    return all(distance(grid.points[i], grid.points[j]) >= d_min for j in kept)


def _repair_selection(
    desired: list[int], grid: Grid, constraints: ConstraintSet
) -> list[int]:
    """Keep each desired index when legal, otherwise substitute the nearest
    unselected grid point that satisfies spacing (ties to the lower index)."""
    kept: list[int] = []
    for want in desired:
        if want not in kept and _spacing_ok(grid, want, kept, constraints.d_min):
            kept.append(want)
            continue
        origin = grid.points[want]
        order = sorted(
            (i for i in range(grid.m) if i not in kept),
            key=lambda i: (distance(grid.points[i], origin), i),
        )
        for cand in order:
            if _spacing_ok(grid, cand, kept, constraints.d_min):
                kept.append(cand)
                break
        else:
            raise InfeasibleError("spacing repair found no usable grid point")
    return kept


def decode_target(
    y: np.ndarray, grid: Grid, constraints: ConstraintSet, mode: str
) -> DeploymentPlan:
    """Nearest feasible plan for a real-valued target vector.

    multihot: keep the L largest scores (ties to the lower index), then run
    spacing repair in descending-score order. coords: snap each triple to the
    nearest grid point in world coordinates, then repair in vector order.
    """
    y = np.asarray(y, dtype=np.float64)
    l_count = constraints.l_count
    if mode == "multihot":
        if y.shape != (grid.m,):
            raise ValueError(f"multihot target must have length {grid.m}")
        ranked = np.lexsort((np.arange(grid.m), -y))
        desired = [int(i) for i in ranked[:l_count]]
    elif mode == "coords":
        if y.shape != (3 * l_count,):
            raise ValueError(f"coords target must have length {3 * l_count}")
        region = grid.region
        desired = []
        for j in range(l_count):
            p = Point3(
                _axis_denorm(float(y[3 * j]), region.x_min, region.x_max),
                _axis_denorm(float(y[3 * j + 1]), region.y_min, region.y_max),
                _axis_denorm(float(y[3 * j + 2]), region.z_min, region.z_max),
            )
            desired.append(grid.nearest_index(p))
    else:
        raise ValueError(f"unknown target mode {mode!r}")
    return DeploymentPlan.from_indices(grid, _repair_selection(desired, grid, constraints))


@dataclass(frozen=True)
class LabeledSample:
    """One (environment, oracle plan) training pair."""

    scenario: Scenario
    condition: np.ndarray
    target_plan: DeploymentPlan
    oracle_objective: float
    mc_seed: int


def sample_instance(
    sample: LabeledSample,
    params: RadioParams,
    constraints: ConstraintSet,
    n_mc: int,
    objective: str = "sum_snr",
    gate_cascade: bool = True,
) -> ProblemInstance:
    """The problem instance a stored sample was labeled under (same seed)."""
    return ProblemInstance(
        scenario=sample.scenario,
        params=params,
        constraints=constraints,
        objective=objective,
        mc_seed=sample.mc_seed,
        n_mc=n_mc,
        gate_cascade=gate_cascade,
    )


def _mc_seed_for(seed: int, index: int) -> int:
    return int(np.random.SeedSequence((seed, index, 1)).generate_state(1, np.uint64)[0])


def label_scenario(
    scenario: Scenario,
    params: RadioParams,
    constraints: ConstraintSet,
    *,
    mc_seed: int,
    n_mc: int = 256,
    objective: str = "sum_snr",
    gate_cascade: bool = True,
    max_users: int = MAX_USERS,
    max_obstacles: int = MAX_OBSTACLES,
) -> LabeledSample:
    """Run the exhaustive oracle and package the result as a training pair."""
    instance = ProblemInstance(
        scenario=scenario,
        params=params,
        constraints=constraints,
        objective=objective,
        mc_seed=mc_seed,
        n_mc=n_mc,
        gate_cascade=gate_cascade,
    )
    plan, value = exhaustive_oracle(instance)
    return LabeledSample(
        scenario=scenario,
        condition=encode_condition(scenario, max_users, max_obstacles),
        target_plan=plan,
        oracle_objective=value,
        mc_seed=mc_seed,
    )


# ---------------------------------------------------------------------------
# parallel generation + labeling


_WORKER_ARGS: dict = {}


def _label_index(index: int) -> LabeledSample:
    a = _WORKER_ARGS
    scenario = generate_scenario(a["config"], index)
    return label_scenario(
        scenario,
        a["params"],
        a["constraints"],
        mc_seed=_mc_seed_for(a["config"].seed, index),
        n_mc=a["n_mc"],
        objective=a["objective"],
        gate_cascade=a["gate_cascade"],
        max_users=a["max_users"],
        max_obstacles=a["max_obstacles"],
    )


def _init_worker(args: dict) -> None:
    _WORKER_ARGS.update(args)


def build_labeled_samples(
    config: ScenarioConfig,
    params: RadioParams,
    constraints: ConstraintSet,
    count: int,
    *,
    n_mc: int = 256,
    objective: str = "sum_snr",
    gate_cascade: bool = True,
    max_users: int = MAX_USERS,
    max_obstacles: int = MAX_OBSTACLES,
    workers: int = 1,
) -> list[LabeledSample]:
    """Generate and label scenarios 0..count-1.

    Each index is a pure function of (config.seed, index), so the output is
    identical for any worker count; results are assembled in index order.
    """
    args = dict(
        config=config,
        params=params,
        constraints=constraints,
        n_mc=n_mc,
        objective=objective,
        gate_cascade=gate_cascade,
        max_users=max_users,
        max_obstacles=max_obstacles,
    )
    if workers <= 1 or count <= 1:
        _init_worker(args)
        return [_label_index(i) for i in range(count)]
    with ProcessPoolExecutor(
        max_workers=workers, initializer=_init_worker, initargs=(args,)
    ) as pool:
        return list(pool.map(_label_index, range(count), chunksize=max(1, count // (8 * workers))))


# ---------------------------------------------------------------------------
# JSON serialization


def _point_to_json(p: Point3) -> list[float]:
    return [p.x, p.y, p.z]


def _region_to_json(r: Region) -> list[float]:
    return [r.x_min, r.x_max, r.y_min, r.y_max, r.z_min, r.z_max]


def scenario_to_json(s: Scenario) -> dict:
    return {
        "region": _region_to_json(s.region),
        "bs": _point_to_json(s.bs),
        "users": [_point_to_json(u) for u in s.users],
        "obstacles": [_point_to_json(b.min) + _point_to_json(b.max) for b in s.obstacles],
        "grid_spec": [s.grid_spec.n_x, s.grid_spec.n_y, s.grid_spec.n_z],
    }


def scenario_from_json(d: dict) -> Scenario:
    region = Region(*d["region"])
    return Scenario(
        region=region,
        bs=Point3(*d["bs"]),
        users=tuple(Point3(*u) for u in d["users"]),
        obstacles=tuple(
            Box3(Point3(*o[:3]), Point3(*o[3:])) for o in d["obstacles"]
        ),
        grid_spec=GridSpec(*d["grid_spec"]),
    )


def radio_params_to_json(p: RadioParams) -> dict:
    return {
        "wavelength": p.wavelength,
        "g_t": p.g_t,
        "g_r": p.g_r,
        "alpha": p.alpha,
        "p_tx": p.p_tx,
        "noise_power": p.noise_power,
        "gamma_th": p.gamma_th,
        "n_elements": p.n_elements,
    }


def radio_params_from_json(d: dict) -> RadioParams:
    return RadioParams(**d)


def _sample_to_json(sample: LabeledSample, target_mode: str) -> dict:
    return {
        "version": FORMAT_VERSION,
        "scenario": scenario_to_json(sample.scenario),
        "condition": [float(v) for v in sample.condition],
        "target_indices": list(sample.target_plan.indices),
        "target_mode": target_mode,
        "oracle_objective": sample.oracle_objective,
        "mc_seed": sample.mc_seed,
    }


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    n_samples: int
    config: dict
    format_version: int
    digest: str

    def to_json(self) -> dict:
        return {
            "format_version": self.format_version,
            "name": self.name,
            "n_samples": self.n_samples,
            "config": self.config,
            "digest": self.digest,
        }


def manifest_path(data_path: Path) -> Path:
    return Path(data_path).with_suffix(".manifest.json")


def save_dataset(
    path: Path,
    name: str,
    samples: list[LabeledSample],
    config: dict,
    target_mode: str,
) -> DatasetManifest:
    """Write samples as JSONL plus a manifest with a digest of the data file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        json.dumps(_sample_to_json(s, target_mode), separators=(",", ":"), sort_keys=True)
        for s in samples
    ]
    blob = ("\n".join(lines) + "\n" if lines else "").encode("utf-8")
    path.write_bytes(blob)
    manifest = DatasetManifest(
        name=name,
        n_samples=len(samples),
        config=config,
        format_version=FORMAT_VERSION,
        digest="sha256:" + hashlib.sha256(blob).hexdigest(),
    )
    manifest_path(path).write_text(
        json.dumps(manifest.to_json(), separators=(",", ":"), sort_keys=True, indent=None)
        + "\n",
        encoding="utf-8",
    )
    return manifest


def _constraints_from_config(config: dict) -> ConstraintSet | None:
    """Dataset configs carry `constraints.{l_count,d_min}` and the region
    inside `scenario.region`; both are optional for ad-hoc files."""
    c = config.get("constraints")
    region_values = config.get("scenario", {}).get("region")
    if not c or region_values is None:
        return None
    return ConstraintSet(l_count=c["l_count"], d_min=c["d_min"], region=Region(*region_values))


def load_dataset(path: Path) -> tuple[DatasetManifest, list[LabeledSample]]:
    """Read and fully validate a dataset file against its manifest."""
    path = Path(path)
    mpath = manifest_path(path)
    if not path.exists():
        raise DatasetFormatError(f"dataset file not found: {path}")
    if not mpath.exists():
        raise DatasetFormatError(f"manifest not found: {mpath}")
    try:
        mdoc = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"manifest is not valid JSON: {e}") from e
    for key in ("format_version", "name", "n_samples", "config", "digest"):
        if key not in mdoc:
            raise DatasetFormatError(f"manifest missing field {key!r}")
    if mdoc["format_version"] != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported format version {mdoc['format_version']}")
    blob = path.read_bytes()
    digest = "sha256:" + hashlib.sha256(blob).hexdigest()
    if digest != mdoc["digest"]:
        raise DatasetFormatError("dataset digest mismatch: file content does not match manifest")
    manifest = DatasetManifest(
        name=mdoc["name"],
        n_samples=mdoc["n_samples"],
        config=mdoc["config"],
        format_version=mdoc["format_version"],
        digest=mdoc["digest"],
    )
    constraints = _constraints_from_config(manifest.config)
    enc = manifest.config.get("encoding", {})
    max_users = enc.get("max_users", MAX_USERS)
    max_obstacles = enc.get("max_obstacles", MAX_OBSTACLES)
    text = blob.decode("utf-8")
    lines = text.splitlines()
    if len(lines) != manifest.n_samples:
        raise DatasetFormatError(
            f"expected {manifest.n_samples} samples, file has {len(lines)} lines"
        )
    samples: list[LabeledSample] = []
    for lineno, line in enumerate(lines, start=1):
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"line {lineno}: invalid JSON ({e})") from e
        try:
            sample = _sample_from_json(doc, constraints, max_users, max_obstacles)
        except DatasetFormatError as e:
            raise DatasetFormatError(f"line {lineno}: {e}") from e
        samples.append(sample)
    return manifest, samples


def _sample_from_json(
    doc: dict,
    constraints: ConstraintSet | None,
    max_users: int = MAX_USERS,
    max_obstacles: int = MAX_OBSTACLES,
) -> LabeledSample:
    for key in ("version", "scenario", "condition", "target_indices", "target_mode",
                "oracle_objective", "mc_seed"):
        if key not in doc:
            raise DatasetFormatError(f"sample missing field {key!r}")
    if doc["version"] != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported sample version {doc['version']}")
    try:
        scenario = scenario_from_json(doc["scenario"])
    except (KeyError, TypeError, ValueError, ConfigError) as e:
        raise DatasetFormatError(f"bad scenario: {e}") from e
    condition = np.array(doc["condition"], dtype=np.float64)
    expected_len = condition_length(max_users, max_obstacles)
    if condition.shape != (expected_len,):
        raise DatasetFormatError(
            f"condition length {condition.shape} does not match layout ({expected_len},)"
        )
    grid = scenario.grid()
    try:
        plan = DeploymentPlan.from_indices(grid, doc["target_indices"])
    except ValueError as e:
        raise DatasetFormatError(f"bad target indices: {e}") from e
    if constraints is not None and not feasible(plan, constraints, grid):
        raise DatasetFormatError("target plan violates the dataset constraints")
    return LabeledSample(
        scenario=scenario,
        condition=condition,
        target_plan=plan,
        oracle_objective=float(doc["oracle_objective"]),
        mc_seed=int(doc["mc_seed"]),
    )
