"""The placement problem: feasibility, exhaustive oracle, and non-learned baselines.

Every objective comparison routes through channel.mean_sum_snr /
channel.mean_coverage on amplitudes assembled in ascending grid-index order,
so the enumerated maximum, a re-evaluated single plan, and the baselines all
agree bitwise under common random numbers.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .channel import (
    AmplitudeTables,
    RadioParams,
    build_amplitude_tables,
    mean_coverage,
    mean_sum_snr,
)
from .errors import ConfigError, InfeasibleError, ResourceLimitError
from .geometry import Grid, Point3, Region, Scenario, distance

__all__ = [
    "DeploymentPlan",
    "ConstraintSet",
    "ProblemInstance",
    "feasible",
    "plan_objective",
    "exhaustive_oracle",
    "greedy_baseline",
    "random_baseline",
    "ORACLE_COMBINATION_GUARD",
]

# Exhaustive enumeration refuses instances with more candidate subsets than this.
ORACLE_COMBINATION_GUARD = 10**6

_RANDOM_BASELINE_MAX_REJECTS = 10**5


@dataclass(frozen=True)
class DeploymentPlan:
    """A selection of grid points: sorted indices plus their coordinates.

    The binary selection vector s is exposed as `selection`; its length is
    the grid size the plan was built against.
    """

    m: int
    indices: tuple[int, ...]
    coords: tuple[Point3, ...]

    def __post_init__(self):
        if len(self.indices) != len(self.coords):
            raise ValueError("indices and coords must have equal length")
        if any(not 0 <= i < self.m for i in self.indices):
            raise ValueError("plan index out of grid range")
        if list(self.indices) != sorted(set(self.indices)):
            raise ValueError("plan indices must be sorted and unique")

    @classmethod
    def from_indices(cls, grid: Grid, indices) -> "DeploymentPlan":
        idx = tuple(sorted(int(i) for i in indices))
        return cls(m=grid.m, indices=idx, coords=tuple(grid.points[i] for i in idx))

    @property
    def l(self) -> int:
        return len(self.indices)

    @cached_property
    def selection(self) -> np.ndarray:
        s = np.zeros(self.m, dtype=np.int8)
        s[list(self.indices)] = 1
        s.setflags(write=False)
        return s


@dataclass(frozen=True)
class ConstraintSet:
    """How many RISs to deploy, how far apart, and where."""

    l_count: int
    d_min: float
    region: Region

    def __post_init__(self):
        if self.l_count < 1:
            raise ConfigError("l_count must be >= 1")
        if self.d_min < 0:
            raise ConfigError("d_min must be >= 0")


@dataclass(frozen=True)
class ProblemInstance:
    """One fully-specified optimization problem, Monte-Carlo seed included."""

    scenario: Scenario
    params: RadioParams
    constraints: ConstraintSet
    objective: str = "sum_snr"
    mc_seed: int = 0
    n_mc: int = 256
    gate_cascade: bool = True

    def __post_init__(self):
        if self.objective not in ("sum_snr", "coverage"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.n_mc < 1:
            raise ConfigError("n_mc must be >= 1")

    def grid(self) -> Grid:
        return self.scenario.grid()

    def tables(self, grid_indices) -> AmplitudeTables:
        return build_amplitude_tables(
            self.scenario, self.params, self.n_mc, self.mc_seed, grid_indices, self.gate_cascade
        )

    def reduce(self, amp: np.ndarray):
        if self.objective == "sum_snr":
            return mean_sum_snr(amp, self.params.snr_scale)
        return mean_coverage(amp, self.params.snr_scale, self.params.gamma_th)


def feasible(plan: DeploymentPlan, constraints: ConstraintSet, grid: Grid) -> bool:
    """Cardinality, region membership, and pairwise spacing all satisfied."""
    if plan.m != grid.m:
        raise ValueError(f"plan built for M={plan.m}, grid has M={grid.m}")
    if plan.l != constraints.l_count:
        return False
    if any(not constraints.region.contains(p) for p in plan.coords):
        return False
    for a, b in itertools.combinations(plan.coords, 2):
        if distance(a, b) < constraints.d_min:
            return False
    return True


def plan_objective(instance: ProblemInstance, plan: DeploymentPlan) -> float:
    """The seeded Monte-Carlo objective of one plan."""
    tables = instance.tables(list(plan.indices))
    return float(instance.reduce(tables.plan_amplitudes(plan.indices)))


def _spacing_ok_matrix(grid: Grid, d_min: float) -> np.ndarray:
    """(M, M) boolean: pairwise grid distances satisfy the spacing floor."""
    diff = grid.coords[:, None, :] - grid.coords[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2)) >= d_min


def _feasible_combos(grid: Grid, constraints: ConstraintSet) -> list[tuple[int, ...]]:
    ok = _spacing_ok_matrix(grid, constraints.d_min)
    combos = []
    for combo in itertools.combinations(range(grid.m), constraints.l_count):
        if all(ok[a, b] for a, b in itertools.combinations(combo, 2)):
            combos.append(combo)
    return combos


def _combo_objectives(instance: ProblemInstance, tables: AmplitudeTables, combos) -> np.ndarray:
    """Objective per combo, assembled exactly like AmplitudeTables.plan_amplitudes."""
    out = np.empty(len(combos))
    chunk = 2048
    for s in range(0, len(combos), chunk):
        block = combos[s : s + chunk]
        rows = np.array(block, dtype=np.intp)
        amp = np.broadcast_to(tables.direct, (len(block),) + tables.direct.shape)
        for col in range(rows.shape[1]):
            amp = amp + np.swapaxes(tables.cascade[:, rows[:, col], :], 0, 1)
        out[s : s + chunk] = instance.reduce(amp)
    return out


def exhaustive_oracle(instance: ProblemInstance) -> tuple[DeploymentPlan, float]:
    """Certified argmax of the seeded objective over every feasible selection.

    Ties break toward the lexicographically smallest index set (enumeration
    order), so labeling is reproducible.
    """
    grid = instance.grid()
    l_count = instance.constraints.l_count
    if l_count > grid.m:
        raise InfeasibleError(f"cannot place {l_count} RISs on {grid.m} grid points")
    n_combos = math.comb(grid.m, l_count)
    if n_combos > ORACLE_COMBINATION_GUARD:
        raise ResourceLimitError(
            f"C({grid.m}, {l_count}) = {n_combos} exceeds the enumeration guard "
            f"({ORACLE_COMBINATION_GUARD})"
        )
    combos = _feasible_combos(grid, instance.constraints)
    if not combos:
        raise InfeasibleError("no selection satisfies the spacing constraint")
    tables = instance.tables(range(grid.m))
    values = _combo_objectives(instance, tables, combos)
    best = int(np.argmax(values))  # first max = lexicographically smallest combo
    return DeploymentPlan.from_indices(grid, combos[best]), float(values[best])


def greedy_baseline(instance: ProblemInstance) -> DeploymentPlan:
    """Pick positions one at a time by marginal objective gain.

    Deterministic under the instance seed; ties go to the lowest grid index,
    so a degenerate all-blocked scenario yields the first feasible indices.
    """
    grid = instance.grid()
    constraints = instance.constraints
    if constraints.l_count > grid.m:
        raise InfeasibleError(f"cannot place {constraints.l_count} RISs on {grid.m} grid points")
    ok = _spacing_ok_matrix(grid, constraints.d_min)
    tables = instance.tables(range(grid.m))
    selected: list[int] = []
    amp = tables.direct
    allowed = np.ones(grid.m, dtype=bool)
    for _ in range(constraints.l_count):
        if not np.any(allowed):
            raise InfeasibleError("greedy selection ran out of feasible candidates")
        cand_amp = amp[None, :, :] + np.swapaxes(tables.cascade, 0, 1)
        values = np.asarray(instance.reduce(cand_amp), dtype=np.float64)
        values[~allowed] = -np.inf
        best = int(np.argmax(values))
        selected.append(best)
        amp = amp + tables.cascade[:, best, :]
        allowed &= ok[best]
        allowed[best] = False
    return DeploymentPlan.from_indices(grid, selected)


def random_baseline(instance: ProblemInstance, seed: int) -> DeploymentPlan:
    """Uniformly random feasible selection via rejection sampling."""
    grid = instance.grid()
    constraints = instance.constraints
    if constraints.l_count > grid.m:
        raise InfeasibleError(f"cannot place {constraints.l_count} RISs on {grid.m} grid points")
    ok = _spacing_ok_matrix(grid, constraints.d_min)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 3))))
    for _ in range(_RANDOM_BASELINE_MAX_REJECTS):
        combo = np.sort(rng.choice(grid.m, size=constraints.l_count, replace=False))
        if all(ok[a, b] for a, b in itertools.combinations(combo, 2)):
            return DeploymentPlan.from_indices(grid, combo)
    raise InfeasibleError(
        f"no feasible plan found after {_RANDOM_BASELINE_MAX_REJECTS} rejections"
    )
