"""Grid-based RIS deployment: channel simulation, exhaustive oracle, and a
conditional diffusion planner with classifier-free guidance."""

from .channel import (
    RadioParams,
    coverage_probability,
    expected_sum_snr,
    received_amplitude,
    sample_fading,
    snr,
)
from .dataset import (
    LabeledSample,
    ScenarioConfig,
    decode_target,
    encode_condition,
    encode_target,
    generate_scenario,
    label_scenario,
    load_dataset,
    save_dataset,
)
from .diffusion import (
    NoiseSchedule,
    PlannerModel,
    SampleConfig,
    TrainConfig,
    ddim_sample,
    ddpm_sample,
    forward_sample,
    generate_plan,
    guided_epsilon,
    linear_schedule,
    load_planner,
    train_model,
)
from .errors import (
    ConfigError,
    DatasetFormatError,
    InfeasibleError,
    MetricUndefinedError,
    NumericError,
    ResourceLimitError,
    RisplanError,
)
from .evaluation import ExceedReport, evaluate_method, exceed_ratio, generalization_matrix, sweep
from .geometry import Box3, Grid, GridSpec, Point3, Region, Scenario, build_grid, distance, los_indicator, segment_blocked
from .solver import (
    ConstraintSet,
    DeploymentPlan,
    ProblemInstance,
    exhaustive_oracle,
    feasible,
    greedy_baseline,
    plan_objective,
    random_baseline,
)

__version__ = "0.1.0"
