import itertools
import json

import numpy as np
import pytest
from scipy import stats

from risplan.channel import RadioParams
from risplan.dataset import (
    LabeledSample,
    ScenarioConfig,
    build_labeled_samples,
    condition_length,
    dataset_name,
    decode_target,
    encode_condition,
    encode_target,
    generate_scenario,
    label_scenario,
    load_dataset,
    manifest_path,
    save_dataset,
)
from risplan.errors import DatasetFormatError, InfeasibleError
from risplan.geometry import GridSpec, Point3, Region, build_grid, distance, los_indicator
from risplan.solver import ConstraintSet, DeploymentPlan, feasible, plan_objective
from risplan.dataset import sample_instance


def test_dataset_name_pluralization():
    assert dataset_name(1, 1) == "1obs_1user"
    assert dataset_name(3, 3) == "3obs_3users"
    assert dataset_name(10, 10) == "10obs_10users"
    assert dataset_name(3, 1) == "3obs_1user"


def test_condition_length_formula():
    assert condition_length(10, 10) == 93
    assert condition_length(2, 1) == 3 * 3 + 6


class TestGenerateScenario:
    def test_deterministic(self, desk_scenario_config):
        a = generate_scenario(desk_scenario_config, 5)
        b = generate_scenario(desk_scenario_config, 5)
        assert a == b

    def test_distinct_indices_differ(self, desk_scenario_config):
        assert generate_scenario(desk_scenario_config, 0) != generate_scenario(desk_scenario_config, 1)

    def test_no_obstacles_means_clear_los(self, desk_scenario_config):
        from dataclasses import replace

        cfg = replace(desk_scenario_config, n_obstacles=0)
        for i in range(20):
            sc = generate_scenario(cfg, i)
            assert all(los_indicator(sc.bs, u, sc.obstacles) == 1 for u in sc.users)

    def test_obstacles_never_contain_bs(self, desk_scenario_config):
        for i in range(50):
            sc = generate_scenario(desk_scenario_config, i)
            assert all(not box.contains(sc.bs) for box in sc.obstacles)

    def test_user_coordinates_uniform(self, desk_scenario_config):
        xs, ys = [], []
        for i in range(3400):
            sc = generate_scenario(desk_scenario_config, i)
            xs.extend(u.x for u in sc.users)
            ys.extend(u.y for u in sc.users)
        assert len(xs) >= 10**4
        r = desk_scenario_config.region
        for vals, lo, hi in ((xs, r.x_min, r.x_max), (ys, r.y_min, r.y_max)):
            u = (np.array(vals) - lo) / (hi - lo)
            assert stats.kstest(u, "uniform").pvalue > 0.01

    def test_random_bs_placement(self, desk_region):
        cfg = ScenarioConfig(region=desk_region, grid_spec=GridSpec(2, 2, 1), bs=None, seed=3)
        sc_a = generate_scenario(cfg, 0)
        sc_b = generate_scenario(cfg, 1)
        assert sc_a.bs != sc_b.bs
        assert desk_region.contains(sc_a.bs)


class TestEncodeCondition:
    def setup_method(self):
        self.region = Region(0, 100, 0, 100, 2, 10)
        self.spec = GridSpec(2, 2, 1)

    def scenario(self, users, obstacles=()):
        from risplan.geometry import Scenario

        return Scenario(region=self.region, bs=Point3(50, 50, 6), users=tuple(users),
                        obstacles=tuple(obstacles), grid_spec=self.spec)

    def test_bs_at_center_is_zero(self):
        x = encode_condition(self.scenario([Point3(1, 1, 3)]))
        assert tuple(x[:3]) == (0.0, 0.0, 0.0)

    def test_user_at_min_corner_is_minus_one(self):
        x = encode_condition(self.scenario([Point3(0, 0, 2)]))
        assert tuple(x[3:6]) == (-1.0, -1.0, -1.0)

    def test_absent_slots_use_sentinel(self):
        x = encode_condition(self.scenario([Point3(1, 1, 3), Point3(2, 2, 3)]), max_users=3)
        assert tuple(x[9:12]) == (-2.0, -2.0, -2.0)
        assert all(v == -2.0 for v in x[12:])  # no obstacles at all

    def test_count_overflow_rejected(self):
        users = [Point3(i, i, 3) for i in range(4)]
        with pytest.raises(ValueError):
            encode_condition(self.scenario(users), max_users=3)

    def test_injective_on_random_scenarios(self, desk_scenario_config):
        seen = {}
        for i in range(200):
            sc = generate_scenario(desk_scenario_config, i)
            key = tuple(np.round(encode_condition(sc) / 1e-9) * 1e-9)
            assert key not in seen
            seen[key] = i


class TestTargetEncoding:
    def setup_method(self):
        self.region = Region(0, 100, 0, 100, 2, 10)
        self.grid = build_grid(self.region, GridSpec(4, 4, 3))
        self.constraints = ConstraintSet(l_count=2, d_min=47.30985333122713, region=self.region)

    def test_coords_min_corner(self):
        grid = build_grid(self.region, GridSpec(2, 2, 2))
        c = ConstraintSet(l_count=1, d_min=0.0, region=self.region)
        plan = DeploymentPlan.from_indices(grid, [0])  # (0, 0, 2) = region minimum
        y = encode_target(plan, grid, "coords")
        assert tuple(y) == (-1.0, -1.0, -1.0)

    def test_multihot_sign_coding(self):
        grid = build_grid(self.region, GridSpec(4, 1, 1))
        plan = DeploymentPlan.from_indices(grid, [0, 3])
        assert tuple(encode_target(plan, grid, "multihot")) == (1.0, -1.0, -1.0, 1.0)

    def test_round_trip_both_modes(self):
        rng = np.random.default_rng(0)
        feasible_pairs = [
            c for c in itertools.combinations(range(self.grid.m), 2)
            if distance(self.grid.points[c[0]], self.grid.points[c[1]]) >= self.constraints.d_min
        ]
        picks = rng.choice(len(feasible_pairs), size=1000, replace=True)
        for k in picks:
            plan = DeploymentPlan.from_indices(self.grid, feasible_pairs[k])
            for mode in ("coords", "multihot"):
                y = encode_target(plan, self.grid, mode)
                assert decode_target(y, self.grid, self.constraints, mode).indices == plan.indices

    def test_multihot_top_l_with_ties_to_lower_index(self):
        grid = build_grid(Region(0, 30, 0, 1, 0, 1), GridSpec(4, 1, 1))
        c = ConstraintSet(l_count=2, d_min=0.0, region=grid.region)
        plan = decode_target(np.array([0.9, 0.1, 0.8, 0.3]), grid, c, "multihot")
        assert plan.indices == (0, 2)
        tied = decode_target(np.array([0.5, 0.5, 0.5, 0.1]), grid, c, "multihot")
        assert tied.indices == (0, 1)

    def test_coords_snap_identity(self):
        c = ConstraintSet(l_count=2, d_min=0.0, region=self.region)
        plan = DeploymentPlan.from_indices(self.grid, [5, 40])
        y = encode_target(plan, self.grid, "coords")
        assert decode_target(y, self.grid, c, "coords").indices == plan.indices

    def test_conflicting_coords_relocate_to_nearest_feasible(self):
        # both triples snap to grid point 0; the repaired second point must be
        # the nearest unselected point that satisfies spacing (oracle: scan all)
        c = self.constraints
        p0 = encode_target(DeploymentPlan.from_indices(self.grid, [0]),
                           build_grid(self.region, GridSpec(4, 4, 3)), "coords")
        y = np.concatenate([p0, p0])
        plan = decode_target(y, self.grid, c, "coords")
        assert plan.indices[0] == 0 or 0 in plan.indices
        other = [i for i in plan.indices if i != 0][0]
        origin = self.grid.points[0]
        candidates = [
            (distance(self.grid.points[i], origin), i)
            for i in range(self.grid.m)
            if i != 0 and distance(self.grid.points[i], origin) >= c.d_min
        ]
        assert other == min(candidates)[1]
        assert feasible(plan, c, self.grid)

    def test_repair_impossible_raises(self):
        grid = build_grid(Region(0, 1, 0, 1, 0, 1), GridSpec(2, 1, 1))
        c = ConstraintSet(l_count=2, d_min=10.0, region=grid.region)
        with pytest.raises(InfeasibleError):
            decode_target(np.array([1.0, 0.5]), grid, c, "multihot")


class TestLabeling:
    def test_label_deterministic(self, desk_scenario_config, desk_params, desk_constraints):
        sc = generate_scenario(desk_scenario_config, 2)
        a = label_scenario(sc, desk_params, desk_constraints, mc_seed=9, n_mc=64)
        b = label_scenario(sc, desk_params, desk_constraints, mc_seed=9, n_mc=64)
        assert a.target_plan.indices == b.target_plan.indices
        assert a.oracle_objective == b.oracle_objective

    def test_oracle_objective_is_reevaluable(self, desk_scenario_config, desk_params,
                                             desk_constraints):
        sc = generate_scenario(desk_scenario_config, 3)
        s = label_scenario(sc, desk_params, desk_constraints, mc_seed=4, n_mc=64)
        inst = sample_instance(s, desk_params, desk_constraints, 64)
        assert plan_objective(inst, s.target_plan) == s.oracle_objective

    def test_dominant_candidate_matches_brute_force(self, desk_params):
        from test_solver import one_clear_candidate_scenario

        sc = one_clear_candidate_scenario()
        c = ConstraintSet(l_count=1, d_min=0.0, region=sc.region)
        s = label_scenario(sc, desk_params, c, mc_seed=0, n_mc=64)
        grid = sc.grid()
        inst = sample_instance(s, desk_params, c, 64)
        brute = [plan_objective(inst, DeploymentPlan.from_indices(grid, [i]))
                 for i in range(grid.m)]
        assert s.target_plan.indices == (int(np.argmax(brute)),)


class TestDatasetIO:
    @pytest.fixture()
    def tiny_dataset(self, tmp_path, desk_scenario_config, desk_params, desk_constraints):
        samples = build_labeled_samples(
            desk_scenario_config, desk_params, desk_constraints, 4, n_mc=32
        )
        config = {
            "radio": {"wavelength": 0.1, "g_t": 1.0, "g_r": 1.0, "alpha": 2.7, "p_tx": 1.0,
                      "noise_power": 1e-11, "gamma_th": 10.0, "n_elements": 64},
            "constraints": {"l_count": 2, "d_min": desk_constraints.d_min},
            "scenario": {"region": [0.0, 100.0, 0.0, 100.0, 2.0, 10.0],
                         "grid_spec": [4, 4, 3], "n_users": 3, "n_obstacles": 3,
                         "bs": [10.0, 50.0, 9.0], "obstacle_size_min": 8.0,
                         "obstacle_size_max": 30.0, "user_height": 1.5, "seed": 0},
            "labeling": {"n_mc": 32, "objective": "sum_snr", "gate_cascade": True},
            "encoding": {"max_users": 10, "max_obstacles": 10, "target_mode": "multihot"},
        }
        path = tmp_path / "tiny.jsonl"
        save_dataset(path, "3obs_3users", samples, config, "multihot")
        return path, samples

    def test_round_trip_identical(self, tiny_dataset):
        path, samples = tiny_dataset
        manifest, loaded = load_dataset(path)
        assert manifest.n_samples == len(samples) == len(loaded)
        for a, b in zip(samples, loaded):
            assert a.scenario == b.scenario
            assert np.array_equal(a.condition, b.condition)
            assert a.target_plan.indices == b.target_plan.indices
            assert a.oracle_objective == b.oracle_objective
            assert a.mc_seed == b.mc_seed

    def test_truncated_file_names_line(self, tiny_dataset):
        path, _ = tiny_dataset
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(DatasetFormatError, match="digest"):
            load_dataset(path)

    def test_corrupted_line_is_reported_with_number(self, tiny_dataset, tmp_path):
        path, _ = tiny_dataset
        lines = path.read_text().splitlines()
        lines[2] = lines[2][:-10]  # break JSON on line 3
        blob = "\n".join(lines) + "\n"
        path.write_text(blob)
        import hashlib

        mdoc = json.loads(manifest_path(path).read_text())
        mdoc["digest"] = "sha256:" + hashlib.sha256(blob.encode()).hexdigest()
        manifest_path(path).write_text(json.dumps(mdoc))
        with pytest.raises(DatasetFormatError, match="line 3"):
            load_dataset(path)

    def test_infeasible_target_rejected(self, tiny_dataset):
        path, _ = tiny_dataset
        lines = path.read_text().splitlines()
        doc = json.loads(lines[0])
        doc["target_indices"] = [0, 1]  # adjacent points violate d_min
        lines[0] = json.dumps(doc, separators=(",", ":"), sort_keys=True)
        blob = "\n".join(lines) + "\n"
        path.write_bytes(blob.encode())
        import hashlib

        mdoc = json.loads(manifest_path(path).read_text())
        mdoc["digest"] = "sha256:" + hashlib.sha256(blob.encode()).hexdigest()
        manifest_path(path).write_text(json.dumps(mdoc))
        with pytest.raises(DatasetFormatError, match="line 1"):
            load_dataset(path)

    def test_missing_manifest(self, tiny_dataset):
        path, _ = tiny_dataset
        manifest_path(path).unlink()
        with pytest.raises(DatasetFormatError, match="manifest"):
            load_dataset(path)

    def test_worker_count_does_not_change_samples(self, desk_scenario_config, desk_params,
                                                  desk_constraints):
        one = build_labeled_samples(desk_scenario_config, desk_params, desk_constraints, 6,
                                    n_mc=32, workers=1)
        two = build_labeled_samples(desk_scenario_config, desk_params, desk_constraints, 6,
                                    n_mc=32, workers=2)
        for a, b in zip(one, two):
            assert a.scenario == b.scenario
            assert a.target_plan.indices == b.target_plan.indices
            assert a.oracle_objective == b.oracle_objective
