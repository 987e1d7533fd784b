import json
import logging
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from omegaconf import OmegaConf

from src.common.errors import InvalidArgumentError, ScenarioError
from src.common.utils import PROJECT_ROOT
from src.data.traffic import TrafficKind, TrafficSpec
from src.env.simulator import Simulator
from src.experiments.harness import (SCENARIO_DIR, MetricGrids, configs_from_cfg, export_traces, grids_from_cfg,
                                     load_configs, log_grid, metrics_from_csv, rates_filename, run_regular,
                                     sweep_sigma, sweep_tau, warmup_from_cfg, with_tau)
from src.experiments.scenario import config_from_dict, load_scenario
from src.models.schedulers import SchedulerKind
from src.models.tbrm import TbrmState

SMALL_GRIDS = MetricGrids.from_ranges((1.0, 2.0, 0.5), (0.5, 1.0, 0.5), (1, 4), warmup=20)


def write(tmp_path: Path, text: str, name: str = "scenario.yaml") -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def scenario1():
    return load_configs(["scenario1"], horizon=60)


def unconstrained():
    users = [{"traffic": "SAT", "rho_g": 0, "rho_M": 400}, {"traffic": "Sine2F", "rho_g": 0, "rho_M": 400},
             {"traffic": "SelfSimilar", "rho_g": 0, "rho_M": 400, "seed": 2}]
    data = {"name": "open", "horizon": 60, "region": {"cmax": 400, "gamma": 0.5}, "users": users}
    return {"open": config_from_dict(data)}


class TestScenarioFiles:
    def test_bundled_scenario1(self):
        config = load_scenario(SCENARIO_DIR / "scenario1.yaml")
        assert config.name == "scenario1" and config.n_users == 5
        assert all(spec.kind is TrafficKind.SAT for spec in config.traffic)
        assert list(config.rho_g / 1e6) == [150, 250, 350, 150, 50]
        assert list(config.rho_M / 1e6) == [250, 350, 400, 350, 100]
        assert (config.tau, config.horizon, config.seed) == (0.05, 12000, 1)
        assert list(config.region.cmax) == [400e6] * 5

    @pytest.mark.parametrize("name", ["scenario1", "scenario2", "scenario3", "scenario4", "scenario5"])
    def test_every_preset_loads(self, name):
        config = load_configs([name])[name]
        assert config.n_users == 5
        assert np.all(config.sigma_g_mult == 5.0) and np.all(config.sigma_M_mult == 5.0)

    def test_default_sigma_is_five_slots_of_rate(self):
        config = load_scenario(SCENARIO_DIR / "scenario1.yaml")
        state = TbrmState.initial(config.constraint, config.tau, config.sigma_g_mult, config.sigma_M_mult)
        assert state.sigma_g == pytest.approx(5 * config.tau * config.rho_g)
        assert state.sigma_M[0] == pytest.approx(5 * config.tau * 250e6)
        assert math.isinf(state.sigma_M[2])

    def test_missing_field_names_field_and_line(self, tmp_path):
        path = write(tmp_path, "region: {cmax: 400, gamma: 0.5}\nusers:\n  - traffic: SAT\n    rho_g: 150\n")
        with pytest.raises(ScenarioError) as info:
            load_scenario(path)
        assert info.value.field == "users[0].rho_M"
        assert info.value.line == 3

    def test_wrong_type_names_line(self, tmp_path):
        path = write(tmp_path, "region: {cmax: 400, gamma: 0.5}\nusers:\n  - traffic: SAT\n"
                               "    rho_g: fast\n    rho_M: 250\n")
        with pytest.raises(ScenarioError) as info:
            load_scenario(path)
        assert info.value.field == "users[0].rho_g"
        assert info.value.line == 4
        assert f"{path}:4" in str(info.value)

    def test_zero_bounds_disable_both(self, caplog):
        with caplog.at_level(logging.WARNING, logger="src.experiments.scenario"):
            config = load_scenario(SCENARIO_DIR / "scenario5.yaml")
        assert "users[4]: bounds [0, 0] read as both bounds disabled" in caplog.text
        assert config.rho_g[4] == 0.0 and math.isinf(config.rho_M[4])
        assert not config.constraint.lower_enabled[4] and not config.constraint.upper_enabled[4]

    def test_guaranteed_above_maximal(self, tmp_path):
        path = write(tmp_path, "region: {cmax: 400, gamma: 0.5}\nusers:\n  - {traffic: SAT, rho_g: 300, rho_M: 200}\n")
        with pytest.raises(ScenarioError) as info:
            load_scenario(path)
        assert info.value.field == "users[0].rho_g" and info.value.line == 3

    def test_unknown_traffic(self, tmp_path):
        path = write(tmp_path, "region: {cmax: 400, gamma: 0.5}\nusers:\n  - {traffic: Poisson, rho_g: 1, rho_M: 2}\n")
        with pytest.raises(ScenarioError) as info:
            load_scenario(path)
        assert info.value.field == "users[0].traffic"

    def test_syntax_error_line(self, tmp_path):
        path = write(tmp_path, "name: broken\ntau: 0.05\nhorizon: 10: 5\n")
        with pytest.raises(ScenarioError) as info:
            load_scenario(path)
        assert info.value.field == "<document>" and info.value.line == 3

    def test_json_mirror(self, tmp_path):
        data = {"tau": 0.1, "horizon": 30, "region": {"cmax": [400, 200], "gamma": -1},
                "users": [{"traffic": "Sine2VS", "rho_g": 10, "rho_M": 100},
                          {"traffic": "Trace", "rho_g": 0, "rho_M": 150, "params": {"name": "alice"}}]}
        config = load_scenario(write(tmp_path, json.dumps(data, indent=2), "mirror.json"))
        assert config.name == "mirror"
        assert list(config.region.cmax) == [400e6, 200e6]
        assert config.tau == 0.1 and config.horizon == 30

    def test_overrides(self):
        config = load_scenario(SCENARIO_DIR / "scenario2.yaml", horizon=50, scheduler="MDV", tbrm_mode="additive")
        assert config.horizon == 50 and config.scheduler is SchedulerKind.MDV
        with pytest.raises(ScenarioError):
            load_scenario(SCENARIO_DIR / "scenario2.yaml", scheduler="RR")

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ScenarioError):
            load_scenario(tmp_path / "nowhere.yaml")


class TestGrids:
    def test_default_grids(self):
        cfg = OmegaConf.load(PROJECT_ROOT / "conf" / "sim" / "config.yaml")
        grids = grids_from_cfg(cfg)
        assert len(grids.x_max) == 19 and grids.x_max[0] == 1.0 and grids.x_max[-1] == 10.0
        assert len(grids.x_min) == 20 and grids.x_min[0] == 0.05 and grids.x_min[-1] == 1.0
        assert grids.windows == tuple(range(1, 41))
        assert grids.warmup == 100

    def test_warmup_overrides(self):
        cfg = OmegaConf.load(PROJECT_ROOT / "conf" / "sim" / "config.yaml")
        cfg.metrics.warmup_time_constants = 2.0
        assert warmup_from_cfg(cfg) == 40
        cfg.metrics.warmup = 20
        assert warmup_from_cfg(cfg) == grids_from_cfg(cfg).warmup == 20

    def test_sigma_grid(self):
        grid = log_grid(0.01, 1e4, 10)
        assert len(grid) == 10
        assert grid[0] == pytest.approx(0.01) and grid[-1] == pytest.approx(1e4)

    def test_configs_from_cfg(self):
        cfg = OmegaConf.load(PROJECT_ROOT / "conf" / "sim" / "config.yaml")
        cfg.sim.scenarios = ["scenario4"]
        cfg.sim.horizon = 50
        configs = configs_from_cfg(cfg)
        assert list(configs) == ["scenario4"]
        assert configs["scenario4"].horizon == 50 and configs["scenario4"].tau == 0.05

    def test_with_tau_keeps_duration(self, scenario1):
        config = with_tau(scenario1["scenario1"], 0.2)
        assert config.tau == 0.2 and config.horizon == 15


def read_all(directory: Path):
    return {p.relative_to(directory): p.read_bytes() for p in sorted(directory.rglob("*.csv"))}


class TestRegular:
    def test_worker_pool_is_deterministic(self, tmp_path, scenario1):
        schedulers = [SchedulerKind.MW, SchedulerKind.MDV]
        run_regular(scenario1, schedulers, SMALL_GRIDS, tmp_path / "one", n_workers=1)
        run_regular(scenario1, schedulers, SMALL_GRIDS, tmp_path / "two", n_workers=2)
        first, second = read_all(tmp_path / "one"), read_all(tmp_path / "two")
        assert len(first) == 4 + 3 * 2 * 2 + 1
        assert first == second

    def test_tbrm_off_matches_unconstrained_tbrm_on(self, tmp_path):
        run_regular(unconstrained(), ["MW", "EXPPF"], SMALL_GRIDS, tmp_path)
        for scheduler in (SchedulerKind.MW, SchedulerKind.EXPPF):
            on = tmp_path / "rates" / rates_filename("open", scheduler, True)
            off = tmp_path / "rates" / rates_filename("open", scheduler, False)
            assert on.read_bytes() == off.read_bytes()

    def test_rate_csv_layout(self, tmp_path, scenario1):
        run_regular(scenario1, ["MD"], SMALL_GRIDS, tmp_path, tbrm_flags=(True,))
        frame = pd.read_csv(tmp_path / "rates" / "rates_scenario1_MD_tbrmon.csv")
        assert list(frame.columns) == ["slot", "user", "assigned_rate_bps", "served_bits", "queue_bits", "hol_s",
                                       "k_g_bits", "k_M_bits", "base_weight", "eff_weight"]
        assert len(frame) == 60 * 5
        assert list(frame.slot[:6]) == [0, 0, 0, 0, 0, 1]
        assert (frame.assigned_rate_bps[:5] == 0).all()

    def test_aggregate_is_mean_of_scheduler_rows(self, tmp_path, scenario1):
        schedulers = ["MW", "MLWDF", "MDU"]
        run_regular(scenario1, schedulers, SMALL_GRIDS, tmp_path)
        assert (tmp_path / "aggregate.csv").read_text(encoding="utf-8").startswith("# mean over")
        aggregate = pd.read_csv(tmp_path / "aggregate.csv", comment="#")
        for (metric, bound), rows in aggregate.groupby(["metric", "bound"]):
            per_scheduler = pd.concat([pd.read_csv(tmp_path / "metrics" / f"{metric}_{bound}_{s}.csv")
                                       for s in schedulers]).dropna(subset=["value"])
            expected = per_scheduler.groupby(["tbrm", "param"])["value"].agg(["mean", "size"])
            lookup = {(int(t), float(p)): (m, s)
                      for (t, p), m, s in zip(expected.index, expected["mean"], expected["size"])}
            for row in rows.itertuples():
                mean, size = lookup[(int(row.tbrm), float(row.param))]
                assert row.value == pytest.approx(mean, rel=1e-12, abs=1e-12)
                assert row.n == size

    def test_metrics_from_saved_rates(self, tmp_path, scenario1):
        run_regular(scenario1, ["MW"], SMALL_GRIDS, tmp_path, tbrm_flags=(True,))
        out = metrics_from_csv(tmp_path / "rates" / "rates_scenario1_MW_tbrmon.csv", scenario1["scenario1"],
                               SMALL_GRIDS, tmp_path / "recomputed.csv")
        recomputed = pd.read_csv(out)
        for metric in ("m1", "m2", "m3"):
            for bound in ("max", "min"):
                regular = pd.read_csv(tmp_path / "metrics" / f"{metric}_{bound}_MW.csv")
                mine = recomputed[(recomputed.metric == metric) & (recomputed.bound == bound)]
                np.testing.assert_array_equal(mine.sort_values(["user", "param"]).value.to_numpy(),
                                              regular.sort_values(["user", "param"]).value.to_numpy())

    def test_saved_rates_must_match_scenario(self, tmp_path, scenario1):
        path = tmp_path / "rates.csv"
        pd.DataFrame({"slot": [0, 0], "user": [0, 1], "assigned_rate_bps": [1.0, 2.0]}).to_csv(path, index=False)
        with pytest.raises(InvalidArgumentError):
            metrics_from_csv(path, scenario1["scenario1"], SMALL_GRIDS, tmp_path / "out.csv")
        pd.DataFrame({"slot": [0], "rate": [1.0]}).to_csv(path, index=False)
        with pytest.raises(InvalidArgumentError):
            metrics_from_csv(path, scenario1["scenario1"], SMALL_GRIDS, tmp_path / "out.csv")

    def test_no_schedulers(self, tmp_path, scenario1):
        with pytest.raises(InvalidArgumentError):
            run_regular(scenario1, [], SMALL_GRIDS, tmp_path)


class TestSweeps:
    def test_sigma_sweep_rows(self, tmp_path, scenario1):
        path = sweep_sigma(scenario1, ["MW", "MD"], log_grid(0.01, 1e4, 10), tmp_path, warmup=20)
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["scheduler", "sigma_mult", "m1_max", "m1_min", "m2_max", "m2_min",
                                       "m3_max", "m3_min"]
        assert frame.groupby("scheduler").size().to_dict() == {"MD": 10, "MW": 10}

    def test_sigma_sweep_rejects_bad_multipliers(self, tmp_path, scenario1):
        with pytest.raises(InvalidArgumentError):
            sweep_sigma(scenario1, ["MW"], [], tmp_path)
        with pytest.raises(InvalidArgumentError):
            sweep_sigma(scenario1, ["MW"], [1.0, 0.0], tmp_path)

    def test_tau_sweep_rows(self, tmp_path, scenario1):
        path = sweep_tau(scenario1, ["MW"], [0.05, 0.1, 0.2, 0.5, 1.0], tmp_path, warmup=0)
        frame = pd.read_csv(path)
        assert list(frame.tau) == [0.05, 0.1, 0.2, 0.5, 1.0]
        with pytest.raises(InvalidArgumentError):
            sweep_tau(scenario1, ["MW"], [], tmp_path)

    def test_base_tau_row_matches_regular_run(self, tmp_path):
        configs = load_configs(["scenario1"], horizon=400)
        sweep = pd.read_csv(sweep_tau(configs, ["MLWDF"], [0.05, 0.1], tmp_path, warmup=0))
        grids = MetricGrids(x_max=(5.0,), x_min=(0.5,), windows=(1,), warmup=0)
        run_regular(configs, ["MLWDF"], grids, tmp_path, tbrm_flags=(True,), write_rates=False)
        row = sweep[sweep.tau == 0.05].iloc[0]
        for column, metric, bound in (("m1_max", "m1", "max"), ("m1_min", "m1", "min"), ("m2_max", "m2", "max"),
                                      ("m3_min", "m3", "min")):
            regular = pd.read_csv(tmp_path / "metrics" / f"{metric}_{bound}_MLWDF.csv").value.dropna()
            assert row[column] == pytest.approx(regular.mean(), rel=1e-12, abs=1e-12)


class TestTraceExport:
    def test_exported_traces_replay_the_same_run(self, tmp_path):
        config = load_configs(["scenario2"], horizon=60)["scenario2"]
        paths = export_traces({"scenario2": config}, tmp_path)
        trace_users = [i for i, spec in enumerate(config.traffic) if TrafficKind(spec.kind) is TrafficKind.TRACE]
        assert len(paths) == len(trace_users) == 2
        assert all(p.parent == tmp_path / "traces" and p.exists() for p in paths)
        by_user = dict(zip(trace_users, paths))
        replayed = [TrafficSpec(TrafficKind.TRACE, params={"path": str(by_user[i])}) if i in by_user else spec
                    for i, spec in enumerate(config.traffic)]
        original = np.stack([r.assigned_rate for r in Simulator(config).records()])
        again = np.stack([r.assigned_rate for r in Simulator(replace(config, traffic=replayed)).records()])
        assert np.array_equal(original, again)

    def test_no_trace_users_writes_nothing(self, tmp_path, scenario1):
        assert export_traces(scenario1, tmp_path) == []
