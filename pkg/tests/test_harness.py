import json

import numpy as np
import pytest

from flowplan.config import RunConfig
from flowplan.harness import (InferenceLeakageError, SWEEPS, build_dataset,
                              dump_flow, dump_selection, evaluate,
                              format_ablation_table, inference_latency,
                              run_ablation)
from flowplan.simulator import ScenarioConfig, generate_episode, split_episodes
from flowplan.trainer import DrivingSystem


def _episodes(n=2, base=5000, name="mixed"):
    return [generate_episode(base + i, ScenarioConfig(name=name))
            for i in range(n)]


def _tiny_config():
    config = RunConfig()
    config.train.epochs = 1
    config.train.batch_size = 8
    config.train.samples_per_episode = 1
    config.data.episodes = 10
    return config


class TestEvaluate:
    def test_report_schema_and_ranges(self, tmp_path):
        system = DrivingSystem(RunConfig())
        report = evaluate(system, _episodes(), out_dir=tmp_path)
        for key in ("n_runs", "l2_at", "l2_avg", "cr_at", "cr_avg",
                    "pdms_subscores", "pdms", "flow_invocations"):
            assert key in report
        assert report["n_runs"] > 0
        assert report["l2_avg"] >= 0
        assert 0.0 <= report["cr_avg"] <= 100.0
        assert 0.0 <= report["pdms"] <= 1.0
        assert report["flow_invocations"] == 0
        assert (tmp_path / "report.json").exists()
        assert (tmp_path / "per_episode.csv").read_text().startswith(
            "episode,tick,l2_avg")

    def test_oracle_expert_is_exact_and_collision_free(self):
        system = DrivingSystem(RunConfig())
        report = evaluate(system, _episodes(3, base=5100), oracle=True)
        assert report["l2_avg"] == 0.0
        assert report["cr_avg"] == 0.0
        assert report["pdms_subscores"]["nc"] == 1.0

    def test_deterministic(self):
        episodes = _episodes()
        a = evaluate(DrivingSystem(RunConfig()), episodes)
        b = evaluate(DrivingSystem(RunConfig()), episodes)
        assert a == b

    def test_world_model_invocation_raises_leakage_error(self):
        system = DrivingSystem(RunConfig())
        episodes = _episodes(1)
        original_infer = system.infer

        def leaky_infer(episode, t):
            z = system.world_latent(episode, t)
            cond = system.world_model.fuse_condition(z, np.zeros((6, 2)))
            system.world_model.integrate_future(z, cond, 1)
            return original_infer(episode, t)

        system.infer = leaky_infer
        with pytest.raises(InferenceLeakageError):
            evaluate(system, episodes)

    def test_accepts_checkpoint_path(self, tmp_path):
        from flowplan.trainer import train

        config = _tiny_config()
        config.train.epochs = 0
        ckpt, _ = train(config, _episodes(), out_dir=tmp_path)
        report = evaluate(ckpt, _episodes(1))
        assert report["n_runs"] > 0


def test_inference_latency_positive_and_stable():
    system = DrivingSystem(RunConfig())
    latency = inference_latency(system, _episodes(1), repeats=2)
    assert 0.0 < latency < 5.0


class TestBuildDataset:
    def test_requested_count_and_determinism(self):
        config = _tiny_config()
        a = build_dataset(config)
        b = build_dataset(config)
        assert len(a) == config.data.episodes
        assert [e.seed for e in a] == [e.seed for e in b]

    def test_split_respects_fractions(self):
        config = _tiny_config()
        tr, val, test = split_episodes(build_dataset(config), config.data.split)
        assert len(tr) + len(val) + len(test) == config.data.episodes
        assert len(tr) >= len(test) >= len(val)


class TestAblation:
    def test_sweep_catalog(self):
        assert set(SWEEPS) == {"steps", "selection", "worldmodel"}
        assert set(SWEEPS["steps"]) == {"K1", "K3", "K5", "K10"}
        assert set(SWEEPS["selection"]) == {"none", "l2_only", "recons",
                                            "flow_stability"}
        assert set(SWEEPS["worldmodel"]) == {"static", "flow"}

    def test_custom_sweep_report_schema(self, tmp_path):
        config = _tiny_config()
        config.data.episodes = 4
        sweep = {"a": {"flow.K": 1}, "b": {"flow.K": 2}}
        report = run_ablation(config, sweep, seeds=(0, 1), out_dir=tmp_path)
        assert report["seeds"] == [0, 1]
        assert set(report["variants"]) == {"a", "b"}
        for res in report["variants"].values():
            assert len(res["per_seed"]) == 2
            assert res["errors"] == []
            for key in ("l2_avg", "cr_avg", "pdms"):
                assert set(res["summary"][key]) == {"mean", "std"}
        assert json.loads((tmp_path / "ablation.json").read_text()) == report
        table = (tmp_path / "ablation.txt").read_text()
        assert "±" in table and "a" in table
        csv_text = (tmp_path / "ablation.csv").read_text()
        assert csv_text.startswith("variant,seed,l2_avg,cr_avg,pdms")

    def test_shared_seeds_share_datasets(self, tmp_path):
        # both variants at seed 0 must see identical episode seeds; verified
        # indirectly: a variant changing only flow.K reuses base_seed + 0
        config = _tiny_config()
        config.data.episodes = 3
        from flowplan.harness import _variant_config

        a = _variant_config(config, {"flow.K": 1})
        b = _variant_config(config, {"flow.K": 10})
        a.data.base_seed = b.data.base_seed = config.data.base_seed
        ep_a = build_dataset(a)
        ep_b = build_dataset(b)
        assert [e.seed for e in ep_a] == [e.seed for e in ep_b]

    def test_variant_failure_is_recorded_not_raised(self, tmp_path):
        config = _tiny_config()
        config.data.episodes = 4
        sweep = {"bad": {"flow.K": -3}}
        report = run_ablation(config, sweep, seeds=(0,), out_dir=tmp_path)
        res = report["variants"]["bad"]
        assert res["per_seed"] == []
        assert len(res["errors"]) == 1
        table = format_ablation_table(report)
        assert "FAILED" in table


class TestDumps:
    def test_flow_dump_lines(self, tmp_path):
        config = RunConfig()
        system = DrivingSystem(config)
        episode = _episodes(1)[0]
        path = tmp_path / "flow.jsonl"
        dump_flow(system, episode, 0, config, path)
        lines = [json.loads(l) for l in path.read_text().splitlines()]
        assert len(lines) == config.model.n_modes
        for row in lines:
            assert len(row["velocity_norms"]) == config.flow.K
            assert len(row["consecutive_angles"]) == config.flow.K - 1
            assert row["stability"] >= 0.0

    def test_selection_dump_lines(self, tmp_path):
        config = RunConfig()
        system = DrivingSystem(config)
        path = tmp_path / "selection.jsonl"
        dump_selection(system, _episodes(1), config, path, max_samples=4)
        lines = [json.loads(l) for l in path.read_text().splitlines()]
        assert len(lines) == 4
        for row in lines:
            assert 0 <= row["n_star"] < config.model.n_modes
            criteria = [m["criterion"] for m in row["modes"]]
            assert row["n_star"] == int(np.argmin(criteria))
