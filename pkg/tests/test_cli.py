import json

import pytest

from flowplan.cli import build_parser, main
from flowplan.simulator import read_dataset

TINY = [
    "--set", "data.episodes=6",
    "--set", "train.epochs=1",
    "--set", "train.batch_size=8",
    "--set", "train.samples_per_episode=1",
]


def _gen(tmp_path, n=6):
    data = tmp_path / "data.jsonl"
    assert main(["gen-data", "--episodes", str(n), "--seed", "9000",
                 "--out", str(data)]) == 0
    return data


class TestGenData:
    def test_writes_requested_count(self, tmp_path, capsys):
        data = _gen(tmp_path, n=5)
        assert len(read_dataset(data)) == 5
        assert "wrote 5 episodes" in capsys.readouterr().out

    def test_manifest_has_dataset_hash(self, tmp_path):
        data = _gen(tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["verb"] == "gen-data"
        assert manifest["dataset"] == str(data)
        assert len(manifest["dataset_sha256"]) == 64
        assert manifest["seed"] == 9000

    def test_deterministic_outputs(self, tmp_path):
        a = _gen(tmp_path / "a")
        b = _gen(tmp_path / "b")
        assert a.read_bytes() == b.read_bytes()


class TestTrainEvaluate:
    def test_pipeline_and_manifests(self, tmp_path, capsys):
        data = _gen(tmp_path)
        train_dir = tmp_path / "train"
        code = main(["train", "--dataset", str(data), "--out", str(train_dir),
                     *TINY])
        assert code == 0
        out = capsys.readouterr().out
        assert "checkpoint:" in out
        manifest = json.loads((train_dir / "manifest.json").read_text())
        assert manifest["verb"] == "train"
        assert manifest["overrides"]["train.epochs"] == 1
        assert manifest["dataset_sha256"]
        assert manifest["config"]["train"]["epochs"] == 1

        eval_dir = tmp_path / "eval"
        code = main(["evaluate", "--checkpoint", str(train_dir / "checkpoint.json"),
                     "--dataset", str(data), "--out", str(eval_dir)])
        assert code == 0
        report = json.loads((eval_dir / "report.json").read_text())
        assert report["flow_invocations"] == 0
        eval_manifest = json.loads((eval_dir / "manifest.json").read_text())
        assert eval_manifest["checkpoint_sha256"]

    def test_missing_checkpoint_is_exit_1(self, tmp_path, capsys):
        code = main(["evaluate", "--checkpoint", str(tmp_path / "nope.json")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_inspect_flow_writes_diagnostics(self, tmp_path):
        data = _gen(tmp_path)
        train_dir = tmp_path / "train"
        main(["train", "--dataset", str(data), "--out", str(train_dir), *TINY])
        out = tmp_path / "flow.jsonl"
        code = main(["inspect-flow",
                     "--checkpoint", str(train_dir / "checkpoint.json"),
                     "--dataset", str(data), "--tick", "1", "--out", str(out)])
        assert code == 0
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert lines and all("velocity_norms" in row for row in lines)


class TestAblateCommand:
    def test_worldmodel_sweep_writes_table(self, tmp_path, capsys):
        out_dir = tmp_path / "ablate"
        code = main(["ablate", "--sweep", "worldmodel", "--seeds", "0",
                     "--out", str(out_dir),
                     "--set", "data.episodes=4",
                     "--set", "train.epochs=1",
                     "--set", "train.samples_per_episode=1"])
        assert code == 0
        assert (out_dir / "ablation.json").exists()
        assert "static" in capsys.readouterr().out
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert manifest["sweep"] == "worldmodel"
        assert manifest["seeds"] == [0]


class TestParser:
    def test_unknown_flag_is_exit_2(self):
        with pytest.raises(SystemExit) as err:
            main(["train", "--bogus"])
        assert err.value.code == 2

    def test_missing_verb_is_exit_2(self):
        with pytest.raises(SystemExit) as err:
            main([])
        assert err.value.code == 2

    @pytest.mark.parametrize("verb", ["gen-data", "train", "evaluate",
                                      "ablate", "inspect-flow"])
    def test_help_per_verb(self, verb, capsys):
        with pytest.raises(SystemExit) as err:
            main([verb, "--help"])
        assert err.value.code == 0
        assert verb in capsys.readouterr().out

    def test_override_flag_documented(self):
        parser = build_parser()
        help_text = parser.format_help()
        assert "flowplan" in help_text
