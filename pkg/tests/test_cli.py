import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from wayforge.cli import main


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Tiny record -> augment -> train -> eval pipeline shared by the tests."""
    root = tmp_path_factory.mktemp("cliws")
    runner = CliRunner()

    def run(*args):
        result = runner.invoke(main, ["--workspace", str(root), *args], catch_exceptions=False)
        return result

    r = run("init")
    assert r.exit_code == 0

    r = run("record", "--task", "bottle_collecting", "--n", "2", "--seed", "3",
            "--out", str(root / "demos/tiny"))
    assert r.exit_code == 0, r.output

    r = run("augment", "--demos", str(root / "demos/tiny"), "--count", "120",
            "--seed", "5", "--out", str(root / "datasets/tiny"))
    assert r.exit_code == 0, r.output

    r = run("train", "--data", str(root / "datasets/tiny"), "--arch", "gru",
            "--epochs", "3", "--seed", "1", "--out", str(root / "checkpoints/tiny.ckpt"))
    assert r.exit_code == 0, r.output
    return root, run


class TestPipeline:
    def test_artifacts_exist(self, pipeline):
        root, _ = pipeline
        assert (root / "tasks/bottle_collecting.json").exists()
        assert (root / "datasets/tiny/manifest.json").exists()
        assert (root / "checkpoints/tiny.ckpt").exists()

    def test_record_deterministic(self, pipeline):
        root, run = pipeline
        r = run("record", "--task", "bottle_collecting", "--n", "2", "--seed", "3",
                "--out", str(root / "demos/tiny2"))
        assert r.exit_code == 0
        a = (root / "demos/tiny/demo-0000.jsonl").read_bytes()
        b = (root / "demos/tiny2/demo-0000.jsonl").read_bytes()
        assert a == b

    def test_eval_writes_report(self, pipeline):
        root, run = pipeline
        out = root / "reports/tiny.json"
        r = run("eval", "--task", "bottle_collecting", "--checkpoint",
                str(root / "checkpoints/tiny.ckpt"), "--n", "3", "--seed", "2",
                "--out", str(out))
        assert r.exit_code == 0, r.output
        rep = json.loads(out.read_text())
        assert rep["episodes"] == 3
        assert rep["success_rate"] == rep["successes"] / 3

    def test_eval_deterministic(self, pipeline):
        root, run = pipeline
        outs = []
        for name in ("r1.json", "r2.json"):
            out = root / "reports" / name
            r = run("eval", "--task", "bottle_collecting", "--checkpoint",
                    str(root / "checkpoints/tiny.ckpt"), "--n", "3", "--seed", "2",
                    "--out", str(out))
            assert r.exit_code == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_rollout_and_export(self, pipeline):
        root, run = pipeline
        ep = root / "episodes/cli-roll.jsonl"
        run("rollout", "--task", "bottle_collecting", "--checkpoint",
            str(root / "checkpoints/tiny.ckpt"), "--seed", "4", "--out", str(ep))
        assert ep.exists()
        demo = root / "demos/tiny/demo-0000.jsonl"
        out = root / "export.csv"
        r = run("export", "--episode", str(demo), "--checkpoint",
                str(root / "checkpoints/tiny.ckpt"), "--format", "csv", "--out", str(out))
        assert r.exit_code == 0, r.output
        lines = out.read_text().splitlines()
        header = lines[0].split(",")
        assert {"t", "x", "y", "z", "pred_x", "pred_y", "pred_z"} <= set(header)
        assert len(lines) > 100

    def test_mix_counts(self, pipeline):
        root, run = pipeline
        r = run("mix", "--a", str(root / "datasets/tiny"), "--b", str(root / "datasets/tiny"),
                "--ratio-a", "0.7", "--n", "100", "--seed", "1",
                "--out", str(root / "datasets/mixed"))
        assert r.exit_code == 0, r.output
        manifest = json.loads((root / "datasets/mixed/manifest.json").read_text())
        assert manifest["by_source"] == {"a": 70, "b": 30}

    def test_error_exits_nonzero(self, pipeline):
        root, _ = pipeline
        runner = CliRunner()
        r = runner.invoke(main, ["--workspace", str(root), "eval", "--task", "bottle_collecting",
                                 "--checkpoint", str(root / "nope.ckpt"), "--n", "1"])
        assert r.exit_code != 0
