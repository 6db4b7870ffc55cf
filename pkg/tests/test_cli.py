import json
import subprocess
import sys

import pytest

from nbvsim.cli import main

FAST_CONFIG = {
    "env": {
        "intrinsics": {"width": 32, "height": 32},
    }
}


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenes")
    rc = main(["gen-scenes", "--count", "2", "--seed", "0",
               "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def fast_config_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "fast.json"
    p.write_text(json.dumps(FAST_CONFIG))
    return p


class TestGenScenes:
    def test_files_and_manifest(self, scene_dir):
        manifest = json.loads((scene_dir / "scenes.json").read_text())
        assert len(manifest["scenes"]) == 2
        for entry in manifest["scenes"]:
            assert (scene_dir / entry["mesh"]).is_file()


class TestRun:
    def test_smoke_and_determinism(self, scene_dir, fast_config_path, tmp_path):
        args = ["run", "--scenes", str(scene_dir / "scenes.json"),
                "--policy", "uniform-hemisphere", "--views", "3",
                "--seeds", "0,1", "--config", str(fast_config_path),
                "--gt-samples", "20000", "--trajectories", "--ply"]
        out1 = tmp_path / "out1"
        out2 = tmp_path / "out2"
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        for name in ("summary.csv", "results.csv", "summary.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        results = (out1 / "results.csv").read_text().splitlines()
        assert results[0] == "scene,policy,views,auc,final_cr,chamfer_cm,reason"
        assert len(results) == 1 + 2 * 2  # 2 scenes x 2 seeds
        assert len(list((out1 / "trajectories").glob("*.jsonl"))) == 4
        assert len(list((out1 / "clouds").glob("*.ply"))) == 4
        summary = json.loads((out1 / "summary.json").read_text())
        assert len(summary["policies"]) == 1

    def test_missing_manifest_fails_with_message(self, tmp_path, capsys):
        rc = main(["run", "--scenes", str(tmp_path / "nope.json"),
                   "--policy", "random", "--views", "2",
                   "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "nope.json" in capsys.readouterr().err

    def test_missing_mesh_fails_with_filename(self, tmp_path, capsys):
        manifest = tmp_path / "scenes.json"
        manifest.write_text(json.dumps(
            {"scenes": [{"id": "x", "mesh": "missing.obj"}]}))
        rc = main(["run", "--scenes", str(manifest), "--policy", "random",
                   "--views", "2", "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "missing.obj" in capsys.readouterr().err


class TestReplay:
    def test_replay_reproduces_metrics(self, scene_dir, fast_config_path,
                                       tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--scenes", str(scene_dir / "scenes.json"),
                     "--policy", "random", "--views", "4", "--seeds", "0",
                     "--config", str(fast_config_path),
                     "--gt-samples", "20000",
                     "--trajectories", "--out", str(out)]) == 0
        traj = next((out / "trajectories").glob("house_000_*.jsonl"))
        rc = main(["replay", "--trajectory", str(traj),
                   "--scenes", str(scene_dir / "scenes.json"),
                   "--scene", "house_000", "--config", str(fast_config_path),
                   "--gt-samples", "20000"])
        assert rc == 0

    def test_replay_missing_scene(self, scene_dir, tmp_path, capsys):
        traj = tmp_path / "t.jsonl"
        traj.write_text(json.dumps({"step": 0, "pose": [0, 0, 5, 0, 0],
                                    "reward": None, "cr": 0.0}) + "\n")
        rc = main(["replay", "--trajectory", str(traj),
                   "--scenes", str(scene_dir / "scenes.json"),
                   "--scene", "nope"])
        assert rc == 2


class TestServeCli:
    def test_bad_bind_fails(self, scene_dir, capsys):
        rc = main(["serve", "--scenes", str(scene_dir / "scenes.json"),
                   "--bind", "256.256.256.256:1", "--gt-samples", "5000"])
        assert rc == 2

    def test_stdio_session(self, scene_dir, fast_config_path):
        script = "\n".join([
            json.dumps({"type": "hello", "want_frames": False}),
            json.dumps({"type": "reset", "scene": "house_000", "seed": 0}),
            json.dumps({"type": "step", "action": [8.0, 0.0, 4.0, -0.2, 3.0]}),
            json.dumps({"type": "close"}),
        ]) + "\n"
        proc = subprocess.run(
            [sys.executable, "-m", "nbvsim.cli", "serve", "--stdio",
             "--scenes", str(scene_dir / "scenes.json"),
             "--config", str(fast_config_path), "--gt-samples", "10000"],
            input=script, capture_output=True, text=True, timeout=180)
        assert proc.returncode == 0, proc.stderr
        replies = [json.loads(line) for line in proc.stdout.splitlines()]
        assert [r["type"] for r in replies] == \
            ["hello", "reset_ok", "step_result", "close"]