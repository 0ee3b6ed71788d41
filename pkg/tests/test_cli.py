import json
from pathlib import Path

import pytest

from posewatch.cli import main

SCENE_SPEC = {
    "video_id": "demo",
    "person_count": 3,
    "duration_frames": 1800,
    "fps": 30.0,
    "noise_std": 0.5,
    "seed": 5,
    "motifs": [
        {"person": 1, "kind": "jump", "onset": 240, "offset": 599},
        {"person": 2, "kind": "head_shake", "onset": 960, "offset": 1319},
    ],
}


def write_scene_spec(path, video_id="demo", seed=5):
    spec = dict(SCENE_SPEC, video_id=video_id, seed=seed)
    path.write_text(json.dumps(spec))
    return path


def run_scene(tmp_path, name="demo", seed=5):
    """synth + track + windows for one scene; returns (tracks, annotations, actors)."""
    scene_dir = tmp_path / name
    spec = write_scene_spec(tmp_path / f"{name}_spec.json", video_id=name, seed=seed)
    assert main(["synth", str(spec), "-o", str(scene_dir)]) == 0
    tracks = scene_dir / "tracks.jsonl"
    assert main(["track", str(scene_dir / "stream.jsonl"), "-o", str(tracks)]) == 0
    return tracks, scene_dir / "annotations.csv", scene_dir / "actors.json"


def merge_annotations(tmp_path, paths):
    out = tmp_path / "annotations.csv"
    rows = []
    header = None
    for p in paths:
        lines = Path(p).read_text().strip().splitlines()
        header = lines[0]
        rows.extend(lines[1:])
    out.write_text("\n".join([header] + rows) + "\n")
    return out


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Full tiny pipeline: 4 scenes -> windows -> train -> artifacts."""
    tmp_path = tmp_path_factory.mktemp("pipe")
    tracks, annos, actors = [], [], []
    for i in range(4):
        t, a, am = run_scene(tmp_path, name=f"sc{i}", seed=10 + i)
        tracks.append(t)
        annos.append(a)
        actors.append(am)
    merged = merge_annotations(tmp_path, annos)
    windows = tmp_path / "windows.json"
    rc = main(
        ["windows", *map(str, tracks), "-a", str(merged), "-o", str(windows),
         "--stride-frames", "120", "--actors", *map(str, actors)]
    )
    assert rc == 0
    run_dir = tmp_path / "run"
    rc = main(
        ["train", str(windows), "-o", str(run_dir), "--variant", "patt", "--folds", "2",
         "--seed", "3", "--max-epochs", "2", "--patience", "2",
         "--config", str(write_model_config(tmp_path))]
    )
    assert rc == 0
    return tmp_path, windows, run_dir


def write_model_config(tmp_path):
    cfg = tmp_path / "model_config.json"
    cfg.write_text(
        json.dumps(
            {"model": {"backbone_channels": [3, 4, 6, 6], "patt_fc": [8, 4], "classifier_fc": [8, 4]}}
        )
    )
    return cfg


class TestPipeline:
    def test_synth_outputs(self, tmp_path):
        tracks, annotations, actors = run_scene(tmp_path)
        scene_dir = tracks.parent
        assert (scene_dir / "stream.jsonl").exists()
        assert (scene_dir / "stream.jsonl.meta.json").exists()
        assert annotations.exists() and actors.exists()
        meta = json.loads((scene_dir / "stream.jsonl.meta.json").read_text())
        assert meta["video_id"] == "demo" and meta["fps"] == 30.0
        assert "inputs" in meta

    def test_full_pipeline_produces_eval_report(self, pipeline, capsys):
        tmp_path, windows, run_dir = pipeline
        assert (run_dir / "fold0.ckpt").exists() and (run_dir / "fold1.ckpt").exists()
        assert (run_dir / "manifest.json").exists()
        assert (run_dir / "model_card.json").exists()
        rc = main(["eval", str(run_dir), str(windows)])
        assert rc == 0
        report = json.loads((run_dir / "eval_report.json").read_text())
        assert report["kind"] == "eval-report"
        assert len(report["per_fold"]) == 2
        out = capsys.readouterr().out
        assert "P-Att" in out and "F1" in out

    def test_run_manifest_contents(self, pipeline):
        _, _, run_dir = pipeline
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["kind"] == "run-manifest"
        assert manifest["config"]["variant"] == "patt"
        assert manifest["seeds"]["per_fold"] == [3, 4]
        assert manifest["model_config_overrides"]["backbone_channels"] == [3, 4, 6, 6]
        assert len(manifest["checkpoints"]) == 2
        assert manifest["fold_plan_sha256"]
        card = json.loads((run_dir / "model_card.json").read_text())
        assert card["variant"] == "patt" and card["parameter_count"] > 0

    def test_phenotype_command(self, pipeline):
        tmp_path, windows, run_dir = pipeline
        out_dir = tmp_path / "ph"
        rc = main(
            ["phenotype", str(run_dir / "fold0.ckpt"), str(windows),
             "-c", "restricted_repetitive", "-k", "1", "--floor", "0.0", "-o", str(out_dir)]
        )
        assert rc == 0
        payload = json.loads((out_dir / "phenotype_restricted_repetitive.json").read_text())
        assert payload["category"] == "restricted_repetitive"
        svg = (out_dir / "phenotype_restricted_repetitive.svg").read_text()
        assert svg.startswith("<svg")

    def test_phenotype_silhouette_sweep(self, pipeline, capsys):
        tmp_path, windows, run_dir = pipeline
        out_dir = tmp_path / "ph_sweep"
        rc = main(
            ["phenotype", str(run_dir / "fold0.ckpt"), str(windows),
             "-c", "restricted_repetitive", "--floor", "0.0", "--sweep-k",
             "--metric", "l2", "-o", str(out_dir)]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "silhouette k=2" in out and "sweep selected k=" in out
        payload = json.loads((out_dir / "phenotype_restricted_repetitive.json").read_text())
        assert payload["silhouette_sweep"]
        assert payload["metric"] == "l2"

    def test_bench_command(self, pipeline, capsys):
        tmp_path, windows, run_dir = pipeline
        rc = main(
            ["bench", str(run_dir / "fold0.ckpt"), str(windows), "--runs", "1",
             "-o", str(tmp_path / "bench.json")]
        )
        assert rc == 0
        stats = json.loads((tmp_path / "bench.json").read_text())
        assert stats["mean_seconds"] > 0 and stats["runs"] == 1


class TestErrors:
    def test_eval_before_train_exits_two(self, tmp_path, capsys):
        missing = tmp_path / "nope"
        rc = main(["eval", str(missing), str(tmp_path / "w.json")])
        assert rc == 2
        err = capsys.readouterr().err
        assert "missing-file" in err and "nope" in err

    def test_missing_scene_spec_exits_two(self, tmp_path):
        assert main(["synth", str(tmp_path / "ghost.json"), "-o", str(tmp_path)]) == 2

    def test_bad_window_config_exits_three(self, tmp_path):
        tracks, annotations, _ = run_scene(tmp_path)
        rc = main(
            ["windows", str(tracks), "-a", str(annotations), "-o", str(tmp_path / "w.json"),
             "--window-seconds", "0.01"]
        )
        assert rc == 3

    def test_unknown_category_exits_three(self, pipeline):
        tmp_path, windows, run_dir = pipeline
        rc = main(
            ["phenotype", str(run_dir / "fold0.ckpt"), str(windows), "-c", "stimming",
             "-o", str(tmp_path / "phx")]
        )
        assert rc == 3

    def test_stale_input_refused_then_forced(self, tmp_path, capsys):
        tracks, annotations, _ = run_scene(tmp_path)
        stream = tracks.parent / "stream.jsonl"
        stream.write_text(stream.read_text() + "\n")
        windows_path = tmp_path / "w.json"
        rc = main(["windows", str(tracks), "-a", str(annotations), "-o", str(windows_path)])
        assert rc == 3
        assert "stale" in capsys.readouterr().err
        rc = main(
            ["windows", str(tracks), "-a", str(annotations), "-o", str(windows_path), "--force",
             "--stride-frames", "120"]
        )
        assert rc == 0


class TestConfigMerging:
    def test_flags_override_config_file(self, tmp_path):
        tracks, annotations, _ = run_scene(tmp_path)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"stride_frames": 60, "window_seconds": 4.0}))
        out = tmp_path / "w.json"
        rc = main(
            ["windows", str(tracks), "-a", str(annotations), "-o", str(out),
             "--config", str(cfg), "--stride-frames", "240"]
        )
        assert rc == 0
        manifest = json.loads(out.read_text())
        assert manifest["config"]["stride_frames"] == 240

    def test_config_file_value_used_without_flag(self, tmp_path):
        tracks, annotations, _ = run_scene(tmp_path)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"stride_frames": 60}))
        out = tmp_path / "w.json"
        rc = main(["windows", str(tracks), "-a", str(annotations), "-o", str(out), "--config", str(cfg)])
        assert rc == 0
        manifest = json.loads(out.read_text())
        assert manifest["config"]["stride_frames"] == 60
