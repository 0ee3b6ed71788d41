"""Command-line pipeline for behavior-episode detection in pose streams.

Stages are separate idempotent subcommands so every intermediate artifact is
inspectable::

    posewatch synth scene.json -o data/
    posewatch track data/stream.jsonl -o data/tracks.jsonl
    posewatch windows data/tracks.jsonl -a data/annotations.csv -o data/windows.json
    posewatch train data/windows.json -o run/ --variant patt
    posewatch eval run/ data/windows.json
    posewatch phenotype run/fold0.ckpt data/windows.json -c restricted_repetitive -o run/
    posewatch bench run/fold0.ckpt data/windows.json

Exit codes: 0 success, 2 missing file, 3 configuration/format error,
4 numeric fault. All randomness of a command flows from its single --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import model as mdl
from . import phenotypes as ph
from . import pipeline as pl
from . import train_eval as te
from .artifacts import (
    file_sha256,
    input_records,
    read_json_artifact,
    read_sidecar,
    verify_inputs,
    write_json_artifact,
    write_sidecar,
)
from .autodiff import NumericFault
from .core_types import (
    BehaviorCategory,
    ConfigError,
    FormatError,
    read_annotations,
    read_pose_stream,
    write_annotations,
    write_pose_stream,
)
from .synth import SynthSceneSpec, generate_synthetic_scene, write_actor_map
from .tracking import assemble_tracks, suggest_gate, write_tracks
from .windows import WindowConfig, plan_folds

EXIT_OK = 0
EXIT_MISSING_FILE = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


def _require(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _load_file_config(args) -> dict:
    cfg_path = getattr(args, "config", None)
    if not cfg_path:
        return {}
    with open(_require(cfg_path, "config file"), "r", encoding="utf-8") as fh:
        rec = json.load(fh)
    if not isinstance(rec, dict):
        raise ConfigError(f"config file {cfg_path} must hold a JSON object")
    return rec


def _resolve(args, defaults: dict) -> dict:
    """Merge settings: built-in defaults < config file < explicit flags."""
    merged = dict(defaults)
    file_cfg = _load_file_config(args)
    for k, v in file_cfg.items():
        if k in merged:
            merged[k] = v
    for k in merged:
        v = getattr(args, k, None)
        if v is not None:
            merged[k] = v
    return merged


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    with open(_require(args.spec, "scene spec"), "r", encoding="utf-8") as fh:
        spec = SynthSceneSpec.from_json(json.load(fh))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = generate_synthetic_scene(spec)

    stream = out / "stream.jsonl"
    write_pose_stream(scene.frames, stream)
    write_sidecar(stream, {"video_id": spec.video_id, "fps": spec.fps}, {"scene_spec": args.spec})
    write_annotations(scene.episodes, out / "annotations.csv")
    write_actor_map(scene, spec.video_id, out / "actors.json")

    positives = sum(ep.offset_frame - ep.onset_frame + 1 for ep in scene.episodes)
    print(
        f"synth: {spec.video_id}: {len(scene.frames)} frames, {spec.person_count} persons, "
        f"{len(scene.episodes)} episodes ({positives} annotated frames) -> {out}"
    )
    return EXIT_OK


# ---------------------------------------------------------------- track

def cmd_track(args) -> int:
    defaults = {"gate": None, "fps": None}
    cfg = _resolve(args, defaults)
    stream_path = _require(args.stream, "pose stream")
    meta = read_sidecar(stream_path)
    verify_inputs(Path(str(stream_path) + ".meta.json"), meta.get("inputs", {}), force=args.force)

    frames = read_pose_stream(stream_path)
    if cfg["fps"] is not None:
        fps = float(cfg["fps"])
    else:
        fps = float(meta.get("fps", 30.0))
    video_id = str(meta.get("video_id", stream_path.stem))
    gate = float(cfg["gate"]) if cfg["gate"] is not None else suggest_gate(frames)

    tracks = assemble_tracks(frames, fps=fps, gate=gate)
    out = Path(args.out)
    write_tracks(tracks, out)
    write_sidecar(
        out,
        {"video_id": video_id, "fps": fps, "gate": gate, "track_count": len(tracks)},
        {"stream": stream_path},
    )
    print(f"track: {video_id}: {len(frames)} frames -> {len(tracks)} tracks (gate {gate:.2f}) -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- windows

WINDOW_DEFAULTS = {
    "task": "detect",
    "window_seconds": 4.0,
    "stride_frames": 30,
    "horizon_seconds": 180.0,
    "min_coverage": 0.25,
}


def cmd_windows(args) -> int:
    cfg = _resolve(args, WINDOW_DEFAULTS)
    annotations_path = _require(args.annotations, "annotations file")
    episodes = read_annotations(annotations_path)

    sources: list[pl.VideoSource] = []
    actor_paths = list(args.actors or [])
    for track_path in args.tracks:
        track_path = _require(track_path, "track file")
        meta = read_sidecar(track_path)
        verify_inputs(
            Path(str(track_path) + ".meta.json"), meta.get("inputs", {}), force=args.force
        )
        if "video_id" not in meta or "fps" not in meta:
            raise ConfigError(
                f"track file {track_path} has no metadata sidecar with video_id/fps; "
                "rerun the track stage"
            )
        sources.append(
            pl.VideoSource(
                video_id=str(meta["video_id"]),
                fps=float(meta["fps"]),
                tracks_path=track_path,
            )
        )
    for actors in actor_paths:
        actors = _require(actors, "actor map")
        rec = read_json_artifact(actors)
        vid = str(rec.get("video_id", ""))
        matched = [s for s in sources if s.video_id == vid]
        if not matched:
            raise ConfigError(f"actor map {actors} names video {vid!r} not among the track files")
        matched[0].actors_path = actors

    wcfg = WindowConfig(
        window_seconds=float(cfg["window_seconds"]),
        stride_frames=int(cfg["stride_frames"]),
        task=str(cfg["task"]),
        horizon_seconds=float(cfg["horizon_seconds"]),
        min_coverage=float(cfg["min_coverage"]),
    )
    windows, dropped = pl.build_windows(sources, episodes, wcfg)
    if not windows:
        raise ConfigError("no windows produced; check track coverage and stride")
    pl.write_windows_manifest(args.out, windows, dropped, wcfg, sources, annotations_path)
    positives = sum(1 for w in windows if w.label)
    print(
        f"windows: {len(windows)} windows ({positives} positive) from {len(sources)} video(s), "
        f"dropped {dropped['no_tracks']} empty / {dropped['horizon']} out-of-horizon -> {args.out}"
    )
    return EXIT_OK


# ---------------------------------------------------------------- train

TRAIN_DEFAULTS = {
    "variant": "patt",
    "folds": 5,
    "seed": 0,
    "lr": 1e-3,
    "batch": 16,
    "patience": 5,
    "max_epochs": 200,
    "positive_weight": 1.0,
    "jobs": 1,
}

_FOLD_CTX: dict = {}


def _train_one_fold(fold: int) -> tuple[int, list[dict], int, bool]:
    ctx = _FOLD_CTX
    if ctx.get("jobs", 1) > 1:
        # parallel folds: keep each worker's BLAS single-threaded if possible
        try:
            from threadpoolctl import threadpool_limits

            threadpool_limits(limits=1)
        except ImportError:
            pass
    train_cfg = te.TrainConfig(
        lr=ctx["lr"],
        batch_size=ctx["batch"],
        max_epochs=ctx["max_epochs"],
        patience=ctx["patience"],
        seed=ctx["seed"] + fold,
        positive_weight=ctx["positive_weight"],
    )
    result = te.train_fold(ctx["windows"], ctx["plan"].split(fold), ctx["model_cfg"], train_cfg)
    mdl.save_checkpoint(
        result.params,
        ctx["model_cfg"],
        seed=train_cfg.seed,
        path=ctx["out"] / f"fold{fold}.ckpt",
        manifest_hash=ctx["manifest_hash"],
    )
    return fold, [asdict(e) for e in result.log], result.best_epoch, result.stopped_early


def cmd_train(args) -> int:
    cfg = _resolve(args, TRAIN_DEFAULTS)
    file_cfg = _load_file_config(args)
    manifest_path = _require(args.windows, "windows manifest")
    windows, _ = pl.load_windows_manifest(manifest_path, force=args.force)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    model_overrides = dict(file_cfg.get("model", {}))
    model_cfg = mdl.ModelConfig.from_json(
        {
            "variant": mdl.parse_variant(str(cfg["variant"])),
            "frames": windows[0].frames,
            **model_overrides,
        }
    )
    plan = plan_folds(windows, fold_count=int(cfg["folds"]), seed=int(cfg["seed"]))
    pl.write_fold_plan(out / "fold_plan.json", plan, manifest_path)
    manifest_hash = file_sha256(manifest_path)

    jobs = max(1, int(cfg["jobs"]))
    _FOLD_CTX.update(
        windows=windows,
        plan=plan,
        model_cfg=model_cfg,
        out=out,
        manifest_hash=manifest_hash,
        lr=float(cfg["lr"]),
        batch=int(cfg["batch"]),
        max_epochs=int(cfg["max_epochs"]),
        patience=int(cfg["patience"]),
        seed=int(cfg["seed"]),
        positive_weight=float(cfg["positive_weight"]),
        jobs=jobs,
    )
    if jobs > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(processes=min(jobs, plan.fold_count)) as pool:
            results = pool.map(_train_one_fold, range(plan.fold_count))
    else:
        results = [_train_one_fold(f) for f in range(plan.fold_count)]

    logs = {}
    for fold, log, best_epoch, stopped in sorted(results):
        logs[str(fold)] = {"epochs": log, "best_epoch": best_epoch, "stopped_early": stopped}
        print(
            f"train: fold {fold}: {len(log)} epoch(s), best epoch {best_epoch}, "
            f"val loss {min(e['val_loss'] for e in log):.6f}"
        )
    write_json_artifact(out / "training_log.json", logs)

    sample = mdl.init_params(model_cfg, seed=int(cfg["seed"]))
    mdl.write_model_card(out / "model_card.json", model_cfg, int(cfg["seed"]), sample, manifest_hash)
    run_manifest = {
        "kind": "run-manifest",
        "command": "train",
        "config": {k: cfg[k] for k in sorted(cfg)},
        "model_config": model_cfg.to_json(),
        "model_config_overrides": model_cfg.overrides(),
        "seeds": {"base": int(cfg["seed"]), "per_fold": [int(cfg["seed"]) + f for f in range(plan.fold_count)]},
        "fold_plan": "fold_plan.json",
        "fold_plan_sha256": file_sha256(out / "fold_plan.json"),
        "checkpoints": [
            {"path": f"fold{f}.ckpt", "sha256": file_sha256(out / f"fold{f}.ckpt")}
            for f in range(plan.fold_count)
        ],
        "parameter_count": mdl.param_count(sample),
        "inputs": input_records(out / "manifest.json", {"windows": manifest_path}),
    }
    write_json_artifact(out / "manifest.json", run_manifest)
    print(f"train: {plan.fold_count} fold(s) of {model_cfg.variant} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    defaults = {"threshold": 0.5, "bootstrap": False, "bootstrap_seed": 0}
    cfg = _resolve(args, defaults)
    run_dir = Path(args.run)
    manifest_path = run_dir / "manifest.json" if run_dir.is_dir() else run_dir
    _require(manifest_path, "run manifest (train first)")
    run = read_json_artifact(manifest_path)
    run_dir = manifest_path.parent
    verify_inputs(manifest_path, run.get("inputs", {}), force=args.force)

    windows, _ = pl.load_windows_manifest(_require(args.windows, "windows manifest"), force=args.force)
    plan = pl.load_fold_plan(run_dir / run["fold_plan"], force=args.force)
    model_cfg = mdl.ModelConfig.from_json(run["model_config"])

    fold_params = []
    for rec in run["checkpoints"]:
        ckpt = _require(run_dir / rec["path"], "checkpoint")
        if not args.force and file_sha256(ckpt) != rec["sha256"]:
            raise ConfigError(f"checkpoint {ckpt} does not match the run manifest (use --force to override)")
        params, ckpt_cfg, _ = mdl.load_checkpoint(ckpt)
        if ckpt_cfg.variant != model_cfg.variant:
            raise ConfigError(f"checkpoint {ckpt} holds variant {ckpt_cfg.variant}, manifest says {model_cfg.variant}")
        fold_params.append(params)

    report = te.evaluate_cv(
        fold_params,
        model_cfg,
        windows,
        plan,
        threshold=float(cfg["threshold"]),
        with_bootstrap=bool(cfg["bootstrap"]),
        bootstrap_seed=int(cfg["bootstrap_seed"]),
    )
    out = Path(args.out) if args.out else run_dir / "eval_report.json"
    payload = report.to_json()
    payload["kind"] = "eval-report"
    payload["inputs"] = input_records(out, {"windows": args.windows, "run": manifest_path})
    write_json_artifact(out, payload)

    print(te.render_results_table([report]))
    for fold, m in enumerate(report.per_fold):
        flag = " (degenerate)" if m.degenerate else ""
        print(
            f"eval: fold {fold}: P {m.precision:.3f} R {m.recall:.3f} F1 {m.f1:.3f} "
            f"[tp {m.tp} fp {m.fp} tn {m.tn} fn {m.fn}]{flag}"
        )
    line = f"eval: F1 {report.f1_mean:.4f} +/- {report.f1_ci95:.4f} ({report.ci_method})"
    if report.bootstrap_ci:
        line += f"; bootstrap 95% CI [{report.bootstrap_ci[0]:.4f}, {report.bootstrap_ci[1]:.4f}]"
    print(line + f" -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- phenotype

def cmd_phenotype(args) -> int:
    defaults = {"k": 5, "floor": 0.8, "seed": 0, "metric": "l2"}
    cfg = _resolve(args, defaults)
    params, model_cfg, _ = mdl.load_checkpoint(_require(args.checkpoint, "checkpoint"))
    windows, _ = pl.load_windows_manifest(_require(args.windows, "windows manifest"), force=args.force)
    category = BehaviorCategory.parse(args.category)

    k = int(cfg["k"])
    sweep_scores = None
    if args.sweep_k:
        qualifying = [w for w in windows if w.label and category in w.categories]
        feats = ph.collect_attended_features(
            params, model_cfg, qualifying, confidence_floor=float(cfg["floor"])
        )
        sweep_scores = ph.silhouette_sweep(
            [f.feature for f in feats], seed=int(cfg["seed"]), metric=str(cfg["metric"])
        )
        if not sweep_scores:
            raise ConfigError("too few qualifying windows for a silhouette sweep over k in [2, 10]")
        k = max(sweep_scores, key=sweep_scores.get)
        for kk in sorted(sweep_scores):
            print(f"phenotype: silhouette k={kk}: {sweep_scores[kk]:.4f}")
        print(f"phenotype: sweep selected k={k}")

    result = ph.extract_phenotype(
        params,
        model_cfg,
        windows,
        category,
        k=k,
        confidence_floor=float(cfg["floor"]),
        seed=int(cfg["seed"]),
        metric=str(cfg["metric"]),
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"phenotype_{category.value}.json"
    payload = result.to_json()
    payload["kind"] = "phenotype"
    payload["metric"] = str(cfg["metric"])
    if sweep_scores is not None:
        payload["silhouette_sweep"] = {str(kk): v for kk, v in sweep_scores.items()}
    payload["inputs"] = input_records(json_path, {"windows": args.windows, "checkpoint": args.checkpoint})
    write_json_artifact(json_path, payload)

    svg_path = out_dir / f"phenotype_{category.value}.svg"
    rep = windows[result.representative_window_index]
    svg_path.write_text(ph.phenotype_svg(rep, result), encoding="utf-8")

    caveat = " [caveat: absence-driven category; attention covers present persons only]" if result.absence_caveat else ""
    print(
        f"phenotype: {category.value}: representative {result.representative_video_id}"
        f"@{result.representative_end_frame} track {result.representative_track_id} "
        f"({result.clustered_window_count} windows clustered) -> {json_path}{caveat}"
    )
    return EXIT_OK


# ---------------------------------------------------------------- bench

def cmd_bench(args) -> int:
    defaults = {"runs": 50, "batch": 16}
    cfg = _resolve(args, defaults)
    params, model_cfg, _ = mdl.load_checkpoint(_require(args.checkpoint, "checkpoint"))
    windows, _ = pl.load_windows_manifest(_require(args.windows, "windows manifest"), force=args.force)
    clips = pl.windows_by_video(windows)
    stats = te.benchmark_inference(
        params, model_cfg, clips, runs=int(cfg["runs"]), batch_size=int(cfg["batch"])
    )
    payload = stats.to_json()
    payload["variant"] = model_cfg.variant
    if args.out:
        write_json_artifact(args.out, payload)
    print(
        f"bench: {model_cfg.variant}: {stats.mean_seconds:.4f}s +/- {stats.std_seconds:.4f}s "
        f"over {stats.runs} runs on {stats.clip_count} clip(s)"
    )
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posewatch",
        description="Detect episodes of target behaviors in multi-person 2D pose streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene from a JSON spec")
    p.add_argument("spec", help="scene spec JSON")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", help="associate detections into tracks")
    p.add_argument("stream", help="pose stream (JSON-lines)")
    p.add_argument("-o", "--out", required=True, help="output track file")
    p.add_argument("--gate", type=float, default=None, help="matching gate (default: half the stream's coordinate-box diagonal)")
    p.add_argument("--fps", type=float, default=None, help="frame rate (default: stream sidecar, else 30)")
    p.add_argument("--config", default=None, help="JSON config file; flags override it")
    p.add_argument("--force", action="store_true", help="skip stale-input hash checks")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("windows", help="build labeled window samples")
    p.add_argument("tracks", nargs="+", help="track file(s), one per video")
    p.add_argument("-a", "--annotations", required=True, help="annotations CSV")
    p.add_argument("-o", "--out", required=True, help="output windows manifest JSON")
    p.add_argument("--task", choices=["detect", "predict"], default=None, help="labeling rule (default detect)")
    p.add_argument("--window-seconds", type=float, default=None, dest="window_seconds", help="window length in seconds (default 4)")
    p.add_argument("--stride-frames", type=int, default=None, dest="stride_frames", help="window stride in frames (default 30)")
    p.add_argument("--horizon-seconds", type=float, default=None, dest="horizon_seconds", help="prediction horizon in seconds (default 180)")
    p.add_argument("--min-coverage", type=float, default=None, dest="min_coverage", help="track coverage floor per window (default 0.25)")
    p.add_argument("--actors", nargs="*", default=None, help="synthetic actor map(s) for localization ground truth")
    p.add_argument("--config", default=None, help="JSON config file; flags override it")
    p.add_argument("--force", action="store_true", help="skip stale-input hash checks")
    p.set_defaults(func=cmd_windows)

    p = sub.add_parser("train", help="cross-validated training")
    p.add_argument("windows", help="windows manifest JSON")
    p.add_argument("-o", "--out", required=True, help="output run directory")
    p.add_argument("--variant", default=None, help="model variant: tcn, patt, ptatt, ptjatt (default patt)")
    p.add_argument("--folds", type=int, default=None, help="fold count (default 5)")
    p.add_argument("--seed", type=int, default=None, help="seed for fold plan, init, and shuffling (default 0)")
    p.add_argument("--lr", type=float, default=None, help="Adam learning rate (default 1e-3)")
    p.add_argument("--batch", type=int, default=None, help="batch size (default 16)")
    p.add_argument("--patience", type=int, default=None, help="early-stop patience in epochs (default 5)")
    p.add_argument("--max-epochs", type=int, default=None, dest="max_epochs", help="epoch cap (default 200)")
    p.add_argument("--positive-weight", type=float, default=None, dest="positive_weight", help="loss weight for positive windows (default 1, off)")
    p.add_argument("--jobs", type=int, default=None, help="train folds in parallel (default 1)")
    p.add_argument("--config", default=None, help="JSON config file; may carry a 'model' section with layer-size overrides")
    p.add_argument("--force", action="store_true", help="skip stale-input hash checks")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained run on its held-out folds")
    p.add_argument("run", help="run directory (or its manifest.json)")
    p.add_argument("windows", help="windows manifest JSON")
    p.add_argument("--threshold", type=float, default=None, help="decision threshold (default 0.5)")
    p.add_argument("--bootstrap", action="store_true", default=None, help="also report a bootstrap CI (10k resamples)")
    p.add_argument("--bootstrap-seed", type=int, default=None, dest="bootstrap_seed", help="bootstrap seed (default 0)")
    p.add_argument("-o", "--out", default=None, help="report path (default <run>/eval_report.json)")
    p.add_argument("--config", default=None, help="JSON config file; flags override it")
    p.add_argument("--force", action="store_true", help="skip stale-input hash checks")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("phenotype", help="extract a category's representative attended window")
    p.add_argument("checkpoint", help="trained checkpoint")
    p.add_argument("windows", help="windows manifest JSON")
    p.add_argument("-c", "--category", required=True, help="behavior category name")
    p.add_argument("-k", type=int, default=None, help="cluster count (default 5)")
    p.add_argument("--floor", type=float, default=None, help="confidence floor (default 0.8)")
    p.add_argument("--seed", type=int, default=None, help="clustering seed (default 0)")
    p.add_argument("--metric", default=None, help="feature distance: l2 (default), l1, cosine")
    p.add_argument("--sweep-k", action="store_true", dest="sweep_k",
                   help="pick k by a silhouette sweep over k in [2, 10]")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--config", default=None, help="JSON config file; flags override it")
    p.add_argument("--force", action="store_true", help="skip stale-input hash checks")
    p.set_defaults(func=cmd_phenotype)

    p = sub.add_parser("bench", help="50-run inference benchmark")
    p.add_argument("checkpoint", help="trained checkpoint")
    p.add_argument("windows", help="windows manifest JSON (clips grouped per video)")
    p.add_argument("--runs", type=int, default=None, help="timed runs (default 50, after 2 warmups)")
    p.add_argument("--batch", type=int, default=None, help="forward batch size (default 16)")
    p.add_argument("-o", "--out", default=None, help="optional runtime-stats JSON path")
    p.add_argument("--config", default=None, help="JSON config file; flags override it")
    p.add_argument("--force", action="store_true", help="skip stale-input hash checks")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"posewatch: error[missing-file]: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (ConfigError, FormatError) as exc:
        print(f"posewatch: error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFault as exc:
        print(f"posewatch: error[numeric-fault]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
