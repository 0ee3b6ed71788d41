"""Cross-validated training with early stopping, metrics, and benchmarks.

Training uses mini-batch Adam (lr 1e-3, batch 16 by default) and stops when
validation loss has not decreased for ``patience`` epochs, returning the
parameters of the best-validation epoch. Evaluation reports window-level
precision/recall/F1 with a fold-normal 95% CI (bootstrap available), TPR per
behavior category, and a 50-run inference benchmark.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .autodiff import AdamState, adam_step
from .core_types import BehaviorCategory, ConfigError
from .windows import FoldPlan, FoldSplit, WindowSample


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 200
    patience: int = 5
    seed: int = 0
    positive_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    improved: bool


@dataclass
class TrainResult:
    params: mdl.ModelParams
    log: list[EpochLog]
    best_epoch: int
    stopped_early: bool


def train_fold(
    windows: list[WindowSample],
    split: FoldSplit,
    model_cfg: mdl.ModelConfig,
    train_cfg: TrainConfig,
) -> TrainResult:
    """Train on the split's train windows, early-stopping on its val windows."""
    if not split.train or not split.val:
        raise ConfigError("fold split needs nonempty train and val sets")
    train = [windows[i] for i in split.train]
    val = [windows[i] for i in split.val]
    labels = {w.label for w in train}
    if len(labels) == 1:
        warnings.warn(
            f"training split has a single class (all label={labels.pop()}); proceeding",
            stacklevel=2,
        )

    params = mdl.init_params(model_cfg, seed=train_cfg.seed)
    state = AdamState(lr=train_cfg.lr)
    rng = np.random.default_rng(train_cfg.seed)

    best_val = np.inf
    best_snapshot: dict[str, np.ndarray] = {}
    best_epoch = 0
    stale = 0
    log: list[EpochLog] = []
    stopped_early = False

    for epoch in range(1, train_cfg.max_epochs + 1):
        order = rng.permutation(len(train))
        total, seen = 0.0, 0
        for lo in range(0, len(order), train_cfg.batch_size):
            batch = [train[i] for i in order[lo : lo + train_cfg.batch_size]]
            loss, grads = mdl.loss_and_grads(
                params, model_cfg, batch, positive_weight=train_cfg.positive_weight
            )
            adam_step(params, grads, state)
            total += loss * len(batch)
            seen += len(batch)
        train_loss = total / seen
        val_loss = mdl.batch_loss(params, model_cfg, val, positive_weight=train_cfg.positive_weight)
        improved = val_loss < best_val
        log.append(EpochLog(epoch=epoch, train_loss=train_loss, val_loss=val_loss, improved=improved))
        if improved:
            best_val = val_loss
            best_epoch = epoch
            best_snapshot = {name: p.data.copy() for name, p in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= train_cfg.patience:
                stopped_early = True
                break

    # the best-validation parameters go to test, never the last epoch's
    for name, data in best_snapshot.items():
        params[name].data = data
    return TrainResult(params=params, log=log, best_epoch=best_epoch, stopped_early=stopped_early)


@dataclass
class FoldMetrics:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    degenerate: bool = False

    def to_json(self) -> dict:
        return self.__dict__.copy()


def confusion_metrics(tp: int, fp: int, tn: int, fn: int) -> FoldMetrics:
    """Precision/recall/F1 with the 0/0 -> 0 convention."""
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    degenerate = (tp + fp == 0) and (tp + fn == 0)
    return FoldMetrics(
        tp=tp, fp=fp, tn=tn, fn=fn, precision=precision, recall=recall, f1=f1, degenerate=degenerate
    )


def evaluate(
    params: mdl.ModelParams,
    cfg: mdl.ModelConfig,
    test_windows: list[WindowSample],
    threshold: float = 0.5,
) -> FoldMetrics:
    """Window-level confusion counts and derived rates on a test set."""
    if not test_windows:
        raise ConfigError("evaluate needs a nonempty test set")
    preds, _ = mdl.predict_batch(params, cfg, test_windows, threshold=threshold)
    labels = np.array([w.label for w in test_windows])
    tp = int((preds & labels).sum())
    fp = int((preds & ~labels).sum())
    fn = int((~preds & labels).sum())
    tn = len(test_windows) - tp - fp - fn
    return confusion_metrics(tp, fp, tn, fn)


def aggregate_cv(fold_f1s: list[float]) -> tuple[float, float]:
    """Mean F1 across folds and the normal-approximation 95% CI half-width."""
    if len(fold_f1s) < 2:
        raise ConfigError("aggregate_cv needs at least 2 folds")
    arr = np.asarray(fold_f1s, dtype=np.float64)
    mean = float(arr.mean())
    ci95 = float(1.96 * arr.std(ddof=1) / np.sqrt(arr.size))
    return mean, ci95


def bootstrap_f1_ci(
    labels: np.ndarray,
    predictions: np.ndarray,
    resamples: int = 10_000,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile 95% CI of F1 over resampled pooled window predictions."""
    y = np.asarray(labels, dtype=bool)
    p = np.asarray(predictions, dtype=bool)
    if y.shape != p.shape or y.ndim != 1 or y.size == 0:
        raise ConfigError("bootstrap needs matching nonempty 1-D labels/predictions")
    rng = np.random.default_rng(seed)
    n = y.size
    f1s = np.empty(resamples)
    chunk = max(1, min(resamples, 64_000_000 // max(n, 1) or 1))
    done = 0
    while done < resamples:
        m = min(chunk, resamples - done)
        idx = rng.integers(0, n, size=(m, n))
        yt, pt = y[idx], p[idx]
        tp = (yt & pt).sum(axis=1).astype(np.float64)
        fp = (~yt & pt).sum(axis=1)
        fn = (yt & ~pt).sum(axis=1)
        denom = 2 * tp + fp + fn
        f1s[done : done + m] = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
        done += m
    lo, hi = np.percentile(f1s, [2.5, 97.5])
    return float(lo), float(hi)


def tpr_per_category(
    params: mdl.ModelParams,
    cfg: mdl.ModelConfig,
    test_windows: list[WindowSample],
    threshold: float = 0.5,
) -> tuple[dict[BehaviorCategory, float], dict[BehaviorCategory, int]]:
    """Per-category true positive rate over positive windows containing it.

    A multi-category window counts toward each of its categories. Categories
    absent from the test set are omitted from the rate map; the count map
    records 0 for them.
    """
    hits: dict[BehaviorCategory, int] = {c: 0 for c in BehaviorCategory}
    counts: dict[BehaviorCategory, int] = {c: 0 for c in BehaviorCategory}
    positives = [w for w in test_windows if w.label]
    if positives:
        preds, _ = mdl.predict_batch(params, cfg, positives, threshold=threshold)
        for w, pred in zip(positives, preds):
            for c in w.categories:
                counts[c] += 1
                if pred:
                    hits[c] += 1
    rates = {c: hits[c] / counts[c] for c in BehaviorCategory if counts[c] > 0}
    return rates, counts


@dataclass
class RuntimeStats:
    mean_seconds: float
    std_seconds: float
    runs: int
    clip_count: int

    def to_json(self) -> dict:
        return self.__dict__.copy()


def benchmark_inference(
    params: mdl.ModelParams,
    cfg: mdl.ModelConfig,
    clips: list[list[WindowSample]],
    runs: int = 50,
    batch_size: int = 16,
    warmup: int = 2,
) -> RuntimeStats:
    """Wall-clock mean/std of forward passes over all clips, warmups excluded."""
    if not clips or not any(clips):
        raise ConfigError("benchmark needs at least one nonempty clip")
    if runs < 1:
        raise ConfigError(f"runs must be >= 1, got {runs}")

    def one_run() -> float:
        t0 = time.perf_counter()
        for clip in clips:
            for lo in range(0, len(clip), batch_size):
                mdl.batch_logits(params, cfg, clip[lo : lo + batch_size])
        return time.perf_counter() - t0

    for _ in range(warmup):
        one_run()
    times = np.array([one_run() for _ in range(runs)])
    return RuntimeStats(
        mean_seconds=float(times.mean()),
        std_seconds=float(times.std(ddof=1)) if runs > 1 else 0.0,
        runs=runs,
        clip_count=len(clips),
    )


@dataclass
class EvalReport:
    """Aggregate cross-validation evaluation of one model variant."""

    variant: str
    threshold: float
    per_fold: list[FoldMetrics] = field(default_factory=list)
    f1_mean: float = 0.0
    f1_ci95: float = 0.0
    ci_method: str = "fold-normal"
    bootstrap_ci: tuple[float, float] | None = None
    tpr: dict[BehaviorCategory, float] = field(default_factory=dict)
    category_counts: dict[BehaviorCategory, int] = field(default_factory=dict)
    runtime: RuntimeStats | None = None

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "threshold": self.threshold,
            "per_fold": [m.to_json() for m in self.per_fold],
            "f1_mean": self.f1_mean,
            "f1_ci95": self.f1_ci95,
            "ci_method": self.ci_method,
            "bootstrap_ci": list(self.bootstrap_ci) if self.bootstrap_ci else None,
            "tpr_per_category": {c.value: r for c, r in self.tpr.items()},
            "category_counts": {c.value: n for c, n in self.category_counts.items()},
            "runtime_stats": self.runtime.to_json() if self.runtime else None,
        }


def evaluate_cv(
    fold_params: list[mdl.ModelParams],
    cfg: mdl.ModelConfig,
    windows: list[WindowSample],
    plan: FoldPlan,
    threshold: float = 0.5,
    with_bootstrap: bool = False,
    bootstrap_seed: int = 0,
) -> EvalReport:
    """Evaluate per-fold parameters on their own held-out test windows."""
    if len(fold_params) != plan.fold_count:
        raise ConfigError(f"got {len(fold_params)} parameter sets for {plan.fold_count} folds")
    report = EvalReport(variant=cfg.variant, threshold=threshold)
    pooled_labels: list[bool] = []
    pooled_preds: list[bool] = []
    merged_hits = {c: 0 for c in BehaviorCategory}
    merged_counts = {c: 0 for c in BehaviorCategory}
    for fold in range(plan.fold_count):
        split = plan.split(fold)
        test = [windows[i] for i in split.test]
        if not test:
            raise ConfigError(f"fold {fold} has no test windows")
        preds, _ = mdl.predict_batch(fold_params[fold], cfg, test, threshold=threshold)
        labels = np.array([w.label for w in test])
        tp = int((preds & labels).sum())
        fp = int((preds & ~labels).sum())
        fn = int((~preds & labels).sum())
        tn = len(test) - tp - fp - fn
        report.per_fold.append(confusion_metrics(tp, fp, tn, fn))
        for w, p in zip(test, preds):
            pooled_labels.append(w.label)
            pooled_preds.append(bool(p))
            if w.label:
                for c in w.categories:
                    merged_counts[c] += 1
                    if p:
                        merged_hits[c] += 1
    report.f1_mean, report.f1_ci95 = aggregate_cv([m.f1 for m in report.per_fold])
    report.tpr = {c: merged_hits[c] / merged_counts[c] for c in BehaviorCategory if merged_counts[c]}
    report.category_counts = merged_counts
    if with_bootstrap:
        report.bootstrap_ci = bootstrap_f1_ci(
            np.array(pooled_labels), np.array(pooled_preds), seed=bootstrap_seed
        )
    return report


def render_results_table(reports: list[EvalReport]) -> str:
    """Plain-text results table: variant x attention heads x F1 x runtime."""
    header = (
        f"{'Model':<10}{'P-Att':^7}{'T-Att':^7}{'J-Att':^7}"
        f"{'F1 (95% CI)':^20}{'Runtime(s)':>12}"
    )
    lines = [header, "-" * len(header)]
    for r in reports:
        cfg_flags = {
            mdl.VARIANT_TCN: ("-", "-", "-"),
            mdl.VARIANT_PATT: ("x", "-", "-"),
            mdl.VARIANT_PTATT: ("x", "x", "-"),
            mdl.VARIANT_PTJATT: ("x", "x", "x"),
        }[r.variant]
        runtime = f"{r.runtime.mean_seconds:.2f}" if r.runtime else "-"
        lines.append(
            f"{mdl.VARIANT_LABELS[r.variant]:<10}"
            f"{cfg_flags[0]:^7}{cfg_flags[1]:^7}{cfg_flags[2]:^7}"
            f"{f'{r.f1_mean:.2f} +/- {r.f1_ci95:.2f}':^20}"
            f"{runtime:>12}"
        )
    return "\n".join(lines)
