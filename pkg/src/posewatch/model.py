"""The four group-activity model variants and their parameter handling.

All variants share a per-joint temporal-convolution backbone applied with one
weight set to every person. Attention heads are added per variant:

* ``tcn``   — mean pooling over time and persons, no attention
* ``patt``  — softmax attention over persons
* ``ptatt`` — person + time attention
* ``ptjatt``— person + time + per-frame joint attention

Every attention vector lives on the probability simplex; the constant-score
special case of each head reduces exactly to the corresponding mean-pooling
baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core_types import ConfigError
from .windows import WindowSample

VARIANT_TCN = "tcn"
VARIANT_PATT = "patt"
VARIANT_PTATT = "ptatt"
VARIANT_PTJATT = "ptjatt"
VARIANTS = (VARIANT_TCN, VARIANT_PATT, VARIANT_PTATT, VARIANT_PTJATT)

VARIANT_LABELS = {
    VARIANT_TCN: "TCN",
    VARIANT_PATT: "P-Att",
    VARIANT_PTATT: "PT-Att",
    VARIANT_PTJATT: "PTJ-Att",
}


def parse_variant(name: str) -> str:
    key = name.strip().lower().replace("-", "").replace("_", "")
    for v in VARIANTS:
        if key == v:
            return v
    raise ConfigError(f"unknown model variant {name!r}; expected one of {', '.join(VARIANTS)}")


@dataclass(frozen=True)
class ModelConfig:
    """Layer widths for one variant; defaults are the reference sizes."""

    variant: str = VARIANT_PATT
    frames: int = 120
    joint_count: int = 17
    backbone_channels: tuple[int, ...] = (64, 128, 256, 256)
    backbone_kernel: int = 5
    jatt_tcn_layers: int = 2
    jatt_tcn_channels: int = 64
    jatt_kernel: int = 5
    jatt_fc: tuple[int, ...] = (512, 128)
    tatt_tcn_layers: int = 2
    tatt_tcn_channels: int = 64
    tatt_kernel: int = 5
    tatt_fc: tuple[int, ...] = (128,)
    patt_fc: tuple[int, ...] = (1024, 256)
    classifier_fc: tuple[int, ...] = (1024, 256)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if len(self.backbone_channels) != 4:
            raise ConfigError("backbone takes exactly 4 conv layers")

    @property
    def feature_channels(self) -> int:
        return self.backbone_channels[-1]

    @property
    def has_jatt(self) -> bool:
        return self.variant == VARIANT_PTJATT

    @property
    def has_tatt(self) -> bool:
        return self.variant in (VARIANT_PTATT, VARIANT_PTJATT)

    @property
    def has_patt(self) -> bool:
        return self.variant != VARIANT_TCN

    @property
    def flat_features(self) -> int:
        return self.joint_count * self.feature_channels

    def to_json(self) -> dict:
        rec = {}
        for f in fields(self):
            v = getattr(self, f.name)
            rec[f.name] = list(v) if isinstance(v, tuple) else v
        return rec

    @classmethod
    def from_json(cls, rec: dict) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in rec:
                v = rec[f.name]
                kwargs[f.name] = tuple(v) if isinstance(v, list) else v
        return cls(**kwargs)

    def overrides(self) -> dict:
        """Fields that differ from the reference defaults, for run manifests."""
        ref = ModelConfig(variant=self.variant)
        out = {}
        for f in fields(self):
            if f.name == "variant":
                continue
            mine, default = getattr(self, f.name), getattr(ref, f.name)
            if mine != default:
                out[f.name] = list(mine) if isinstance(mine, tuple) else mine
        return out


ModelParams = dict[str, Tensor]


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    # sqrt(6/fan_in) keeps activation variance level through the ReLU stack
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Fan-in-scaled uniform weights, zero biases, fixed creation order."""
    rng = np.random.default_rng(seed)
    params: ModelParams = {}

    def conv(prefix: str, k: int, cin: int, cout: int) -> None:
        params[f"{prefix}.w"] = ad.parameter(_uniform(rng, (k, cin, cout), k * cin))
        params[f"{prefix}.b"] = ad.parameter(np.zeros(cout))

    def fc(prefix: str, cin: int, cout: int) -> None:
        params[f"{prefix}.w"] = ad.parameter(_uniform(rng, (cin, cout), cin))
        params[f"{prefix}.b"] = ad.parameter(np.zeros(cout))

    cin = 2
    for i, cout in enumerate(cfg.backbone_channels):
        conv(f"backbone.conv{i}", cfg.backbone_kernel, cin, cout)
        cin = cout

    if cfg.has_jatt:
        cin = 2
        for i in range(cfg.jatt_tcn_layers):
            conv(f"jatt.conv{i}", cfg.jatt_kernel, cin, cfg.jatt_tcn_channels)
            cin = cfg.jatt_tcn_channels
        cin = cfg.joint_count * cfg.jatt_tcn_channels
        for i, width in enumerate(cfg.jatt_fc):
            fc(f"jatt.fc{i}", cin, width)
            cin = width
        fc("jatt.out", cin, cfg.joint_count)

    if cfg.has_tatt:
        cin = cfg.feature_channels
        for i in range(cfg.tatt_tcn_layers):
            conv(f"tatt.conv{i}", cfg.tatt_kernel, cin, cfg.tatt_tcn_channels)
            cin = cfg.tatt_tcn_channels
        for i, width in enumerate(cfg.tatt_fc):
            fc(f"tatt.fc{i}", cin, width)
            cin = width
        fc("tatt.out", cin, 1)

    if cfg.has_patt:
        cin = cfg.flat_features
        for i, width in enumerate(cfg.patt_fc):
            fc(f"patt.fc{i}", cin, width)
            cin = width
        fc("patt.out", cin, 1)

    cin = cfg.flat_features
    for i, width in enumerate(cfg.classifier_fc):
        fc(f"clf.fc{i}", cin, width)
        cin = width
    fc("clf.out", cin, 1)
    return params


def param_count(params: ModelParams) -> int:
    return int(sum(p.data.size for p in params.values()))


@dataclass
class AttentionRecord:
    """Attention outputs and person features for one window.

    ``a_joint``/``a_time`` are the attended (argmax person-attention) person's
    vectors; heads absent from the variant report uniform weights.
    """

    a_joint: np.ndarray          # (T, 17)
    a_time: np.ndarray           # (T,)
    a_person: np.ndarray         # (K,)
    person_features: np.ndarray  # (K, 17, C)
    logit: float


@dataclass
class _BatchNodes:
    logits: Tensor               # (B,)
    a_person: np.ndarray         # (B, K)
    a_time: np.ndarray           # (B, K, T)
    a_joint: np.ndarray          # (B, K, T, 17)
    person_features: np.ndarray  # (B, K, 17, C)


def _conv_stack(x: Tensor, params: ModelParams, prefix: str, layers: int) -> Tensor:
    for i in range(layers):
        x = ad.relu(ad.temporal_conv1d(x, params[f"{prefix}.conv{i}.w"], params[f"{prefix}.conv{i}.b"]))
    return x


def _fc_stack(x: Tensor, params: ModelParams, prefix: str, layers: int) -> Tensor:
    for i in range(layers):
        x = ad.relu(ad.dense(x, params[f"{prefix}.fc{i}.w"], params[f"{prefix}.fc{i}.b"]))
    return ad.dense(x, params[f"{prefix}.out.w"], params[f"{prefix}.out.b"])


def _forward_batch(params: ModelParams, cfg: ModelConfig, persons: np.ndarray) -> _BatchNodes:
    """Shared forward over same-person-count windows stacked as [B, K, T, 17, 2]."""
    b, k, t, j, _ = persons.shape
    if k == 0:
        raise ValueError("window has no persons; it should have been dropped upstream")
    if j != cfg.joint_count:
        raise ConfigError(f"window has {j} joints, config expects {cfg.joint_count}")

    pose = ad.tensor(persons)
    # [B, K, T, 17, 2] -> [B*K*17, T, 2]: convs batch over window x person x joint
    per_joint = ad.reshape(ad.transpose(pose, (0, 1, 3, 2, 4)), (b * k * j, t, 2))

    if cfg.has_jatt:
        cj = cfg.jatt_tcn_channels
        h = _conv_stack(per_joint, params, "jatt", cfg.jatt_tcn_layers)
        h = ad.reshape(ad.transpose(ad.reshape(h, (b, k, j, t, cj)), (0, 1, 3, 2, 4)),
                       (b, k, t, j * cj))
        scores = _fc_stack(h, params, "jatt", len(cfg.jatt_fc))  # [B, K, T, 17]
        a_joint = ad.softmax(scores, axis=3)
    else:
        a_joint = ad.tensor(np.full((b, k, t, j), 1.0 / j))

    feats = _conv_stack(per_joint, params, "backbone", len(cfg.backbone_channels))
    c = cfg.feature_channels
    feats = ad.transpose(ad.reshape(feats, (b, k, j, t, c)), (0, 1, 3, 2, 4))  # [B, K, T, 17, C]
    weighted = ad.mul(feats, ad.reshape(a_joint, (b, k, t, j, 1)))

    if cfg.has_tatt:
        pooled_joints = ad.mean_over_axis(weighted, axis=3)  # [B, K, T, C]
        h = _conv_stack(pooled_joints, params, "tatt", cfg.tatt_tcn_layers)
        scores = _fc_stack(h, params, "tatt", len(cfg.tatt_fc))  # [B, K, T, 1]
        a_time = ad.softmax(ad.reshape(scores, (b, k, t)), axis=2)
        person_feats = ad.weighted_sum_over_axis(weighted, a_time, axis=2)  # [B, K, 17, C]
    else:
        a_time = ad.tensor(np.full((b, k, t), 1.0 / t))
        person_feats = ad.mean_over_axis(weighted, axis=2)

    if cfg.has_patt:
        flat = ad.reshape(person_feats, (b, k, j * c))
        scores = _fc_stack(flat, params, "patt", len(cfg.patt_fc))  # [B, K, 1]
        a_person = ad.softmax(ad.reshape(scores, (b, k)), axis=1)
        video_feat = ad.weighted_sum_over_axis(person_feats, a_person, axis=1)  # [B, 17, C]
    else:
        a_person = ad.tensor(np.full((b, k), 1.0 / k))
        video_feat = ad.mean_over_axis(person_feats, axis=1)

    logits = _fc_stack(ad.reshape(video_feat, (b, j * c)), params, "clf", len(cfg.classifier_fc))
    return _BatchNodes(
        logits=ad.reshape(logits, (b,)),
        a_person=a_person.data,
        a_time=a_time.data,
        a_joint=a_joint.data,
        person_features=person_feats.data,
    )


def forward(params: ModelParams, cfg: ModelConfig, window: WindowSample) -> AttentionRecord:
    """Run one window through the variant; returns attentions and the logit."""
    nodes = _forward_batch(params, cfg, window.persons[None])
    attended = int(np.argmax(nodes.a_person[0]))
    return AttentionRecord(
        a_joint=nodes.a_joint[0, attended].copy(),
        a_time=nodes.a_time[0, attended].copy(),
        a_person=nodes.a_person[0].copy(),
        person_features=nodes.person_features[0].copy(),
        logit=float(nodes.logits.data[0]),
    )


def _grouped_by_person_count(batch: list[WindowSample]) -> list[list[int]]:
    groups: dict[int, list[int]] = {}
    for i, w in enumerate(batch):
        groups.setdefault(w.person_count, []).append(i)
    return [groups[k] for k in sorted(groups)]


def loss_and_grads(
    params: ModelParams,
    cfg: ModelConfig,
    batch: list[WindowSample],
    positive_weight: float = 1.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean BCE over the batch plus gradients for every parameter used.

    Windows are grouped by person count and stacked per group (never padded
    across windows), which keeps the math per window identical to the
    one-window forward.
    """
    if not batch:
        raise ValueError("empty batch")
    for p in params.values():
        p.zero_grad()
    logit_parts = []
    target_parts = []
    for idx in _grouped_by_person_count(batch):
        stacked = np.stack([batch[i].persons for i in idx])
        logit_parts.append(_forward_batch(params, cfg, stacked).logits)
        target_parts.extend(1.0 if batch[i].label else 0.0 for i in idx)
    loss = ad.bce_loss(
        ad.concat(logit_parts), np.array(target_parts), positive_weight=positive_weight
    )
    loss.backward()
    grads = {name: p.grad for name, p in params.items() if p.grad is not None}
    return float(loss.data), grads


# Cap on windows stacked into one inference subgraph; bounds activation memory.
_INFER_CHUNK = 32


def batch_logits(params: ModelParams, cfg: ModelConfig, windows: list[WindowSample]) -> np.ndarray:
    """Forward-only logits in input order, chunked to bound memory."""
    out = np.empty(len(windows))
    for idx in _grouped_by_person_count(windows):
        for lo in range(0, len(idx), _INFER_CHUNK):
            chunk = idx[lo : lo + _INFER_CHUNK]
            stacked = np.stack([windows[i].persons for i in chunk])
            nodes = _forward_batch(params, cfg, stacked)
            out[chunk] = nodes.logits.data
    return out


def batch_loss(
    params: ModelParams,
    cfg: ModelConfig,
    batch: list[WindowSample],
    positive_weight: float = 1.0,
) -> float:
    """Forward-only mean BCE (no gradient accumulation)."""
    logits = batch_logits(params, cfg, batch)
    targets = np.array([1.0 if w.label else 0.0 for w in batch])
    loss = ad.bce_loss(ad.tensor(logits), targets, positive_weight=positive_weight)
    return float(loss.data)


def _probability(logit: float | np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(logit, -500, 500)))


def predict(
    params: ModelParams, cfg: ModelConfig, window: WindowSample, threshold: float = 0.5
) -> tuple[bool, float]:
    """Sigmoid probability and thresholded label (label true at p >= threshold)."""
    record = forward(params, cfg, window)
    prob = float(_probability(record.logit))
    return prob >= threshold, prob


def predict_batch(
    params: ModelParams,
    cfg: ModelConfig,
    windows: list[WindowSample],
    threshold: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized predict: (labels bool array, probabilities) in input order."""
    probs = _probability(batch_logits(params, cfg, windows))
    return probs >= threshold, probs


CHECKPOINT_MAGIC = b"PWCKPT1\n"


def save_checkpoint(
    params: ModelParams,
    cfg: ModelConfig,
    seed: int,
    path: str | Path,
    manifest_hash: str | None = None,
) -> None:
    """Versioned binary checkpoint: JSON header + row-major float64 buffers."""
    names = sorted(params)
    header = {
        "format_version": 1,
        "config": cfg.to_json(),
        "seed": seed,
        "manifest_hash": manifest_hash,
        "layers": [{"name": n, "shape": list(params[n].data.shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params[n].data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelParams, ModelConfig, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file")
        size = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(size).decode("utf-8"))
        if header.get("format_version") != 1:
            raise ConfigError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
        cfg = ModelConfig.from_json(header["config"])
        params: ModelParams = {}
        for layer in header["layers"]:
            shape = tuple(layer["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(n * 8)
            params[layer["name"]] = ad.parameter(
                np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
            )
    return params, cfg, header


def write_model_card(
    path: str | Path,
    cfg: ModelConfig,
    seed: int,
    params: ModelParams,
    manifest_hash: str | None = None,
) -> None:
    """Model card: variant, configuration, seed, size, provenance hash."""
    card = {
        "variant": cfg.variant,
        "variant_label": VARIANT_LABELS[cfg.variant],
        "config": cfg.to_json(),
        "config_overrides": cfg.overrides(),
        "seed": seed,
        "parameter_count": param_count(params),
        "training_manifest_hash": manifest_hash,
        "activations": "relu after every hidden conv/dense layer; linear score outputs",
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(card, fh, sort_keys=True, indent=2)
        fh.write("\n")
