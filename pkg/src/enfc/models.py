"""Enrollment networks: a deterministic point regressor, a stochastic
regressor emitting a Gamma distribution over the log-scale count, and a
site-level network emitting Gamma parameters for per-site enrollment
rates and startup delays.

All three share one backbone: three branch encoders (text embedding,
multi-hot categoricals, z-scored numerics), multi-head attention of the
embedding query over the stacked categorical/numeric representations,
then a residual connection and layer norm.  Heads differ only in output
width.  Training runs on the in-package autodiff graph; checkpoints are
a self-contained binary format with a JSON manifest.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffgraph as dg
from .encoding import EncodedTrial, MultiLabelVocab, ZScoreState
from .errors import (CheckpointChecksumError, CheckpointFormatError,
                     CheckpointVersionError, DomainError, NumericError,
                     StructuralError, UsageError)
from .randdist import GammaParams, RngState, gamma_quantile

FORMAT_VERSION = 1
_MAGIC = b"ENFC"

HEAD_KINDS = ("deterministic", "gamma", "poisson-gamma")
_HEAD_OUTPUTS = {"deterministic": 1, "gamma": 2, "poisson-gamma": 4}
_BRANCHES = ("emb", "cat", "num")

# Targets for the site-level heads are shifted into the open support of
# the Gamma density so zero startup times and zero-rate sites fit.
SITE_TARGET_SHIFT = 1e-6


@dataclass(frozen=True)
class BackboneConfig:
    """Input widths plus the shared representation geometry."""

    d_emb: int
    d_cat: int
    d_num: int
    hidden: int = 64
    heads: int = 4
    dropout: float = 0.3
    branch_layers: int = 2

    def __post_init__(self):
        for name in ("d_emb", "d_cat", "d_num", "hidden", "heads", "branch_layers"):
            if getattr(self, name) < 1:
                raise StructuralError(f"{name} must be >= 1")
        if self.hidden % self.heads != 0:
            raise StructuralError(
                f"hidden width {self.hidden} not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise StructuralError("dropout must be in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    branch_lr: float = 1e-4
    body_lr: float = 1e-3
    optimizer: str = "adamw"
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise StructuralError("batch_size and max_epochs must be >= 1")
        if self.branch_lr <= 0.0 or self.body_lr <= 0.0:
            raise StructuralError("learning rates must be positive")
        if self.patience < 1:
            raise StructuralError("patience must be >= 1")
        if self.optimizer not in ("adamw", "rmsprop"):
            raise UsageError(f"unknown optimizer {self.optimizer!r}")


def study_train_config(seed: int = 0, **overrides) -> TrainConfig:
    """Trial-level training defaults: batch 256, early stopping on dev MAE."""
    base = dict(batch_size=256, max_epochs=200, patience=20, seed=seed)
    base.update(overrides)
    return TrainConfig(**base)


def pg_train_config(seed: int = 0, **overrides) -> TrainConfig:
    """Site-level training defaults: batch 32, fixed 256-epoch budget."""
    base = dict(batch_size=32, max_epochs=256, patience=256, seed=seed)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass(frozen=True)
class PredictionInterval:
    lower: float
    upper: float
    level: float

    def __post_init__(self):
        if self.lower < 0.0:
            raise StructuralError("interval lower bound must be >= 0")
        if not self.upper > self.lower:
            raise StructuralError("interval upper bound must exceed lower")
        if not 0.0 < self.level < 1.0:
            raise StructuralError("interval level must lie in (0, 1)")


@dataclass(frozen=True)
class PoissonGammaParams:
    """Site-level distributions: enrollment rate (patients/site/month)
    and startup delay (months)."""

    rate_dist: GammaParams
    startup_dist: GammaParams


@dataclass
class ModelCheckpoint:
    config: BackboneConfig
    head_kind: str
    weights: dict  # name -> float64 array
    vocab: MultiLabelVocab
    zscore: ZScoreState
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


@dataclass(frozen=True)
class EncodedBatch:
    """Stacked feature matrices for a batch of encoded trials."""

    x_emb: np.ndarray
    x_cat: np.ndarray
    x_num: np.ndarray


def stack_encoded(trials) -> EncodedBatch:
    trials = list(trials)
    if not trials:
        raise StructuralError("cannot stack an empty batch")
    return EncodedBatch(
        x_emb=np.stack([t.x_emb for t in trials]),
        x_cat=np.stack([t.x_cat for t in trials]),
        x_num=np.stack([t.x_num for t in trials]),
    )


# ---------------------------------------------------------------------------
# weights


def expected_weight_shapes(config: BackboneConfig, head_kind: str) -> dict:
    """Name -> shape map defining a complete weight set for the head."""
    if head_kind not in HEAD_KINDS:
        raise UsageError(f"unknown head kind {head_kind!r}")
    d = config.hidden
    widths = {"emb": config.d_emb, "cat": config.d_cat, "num": config.d_num}
    shapes = {}
    for branch in _BRANCHES:
        fan_in = widths[branch]
        for layer in range(config.branch_layers):
            shapes[f"{branch}.w{layer}"] = (fan_in, d)
            shapes[f"{branch}.b{layer}"] = (d,)
            fan_in = d
    for name in ("wq", "wk", "wv", "wo"):
        shapes[f"att.{name}"] = (d, d)
    shapes["norm.gain"] = (d,)
    shapes["norm.bias"] = (d,)
    n_out = _HEAD_OUTPUTS[head_kind]
    shapes["head.w0"] = (d, d // 2)
    shapes["head.b0"] = (d // 2,)
    shapes["head.w1"] = (d // 2, n_out)
    shapes["head.b1"] = (n_out,)
    return shapes


def init_weights(config: BackboneConfig, head_kind: str, rng: RngState) -> dict:
    """Fan-in-scaled normal matrices, zero biases, unit layer-norm gain.

    Returns graph parameters keyed by name; iteration order is sorted so
    the RNG stream is consumed identically on every run.
    """
    gen = rng.generator
    weights = {}
    for name, shape in sorted(expected_weight_shapes(config, head_kind).items()):
        if name == "norm.gain":
            data = np.ones(shape)
        elif len(shape) == 1:
            data = np.zeros(shape)
        else:
            data = gen.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
        weights[name] = dg.parameter(data, name)
    return weights


def _as_tensors(weight_arrays: dict) -> dict:
    return {name: dg.constant(arr) for name, arr in weight_arrays.items()}


# ---------------------------------------------------------------------------
# forward passes


def forward_backbone(batch: EncodedBatch, config: BackboneConfig, weights: dict,
                     mode: str = "eval", dropout_rng: RngState | None = None):
    """Shared representation h = LayerNorm(attention(z_emb over
    [z_cat, z_num]) + z_emb), one row per trial."""
    if mode not in ("train", "eval"):
        raise UsageError(f"mode must be 'train' or 'eval', got {mode!r}")
    expected = {"emb": config.d_emb, "cat": config.d_cat, "num": config.d_num}
    arrays = {"emb": batch.x_emb, "cat": batch.x_cat, "num": batch.x_num}
    n = arrays["emb"].shape[0]
    for branch, arr in arrays.items():
        if arr.ndim != 2 or arr.shape != (n, expected[branch]):
            raise StructuralError(
                f"{branch} input shape {arr.shape}, expected ({n}, {expected[branch]})")

    def encode_branch(branch):
        z = dg.constant(arrays[branch])
        for layer in range(config.branch_layers):
            z = dg.matmul(z, weights[f"{branch}.w{layer}"])
            z = dg.add(z, weights[f"{branch}.b{layer}"])
            z = dg.leaky_relu(z)
        return z

    z_emb = encode_branch("emb")
    z_cat = encode_branch("cat")
    z_num = encode_branch("num")
    z_cat = dg.dropout(z_cat, config.dropout, dropout_rng, train=(mode == "train"))

    query = dg.reshape(z_emb, (n, 1, config.hidden))
    keys_values = dg.stack1([z_cat, z_num])
    attended = dg.multi_head_attention(
        query, keys_values, config.heads,
        weights["att.wq"], weights["att.wk"], weights["att.wv"], weights["att.wo"])
    attended = dg.reshape(attended, (n, config.hidden))
    return dg.layer_norm(dg.add(attended, z_emb),
                         weights["norm.gain"], weights["norm.bias"])


def forward_model(batch: EncodedBatch, config: BackboneConfig, weights: dict,
                  head_kind: str, mode: str = "eval",
                  dropout_rng: RngState | None = None):
    """Backbone plus head; output is [batch, head width] raw logits."""
    if head_kind not in HEAD_KINDS:
        raise UsageError(f"unknown head kind {head_kind!r}")
    h = forward_backbone(batch, config, weights, mode, dropout_rng)
    hidden = dg.leaky_relu(dg.add(dg.matmul(h, weights["head.w0"]), weights["head.b0"]))
    return dg.add(dg.matmul(hidden, weights["head.w1"]), weights["head.b1"])


def forward_outputs(checkpoint: ModelCheckpoint, trials) -> np.ndarray:
    """Eval-mode raw head outputs for a list of encoded trials."""
    batch = stack_encoded(trials)
    out = forward_model(batch, checkpoint.config, _as_tensors(checkpoint.weights),
                        checkpoint.head_kind)
    return out.data


# ---------------------------------------------------------------------------
# prediction


def _require_head(checkpoint: ModelCheckpoint, kind: str, op: str):
    if checkpoint.head_kind != kind:
        raise UsageError(
            f"{op} needs a {kind} checkpoint, got {checkpoint.head_kind!r}")


def predict_point(checkpoint: ModelCheckpoint, trial: EncodedTrial) -> float:
    """Point estimate in patients: exp(log-scale output) - 1, floored at 0."""
    _require_head(checkpoint, "deterministic", "predict_point")
    out = forward_outputs(checkpoint, [trial])
    return max(float(np.expm1(out[0, 0])), 0.0)


def predict_distribution(checkpoint: ModelCheckpoint, trial: EncodedTrial) -> GammaParams:
    """Gamma distribution over ln(patients + 1)."""
    _require_head(checkpoint, "gamma", "predict_distribution")
    out = forward_outputs(checkpoint, [trial])
    return GammaParams(float(np.exp(out[0, 0])), float(np.exp(out[0, 1])))


def predict_interval(checkpoint: ModelCheckpoint, trial: EncodedTrial,
                     significance: float) -> PredictionInterval:
    """Equal-tailed interval in patients at confidence 1 - significance."""
    if not 0.0 < significance < 1.0:
        raise DomainError("significance must lie in (0, 1)")
    params = predict_distribution(checkpoint, trial)
    low = gamma_quantile(params, significance / 2.0)
    high = gamma_quantile(params, 1.0 - significance / 2.0)
    return PredictionInterval(lower=float(np.expm1(low)), upper=float(np.expm1(high)),
                              level=1.0 - significance)


def predict_site_params(checkpoint: ModelCheckpoint, trial: EncodedTrial) -> PoissonGammaParams:
    """Original-scale Gamma parameter pairs for site rates and startups."""
    _require_head(checkpoint, "poisson-gamma", "predict_site_params")
    out = np.exp(forward_outputs(checkpoint, [trial])[0])
    return PoissonGammaParams(
        rate_dist=GammaParams(float(out[0]), float(out[1])),
        startup_dist=GammaParams(float(out[2]), float(out[3])),
    )


def point_estimates(checkpoint: ModelCheckpoint, trials) -> np.ndarray:
    """Batched patient-count point estimates for study-level heads.

    The stochastic head uses the exponentiated log-space mean
    exp(shape/rate) - 1; the original-scale mean is unstable when the
    fitted rate drops toward 1.
    """
    out = forward_outputs(checkpoint, trials)
    if checkpoint.head_kind == "deterministic":
        log_pred = out[:, 0]
    elif checkpoint.head_kind == "gamma":
        log_pred = np.exp(out[:, 0] - out[:, 1])  # shape/rate without overflow
    else:
        raise UsageError("point_estimates needs a study-level checkpoint")
    return np.maximum(np.expm1(log_pred), 0.0)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainingData:
    """Train/dev pairs plus the fitted encoders to embed in the checkpoint.

    Study-level pairs are (EncodedTrial, actual_enrollment).  Site-level
    pairs are (EncodedTrial, (rates array, startup-months array)) with
    one entry per observed site.
    """

    train: tuple
    dev: tuple
    vocab: MultiLabelVocab
    zscore: ZScoreState
    backbone: BackboneConfig


def _column(out, j: int, width: int):
    basis = np.zeros((width, 1))
    basis[j, 0] = 1.0
    return dg.matmul(out, dg.constant(basis))


def _site_loss(out, site_targets, batch_index):
    """Mean over sites of (rate NLL + startup NLL), trials expanded to
    their sites through a constant selection matrix."""
    rows, rates, startups = [], [], []
    for j, idx in enumerate(batch_index):
        r, s = site_targets[idx]
        rows.extend([j] * len(r))
        rates.append(r)
        startups.append(s)
    if not rows:
        return None
    select = np.zeros((len(rows), len(batch_index)))
    select[np.arange(len(rows)), rows] = 1.0
    per_site = dg.matmul(dg.constant(select), out)
    rate_targets = np.concatenate(rates) + SITE_TARGET_SHIFT
    startup_targets = np.concatenate(startups) + SITE_TARGET_SHIFT
    rate_nll = dg.gamma_nll_loss(_column(per_site, 0, 4), _column(per_site, 1, 4),
                                 rate_targets)
    startup_nll = dg.gamma_nll_loss(_column(per_site, 2, 4), _column(per_site, 3, 4),
                                    startup_targets)
    return dg.add(rate_nll, startup_nll)


def _batch_loss(head_kind, out, targets, batch_index):
    if head_kind == "deterministic":
        return dg.l1_log_loss(out, targets[batch_index])
    if head_kind == "gamma":
        log_targets = np.log1p(targets[batch_index])
        return dg.gamma_nll_loss(_column(out, 0, 2), _column(out, 1, 2), log_targets)
    return _site_loss(out, targets, batch_index)


def _take(batch: EncodedBatch, index) -> EncodedBatch:
    return EncodedBatch(batch.x_emb[index], batch.x_cat[index], batch.x_num[index])


def _dev_metric(head_kind, config, weight_arrays, dev_batch, dev_targets) -> float:
    """Dev MAE in patients for study-level heads, dev loss for site-level."""
    tensors = _as_tensors(weight_arrays)
    out = forward_model(dev_batch, config, tensors, head_kind)
    if head_kind == "deterministic":
        pred = np.maximum(np.expm1(out.data[:, 0]), 0.0)
        return float(np.mean(np.abs(pred - dev_targets)))
    if head_kind == "gamma":
        pred = np.maximum(np.expm1(np.exp(out.data[:, 0] - out.data[:, 1])), 0.0)
        return float(np.mean(np.abs(pred - dev_targets)))
    loss = _site_loss(out, dev_targets, np.arange(len(dev_targets)))
    if loss is None:
        raise StructuralError("dev split has no observed sites")
    return float(loss.data)


def _prepare_targets(head_kind, pairs):
    if head_kind == "poisson-gamma":
        return [(np.asarray(r, dtype=np.float64).reshape(-1),
                 np.asarray(s, dtype=np.float64).reshape(-1)) for _, (r, s) in pairs]
    return np.array([float(t) for _, t in pairs])


def evaluate_loss(checkpoint: ModelCheckpoint, pairs) -> float:
    """Eval-mode training objective of the checkpoint over given pairs."""
    pairs = list(pairs)
    if not pairs:
        raise StructuralError("evaluate_loss needs at least one pair")
    batch = stack_encoded([p[0] for p in pairs])
    targets = _prepare_targets(checkpoint.head_kind, pairs)
    out = forward_model(batch, checkpoint.config, _as_tensors(checkpoint.weights),
                        checkpoint.head_kind)
    loss = _batch_loss(checkpoint.head_kind, out, targets, np.arange(len(pairs)))
    if loss is None:
        raise StructuralError("no observed sites in the supplied pairs")
    return float(loss.data)


def train(head_kind: str, data: TrainingData, config: TrainConfig) -> ModelCheckpoint:
    """Minibatch training with dev-set model selection.

    Keeps the weights from the epoch with the best dev metric (MAE in
    patients for study-level heads, site NLL for the site-level head)
    and stops once the metric has not improved for ``patience`` epochs.
    Deterministic given the seed.
    """
    if head_kind not in HEAD_KINDS:
        raise UsageError(f"unknown head kind {head_kind!r}")
    train_pairs = list(data.train)
    dev_pairs = list(data.dev)
    if not train_pairs or not dev_pairs:
        raise StructuralError("train and dev splits must both be nonempty")

    init_rng, shuffle_rng, dropout_rng = RngState(config.seed).split(3)
    weights = init_weights(data.backbone, head_kind, init_rng)
    branch = [weights[k] for k in sorted(weights) if k.split(".")[0] in _BRANCHES]
    body = [weights[k] for k in sorted(weights) if k.split(".")[0] not in _BRANCHES]
    if config.optimizer == "adamw":
        optimizer = dg.AdamW([(branch, config.branch_lr), (body, config.body_lr)])
    else:
        optimizer = dg.RMSprop(branch + body, lr=config.body_lr)

    train_batch = stack_encoded([p[0] for p in train_pairs])
    train_targets = _prepare_targets(head_kind, train_pairs)
    dev_batch = stack_encoded([p[0] for p in dev_pairs])
    dev_targets = _prepare_targets(head_kind, dev_pairs)

    params = list(weights.values())
    n = len(train_pairs)
    best_metric = np.inf
    best_weights = {k: w.data.copy() for k, w in weights.items()}
    epochs_since_best = 0
    dev_history = []
    epochs_run = 0

    for epoch in range(config.max_epochs):
        order = shuffle_rng.generator.permutation(n)
        for start in range(0, n, config.batch_size):
            index = order[start:start + config.batch_size]
            out = forward_model(_take(train_batch, index), data.backbone, weights,
                                head_kind, mode="train", dropout_rng=dropout_rng)
            loss = _batch_loss(head_kind, out, train_targets, index)
            if loss is None:
                continue  # batch of site-level trials with no observed sites
            if not np.isfinite(loss.data):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, batch start {start}")
            dg.zero_grads(params)
            dg.backward(loss)
            optimizer.step()
        epochs_run = epoch + 1
        metric = _dev_metric(head_kind, data.backbone, {k: w.data for k, w in weights.items()},
                             dev_batch, dev_targets)
        dev_history.append(metric)
        if metric < best_metric:
            best_metric = metric
            best_weights = {k: w.data.copy() for k, w in weights.items()}
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                break

    metadata = {
        "seed": config.seed,
        "epochs_run": epochs_run,
        "best_dev_metric": float(best_metric),
        "dev_history": [float(m) for m in dev_history],
    }
    return ModelCheckpoint(config=data.backbone, head_kind=head_kind,
                           weights=best_weights, vocab=data.vocab,
                           zscore=data.zscore, metadata=metadata)


# ---------------------------------------------------------------------------
# checkpoint persistence


def _build_manifest(checkpoint: ModelCheckpoint) -> dict:
    tensors = []
    offset = 0
    for name in sorted(checkpoint.weights):
        arr = checkpoint.weights[name]
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    cfg = checkpoint.config
    return {
        "head_kind": checkpoint.head_kind,
        "config": {"d_emb": cfg.d_emb, "d_cat": cfg.d_cat, "d_num": cfg.d_num,
                   "hidden": cfg.hidden, "heads": cfg.heads, "dropout": cfg.dropout,
                   "branch_layers": cfg.branch_layers},
        "vocab": {"features": list(checkpoint.vocab.features),
                  "labels": [list(ls) for ls in checkpoint.vocab.labels]},
        "zscore": {"features": list(checkpoint.zscore.features),
                   "means": list(checkpoint.zscore.means),
                   "stds": list(checkpoint.zscore.stds)},
        "metadata": checkpoint.metadata,
        "tensors": tensors,
    }


def save_checkpoint(path, checkpoint: ModelCheckpoint) -> None:
    """Magic, u32 version, length-prefixed JSON manifest, float64 LE
    tensor payloads, trailing CRC32 of everything before it."""
    expected = expected_weight_shapes(checkpoint.config, checkpoint.head_kind)
    got = {name: arr.shape for name, arr in checkpoint.weights.items()}
    if got != expected:
        raise StructuralError("weight set does not match the declared head")
    manifest = json.dumps(_build_manifest(checkpoint), sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(checkpoint.weights[name], dtype="<f8").tobytes()
        for name in sorted(checkpoint.weights))
    body = _MAGIC + struct.pack("<II", checkpoint.version, len(manifest)) + manifest + payload
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def load_checkpoint(path) -> ModelCheckpoint:
    blob = Path(path).read_bytes()
    if len(blob) < 16:
        raise CheckpointFormatError(f"{path}: too short to be a checkpoint")
    if blob[:4] != _MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {blob[:4]!r}")
    version, manifest_len = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, expected {FORMAT_VERSION}")
    header_end = 12 + manifest_len
    if len(blob) < header_end + 4:
        raise CheckpointFormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable manifest: {exc}") from exc

    config = BackboneConfig(**manifest["config"])
    head_kind = manifest["head_kind"]
    expected = expected_weight_shapes(config, head_kind)
    payload_size = sum(
        int(np.prod(entry["shape"])) * 8 for entry in manifest["tensors"])
    if len(blob) != header_end + payload_size + 4:
        raise CheckpointFormatError(
            f"{path}: payload truncated ({len(blob)} bytes, "
            f"expected {header_end + payload_size + 4})")
    stored_crc, = struct.unpack_from("<I", blob, len(blob) - 4)
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CheckpointChecksumError(
            f"{path}: CRC mismatch (stored {stored_crc:#010x}, "
            f"computed {actual_crc:#010x})")

    weights = {}
    payload = blob[header_end:-4]
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        start = entry["offset"]
        try:
            arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        except ValueError as exc:
            raise CheckpointFormatError(
                f"{path}: tensor {entry['name']!r} overruns payload") from exc
        weights[entry["name"]] = arr.reshape(shape).astype(np.float64)
    if {n: a.shape for n, a in weights.items()} != expected:
        raise CheckpointFormatError(
            f"{path}: weight set incomplete for head {head_kind!r}")

    vocab = MultiLabelVocab(tuple(manifest["vocab"]["features"]),
                            tuple(tuple(ls) for ls in manifest["vocab"]["labels"]))
    zscore = ZScoreState(tuple(manifest["zscore"]["features"]),
                         tuple(manifest["zscore"]["means"]),
                         tuple(manifest["zscore"]["stds"]))
    return ModelCheckpoint(config=config, head_kind=head_kind, weights=weights,
                           vocab=vocab, zscore=zscore,
                           metadata=manifest["metadata"], version=version)
