"""Shape alignment and the convolutional misspelling head.

Recognizer features (T×D) are compressed to T×T by a time-distributed dense
layer and stacked with the one-hot expected text (T×A, zero-padded
symmetrically to T×T) into a two-channel image. Four conv/ReLU/pool blocks,
dropout and a sigmoid unit turn that image into P(misspelled).
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .hwr import Recognizer
from .layers import bce_loss, conv2d_same, dense, dropout, maxpool2x2, time_distributed_dense
from .optim import RMSprop, geometric_schedule
from .renderer import one_hot_encode
from .tensor import NumericError, ShapeError, Tensor, parameter, stack
from .textgen import Alphabet, DatasetManifest

log = logging.getLogger(__name__)

N_BLOCKS = 4


@dataclass(frozen=True)
class HeadConfig:
    steps: int = 32
    alphabet_size: int = 26
    feature_dim: int = 64
    conv_filters: tuple[int, ...] = (8, 8, 16, 16)
    dropout_rate: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(self.conv_filters))
        if self.steps % 2**N_BLOCKS:
            raise ValueError(f"steps={self.steps} must be divisible by {2**N_BLOCKS}")
        if self.alphabet_size > self.steps or (self.steps - self.alphabet_size) % 2:
            raise ValueError(
                f"alphabet width {self.alphabet_size} cannot be padded symmetrically to {self.steps}"
            )
        if len(self.conv_filters) != N_BLOCKS or min(self.conv_filters) < 1:
            raise ValueError(f"need {N_BLOCKS} positive filter counts, got {self.conv_filters}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")

    @property
    def pad(self) -> int:
        return (self.steps - self.alphabet_size) // 2

    @property
    def flat_size(self) -> int:
        return (self.steps // 2**N_BLOCKS) ** 2 * self.conv_filters[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_filters"] = list(self.conv_filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HeadConfig":
        return cls(**{**d, "conv_filters": tuple(d["conv_filters"])})


FULL_SCALE = HeadConfig(steps=128, alphabet_size=98, feature_dim=512, conv_filters=(32, 32, 64, 64))


def count_params(config: HeadConfig) -> int:
    total = config.feature_dim * config.steps + config.steps
    cin = 2
    for f in config.conv_filters:
        total += 9 * cin * f + f
        cin = f
    return total + config.flat_size + 1


def matching_filter_tuples(total: int, feature_dim: int, steps: int, include_compression: bool,
                           choices: Sequence[int] = (1, 2, 4, 8, 16, 32, 64, 128, 256, 512)) -> list[tuple]:
    """Every power-of-two filter tuple whose head size equals ``total``."""
    hits = []
    base = feature_dim * steps + steps if include_compression else 0
    side = (steps // 2**N_BLOCKS) ** 2
    for filters in itertools.product(choices, repeat=N_BLOCKS):
        n = base
        cin = 2
        for f in filters:
            n += 9 * cin * f + f
            cin = f
        if n + side * filters[-1] + 1 == total:
            hits.append(filters)
    return hits


def pad_text(onehot: np.ndarray, config: HeadConfig) -> np.ndarray:
    pad = config.pad
    widths = [(0, 0)] * (onehot.ndim - 1) + [(pad, pad)]
    return np.pad(onehot, widths)


def align(features, onehot, td_weights, td_bias=None, config: HeadConfig | None = None) -> Tensor:
    """Stack compressed features (channel 0) and padded one-hot text (channel 1): (N,)T×T×2."""
    features = features if isinstance(features, Tensor) else Tensor(features)
    onehot = np.asarray(onehot, dtype=np.float64)
    steps = features.shape[-2]
    width = onehot.shape[-1]
    if config is None:
        config = HeadConfig(steps=steps, alphabet_size=width, feature_dim=features.shape[-1],
                            conv_filters=(1,) * N_BLOCKS)
    if onehot.shape[-2] != steps or width != config.alphabet_size or steps != config.steps:
        raise ShapeError(f"features {features.shape} and text {onehot.shape} do not fit {config}")
    if td_bias is None:
        td_bias = np.zeros(steps)
    compressed = time_distributed_dense(features, td_weights, td_bias)
    text = Tensor(pad_text(onehot, config))
    return stack([compressed, text], axis=-1)


# Letter logits are large (|z| ~ 10); this keeps the seeded compression
# channel on the same order as the 0/1 text channel.
TOP_INIT_SCALE = 0.1


def delta_orthogonal(rng: np.random.Generator, cin: int, cout: int) -> np.ndarray:
    """3x3 kernel that is zero except for an orthogonal centre tap."""
    side = max(cin, cout)
    q, r = np.linalg.qr(rng.normal(size=(side, side)))
    q *= np.sign(np.diag(r))
    kernel = np.zeros((3, 3, cin, cout))
    kernel[1, 1] = q[:cin, :cout]
    return kernel


def init_head_params(config: HeadConfig, rng: np.random.Generator,
                     top: tuple[np.ndarray, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Fresh head parameters.

    Conv kernels start delta-orthogonal so the aligned pair reaches the
    output unblurred. Given the recognizer's character layer ``top`` (D×(A+1)
    weights, bias), the compression columns facing the padded one-hot text
    start as the scaled logits of the same letters, so feature row t and text
    row t speak about the same alphabet column from the first step.
    """
    params = {}
    limit = np.sqrt(6.0 / (config.feature_dim + config.steps))
    params["td.weights"] = rng.uniform(-limit, limit, (config.feature_dim, config.steps))
    params["td.bias"] = np.zeros(config.steps)
    if top is not None:
        weights, bias = top
        if weights.shape[0] != config.feature_dim or weights.shape[1] < config.alphabet_size:
            raise ShapeError(f"character layer {weights.shape} does not fit {config}")
        cols = slice(config.pad, config.pad + config.alphabet_size)
        params["td.weights"][:] = 0.0
        params["td.weights"][:, cols] = TOP_INIT_SCALE * weights[:, :config.alphabet_size]
        params["td.bias"][cols] = TOP_INIT_SCALE * bias[:config.alphabet_size]
    cin = 2
    for i, f in enumerate(config.conv_filters):
        params[f"conv{i}.kernel"] = delta_orthogonal(rng, cin, f)
        params[f"conv{i}.bias"] = np.zeros(f)
        cin = f
    limit = np.sqrt(6.0 / (config.flat_size + 1))
    params["out.weights"] = rng.uniform(-limit, limit, (config.flat_size, 1))
    params["out.bias"] = np.zeros(1)
    return params


def head_forward(pair: Tensor, params: dict[str, Tensor], config: HeadConfig, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
    """(N,)T×T×2 aligned pair -> (N,) misspelling probabilities."""
    x = pair
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.shape[1:] != (config.steps, config.steps, 2):
        raise ShapeError(f"aligned pair {pair.shape} does not match {config.steps}×{config.steps}×2")
    for i in range(N_BLOCKS):
        x = maxpool2x2(conv2d_same(x, params[f"conv{i}.kernel"], params[f"conv{i}.bias"]).relu())
    x = x.reshape(x.shape[0], -1)
    x = dropout(x, config.dropout_rate, training, rng)
    prob = dense(x, params["out.weights"], params["out.bias"]).sigmoid().reshape(-1)
    return prob[0] if squeeze else prob


class MisspellingClassifier:
    def __init__(self, config: HeadConfig, params: dict[str, np.ndarray] | None = None, seed: int = 0,
                 extractor_digest: str | None = None, top: tuple[np.ndarray, np.ndarray] | None = None):
        self.config = config
        raw = params if params is not None else init_head_params(config, np.random.default_rng(seed), top)
        self.params = {k: parameter(v) for k, v in raw.items()}
        self.extractor_digest = extractor_digest

    def forward(self, features, onehots, training: bool = False, rng=None) -> Tensor:
        pair = align(features, onehots, self.params["td.weights"], self.params["td.bias"], self.config)
        return head_forward(pair, self.params, self.config, training, rng)

    def scores(self, features: np.ndarray, onehots: np.ndarray, batch_size: int = 128) -> np.ndarray:
        saved = [p.requires_grad for p in self.params.values()]
        for p in self.params.values():
            p.requires_grad = False
        try:
            return np.concatenate([
                self.forward(features[i:i + batch_size], onehots[i:i + batch_size]).data
                for i in range(0, len(features), batch_size)
            ])
        finally:
            for p, s in zip(self.params.values(), saved):
                p.requires_grad = s

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.params[k].data[...] = v

    def save(self, path: str | Path, meta: dict | None = None) -> str:
        meta = {**(meta or {}), "extractor_digest": self.extractor_digest}
        return save_checkpoint(path, "classifier", self.config.to_dict(), self.state(), meta)

    @classmethod
    def load(cls, path: str | Path, extractor: Recognizer | None = None) -> "MisspellingClassifier":
        """Load a head; refuses an ``extractor`` other than the one it was trained on."""
        header, params = load_checkpoint(path, "classifier")
        stored = header["meta"].get("extractor_digest")
        if extractor is not None and stored != extractor.digest:
            raise CheckpointError(
                f"classifier was trained against extractor {stored}, got {extractor.digest}"
            )
        config = HeadConfig.from_dict(header["config"])
        if set(params) != set(init_head_params(config, np.random.default_rng(0))):
            raise CheckpointError("checkpoint layer list does not match the head layout")
        return cls(config, params, extractor_digest=stored)


def head_config_for(extractor: Recognizer, **overrides) -> HeadConfig:
    c = extractor.config
    return HeadConfig(steps=c.time_steps, alphabet_size=len(c.symbols), feature_dim=c.feature_dim, **overrides)


def encode_texts(texts: Sequence[str], alphabet: Alphabet, steps: int) -> np.ndarray:
    return np.stack([one_hot_encode(t, alphabet, steps) for t in texts])


def prepare(manifest: DatasetManifest, extractor: Recognizer) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Frozen-extractor features, one-hot labels and targets (1 = misspelled)."""
    feats = extractor.extract(manifest.images())
    onehots = encode_texts([e.text for e in manifest], extractor.config.alphabet, extractor.config.time_steps)
    return feats, onehots, manifest.labels.astype(np.float64)


@dataclass
class HeadSchedule:
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 1e-3
    final_learning_rate: float = 4e-5
    patience: int = 8
    seed: int = 0


@dataclass
class HeadTrainResult:
    model: MisspellingClassifier
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1


def _mean_bce(model: MisspellingClassifier, feats, onehots, labels) -> tuple[float, float]:
    p = np.clip(model.scores(feats, onehots), 1e-7, 1 - 1e-7)
    loss = float(np.mean(-(labels * np.log(p) + (1 - labels) * np.log(1 - p))))
    return loss, float(np.mean((p >= 0.5) == (labels == 1)))


def train_classifier(train: DatasetManifest, val: DatasetManifest, extractor: Recognizer,
                     schedule: HeadSchedule | None = None, config: HeadConfig | None = None,
                     on_epoch: Callable[[dict], None] | None = None,
                     prepared: tuple | None = None) -> HeadTrainResult:
    """Fit the head on frozen extractor features with BCE and RMSprop.

    The learning rate decays geometrically across the epoch budget; training
    stops early when validation loss has not improved for ``patience`` epochs
    and the best-validation weights are returned.
    """
    schedule = schedule or HeadSchedule()
    config = config or head_config_for(extractor)
    extractor.freeze()
    balance = val.balance
    if not 0.4 <= balance <= 0.6:
        log.warning("validation set is unbalanced: %.1f%% misspelled", 100 * balance)

    if prepared is None:
        prepared = (prepare(train, extractor), prepare(val, extractor))
    (feats, onehots, labels), (vfeats, vonehots, vlabels) = prepared

    top = (extractor.params["top.weights"].data, extractor.params["top.bias"].data)
    model = MisspellingClassifier(config, seed=schedule.seed, extractor_digest=extractor.digest, top=top)
    params = list(model.params.values())
    opt = RMSprop(params, learning_rate=schedule.learning_rate)
    rng = np.random.default_rng([schedule.seed, 11])
    result = HeadTrainResult(model)
    best_loss, best_state, waited = np.inf, model.state(), 0

    for epoch, lr in enumerate(geometric_schedule(schedule.learning_rate, schedule.final_learning_rate,
                                                  schedule.epochs)):
        opt.learning_rate = lr
        order = rng.permutation(len(feats))
        losses = []
        for start in range(0, len(order), schedule.batch_size):
            idx = order[start:start + schedule.batch_size]
            prob = model.forward(feats[idx], onehots[idx], training=True, rng=rng)
            loss = bce_loss(prob, labels[idx])
            if not np.isfinite(loss.item()):
                raise NumericError(f"BCE loss became {loss.item()} at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        val_loss, val_acc = _mean_bce(model, vfeats, vonehots, vlabels)
        record = {"epoch": epoch, "learning_rate": lr, "loss": float(np.mean(losses)),
                  "val_loss": val_loss, "val_accuracy": val_acc}
        result.history.append(record)
        if on_epoch:
            on_epoch(record)
        if val_loss < best_loss:
            best_loss, best_state, waited = val_loss, model.state(), 0
            result.best_epoch = epoch
        else:
            waited += 1
            if waited >= schedule.patience:
                break
    model.load_state(best_state)
    return result


def predict(image: np.ndarray, text: str, extractor: Recognizer, classifier: MisspellingClassifier) -> float:
    """P(the handwriting in ``image`` is not a correct spelling of ``text``)."""
    feats = extractor.extract(np.asarray(image)[None])
    onehot = encode_texts([text], extractor.config.alphabet, extractor.config.time_steps)
    return float(classifier.scores(feats, onehot)[0])
