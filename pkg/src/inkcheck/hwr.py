"""CNN + bidirectional recurrent recognizer trained with CTC.

The same network serves as the two-step baseline (decode, compare) and,
with its character-classification layer dropped, as the frozen feature
extractor of the misspelling classifier.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import bidirectional_recurrent, conv2d_same, ctc_feasible, ctc_loss, dense, init_recurrent, maxpool
from .metrics import corpus_cer
from .optim import RMSprop, geometric_schedule
from .tensor import NumericError, Tensor, parameter
from .textgen import LOWERCASE, Alphabet, DatasetManifest

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HwrConfig:
    height: int = 32
    width: int = 256
    conv_filters: tuple[int, ...] = (8, 16)
    pools: tuple[tuple[int, int], ...] = ((2, 2), (2, 4))
    recurrent_hidden: int = 32
    cell: str = "gru"
    symbols: str = LOWERCASE

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(self.conv_filters))
        object.__setattr__(self, "pools", tuple(tuple(p) for p in self.pools))
        if len(self.pools) != len(self.conv_filters):
            raise ValueError("need one pool size per conv block")
        if self.height % self._factor(0) or self.width % self._factor(1):
            raise ValueError(f"image {self.height}×{self.width} is not tiled by pools {self.pools}")
        if self.cell not in ("gru", "lstm"):
            raise ValueError(f"unknown recurrent cell {self.cell!r}")

    def _factor(self, axis: int) -> int:
        return int(np.prod([p[axis] for p in self.pools]))

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(self.symbols)

    @property
    def time_steps(self) -> int:
        return self.width // self._factor(1)

    @property
    def feature_dim(self) -> int:
        return 2 * self.recurrent_hidden

    @property
    def n_classes(self) -> int:
        return len(self.symbols) + 1

    @property
    def rnn_input(self) -> int:
        return self.height // self._factor(0) * self.conv_filters[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_filters"] = list(self.conv_filters)
        d["pools"] = [list(p) for p in self.pools]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HwrConfig":
        return cls(**{**d, "conv_filters": tuple(d["conv_filters"]), "pools": tuple(map(tuple, d["pools"]))})


@dataclass
class HwrSchedule:
    epochs: int = 8
    batch_size: int = 16
    learning_rate: float = 4e-3
    final_learning_rate: float = 5e-4
    patience: int = 3
    clip_norm: float = 5.0
    seed: int = 0


def init_hwr_params(config: HwrConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    cin = 1
    for i, f in enumerate(config.conv_filters):
        limit = np.sqrt(6.0 / (9 * cin + 9 * f))
        params[f"conv{i}.kernel"] = rng.uniform(-limit, limit, (3, 3, cin, f))
        params[f"conv{i}.bias"] = np.zeros(f)
        cin = f
    rnn = init_recurrent(rng, config.rnn_input, config.recurrent_hidden, config.cell)
    for direction, p in rnn.items():
        for k, v in p.items():
            params[f"rnn.{direction}.{k}"] = v
    limit = np.sqrt(6.0 / (config.feature_dim + config.n_classes))
    params["top.weights"] = rng.uniform(-limit, limit, (config.feature_dim, config.n_classes))
    params["top.bias"] = np.zeros(config.n_classes)
    return params


class Recognizer:
    def __init__(self, config: HwrConfig, params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.config = config
        raw = params if params is not None else init_hwr_params(config, np.random.default_rng(seed))
        self.params = {k: parameter(v) for k, v in raw.items()}
        self.digest: str | None = None

    # -- forward -----------------------------------------------------------
    def features(self, images) -> Tensor:
        """(N,)H×W images -> (N,)T×D recurrent outputs (everything below the top layer)."""
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float64))
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        n, h, w = x.shape
        if (h, w) != (self.config.height, self.config.width):
            raise ValueError(f"image {h}×{w} does not match config {self.config.height}×{self.config.width}")
        x = x.reshape(n, h, w, 1)
        for i, size in enumerate(self.config.pools):
            x = maxpool(conv2d_same(x, self.params[f"conv{i}.kernel"], self.params[f"conv{i}.bias"]).relu(), size)
        _, hh, ww, c = x.shape
        seq = x.transpose(0, 2, 1, 3).reshape(n, ww, hh * c)
        rnn = {d: {k: self.params[f"rnn.{d}.{k}"] for k in ("W", "U", "b")} for d in ("fwd", "bwd")}
        out = bidirectional_recurrent(seq, rnn, self.config.cell)
        return out[0] if squeeze else out

    def top(self, features) -> Tensor:
        """The character-classification layer: T×D features -> T×(A+1) logits."""
        return dense(features, self.params["top.weights"], self.params["top.bias"])

    def logits(self, images) -> Tensor:
        return self.top(self.features(images))

    # -- inference helpers -------------------------------------------------------
    def batched(self, fn: Callable, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        chunks = [fn(images[i:i + batch_size]).data for i in range(0, len(images), batch_size)]
        return np.concatenate(chunks)

    def extract(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        with_grad = self.trainable
        self.freeze()
        try:
            return self.batched(self.features, images, batch_size)
        finally:
            if with_grad:
                self.unfreeze()

    def recognize(self, images: np.ndarray, batch_size: int = 64) -> list[str]:
        return self.read(self.extract(images, batch_size))

    def read(self, features: np.ndarray) -> list[str]:
        """Greedy transcriptions of already extracted (N, T, D) features."""
        logits = features @ self.params["top.weights"].data + self.params["top.bias"].data
        return [greedy_decode(l, self.config.alphabet) for l in logits]

    # -- parameters ----------------------------------------------------------------
    @property
    def trainable(self) -> bool:
        return any(p.requires_grad for p in self.params.values())

    def freeze(self) -> None:
        for p in self.params.values():
            p.requires_grad = False
            p.zero_grad()

    def unfreeze(self) -> None:
        for p in self.params.values():
            p.requires_grad = True

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.params[k].data[...] = v

    def save(self, path: str | Path, meta: dict | None = None) -> str:
        return save_checkpoint(path, "hwr", self.config.to_dict(), self.state(), meta)

    @classmethod
    def load(cls, path: str | Path, expected: HwrConfig | None = None) -> "Recognizer":
        header, params = load_checkpoint(path, "hwr", expected.to_dict() if expected else None)
        model = cls(HwrConfig.from_dict(header["config"]), params)
        if set(params) != set(init_hwr_params(model.config, np.random.default_rng(0))):
            raise CheckpointError("checkpoint layer list does not match the recognizer layout")
        model.digest = header["file_digest"]
        return model


def greedy_decode(logits, alphabet: Alphabet) -> str:
    """Best-path decoding: per-step argmax, merge repeats, drop blanks."""
    path = np.asarray(logits.data if isinstance(logits, Tensor) else logits).argmax(axis=-1)
    blank = alphabet.blank_index
    out = []
    prev = None
    for c in path:
        if c != prev and c != blank:
            out.append(int(c))
        prev = c
    return alphabet.decode(out)


def extract_features(image: np.ndarray, model: Recognizer) -> np.ndarray:
    """T×D features of one image in inference mode."""
    return model.extract(np.asarray(image)[None])[0]


def _clip_gradients(params: Sequence[Tensor], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None)))
    if max_norm and total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


@dataclass
class TrainResult:
    model: Recognizer
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    skipped: int = 0


def evaluate_recognizer(model: Recognizer, images: np.ndarray, texts: Sequence[str]) -> dict:
    preds = model.recognize(images)
    return {
        "cer": corpus_cer(preds, texts),
        "word_accuracy": float(np.mean([p == t for p, t in zip(preds, texts)])),
    }


def train_hwr(train: DatasetManifest, val: DatasetManifest, config: HwrConfig,
              schedule: HwrSchedule | None = None,
              on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Minimize mean CTC loss with RMSprop; keep the epoch with the best validation CER."""
    schedule = schedule or HwrSchedule()
    for split in (train, val):
        if any(e.incorrect for e in split):
            raise ValueError("recognizer training data must contain only correctly spelled examples")
    alphabet = config.alphabet
    steps = config.time_steps

    def usable(split):
        keep = [e for e in split if ctc_feasible(steps, alphabet.encode(e.text))]
        return keep, len(split.examples) - len(keep)

    train_ex, skipped = usable(train)
    val_ex, skipped_val = usable(val)
    if skipped or skipped_val:
        log.warning("skipped %d CTC-infeasible labels", skipped + skipped_val)
    images = np.stack([e.image for e in train_ex])
    targets = [alphabet.encode(e.text) for e in train_ex]
    val_images = np.stack([e.image for e in val_ex])
    val_texts = [e.text for e in val_ex]

    model = Recognizer(config, seed=schedule.seed)
    params = list(model.params.values())
    opt = RMSprop(params, learning_rate=schedule.learning_rate)
    rates = geometric_schedule(schedule.learning_rate, schedule.final_learning_rate, schedule.epochs)
    rng = np.random.default_rng([schedule.seed, 7])
    result = TrainResult(model, skipped=skipped + skipped_val)
    best_cer, best_state, waited = np.inf, model.state(), 0

    for epoch, lr in enumerate(rates):
        opt.learning_rate = lr
        order = rng.permutation(len(images))
        losses = []
        for start in range(0, len(order), schedule.batch_size):
            idx = order[start:start + schedule.batch_size]
            loss = ctc_loss(model.logits(images[idx]), [targets[i] for i in idx]).mean()
            if not np.isfinite(loss.item()):
                raise NumericError(f"CTC loss became {loss.item()} at epoch {epoch}, batch starting {start}")
            opt.zero_grad()
            loss.backward()
            _clip_gradients(params, schedule.clip_norm)
            opt.step()
            losses.append(loss.item())
        metrics = evaluate_recognizer(model, val_images, val_texts)
        record = {"epoch": epoch, "learning_rate": lr, "loss": float(np.mean(losses)),
                  "val_cer": metrics["cer"], "val_word_accuracy": metrics["word_accuracy"]}
        result.history.append(record)
        if on_epoch:
            on_epoch(record)
        if metrics["cer"] < best_cer:
            best_cer, best_state, waited = metrics["cer"], model.state(), 0
            result.best_epoch = epoch
        else:
            waited += 1
            if waited >= schedule.patience:
                break
    model.load_state(best_state)
    return result
