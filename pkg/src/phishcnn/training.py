"""Mini-batch training with validation-loss early stopping."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .model import ModelConfig, Network, build_model
from .nn.functional import bce_loss
from .nn.optim import Adam
from .nn.rng import RngStream

log = logging.getLogger(__name__)

HISTORY_HEADER = ["epoch", "train_loss", "val_loss", "train_acc", "val_acc", "seconds"]


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        super().__init__(f"non-finite training loss {loss} in epoch {epoch}")


@dataclass(frozen=True)
class TrainingConfig:
    max_epochs: int = 300
    patience: int = 50
    batch_size: int = 32
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    min_delta: float = 1e-6
    seed: int = 42
    dtype: str = "float32"

    def __post_init__(self):
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ValueError("max_epochs, patience and batch_size must be positive")
        if self.patience > self.max_epochs:
            raise ValueError(f"patience ({self.patience}) exceeds max_epochs ({self.max_epochs})")
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    seconds: float


@dataclass
class TrainedModel:
    network: Network
    history: list[EpochRecord]
    stopped_epoch: int
    best_epoch: int
    train_seconds: float
    test_seconds: float = 0.0

    @property
    def best_record(self) -> EpochRecord:
        return self.history[self.best_epoch - 1]


class EarlyStopping:
    """Tracks the best validation loss and decides when to stop.

    An epoch counts as an improvement only if it beats the best loss so far by
    more than ``min_delta``. Training stops once ``patience`` consecutive
    epochs have passed without improvement.
    """

    def __init__(self, patience: int, min_delta: float = 1e-6):
        self.patience, self.min_delta = patience, min_delta
        self.best_loss = math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record one epoch; returns True if it is the new best."""
        if val_loss < self.best_loss - self.min_delta:
            self.best_loss, self.best_epoch, self.wait = val_loss, epoch, 0
            return True
        self.wait += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.wait >= self.patience


def _arrays(data, dtype) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, Dataset):
        return data.to_tensor(dtype), data.require_labels().astype(np.float64)
    x, y = data
    x = np.asarray(x, dtype=dtype)
    if x.ndim == 2:
        x = x[:, :, None]
    return x, np.asarray(y, dtype=np.float64)


def minibatches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    """Split ``order`` into batches; a trailing batch of one joins the previous one."""
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


def _infer(network: Network, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
    return np.concatenate([network.forward(x[i:i + chunk], training=False)
                           for i in range(0, len(x), chunk)]) if len(x) else np.zeros(0)


def train(config: ModelConfig, train_set, validation_set, tconfig: TrainingConfig = TrainingConfig(),
          rng: RngStream | None = None) -> TrainedModel:
    """Train a fresh network and return it with the best-epoch weights restored.

    ``rng`` defaults to ``RngStream(tconfig.seed)``; weights use sub-stream 0
    (dropout masks its child 1) and epoch shuffling sub-stream 2.
    """
    dtype = np.dtype(tconfig.dtype)
    x, y = _arrays(train_set, dtype)
    xv, yv = _arrays(validation_set, dtype)
    if len(x) == 0 or len(xv) == 0:
        raise TrainingError("training and validation sets must be non-empty")
    if len(np.unique(y)) < 2:
        raise TrainingError("training set contains a single class")
    if len(x) < 2:
        raise TrainingError("batch normalization needs at least two training samples")

    rng = rng or RngStream(tconfig.seed)
    network = build_model(config, rng.derive(0), dtype)
    shuffle = rng.derive(2)
    opt = Adam(tconfig.learning_rate, tconfig.beta1, tconfig.beta2, tconfig.epsilon)
    layers = network.trainable_layers()
    stopper = EarlyStopping(tconfig.patience, tconfig.min_delta)
    history: list[EpochRecord] = []
    best_state = network.state_dict()
    start = time.perf_counter()

    for epoch in range(1, tconfig.max_epochs + 1):
        t0 = time.perf_counter()
        loss_sum = 0.0
        correct = 0
        for idx in minibatches(shuffle.permutation(len(x)), tconfig.batch_size):
            probs = network.forward(x[idx], training=True)
            loss, dprobs = bce_loss(probs, y[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            network.backward(dprobs)
            opt.step(layers)
            loss_sum += loss * len(idx)
            correct += int(np.sum((probs >= 0.5) == (y[idx] == 1)))
        val_probs = _infer(network, xv)
        val_loss, _ = bce_loss(val_probs, yv)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(epoch, val_loss)
        val_acc = float(np.mean((val_probs >= 0.5) == (yv == 1)))
        history.append(EpochRecord(epoch, loss_sum / len(x), correct / len(x), val_loss, val_acc,
                                   time.perf_counter() - t0))
        if stopper.update(epoch, val_loss):
            best_state = network.state_dict()
        log.debug("epoch %d train_loss %.4f val_loss %.4f val_acc %.4f", epoch, loss_sum / len(x),
                  val_loss, val_acc)
        if stopper.should_stop:
            break

    network.load_state_dict(best_state)
    network.eval()
    return TrainedModel(network, history, stopped_epoch=len(history), best_epoch=stopper.best_epoch,
                        train_seconds=time.perf_counter() - start)


@dataclass
class SplitEvaluation:
    loss: float
    accuracy: float
    scores: np.ndarray
    seconds: float
    labels: np.ndarray = field(repr=False, default=None)

    @property
    def predictions(self) -> np.ndarray:
        return (self.scores >= 0.5).astype(np.int8)


def evaluate_split(model: TrainedModel | Network, data) -> SplitEvaluation:
    """Inference-mode loss, threshold-0.5 accuracy and per-sample scores."""
    network = model.network if isinstance(model, TrainedModel) else model
    x, y = _arrays(data, network.dtype)
    if len(x) == 0:
        raise ValueError("cannot evaluate an empty set")
    t0 = time.perf_counter()
    scores = _infer(network, x)
    seconds = time.perf_counter() - t0
    loss, _ = bce_loss(scores, y)
    accuracy = float(np.mean((scores >= 0.5) == (y == 1)))
    if isinstance(model, TrainedModel):
        model.test_seconds = seconds
    return SplitEvaluation(loss, accuracy, scores, seconds, y.astype(np.int8))


# --- history files --------------------------------------------------------

def history_filename(config: ModelConfig, fold: int, seed: int) -> str:
    return f"history_{config.slug}_fold{fold}_seed{seed}.csv"


def export_history(history: list[EpochRecord], path=None) -> str:
    """Comma-separated curve file, one row per epoch. Returns the text."""
    if not history:
        raise ValueError("empty history")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_HEADER)
    for r in history:
        w.writerow([r.epoch] + [f"{v:.10g}" for v in (r.train_loss, r.val_loss, r.train_acc, r.val_acc, r.seconds)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def parse_history(text: str) -> list[EpochRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != HISTORY_HEADER:
        raise ValueError(f"history header must be {','.join(HISTORY_HEADER)}")
    out = []
    for row in rows[1:]:
        epoch, tl, vl, ta, va, s = row
        out.append(EpochRecord(int(epoch), float(tl), float(ta), float(vl), float(va), float(s)))
    return out
