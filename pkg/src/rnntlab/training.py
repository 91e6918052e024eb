"""Fine-tuning engine: training cache, momentum SGD, EWC, early stopping.

A session consumes an immutable snapshot of the cache in order, runs
momentum-SGD steps on the mean transducer loss (plus the EWC penalty when
enabled) restricted to one parameter group, evaluates after every epoch,
and early-stops on the user-test WER with a fixed patience. Everything is
deterministic given (model, snapshot, config).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import rnnt_loss
from .decode import greedy_decode
from .ewc import AnchorParameters, FisherEstimate, ewc_penalty
from .metrics import score_corpus
from .model import GROUPS, TransducerModel, decode_ids, encode_text


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 5
    epochs: int = 15
    trainable_group: str = "All"
    ewc_lambda: float = 0.0
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.trainable_group not in GROUPS:
            raise ValueError(f"unknown parameter group {self.trainable_group!r}")
        if self.ewc_lambda < 0:
            raise ValueError("ewc_lambda must be non-negative")

    def replace(self, **kw) -> "TrainConfig":
        d = self.__dict__.copy()
        d.update(kw)
        return TrainConfig(**d)


@dataclass(frozen=True)
class CacheItem:
    uid: str
    features: np.ndarray
    transcript: str
    source: str


class TrainingCache:
    """Append-only FIFO store of (features, transcript) examples."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[CacheItem] = []
        self._ids: set[str] = set()
        self.evicted = 0

    def __len__(self) -> int:
        return len(self._items)

    def append(self, uid: str, features, transcript: str, source: str) -> None:
        if uid in self._ids:
            raise ValueError(f"duplicate utterance id {uid!r}")
        self._ids.add(uid)
        self._items.append(CacheItem(uid, np.asarray(features, dtype=np.float64),
                                     transcript, source))
        while len(self._items) > self.capacity:
            dropped = self._items.pop(0)
            self._ids.discard(dropped.uid)
            self.evicted += 1

    def snapshot(self) -> tuple[CacheItem, ...]:
        """Immutable view for a training session; later appends are not seen."""
        return tuple(self._items)


class MomentumOptimizer:
    """v <- mu * v + g; theta <- theta - lr * v. Velocity starts at zero."""

    def __init__(self, params: Sequence[ad.Parameter], learning_rate: float,
                 momentum: float):
        self.params = list(params)
        self.lr = learning_rate
        self.mu = momentum
        self.velocity = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            v *= self.mu
            v += p.grad
            p.value = p.value - self.lr * v


@dataclass(frozen=True)
class EvalSuite:
    """Held-out data decoded after each epoch: (features, reference words)."""
    user_test: Sequence[tuple[np.ndarray, list[str]]]
    base_test: Sequence[tuple[np.ndarray, list[str]]]
    keywords: frozenset[str]


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    user_wer: float
    base_wer: float
    name_precision: float
    name_recall: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    returned_epoch: int = 0
    stopped_early: bool = False

    def to_dict(self) -> dict:
        """Deterministic part only; wall-clock lives in timing_dict()."""
        return {
            "epochs": [vars(e).copy() for e in self.epochs],
            "returned_epoch": self.returned_epoch,
            "stopped_early": self.stopped_early,
        }

    def timing_dict(self) -> dict:
        return {"epoch_seconds": list(self.epoch_seconds)}

    def returned_stats(self) -> EpochStats:
        return self.epochs[self.returned_epoch - 1]


def greedy_decode_text(model: TransducerModel, features) -> str:
    return decode_ids(greedy_decode(model, features))


def decode_corpus(model: TransducerModel, test_set) -> tuple[list, list]:
    refs, hyps = [], []
    for features, ref_words in test_set:
        refs.append(list(ref_words))
        hyps.append(greedy_decode_text(model, features).split())
    return refs, hyps


def evaluate(model: TransducerModel, suite: EvalSuite) -> dict:
    user_refs, user_hyps = decode_corpus(model, suite.user_test)
    user = score_corpus(user_refs, user_hyps, suite.keywords)
    out = {"user": user}
    if suite.base_test:
        base_refs, base_hyps = decode_corpus(model, suite.base_test)
        out["base"] = score_corpus(base_refs, base_hyps, suite.keywords)
    return out


def personalize(model: TransducerModel, cache: Sequence[CacheItem],
                config: TrainConfig, suite: EvalSuite,
                fisher: FisherEstimate | None = None,
                anchors: AnchorParameters | None = None) -> TrainReport:
    """Fine-tune the model in place; returns the per-epoch report.

    The model ends at the best epoch by user-test WER if early stopping
    fired, otherwise at the final epoch.
    """
    if not cache:
        raise ValueError("training cache snapshot is empty")
    if config.ewc_lambda > 0 and (fisher is None or anchors is None):
        raise ValueError("ewc_lambda > 0 requires fisher and anchors")

    examples = [(item.features, encode_text(item.transcript)) for item in cache]
    batches = [examples[i:i + config.batch_size]
               for i in range(0, len(examples), config.batch_size)]
    trainable = [model.param(n) for n in model.select_trainable(config.trainable_group)]
    opt = MomentumOptimizer(trainable, config.learning_rate, config.momentum)

    report = TrainReport()
    best_wer = np.inf
    best_values = None
    best_epoch = 0
    waited = 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for bi, batch in enumerate(batches):
            model.zero_grad()
            with ad.Tape() as tape:
                loss = rnnt_loss.batch_loss(model, batch)
                if config.ewc_lambda > 0:
                    loss = ad.add(loss, ewc_penalty(model, anchors, fisher,
                                                    config.ewc_lambda))
                try:
                    value = loss.item()
                    tape.backward(loss)
                except ad.GradError as err:
                    raise ad.GradError(
                        f"training aborted at epoch {epoch}, batch {bi}: {err}") from err
            if not np.isfinite(value):
                raise ad.GradError(
                    f"training aborted at epoch {epoch}, batch {bi}: non-finite loss")
            losses.append(value)
            opt.step()
        seconds = time.perf_counter() - t0  # optimizer work only, not eval
        scores = evaluate(model, suite)
        user = scores["user"]
        stats = EpochStats(
            epoch=epoch,
            mean_loss=float(np.mean(losses)),
            user_wer=user["wer"],
            base_wer=scores.get("base", {}).get("wer", 0.0),
            name_precision=user["keywords"]["precision"],
            name_recall=user["keywords"]["recall"],
        )
        report.epochs.append(stats)
        report.epoch_seconds.append(seconds)

        if stats.user_wer < best_wer:
            best_wer = stats.user_wer
            best_values = model.snapshot_values()
            best_epoch = epoch
            waited = 0
        else:
            waited += 1
            if waited >= config.patience:
                report.stopped_early = True
                break

    if report.stopped_early and best_values is not None:
        model.load_values(best_values)
        report.returned_epoch = best_epoch
    else:
        report.returned_epoch = report.epochs[-1].epoch
    return report
