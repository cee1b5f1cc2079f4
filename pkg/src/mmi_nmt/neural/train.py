"""Mini-batch gradient descent with norm clipping and epoch-wise learning-rate halving."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..core import ParallelCorpus, with_eos
from .model import Seq2SeqModel, init_model
from .network import loss_and_grad

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1.0
    clip: float = 5.0
    init_range: float = 0.1
    epochs: int = 12
    halve_after: int = 8
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if not self.clip > 0:
            raise ValueError("clip threshold must be positive")
        if not self.init_range > 0:
            raise ValueError("init range must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs >= 0 and batch size >= 1 required")


@dataclass
class ModelConfig:
    hidden: int = 64
    layers: int = 2
    attention: bool = True
    reverse_source: bool = True


@dataclass
class TrainResult:
    model: Seq2SeqModel
    losses: list = field(default_factory=list)   # mean per-sentence NLL per epoch
    initial_loss: float = float("nan")


def clip_gradients(grads: dict, threshold: float) -> float:
    """Scale ``grads`` in place so the global norm is at most ``threshold``; return the raw norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > threshold:
        scale = threshold / norm
        for g in grads.values():
            g *= scale
    return norm


def sgd_step(model: Seq2SeqModel, xs, ys, lr: float, clip: float) -> float:
    loss, grads = loss_and_grad(model, xs, ys)
    if not math.isfinite(loss):
        raise NumericalError(f"non-finite loss {loss}")
    clip_gradients(grads, clip)
    for name, g in grads.items():
        model.params[name] -= lr * g
    return loss


def learning_rate_at(config: TrainConfig, epoch: int) -> float:
    """Epochs are 1-based; halving starts once ``halve_after`` epochs are complete."""
    return config.learning_rate * 0.5 ** max(0, epoch - config.halve_after)


def fit(model: Seq2SeqModel, xs: Sequence, ys: Sequence, config: TrainConfig,
        on_epoch: Callable[[int, float], None] | None = None) -> TrainResult:
    """Train ``model`` in place on pairs ``(xs[i], ys[i])``; targets must already end with EOS."""
    n = len(ys)
    if n == 0:
        raise ValueError("empty corpus")
    rng = np.random.default_rng([config.seed, 7])
    result = TrainResult(model)
    result.initial_loss = corpus_loss(model, xs, ys, config.batch_size)
    for epoch in range(1, config.epochs + 1):
        lr = learning_rate_at(config, epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss = sgd_step(model, [xs[i] for i in idx], [ys[i] for i in idx], lr, config.clip)
            total += loss * len(idx)
        result.losses.append(total / n)
        log.info("epoch %d lr %.4g loss %.6f", epoch, lr, total / n)
        if on_epoch:
            on_epoch(epoch, total / n)
    return result


def corpus_loss(model, xs, ys, batch_size=256) -> float:
    from .inference import score_batch
    lp = score_batch(model, xs, ys, batch_size)
    loss = -float(np.mean(lp))
    if not math.isfinite(loss):
        raise NumericalError(f"non-finite loss {loss}")
    return loss


def train(corpus: ParallelCorpus, config: TrainConfig, model_config: ModelConfig | None = None,
          model: Seq2SeqModel | None = None, direction: str = "forward", on_epoch=None) -> TrainResult:
    mc = model_config or ModelConfig()
    if model is None:
        model = init_model(len(corpus.source_vocab), len(corpus.target_vocab), mc.hidden, mc.layers,
                           mc.attention, config.init_range, config.seed, direction, mc.reverse_source)
    xs = corpus.sources
    ys = [with_eos(t) for t in corpus.targets]
    return fit(model, xs, ys, config, on_epoch)


def train_backward(corpus: ParallelCorpus, config: TrainConfig, model_config: ModelConfig | None = None,
                   on_epoch=None) -> TrainResult:
    """``p(x|y)``: the same procedure on the pair-swapped corpus."""
    return train(corpus.swapped(), config, model_config, direction="backward", on_epoch=on_epoch)


def train_lm(sentences: Sequence[Sequence[int]], vocab_size: int, config: TrainConfig, hidden: int = 64,
             on_epoch=None) -> TrainResult:
    """Single-layer LSTM language model over id sequences (EOS appended here)."""
    sentences = [tuple(s) for s in sentences if len(s)]
    if not sentences:
        raise ValueError("empty corpus")
    model = init_model(0, vocab_size, hidden, 1, False, config.init_range, config.seed, "lm", False)
    ys = [with_eos(s) for s in sentences]
    return fit(model, [None] * len(ys), ys, config, on_epoch)
