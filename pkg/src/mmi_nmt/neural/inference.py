"""Scoring and forced decoding on top of the batched network passes."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..core import EOS_ID, DataError
from .model import Seq2SeqModel
from .network import encode_batch, forward
from .ops import LstmState


def encode_source(model: Seq2SeqModel, x: Sequence[int], reverse: bool | None = None):
    """Run the encoder stack over one sentence.

    Returns ``(outputs, finals)``: per layer an ``(N, K)`` array of step outputs in the order
    the encoder read them, and the final :class:`LstmState` of each layer.
    """
    if model.is_lm:
        raise ValueError("a language model has no encoder")
    if not len(x):
        raise DataError("empty source")
    if reverse is not None and reverse != model.reverse_source:
        model = _with_reverse(model, reverse)
    enc = encode_batch(model, [tuple(x)], all_layers=True)
    return [o[0] for o in enc.layer_outputs], [LstmState(h[0], c[0]) for h, c in zip(enc.h, enc.c)]


def _with_reverse(model, reverse):
    m = Seq2SeqModel(model.source_vocab_size, model.target_vocab_size, model.hidden, model.layers,
                     model.attention, model.params, model.direction, reverse)
    return m


def score_batch(model: Seq2SeqModel, xs, ys, batch_size: int = 256) -> np.ndarray:
    """``log p(y|x)`` for each pair; every ``y`` must end with EOS. ``xs`` is ignored for an LM."""
    ys = [tuple(y) for y in ys]
    xs = [None] * len(ys) if model.is_lm else [tuple(x) for x in xs]
    out = np.zeros(len(ys))
    # length-sorted batches keep padding small; results are written back in input order
    order = sorted(range(len(ys)), key=lambda i: (len(ys[i]), 0 if xs[i] is None else len(xs[i])))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        lp, _, _ = forward(model, [xs[i] for i in idx], [ys[i] for i in idx])
        out[idx] = lp
    return out


def sequence_logprob(model: Seq2SeqModel, x, y) -> float:
    """``sum_t log p(y_t | y_<t, x)`` including the final EOS term."""
    if not len(y) or y[-1] != EOS_ID:
        raise DataError("target sequence must end with EOS")
    return float(score_batch(model, [x], [y])[0])


def lm_logprob(lm: Seq2SeqModel, y) -> float:
    if not lm.is_lm:
        raise ValueError("not a language model")
    return sequence_logprob(lm, None, y)


def forced_attention(model: Seq2SeqModel, x, y) -> np.ndarray:
    """Attention weights for each target position of ``y`` during forced decoding.

    Rows follow ``y``; columns index the source positions in original (unreversed) order.
    """
    if not model.attention:
        raise ValueError("alignment requires attention")
    _, attns, _ = forward(model, [tuple(x)], [tuple(y)], want_attention=True)
    A = np.stack([a[0] for a in attns])
    return A[:, ::-1].copy() if model.reverse_source else A
