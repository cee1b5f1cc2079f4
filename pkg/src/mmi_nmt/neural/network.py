"""Batched encoder/decoder passes with hand-written backpropagation.

Decoding convention: ``h_0`` is the encoder's final top-layer output (zero for a language
model). Token ``y_t`` is predicted from ``h_{t-1}`` and the attention it induces; then the
decoder consumes ``[h_{t-1}, e(y_t), h_att]`` to produce ``h_t``. No BOS symbol is needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import EOS_ID, DataError
from .model import Seq2SeqModel
from .ops import log_softmax, lstm_gates


def cell_forward(W, h_prev, c_prev, x):
    xin, i, f, o, l = lstm_gates(W, h_prev, x)
    c = f * c_prev + i * l
    tc = np.tanh(c)
    return o * tc, c, (xin, i, f, o, l, c_prev, tc)


def cell_backward(W, cache, dh, dc, dW):
    """Accumulate into ``dW``; return gradients for ``(h_prev, x, c_prev)``."""
    xin, i, f, o, l, c_prev, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate([dc * l * i * (1.0 - i), dc * c_prev * f * (1.0 - f),
                         do * o * (1.0 - o), dc * i * (1.0 - l * l)], axis=-1)
    dW += dz.T @ xin
    dxin = dz @ W
    K = W.shape[0] // 4
    return dxin[:, :K], dxin[:, K:], dc * f


def pad(seqs: Sequence[Sequence[int]], vocab_size: int):
    n = max(len(s) for s in seqs)
    ids = np.zeros((len(seqs), n), dtype=np.int64)
    mask = np.zeros((len(seqs), n))
    for b, s in enumerate(seqs):
        if not len(s):
            raise DataError("empty sequence")
        if min(s) < 0 or max(s) >= vocab_size:
            raise DataError("token id out of range")
        ids[b, :len(s)] = s
        mask[b, :len(s)] = 1.0
    return ids, mask


@dataclass
class Encoded:
    H: np.ndarray | None        # (B, S, K) top-layer outputs in encoder order
    mask: np.ndarray | None     # (B, S)
    h: list                     # per layer (B, K) final states
    c: list
    lengths: np.ndarray | None
    layer_outputs: list | None = None
    caches: list | None = None
    ids: np.ndarray | None = None   # padded ids in encoder order


def encode_batch(model: Seq2SeqModel, xs, batch: int | None = None, keep_cache=False,
                 all_layers=False) -> Encoded:
    K, L = model.hidden, model.layers
    if model.is_lm:
        B = batch if batch is not None else len(xs)
        z = [np.zeros((B, K)) for _ in range(L)]
        return Encoded(None, None, z, [a.copy() for a in z], None)
    xs = [tuple(x)[::-1] if model.reverse_source else tuple(x) for x in xs]
    X, M = pad(xs, model.source_vocab_size)
    B, S = X.shape
    h = [np.zeros((B, K)) for _ in range(L)]
    c = [np.zeros((B, K)) for _ in range(L)]
    H = np.zeros((B, S, K))
    outs = [np.zeros((B, S, K)) for _ in range(L)] if all_layers else None
    caches = [] if keep_cache else None
    emb, Ws = model.params["src_emb"], [model.params[f"enc.{l}"] for l in range(L)]
    for s in range(S):
        inp = emb[X[:, s]]
        m = M[:, s, None]
        step = []
        for l in range(L):
            hn, cn, cache = cell_forward(Ws[l], h[l], c[l], inp)
            # padded steps carry the state through unchanged
            h[l] = m * hn + (1.0 - m) * h[l]
            c[l] = m * cn + (1.0 - m) * c[l]
            inp = h[l]
            step.append(cache)
            if all_layers:
                outs[l][:, s] = h[l]
        H[:, s] = h[L - 1]
        if keep_cache:
            caches.append(step)
    return Encoded(H, M, h, c, M.sum(axis=1).astype(np.int64), outs,
                   caches if keep_cache else None, X)


def predict(model: Seq2SeqModel, enc: Encoded, top, keep_cache=False):
    """Log-distribution over the target vocabulary from decoder output ``top`` (B, K).

    Returns ``(logp, h_att, attn, cache)``; ``attn`` is in encoder order, None without attention.
    """
    p = model.params
    if model.attention:
        H, M = enc.H, enc.mask
        B = top.shape[0]
        if H.shape[0] != B:
            H, M = np.broadcast_to(H, (B,) + H.shape[1:]), np.broadcast_to(M, (B, M.shape[1]))
        q = top @ p["W_a"]
        sc = np.where(M > 0, np.einsum("bk,bsk->bs", q, H), -np.inf)
        sc = sc - np.max(sc, axis=1, keepdims=True)
        e = np.exp(sc)
        a = e / np.sum(e, axis=1, keepdims=True)
        m = np.einsum("bs,bsk->bk", a, H)
        cat = np.concatenate([top, m], axis=1)
        ha = np.tanh(cat @ p["W_c"].T)
    else:
        ha, a, q, cat, H = top, None, None, None, None
    logp = log_softmax(ha @ p["W_s"].T)
    cache = (top, q, a, cat, ha, logp, H) if keep_cache else None
    return logp, ha, a, cache


def advance(model: Seq2SeqModel, h, c, tokens, ha, keep_cache=False):
    """Consume ``tokens`` (B,) and return the next per-layer ``(h, c)`` lists."""
    inp = model.params["tgt_emb"][tokens]
    h, c = list(h), list(c)
    caches = []
    for l in range(model.layers):
        x = np.concatenate([inp, ha], axis=1) if (model.attention and l == 0) else inp
        h[l], c[l], cache = cell_forward(model.params[f"dec.{l}"], h[l], c[l], x)
        inp = h[l]
        caches.append(cache)
    return h, c, (caches if keep_cache else None)


def _target_batch(model, ys):
    for y in ys:
        if not len(y) or y[-1] != EOS_ID:
            raise DataError("target sequence must end with EOS")
    return pad(ys, model.target_vocab_size)


def forward(model: Seq2SeqModel, xs, ys, keep_cache=False, want_attention=False):
    """Forced decoding. Returns ``(logprob per sentence, attention per step or None, cache)``."""
    Y, MY = _target_batch(model, ys)
    B, T = Y.shape
    enc = encode_batch(model, xs, batch=B, keep_cache=keep_cache)
    h, c = list(enc.h), list(enc.c)
    total = np.zeros(B)
    rows = np.arange(B)
    pred_caches, adv_caches, attns = [], [], []
    for t in range(T):
        logp, ha, a, pc = predict(model, enc, h[-1], keep_cache)
        total += logp[rows, Y[:, t]] * MY[:, t]
        if want_attention:
            attns.append(a)
        if keep_cache:
            pred_caches.append(pc)
        if t < T - 1:
            h, c, ac = advance(model, h, c, Y[:, t], ha, keep_cache)
            if keep_cache:
                adv_caches.append(ac)
    cache = (enc, Y, MY, pred_caches, adv_caches) if keep_cache else None
    return total, (attns if want_attention else None), cache


def loss_and_grad(model: Seq2SeqModel, xs, ys):
    """Mean per-sentence negative log-likelihood and its gradient for every parameter."""
    logprobs, _, (enc, Y, MY, pred_caches, adv_caches) = forward(model, xs, ys, keep_cache=True)
    B, T = Y.shape
    K, L = model.hidden, model.layers
    p = model.params
    g = {k: np.zeros_like(v) for k, v in p.items()}
    rows = np.arange(B)
    dh = [np.zeros((B, K)) for _ in range(L)]
    dc = [np.zeros((B, K)) for _ in range(L)]
    dH = np.zeros_like(enc.H) if model.attention else None
    for t in range(T - 1, -1, -1):
        dha_fed = 0.0
        if t < T - 1:
            caches = adv_caches[t]
            for l in range(L - 1, -1, -1):
                dh_prev, dx, dc_prev = cell_backward(p[f"dec.{l}"], caches[l], dh[l], dc[l], g[f"dec.{l}"])
                dh[l], dc[l] = dh_prev, dc_prev
                if l > 0:
                    dh[l - 1] = dh[l - 1] + dx
                else:
                    np.add.at(g["tgt_emb"], Y[:, t], dx[:, :K])
                    if model.attention:
                        dha_fed = dx[:, K:]
        top, q, a, cat, ha, logp, H = pred_caches[t]
        dlogits = np.exp(logp)
        dlogits[rows, Y[:, t]] -= 1.0
        dlogits *= (MY[:, t] / B)[:, None]
        g["W_s"] += dlogits.T @ ha
        dha = dlogits @ p["W_s"] + dha_fed
        if model.attention:
            dpre = dha * (1.0 - ha * ha)
            g["W_c"] += dpre.T @ cat
            dcat = dpre @ p["W_c"]
            dtop, dm = dcat[:, :K], dcat[:, K:]
            dH += a[:, :, None] * dm[:, None, :]
            da = np.einsum("bk,bsk->bs", dm, H)
            dsc = a * (da - np.sum(a * da, axis=1, keepdims=True))
            dq = np.einsum("bs,bsk->bk", dsc, H)
            dH += dsc[:, :, None] * q[:, None, :]
            g["W_a"] += top.T @ dq
            dtop = dtop + dq @ p["W_a"].T
        else:
            dtop = dha
        dh[L - 1] = dh[L - 1] + dtop
    if not model.is_lm:
        X = enc.ids
        M = enc.mask
        for s in range(X.shape[1] - 1, -1, -1):
            if model.attention:
                dh[L - 1] = dh[L - 1] + dH[:, s]
            m = M[:, s, None]
            for l in range(L - 1, -1, -1):
                dh_prev, dx, dc_prev = cell_backward(p[f"enc.{l}"], enc.caches[s][l], m * dh[l], m * dc[l],
                                                     g[f"enc.{l}"])
                dh[l] = dh_prev + (1.0 - m) * dh[l]
                dc[l] = dc_prev + (1.0 - m) * dc[l]
                if l > 0:
                    dh[l - 1] = dh[l - 1] + dx
                else:
                    np.add.at(g["src_emb"], X[:, s], dx)
    return -float(np.mean(logprobs)), g
