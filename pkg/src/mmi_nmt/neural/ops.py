"""LSTM cell, general-score attention and the attentional output layer.

All functions accept a single vector or a batch of row vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


@dataclass
class LstmLayerParams:
    """Gate matrices stacked row-wise as ``[W_i; W_f; W_o; W_l]``, shape ``(4K, input_width)``.

    The input is laid out ``[h_prev, x]`` (plus the attended hidden for an input-feeding layer).
    There are no bias vectors; a constant-1 slot in ``x`` can stand in for one.
    """

    W: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[0] % 4:
            raise ValueError(f"gate matrix must be (4K, width), got {self.W.shape}")

    @classmethod
    def from_gates(cls, W_i, W_f, W_o, W_l) -> "LstmLayerParams":
        shapes = {np.shape(w) for w in (W_i, W_f, W_o, W_l)}
        if len(shapes) != 1:
            raise ValueError("gate matrices must share a shape")
        return cls(np.concatenate([W_i, W_f, W_o, W_l], axis=0))

    @property
    def hidden(self) -> int:
        return self.W.shape[0] // 4

    @property
    def input_width(self) -> int:
        return self.W.shape[1]

    def gate(self, k: int) -> np.ndarray:
        K = self.hidden
        return self.W[k * K:(k + 1) * K]

    W_i = property(lambda self: self.gate(0))
    W_f = property(lambda self: self.gate(1))
    W_o = property(lambda self: self.gate(2))
    W_l = property(lambda self: self.gate(3))


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


def lstm_gates(W: np.ndarray, h_prev, x):
    """Return ``(xin, i, f, o, l)`` for input ``[h_prev, x]``; used by the cell and by backprop."""
    xin = np.concatenate([h_prev, x], axis=-1)
    if xin.shape[-1] != W.shape[1]:
        raise ValueError(f"input width {xin.shape[-1]} does not match gate width {W.shape[1]}")
    z = xin @ W.T
    K = W.shape[0] // 4
    i = sigmoid(z[..., :K])
    f = sigmoid(z[..., K:2 * K])
    o = sigmoid(z[..., 2 * K:3 * K])
    l = np.tanh(z[..., 3 * K:])
    return xin, i, f, o, l


def lstm_step(params: LstmLayerParams, prev: LstmState, x) -> LstmState:
    h_prev = np.asarray(prev.h, dtype=np.float64)
    c_prev = np.asarray(prev.c, dtype=np.float64)
    if h_prev.shape[-1] != params.hidden or c_prev.shape != h_prev.shape:
        raise ValueError("previous state does not match layer size")
    _, i, f, o, l = lstm_gates(params.W, h_prev, np.asarray(x, dtype=np.float64))
    c = f * c_prev + i * l
    return LstmState(o * np.tanh(c), c)


def attention_scores(h_dec, H_enc, W_a):
    """``v[t'] = h_dec . W_a . H_enc[t']``. ``H_enc`` is ``(N, K)`` or ``(B, N, K)``."""
    q = np.asarray(h_dec) @ W_a
    if np.ndim(H_enc) == 2:
        return np.asarray(H_enc) @ q.T if q.ndim == 1 else q @ np.asarray(H_enc).T
    return np.einsum("bk,bnk->bn", q, H_enc)


def attention_weights(h_dec, H_enc, W_a):
    H_enc = np.asarray(H_enc, dtype=np.float64)
    if H_enc.size == 0 or H_enc.shape[-2] == 0:
        raise ValueError("empty encoder states")
    return softmax(attention_scores(np.asarray(h_dec, dtype=np.float64), H_enc, W_a))


def attention_context(a, H_enc):
    a = np.asarray(a, dtype=np.float64)
    H_enc = np.asarray(H_enc, dtype=np.float64)
    if a.shape[-1] != H_enc.shape[-2]:
        raise ValueError(f"{a.shape[-1]} weights for {H_enc.shape[-2]} encoder positions")
    if H_enc.ndim == 3:
        return np.einsum("bn,bnk->bk", a, H_enc)
    return a @ H_enc


def predict_distribution(h_dec, m, W_c, W_s):
    """Return ``(p, h_att)`` with ``h_att = tanh(W_c [h_dec, m])`` and ``p = softmax(W_s h_att)``."""
    h_att = np.tanh(np.concatenate([h_dec, m], axis=-1) @ W_c.T)
    return softmax(h_att @ W_s.T), h_att
