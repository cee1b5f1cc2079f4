"""Seq2seq model container, initialization and the model file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ..core import DataError, Vocabulary
from .ops import LstmLayerParams

FORMAT_NAME = "mmi-nmt-model"
FORMAT_VERSION = 1
DIRECTIONS = ("forward", "backward", "lm")


@dataclass
class Seq2SeqModel:
    """Parameters for one translation direction.

    ``params`` holds every trainable tensor by name: ``src_emb``, ``tgt_emb``, ``enc.{l}``,
    ``dec.{l}``, ``W_s`` and, for attention models, ``W_a`` and ``W_c``. A language model is
    the degenerate case with ``source_vocab_size == 0``: no encoder, zero initial state.
    """

    source_vocab_size: int
    target_vocab_size: int
    hidden: int
    layers: int
    attention: bool
    params: dict = field(repr=False)
    direction: str = "forward"
    reverse_source: bool = True

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        expected = param_shapes(self.source_vocab_size, self.target_vocab_size, self.hidden,
                                self.layers, self.attention)
        if set(expected) != set(self.params):
            raise ValueError(f"parameter names {sorted(self.params)} != {sorted(expected)}")
        for name, shape in expected.items():
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: shape {arr.shape}, expected {shape}")
            self.params[name] = arr

    @property
    def is_lm(self) -> bool:
        return self.source_vocab_size == 0

    @property
    def encoder(self) -> list[LstmLayerParams]:
        return [LstmLayerParams(self.params[f"enc.{l}"]) for l in range(self.layers) if not self.is_lm]

    @property
    def decoder(self) -> list[LstmLayerParams]:
        return [LstmLayerParams(self.params[f"dec.{l}"]) for l in range(self.layers)]

    def copy(self) -> "Seq2SeqModel":
        return Seq2SeqModel(self.source_vocab_size, self.target_vocab_size, self.hidden, self.layers,
                            self.attention, {k: v.copy() for k, v in self.params.items()},
                            self.direction, self.reverse_source)

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


def param_shapes(src_v: int, tgt_v: int, hidden: int, layers: int, attention: bool) -> dict:
    K = hidden
    shapes = {"tgt_emb": (tgt_v, K), "W_s": (tgt_v, K)}
    if src_v:
        shapes["src_emb"] = (src_v, K)
        for l in range(layers):
            shapes[f"enc.{l}"] = (4 * K, 2 * K)
    for l in range(layers):
        # only the bottom decoder layer takes the fed-back attended hidden
        width = 3 * K if attention and l == 0 else 2 * K
        shapes[f"dec.{l}"] = (4 * K, width)
    if attention:
        shapes["W_a"] = (K, K)
        shapes["W_c"] = (K, 2 * K)
    return shapes


def init_model(source_vocab_size: int, target_vocab_size: int, hidden: int = 64, layers: int = 2,
               attention: bool = True, init_range: float = 0.1, seed: int = 0,
               direction: str = "forward", reverse_source: bool = True) -> Seq2SeqModel:
    """All parameters, embeddings included, uniform in ``[-init_range, init_range]``."""
    if init_range <= 0:
        raise ValueError("init range must be positive")
    if attention and source_vocab_size == 0:
        raise ValueError("a language model has no attention")
    rng = np.random.default_rng(seed)
    shapes = param_shapes(source_vocab_size, target_vocab_size, hidden, layers, attention)
    params = {name: rng.uniform(-init_range, init_range, size=shape) for name, shape in sorted(shapes.items())}
    return Seq2SeqModel(source_vocab_size, target_vocab_size, hidden, layers, attention, params,
                        direction, reverse_source)


def zeros_model(source_vocab_size: int, target_vocab_size: int, hidden: int = 4, layers: int = 1,
                attention: bool = True, direction: str = "forward") -> Seq2SeqModel:
    """All-zero parameters: a uniform predictor, handy for arithmetic checks."""
    shapes = param_shapes(source_vocab_size, target_vocab_size, hidden, layers, attention)
    return Seq2SeqModel(source_vocab_size, target_vocab_size, hidden, layers, attention,
                        {k: np.zeros(s) for k, s in shapes.items()}, direction)


# --- model file ------------------------------------------------------------

class LoadedModel(NamedTuple):
    model: Seq2SeqModel
    source_vocab: Vocabulary | None
    target_vocab: Vocabulary | None


def model_to_dict(model: Seq2SeqModel, source_vocab: Vocabulary | None = None,
                  target_vocab: Vocabulary | None = None) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "direction": model.direction,
        "layers": model.layers,
        "hidden": model.hidden,
        "source_vocab_size": model.source_vocab_size,
        "target_vocab_size": model.target_vocab_size,
        "attention": model.attention,
        "reverse_source": model.reverse_source,
        "source_vocab": list(source_vocab.tokens) if source_vocab else None,
        "target_vocab": list(target_vocab.tokens) if target_vocab else None,
        "params": [
            # tolist() floats serialize via repr, which round-trips float64 exactly
            {"name": name, "shape": list(arr.shape), "data": arr.ravel(order="C").tolist()}
            for name, arr in sorted(model.params.items())
        ],
    }


def save_model(model: Seq2SeqModel, path, source_vocab: Vocabulary | None = None,
               target_vocab: Vocabulary | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, source_vocab, target_vocab)) + "\n",
                          encoding="utf-8")


def model_from_dict(doc: dict) -> LoadedModel:
    if doc.get("format") != FORMAT_NAME:
        raise DataError("not a model file")
    if doc.get("version") != FORMAT_VERSION:
        raise DataError(f"unsupported model file version {doc.get('version')}")
    params = {}
    for entry in doc["params"]:
        shape = tuple(entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise DataError(f"{entry['name']}: {data.size} values for shape {shape}")
        params[entry["name"]] = data.reshape(shape)
    model = Seq2SeqModel(doc["source_vocab_size"], doc["target_vocab_size"], doc["hidden"], doc["layers"],
                         doc["attention"], params, doc["direction"], doc["reverse_source"])
    sv = Vocabulary(tuple(doc["source_vocab"])) if doc.get("source_vocab") else None
    tv = Vocabulary(tuple(doc["target_vocab"])) if doc.get("target_vocab") else None
    return LoadedModel(model, sv, tv)


def load_model(path) -> LoadedModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return model_from_dict(doc)
