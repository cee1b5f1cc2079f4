"""Vocabularies, token sequences, parallel corpora and the synthetic task generator."""

from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

EOS_ID = 0
UNK_ID = 1
EOS = "</s>"
UNK = "<unk>"
RESERVED = (EOS, UNK)

TokenSequence = tuple  # tuple[int, ...]


class DataError(ValueError):
    """Malformed corpus, vocabulary or task description."""


def split_tokens(line: str) -> list[str]:
    return line.split()


@dataclass(frozen=True)
class Vocabulary:
    """Bijection between token strings and integer ids.

    Ids 0 and 1 are always EOS and UNK; content tokens follow in the order given.
    """

    tokens: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        if tokens[:2] != RESERVED:
            tokens = RESERVED + tuple(t for t in tokens if t not in RESERVED)
        if len(set(tokens)) != len(tokens):
            raise DataError("duplicate token in vocabulary")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(tokens)})

    @property
    def eos_id(self) -> int:
        return EOS_ID

    @property
    def unk_id(self) -> int:
        return UNK_ID

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self.tokens):
            raise DataError("id out of range")
        return self.tokens[idx]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if lines[:2] != list(RESERVED):
            raise DataError(f"{path}: first two lines must be {EOS} and {UNK}")
        return cls(tuple(lines))


def build_vocabulary(sentences: Iterable[str | Sequence[str]], max_size: int | None = None) -> Vocabulary:
    """Keep the ``max_size - 2`` most frequent tokens; ties go to the lexicographically smaller token."""
    if max_size is not None and max_size < 3:
        raise DataError("max size must be at least 3")
    counts: Counter = Counter()
    n = 0
    for sent in sentences:
        toks = split_tokens(sent) if isinstance(sent, str) else list(sent)
        counts.update(t for t in toks if t not in RESERVED)
        n += 1
    if n == 0 or not counts:
        raise DataError("empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if max_size is not None:
        ranked = ranked[: max_size - 2]
    return Vocabulary(RESERVED + tuple(t for t, _ in ranked))


def encode(vocab: Vocabulary, tokens: str | Sequence[str]) -> TokenSequence:
    if isinstance(tokens, str):
        tokens = split_tokens(tokens)
    return tuple(vocab.id_of(t) for t in tokens)


def decode(vocab: Vocabulary, ids: Sequence[int]) -> list[str]:
    return [vocab.token_of(int(i)) for i in ids]


def with_eos(ids: Sequence[int]) -> TokenSequence:
    ids = tuple(ids)
    return ids if ids and ids[-1] == EOS_ID else ids + (EOS_ID,)


def strip_eos(ids: Sequence[int]) -> TokenSequence:
    ids = tuple(ids)
    return ids[:-1] if ids and ids[-1] == EOS_ID else ids


@dataclass(frozen=True)
class ParallelCorpus:
    """Aligned (source, target) id sequences; targets carry no EOS (it is appended at scoring time)."""

    pairs: tuple[tuple[TokenSequence, TokenSequence], ...]
    source_vocab: Vocabulary
    target_vocab: Vocabulary

    def __post_init__(self):
        pairs = tuple((tuple(s), tuple(t)) for s, t in self.pairs)
        ns, nt = len(self.source_vocab), len(self.target_vocab)
        for k, (s, t) in enumerate(pairs):
            if not s or not t:
                raise DataError(f"pair {k}: empty sentence")
            if any(not 0 <= i < ns for i in s) or any(not 0 <= i < nt for i in t):
                raise DataError(f"pair {k}: id out of range")
            if EOS_ID in s[:-1] or EOS_ID in t[:-1]:
                raise DataError(f"pair {k}: embedded EOS")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sources(self) -> list[TokenSequence]:
        return [s for s, _ in self.pairs]

    @property
    def targets(self) -> list[TokenSequence]:
        return [t for _, t in self.pairs]

    def swapped(self) -> "ParallelCorpus":
        return ParallelCorpus(tuple((t, s) for s, t in self.pairs), self.target_vocab, self.source_vocab)

    @classmethod
    def from_text(cls, sources: Sequence[str], targets: Sequence[str],
                  source_vocab: Vocabulary, target_vocab: Vocabulary) -> "ParallelCorpus":
        if len(sources) != len(targets):
            raise DataError(f"source has {len(sources)} lines, target has {len(targets)}")
        return cls(tuple((encode(source_vocab, s), encode(target_vocab, t))
                         for s, t in zip(sources, targets)), source_vocab, target_vocab)


def read_lines(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def write_lines(path, lines: Iterable[str]) -> None:
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def stage_seed(seed: int, stage: str) -> int:
    """Per-stage seed so each pipeline stage can be rerun in isolation."""
    return (int(seed) * 1_000_003 + zlib.crc32(stage.encode("utf-8"))) % (2**32)


# --- synthetic translation task ---------------------------------------------

REORDER_RULES = ("identity", "reversal")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Token-substitution task: source ``s{i}`` translates to ``t{perm[i]}``, then the reorder rule applies.

    ``permutation`` is drawn from ``seed`` when not given explicitly.
    """

    vocab_size: int
    rule: str = "reversal"
    min_length: int = 4
    max_length: int = 8
    noise: float = 0.0
    seed: int = 0
    permutation: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.vocab_size < 2:
            raise DataError("vocab size must be at least 2")
        if self.rule not in REORDER_RULES:
            raise DataError(f"unknown reorder rule {self.rule!r}")
        if not 1 <= self.min_length <= self.max_length:
            raise DataError("length range must satisfy 1 <= min <= max")
        if not 0.0 <= self.noise <= 1.0:
            raise DataError("noise rate must lie in [0, 1]")
        if self.permutation is None:
            rng = np.random.default_rng([self.seed, 0])
            perm = tuple(int(i) for i in rng.permutation(self.vocab_size))
            object.__setattr__(self, "permutation", perm)
        elif sorted(self.permutation) != list(range(self.vocab_size)):
            raise DataError("substitution is not a bijection")

    @property
    def source_tokens(self) -> list[str]:
        return [f"s{i}" for i in range(self.vocab_size)]

    @property
    def target_tokens(self) -> list[str]:
        return [f"t{i}" for i in range(self.vocab_size)]

    def substitution(self) -> dict[str, str]:
        return {f"s{i}": f"t{j}" for i, j in enumerate(self.permutation)}

    def translate(self, source: Sequence[str]) -> list[str]:
        """Noise-free reference translation."""
        sub = self.substitution()
        out = [sub[t] for t in source]
        return out[::-1] if self.rule == "reversal" else out

    def alignment(self, length: int) -> list[int]:
        """Source position generating each target position."""
        idx = list(range(length))
        return idx[::-1] if self.rule == "reversal" else idx


def generate_text_pairs(spec: SyntheticTaskSpec, n_pairs: int, stream: int = 1,
                        noise: float | None = None) -> list[tuple[list[str], list[str]]]:
    """Deterministic function of (spec, n_pairs, stream); ``stream`` separates train/dev/test draws."""
    if n_pairs < 1:
        raise DataError("need at least one pair")
    noise = spec.noise if noise is None else noise
    rng = np.random.default_rng([spec.seed, 1, stream])
    pairs = []
    for _ in range(n_pairs):
        n = int(rng.integers(spec.min_length, spec.max_length + 1))
        src = [f"s{int(i)}" for i in rng.integers(0, spec.vocab_size, size=n)]
        tgt = spec.translate(src)
        # draw corruption for every position so the stream does not depend on the noise rate
        flips = rng.random(n) < noise
        repl = rng.integers(0, spec.vocab_size, size=n)
        tgt = [f"t{int(r)}" if f else t for t, f, r in zip(tgt, flips, repl)]
        pairs.append((src, tgt))
    return pairs


def task_vocabularies(spec: SyntheticTaskSpec) -> tuple[Vocabulary, Vocabulary]:
    return Vocabulary(RESERVED + tuple(spec.source_tokens)), Vocabulary(RESERVED + tuple(spec.target_tokens))


def generate_synthetic_corpus(spec: SyntheticTaskSpec, n_pairs: int, stream: int = 1,
                              noise: float | None = None,
                              vocabs: tuple[Vocabulary, Vocabulary] | None = None) -> ParallelCorpus:
    src_vocab, tgt_vocab = vocabs or task_vocabularies(spec)
    pairs = generate_text_pairs(spec, n_pairs, stream=stream, noise=noise)
    return ParallelCorpus(tuple((encode(src_vocab, s), encode(tgt_vocab, t)) for s, t in pairs),
                          src_vocab, tgt_vocab)
