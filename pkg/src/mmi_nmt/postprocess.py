"""UNK replacement from attention alignments and an alignment-derived bilingual dictionary."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import UNK, DataError, with_eos
from .neural.inference import forced_attention
from .neural.model import Seq2SeqModel


@dataclass(frozen=True)
class AlignmentRecord:
    """``links[t]`` is the source position (original order) most attended when emitting target token t."""

    links: tuple

    def __len__(self):
        return len(self.links)


def attention_trace(model: Seq2SeqModel, x, y_content) -> np.ndarray:
    """Forced-decoding attention for content tokens of ``y`` (the EOS row is dropped)."""
    A = forced_attention(model, tuple(x), with_eos(tuple(y_content)))
    return A[:len(y_content)]


def extract_alignments(model: Seq2SeqModel, pairs: Iterable[tuple[Sequence[int], Sequence[int]]]) -> list:
    if not model.attention:
        raise ValueError("alignment requires attention")
    out = []
    for x, y in pairs:
        A = attention_trace(model, x, y)
        out.append(AlignmentRecord(tuple(int(j) for j in np.argmax(A, axis=1))))
    return out


class BilingualDictionary:
    """Source token -> most frequently aligned target token (ties: lexicographically smaller).

    Keyed by surface strings so rare target words outside the model vocabulary keep their form.
    """

    def __init__(self, counts: dict[str, Counter] | None = None):
        self.counts: dict[str, Counter] = {k: Counter(v) for k, v in (counts or {}).items()}

    def __contains__(self, src: str) -> bool:
        return src in self.counts

    def __len__(self) -> int:
        return len(self.counts)

    def entry(self, src: str) -> tuple[str, int]:
        tgt, n = min(self.counts[src].items(), key=lambda kv: (-kv[1], kv[0]))
        return tgt, n

    def __getitem__(self, src: str) -> str:
        return self.entry(src)[0]

    def translate(self, src: str) -> str:
        """Dictionary translation, or the source token itself when unseen."""
        return self[src] if src in self.counts else src

    def as_dict(self) -> dict[str, str]:
        return {s: self[s] for s in self.counts}

    def save(self, path) -> None:
        lines = []
        for src in sorted(self.counts):
            tgt, n = self.entry(src)
            lines.append(f"{src}\t{tgt}\t{n}\n")
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BilingualDictionary":
        counts: dict[str, Counter] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected source<TAB>target<TAB>count")
            counts[parts[0]] = Counter({parts[1]: int(parts[2])})
        return cls(counts)


def build_dictionary(alignments: Sequence[AlignmentRecord], sources: Sequence[Sequence[str]],
                     targets: Sequence[Sequence[str]], skip: Iterable[str] = (UNK,)) -> BilingualDictionary:
    """Count aligned (source token, target token) pairs over the corpus and keep the mode."""
    if not len(alignments) == len(sources) == len(targets):
        raise DataError("alignments do not cover the corpus")
    skip = set(skip)
    counts: dict[str, Counter] = defaultdict(Counter)
    for rec, src, tgt in zip(alignments, sources, targets):
        if len(rec) != len(tgt):
            raise DataError("alignment length does not match target length")
        for t, j in enumerate(rec.links):
            if src[j] in skip or tgt[t] in skip:
                continue
            counts[src[j]][tgt[t]] += 1
    return BilingualDictionary(counts)


def replace_unk(translation: Sequence[str], source: Sequence[str], trace, dictionary: BilingualDictionary,
                unk: str = UNK) -> list[str]:
    """Rewrite each UNK via the source token it attends to most; unseen source tokens are copied."""
    trace = np.asarray(trace)
    if trace.ndim != 2 or trace.shape[0] != len(translation) or trace.shape[1] != len(source):
        raise DataError(f"attention trace of shape {trace.shape} for {len(translation)} target "
                        f"and {len(source)} source tokens")
    out = list(translation)
    for t, tok in enumerate(out):
        if tok == unk:
            out[t] = dictionary.translate(source[int(np.argmax(trace[t]))])
    return out
