"""Beam search with EOS accumulation, length bounds and the intra-sibling rank penalty."""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import EOS_ID, DataError, Vocabulary, decode as decode_ids, encode as encode_tokens, strip_eos
from .neural.model import Seq2SeqModel
from .neural.inference import score_batch
from .neural.network import Encoded, advance, encode_batch, predict
from .neural.ops import LstmState


class DecodeError(RuntimeError):
    pass


@dataclass
class DecodeConfig:
    beam_size: int = 200
    diversity: float = 0.0
    min_ratio: float = 0.75
    max_ratio: float = 1.5
    expansion: int | None = None      # per-parent width; defaults to beam_size
    min_length: int | None = None     # absolute bounds override the ratios
    max_length: int | None = None

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam size must be >= 1")
        if self.diversity < 0:
            raise ValueError("diversity penalty must be non-negative")
        if not 0 < self.min_ratio <= self.max_ratio:
            raise ValueError("need 0 < min ratio <= max ratio")
        if self.expansion is not None and self.expansion < 1:
            raise ValueError("expansion width must be >= 1")

    @property
    def width(self) -> int:
        return self.expansion or self.beam_size

    def length_bounds(self, source_length: int) -> tuple[int, int]:
        """Inclusive bounds on content tokens (EOS excluded)."""
        lo = self.min_length if self.min_length is not None else math.ceil(self.min_ratio * source_length - 1e-9)
        hi = self.max_length if self.max_length is not None else math.floor(self.max_ratio * source_length + 1e-9)
        lo = max(lo, 0)
        return lo, max(hi, lo)


@dataclass
class Hypothesis:
    tokens: tuple            # target prefix; ends with EOS iff finished
    score: float             # true cumulative log-probability S
    parent: int = -1         # beam slot of the expanded parent
    rank: int = 1            # 1-based rank among siblings (k')
    adjusted: float | None = None    # S - gamma * k', used only for pruning
    state: object = field(default=None, repr=False, compare=False)

    @property
    def finished(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == EOS_ID

    @property
    def content(self) -> tuple:
        return strip_eos(self.tokens)

    @property
    def prune_score(self) -> float:
        return self.score if self.adjusted is None else self.adjusted


@dataclass
class DecoderState:
    layers: list           # LstmState per layer
    attended: np.ndarray | None = None


@dataclass
class NBestList:
    entries: list
    source: tuple

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def best(self) -> Hypothesis:
        return self.entries[0]


@dataclass
class Beam:
    """Unfinished hypotheses plus their batched decoder state (per-layer ``(B, K)`` rows)."""

    hyps: list
    h: list
    c: list
    attended: np.ndarray | None = None   # filled by expand

    def hypothesis_state(self, k: int) -> DecoderState:
        return DecoderState([LstmState(h[k], c[k]) for h, c in zip(self.h, self.c)],
                            None if self.attended is None else self.attended[k])


def _sort_key(hyp: Hypothesis, use_adjusted: bool):
    return (-(hyp.prune_score if use_adjusted else hyp.score), hyp.tokens)


def initial_beam(model: Seq2SeqModel, x) -> tuple[Beam, Encoded]:
    if not len(x):
        raise DataError("empty source")
    enc = encode_batch(model, [tuple(x)], batch=1)
    return Beam([Hypothesis((), 0.0)], list(enc.h), list(enc.c)), enc


def expand(beam: Beam, model: Seq2SeqModel, enc: Encoded, width: int, only_eos: bool = False) -> list:
    """Top-``width`` continuations of every beam entry, with sibling ranks by descending probability.

    Equal probabilities rank by ascending token id. ``only_eos`` proposes just EOS per parent.
    """
    if not beam.hyps:
        raise DecodeError("beam is empty")
    if any(h.finished for h in beam.hyps):
        raise DecodeError("cannot expand a finished hypothesis")
    logp, ha, _, _ = predict(model, enc, beam.h[-1])
    beam.attended = ha
    width = min(width, logp.shape[1])
    out = []
    for k, parent in enumerate(beam.hyps):
        row = logp[k]
        if only_eos:
            toks = [EOS_ID]
        else:
            toks = np.argsort(-row, kind="stable")[:width]
        for r, tok in enumerate(toks, start=1):
            tok = int(tok)
            out.append(Hypothesis(parent.tokens + (tok,), parent.score + float(row[tok]), k, r))
    return out


def diverse_rescore(candidates: Iterable[Hypothesis], gamma: float) -> list:
    """Set ``adjusted = S - gamma * k'``; the true score is left untouched."""
    out = []
    for cand in candidates:
        cand.adjusted = cand.score - gamma * cand.rank
        out.append(cand)
    return out


def prune_and_collect(candidates: Sequence[Hypothesis], beam_size: int, bounds: tuple[int, int]):
    """Split candidates into the next beam (top ``beam_size`` unfinished) and newly finished entries.

    EOS candidates whose content length falls outside ``bounds`` are discarded.
    """
    lo, hi = bounds
    finished, live = [], []
    for cand in candidates:
        if cand.finished:
            if lo <= len(cand.tokens) - 1 <= hi:
                finished.append(cand)
        elif len(cand.tokens) <= hi:
            live.append(cand)
    live.sort(key=lambda h: _sort_key(h, True))
    return live[:beam_size], finished


def _advance_beam(model, beam: Beam, survivors: list) -> Beam:
    idx = np.array([s.parent for s in survivors], dtype=np.int64)
    toks = np.array([s.tokens[-1] for s in survivors], dtype=np.int64)
    h, c, _ = advance(model, [a[idx] for a in beam.h], [a[idx] for a in beam.c], toks, beam.attended[idx])
    return Beam(list(survivors), h, c)


def beam_search(model: Seq2SeqModel, x, config: DecodeConfig) -> NBestList:
    """N-best list for source ``x``, sorted by true score (ties: ascending token sequence).

    Hypotheses still alive after ``max`` content tokens are closed with EOS (scored) so the
    list is never empty unless every path ends below the minimum length.
    """
    beam, enc = initial_beam(model, x)
    bounds = config.length_bounds(len(x))
    nbest: list = []
    step = 0
    while beam.hyps:
        step += 1
        cands = expand(beam, model, enc, config.width, only_eos=step > bounds[1])
        # gamma = 0 leaves S - 0 * k' == S exactly, so one code path serves both decoders
        cands = diverse_rescore(cands, config.diversity)
        survivors, done = prune_and_collect(cands, config.beam_size, bounds)
        nbest.extend(done)
        if not survivors:
            break
        beam = _advance_beam(model, beam, survivors)
    if not nbest:
        raise DecodeError("decode failed")
    nbest.sort(key=lambda h: _sort_key(h, False))
    return NBestList(nbest, tuple(x))


def greedy_decode(model: Seq2SeqModel, x, config: DecodeConfig | None = None) -> Hypothesis:
    base = config or DecodeConfig()
    cfg = DecodeConfig(1, 0.0, base.min_ratio, base.max_ratio, 1, base.min_length, base.max_length)
    return beam_search(model, x, cfg).best


def reference_beam_search(model: Seq2SeqModel, x, beam_size: int, bounds: tuple[int, int]) -> NBestList:
    """Plain K x K beam search written without the rescoring machinery; a cross-check."""
    lo, hi = bounds
    enc = encode_batch(model, [tuple(x)], batch=1)
    h, c = list(enc.h), list(enc.c)
    prefixes = [()]
    scores = [0.0]
    finished = []
    for step in range(1, hi + 2):
        logp, ha, _, _ = predict(model, enc, h[-1])
        pool = []
        for k, (pre, s) in enumerate(zip(prefixes, scores)):
            if step > hi:
                choices = [EOS_ID]
            else:
                choices = [int(t) for t in np.argsort(-logp[k], kind="stable")[:min(beam_size, logp.shape[1])]]
            for r, t in enumerate(choices, 1):
                pool.append((s + float(logp[k, t]), pre + (t,), k, r))
        keep = []
        for s, toks, k, r in pool:
            if toks[-1] == EOS_ID:
                if lo <= step - 1 <= hi:
                    finished.append(Hypothesis(toks, s, k, r))
            else:
                keep.append((s, toks, k, r))
        keep.sort(key=lambda e: (-e[0], e[1]))
        keep = keep[:beam_size]
        if not keep:
            break
        idx = np.array([e[2] for e in keep])
        toks = np.array([e[1][-1] for e in keep])
        h, c, _ = advance(model, [a[idx] for a in h], [a[idx] for a in c], toks, ha[idx])
        prefixes = [e[1] for e in keep]
        scores = [e[0] for e in keep]
    if not finished:
        raise DecodeError("decode failed")
    finished.sort(key=lambda hyp: (-hyp.score, hyp.tokens))
    return NBestList(finished, tuple(x))


def sweep_diversity(model: Seq2SeqModel, sources: Sequence, references: Sequence, grid: Iterable[float],
                    config: DecodeConfig, render=None) -> tuple[float, list]:
    """Choose the diversity penalty by corpus BLEU of the decoder's top-1 output.

    ``references[i]`` is a list of references for ``sources[i]``; ``render`` turns content ids into
    the tokens the references use (identity by default). Ties go to the smallest penalty.
    Returns the chosen value and the ``(gamma, bleu)`` trace.
    """
    from .metrics import corpus_bleu

    render = render or (lambda ids: list(ids))
    trace = []
    for gamma in sorted(set(float(g) for g in grid)):
        cfg = dataclasses.replace(config, diversity=gamma)
        hyps = [render(beam_search(model, x, cfg).best.content) for x in sources]
        trace.append((gamma, corpus_bleu(hyps, references).bleu))
    if not trace:
        raise ValueError("empty diversity grid")
    best = max(trace, key=lambda e: (e[1], -e[0]))
    return best[0], trace


MAX_EXHAUSTIVE = 10**6


def exhaustive_search(model: Seq2SeqModel, x, bounds: tuple[int, int]) -> list[tuple[tuple, float]]:
    """Every EOS-terminated sequence with content length in ``bounds``, ranked by exact log-probability."""
    lo, hi = bounds
    V = model.target_vocab_size
    content = [t for t in range(V) if t != EOS_ID]
    if V ** hi > MAX_EXHAUSTIVE:
        raise DecodeError("search space too large")
    seqs = [tuple(p) + (EOS_ID,) for n in range(lo, hi + 1) for p in itertools.product(content, repeat=n)]
    scores = score_batch(model, [tuple(x)] * len(seqs), seqs)
    ranking = sorted(zip(seqs, scores.tolist()), key=lambda e: (-e[1], e[0]))
    return ranking


# --- N-best file: sent_id ||| tokens ||| logp_fwd ||| rank -----------------

def format_float(v: float) -> str:
    return repr(float(v))


def write_nbest(path, lists: Sequence[tuple[int, NBestList]], vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sent_id, nb in lists:
            for rank, hyp in enumerate(nb.entries, start=1):
                text = " ".join(decode_ids(vocab, hyp.content))
                fh.write(f"{sent_id} ||| {text} ||| {format_float(hyp.score)} ||| {rank}\n")


@dataclass
class NBestRecord:
    sent_id: int
    tokens: list
    logp_fwd: float
    rank: int


def read_nbest(path) -> dict[int, list[NBestRecord]]:
    out: dict[int, list[NBestRecord]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        parts = [p.strip() for p in line.split("|||")]
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 '|||' fields, got {len(parts)}")
        try:
            rec = NBestRecord(int(parts[0]), parts[1].split(), float(parts[2]), int(parts[3]))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        out.setdefault(rec.sent_id, []).append(rec)
    return out


def encode_target(vocab: Vocabulary, tokens) -> tuple:
    return encode_tokens(vocab, tokens) + (EOS_ID,)
