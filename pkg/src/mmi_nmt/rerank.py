"""MMI reranking features, the linear reranking score and MERT weight tuning."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import EOS_ID, DataError, strip_eos, with_eos
from .metrics import bleu_score, sentence_stats
from .neural.inference import score_batch
from .neural.model import Seq2SeqModel

log = logging.getLogger(__name__)

FEATURE_NAMES = ("logp_fwd", "logp_bwd", "logp_lm", "length")
WEIGHT_NAMES = ("lambda", "gamma_lm", "eta")


@dataclass(frozen=True)
class FeatureVector:
    logp_fwd: float
    logp_bwd: float
    logp_lm: float
    length: int

    def as_array(self) -> np.ndarray:
        return np.array([self.logp_fwd, self.logp_bwd, self.logp_lm, float(self.length)])


@dataclass(frozen=True)
class RerankWeights:
    """Weights on ``logp_bwd``, ``logp_lm`` and length; ``logp_fwd`` is fixed at 1."""

    lam: float = 0.0
    gamma_lm: float = 0.0
    eta: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.lam, self.gamma_lm, self.eta])

    @classmethod
    def from_array(cls, w) -> "RerankWeights":
        return cls(float(w[0]), float(w[1]), float(w[2]))

    def save(self, path) -> None:
        Path(path).write_text("".join(f"{n}={float(v)!r}\n" for n, v in zip(WEIGHT_NAMES, self.as_array())),
                              encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RerankWeights":
        values = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            key, sep, val = line.partition("=")
            if not sep or key.strip() not in WEIGHT_NAMES:
                raise DataError(f"{path}:{lineno}: expected one of {WEIGHT_NAMES} as key=value")
            values[key.strip()] = float(val)
        missing = set(WEIGHT_NAMES) - set(values)
        if missing:
            raise DataError(f"{path}: missing weights {sorted(missing)}")
        return cls(values["lambda"], values["gamma_lm"], values["eta"])


# --- features ----------------------------------------------------------------

def extract_features(x, y, forward: Seq2SeqModel, backward: Seq2SeqModel, lm: Seq2SeqModel) -> FeatureVector:
    """Features for candidate ``y`` (EOS-terminated) of source ``x``, all models sharing vocabularies."""
    if not len(y) or y[-1] != EOS_ID:
        raise DataError("candidate must end with EOS")
    return FeatureVector(*extract_features_batch(x, [strip_eos(y)], forward, backward, lm)[0])


def extract_features_batch(x, candidates: Sequence[Sequence[int]], forward: Seq2SeqModel,
                           backward: Seq2SeqModel, lm: Seq2SeqModel,
                           bwd_candidates=None, bwd_source=None, lm_candidates=None) -> list[tuple]:
    """Feature tuples for content-token candidates of one source.

    The optional ``bwd_*``/``lm_*`` arguments carry the same sentences re-encoded in those models'
    vocabularies when they differ from the forward model's.
    """
    cands = [tuple(c) for c in candidates]
    bwd_c = [tuple(c) for c in (bwd_candidates or cands)]
    lm_c = [tuple(c) for c in (lm_candidates or cands)]
    x = tuple(x)
    src = tuple(bwd_source) if bwd_source is not None else x
    fwd = score_batch(forward, [x] * len(cands), [with_eos(c) for c in cands])
    bwd = score_batch(backward, bwd_c, [with_eos(src)] * len(cands))
    lmp = score_batch(lm, None, [with_eos(c) for c in lm_c])
    out = []
    for c, a, b, l in zip(cands, fwd, bwd, lmp):
        n = len(c)
        if n == 0:
            raise DataError("empty candidate")
        out.append((float(a), float(b), float(l) / n, n))
    return out


def rerank_score(f, w: RerankWeights) -> float:
    if isinstance(f, FeatureVector):
        f = f.as_array()
    return float(f[0] + w.lam * f[1] + w.gamma_lm * f[2] + w.eta * f[3])


def scores_of(F: np.ndarray, w: np.ndarray) -> np.ndarray:
    return F[:, 0] + F[:, 1] * w[0] + F[:, 2] * w[1] + F[:, 3] * w[2]


def rerank_order(F: np.ndarray, w: RerankWeights) -> list[int]:
    """Indices by descending score; ties keep the original (decoder) order."""
    s = scores_of(np.asarray(F, dtype=np.float64), w.as_array())
    return sorted(range(len(s)), key=lambda i: (-s[i], i))


def rerank(entries: Sequence, w: RerankWeights, features=None) -> list:
    """Reorder ``entries``; features come from ``entry.features`` unless given explicitly."""
    if features is None:
        try:
            features = [e.features for e in entries]
        except AttributeError as exc:
            raise DataError("missing features") from exc
    if any(f is None for f in features):
        raise DataError("missing features")
    F = np.array([f.as_array() if isinstance(f, FeatureVector) else f for f in features], dtype=np.float64)
    return [entries[i] for i in rerank_order(F, w)]


# --- features file: sent_id ||| tokens ||| logp_fwd logp_bwd logp_lm L_T ---------------

@dataclass
class FeatureRecord:
    sent_id: int
    tokens: list
    features: FeatureVector


def write_features(path, records: Sequence[FeatureRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            f = r.features
            fh.write(f"{r.sent_id} ||| {' '.join(r.tokens)} ||| "
                     f"{float(f.logp_fwd)!r} {float(f.logp_bwd)!r} {float(f.logp_lm)!r} {int(f.length)}\n")


def read_features(path) -> dict[int, list[FeatureRecord]]:
    out: dict[int, list[FeatureRecord]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = [p.strip() for p in line.split("|||")]
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 '|||' fields, got {len(parts)}")
        vals = parts[2].split()
        if len(vals) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 feature values, got {len(vals)}")
        try:
            rec = FeatureRecord(int(parts[0]), parts[1].split(),
                                FeatureVector(float(vals[0]), float(vals[1]), float(vals[2]), int(vals[3])))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        out.setdefault(rec.sent_id, []).append(rec)
    return out


# --- MERT --------------------------------------------------------------------

@dataclass
class DevSentence:
    """One dev source: candidate features (n, 4) and BLEU statistics (n, 10) against its references."""

    features: np.ndarray
    stats: np.ndarray
    candidates: list = field(default_factory=list)

    @classmethod
    def build(cls, candidates: Sequence[Sequence], features, references: Sequence[Sequence]) -> "DevSentence":
        if not candidates:
            raise DataError("empty N-best list")
        F = np.array([f.as_array() if isinstance(f, FeatureVector) else f for f in features], dtype=np.float64)
        S = np.array([sentence_stats(list(c), [list(r) for r in references]) for c in candidates])
        return cls(F, S, [list(c) for c in candidates])


@dataclass
class MertConfig:
    restarts: int = 8
    seed: int = 0
    init_scale: float = 1.0
    max_passes: int = 20
    tol: float = 1e-10


@dataclass
class MertResult:
    weights: RerankWeights
    bleu: float
    baseline_bleu: float
    trace: list = field(default_factory=list)


def upper_envelope(intercepts: np.ndarray, slopes: np.ndarray):
    """Upper envelope of lines ``a + b w``.

    Returns ``(breakpoints, winners)``: ``winners[k]`` is the argmax line on
    ``(breakpoints[k-1], breakpoints[k])`` with ``breakpoints[-1] = -inf`` implied.
    Among identical lines the lowest index wins.
    """
    order = sorted(range(len(slopes)), key=lambda i: (slopes[i], intercepts[i], -i))
    # keep one line per slope: the largest intercept, lowest index among equals
    dedup = []
    for i in order:
        if dedup and slopes[dedup[-1]] == slopes[i]:
            dedup[-1] = i
        else:
            dedup.append(i)
    hull: list[int] = []
    starts: list[float] = []
    for i in dedup:
        x = -math.inf
        while hull:
            j = hull[-1]
            x = (intercepts[j] - intercepts[i]) / (slopes[i] - slopes[j])
            if x <= starts[-1]:
                hull.pop()
                starts.pop()
                x = -math.inf
            else:
                break
        hull.append(i)
        starts.append(x if len(hull) > 1 else -math.inf)
    return starts[1:], hull


def pairwise_intersections(intercepts, slopes) -> list[float]:
    pts = []
    for i in range(len(slopes)):
        for j in range(i + 1, len(slopes)):
            if slopes[i] != slopes[j]:
                pts.append((intercepts[j] - intercepts[i]) / (slopes[i] - slopes[j]))
    return sorted(pts)


def corpus_bleu_at(dev: Sequence[DevSentence], w: np.ndarray) -> float:
    total = np.zeros(dev[0].stats.shape[1])
    for sent in dev:
        s = scores_of(sent.features, w)
        best = min(range(len(s)), key=lambda i: (-s[i], i))
        total += sent.stats[best]
    return bleu_score(total)


def line_search(dev: Sequence[DevSentence], w: np.ndarray, dim: int):
    """Exact maximization of corpus BLEU over ``w[dim]`` with the other weights fixed.

    Returns ``(best value, best BLEU)``. The current value is kept when no interval beats it.
    """
    events = []
    total = np.zeros(dev[0].stats.shape[1])
    current = []
    for si, sent in enumerate(dev):
        F = sent.features
        others = F[:, 0] + sum(F[:, k + 1] * w[k] for k in range(3) if k != dim)
        slopes = F[:, dim + 1]
        bps, winners = upper_envelope(others, slopes)
        # tie-break toward the lowest index (the decoder order) is built into the envelope
        total += sent.stats[winners[0]]
        current.append(winners[0])
        for x, win in zip(bps, winners[1:]):
            events.append((x, si, win))
    events.sort(key=lambda e: e[0])
    xs = sorted({e[0] for e in events})
    if not xs:
        return float(w[dim]), bleu_score(total)
    points = [xs[0] - max(1.0, abs(xs[0]))]
    points += [(a + b) / 2 for a, b in zip(xs, xs[1:])]
    points.append(xs[-1] + max(1.0, abs(xs[-1])))
    bleus = [bleu_score(total)]
    k = 0
    for x in xs:
        while k < len(events) and events[k][0] == x:
            _, si, win = events[k]
            total += dev[si].stats[win] - dev[si].stats[current[si]]
            current[si] = win
            k += 1
        bleus.append(bleu_score(total))
    # interval holding the current value
    cur = float(w[dim])
    cur_idx = int(np.searchsorted(np.array(xs), cur, side="left"))
    best = max(bleus)
    if bleus[cur_idx] >= best - 1e-12 and not any(cur == x for x in xs):
        return cur, bleus[cur_idx]
    cands = [i for i, b in enumerate(bleus) if b >= best - 1e-12]
    pick = min(cands, key=lambda i: (abs(points[i] - cur), i))
    return float(points[pick]), bleus[pick]


def mert_tune(dev: Sequence[DevSentence], config: MertConfig | None = None) -> MertResult:
    """Coordinate-wise exact line search over (lambda, gamma_lm, eta) with seeded random restarts."""
    cfg = config or MertConfig()
    if not dev:
        raise DataError("empty dev set")
    for sent in dev:
        if len(sent.features) == 0:
            raise DataError("empty N-best list")
    rng = np.random.default_rng([cfg.seed, 11])
    starts = [np.zeros(3)] + [rng.uniform(-cfg.init_scale, cfg.init_scale, size=3)
                              for _ in range(max(cfg.restarts, 1) - 1)]
    baseline = corpus_bleu_at(dev, np.zeros(3))
    best_w, best_bleu = np.zeros(3), baseline
    trace = []
    for r, w0 in enumerate(starts):
        w = w0.copy()
        cur = corpus_bleu_at(dev, w)
        for _ in range(cfg.max_passes):
            improved = False
            for dim in range(3):
                val, b = line_search(dev, w, dim)
                if b > cur + cfg.tol:
                    improved = True
                if b >= cur - cfg.tol:
                    w[dim] = val
                    cur = max(cur, b)
            if not improved:
                break
        cur = corpus_bleu_at(dev, w)
        trace.append((r, w.copy(), cur))
        log.info("restart %d weights %s bleu %.6f", r, w, cur)
        if cur > best_bleu + cfg.tol:
            best_w, best_bleu = w.copy(), cur
    return MertResult(RerankWeights.from_array(best_w), best_bleu, baseline, trace)


def best_after_rerank(features_by_sent: Sequence[np.ndarray], w: RerankWeights) -> list[int]:
    return [rerank_order(F, w)[0] for F in features_by_sent]
