"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line (shown in the terminal summary) before asserting, so a
failing criterion still reports its measured numbers. The model-training criteria take a few
minutes each on one core.
"""

import time

import numpy as np
import pytest

from mmi_nmt.cli import main
from mmi_nmt.core import (RESERVED, UNK, ParallelCorpus, SyntheticTaskSpec, Vocabulary, build_vocabulary, decode,
                          encode, generate_synthetic_corpus, generate_text_pairs)
from mmi_nmt.decoding import (DecodeConfig, beam_search, exhaustive_search, greedy_decode, reference_beam_search,
                              sweep_diversity)
from mmi_nmt.metrics import corpus_bleu, distinct_n
from mmi_nmt.neural import ModelConfig, TrainConfig, init_model, train, train_backward, train_lm
from mmi_nmt.postprocess import attention_trace, build_dictionary, extract_alignments, replace_unk
from mmi_nmt.rerank import DevSentence, MertConfig, RerankWeights, corpus_bleu_at, extract_features_batch, mert_tune, \
    rerank_order

from oracles import finite_difference_check, planted_dev

DEEP = ModelConfig(hidden=64, layers=2, attention=True, reverse_source=True)


def test_gradient_oracle(record_criterion):
    t0 = time.time()
    worst = []
    cases = [(7, 6, 4, 1, True), (9, 8, 5, 2, True), (12, 12, 3, 1, True),
             (7, 6, 4, 2, False), (10, 11, 4, 1, False), (5, 9, 8, 1, True)]
    for seed, (src_v, tgt_v, hidden, layers, attention) in enumerate(cases):
        rng = np.random.default_rng(seed)
        model = init_model(src_v, tgt_v, hidden, layers, attention, init_range=0.5, seed=seed)
        xs = [tuple(int(t) for t in rng.integers(1, src_v, size=int(rng.integers(1, 5)))) for _ in range(2)]
        ys = [tuple(int(t) for t in rng.integers(1, tgt_v, size=int(rng.integers(1, 4)))) + (0,) for _ in range(2)]
        worst.append(finite_difference_check(model, xs, ys))
    elapsed = time.time() - t0
    ok = max(worst) < 1e-4 and elapsed < 60
    record_criterion("gradient oracle", ok, f"max_rel={max(worst):.2e} models={len(cases)} time={elapsed:.1f}s")
    assert ok


def test_beam_matches_exhaustive(record_criterion):
    t0 = time.time()
    agree = 0
    cfg = DecodeConfig(beam_size=256, min_length=1, max_length=4)
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        model = init_model(6, 4, 4, 1 + seed % 2, bool(seed % 3), init_range=2.0, seed=seed)
        x = tuple(int(t) for t in rng.integers(2, 6, size=int(rng.integers(1, 5))))
        ranking = exhaustive_search(model, x, (1, 4))
        nb = beam_search(model, x, cfg)
        agree += nb.best.tokens == ranking[0][0] and abs(nb.best.score - ranking[0][1]) < 1e-9
    elapsed = time.time() - t0
    ok = agree == 50 and elapsed < 60
    record_criterion("beam vs exhaustive", ok, f"agree={agree}/50 time={elapsed:.1f}s")
    assert ok


def test_zero_diversity_is_standard_beam(record_criterion):
    t0 = time.time()
    same = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        model = init_model(8, 9, 6, 1 + seed % 2, seed % 4 != 3, init_range=1.5, seed=seed)
        x = tuple(int(t) for t in rng.integers(2, 8, size=int(rng.integers(2, 6))))
        cfg = DecodeConfig(beam_size=3 + seed % 4, diversity=0.0)
        a = beam_search(model, x, cfg)
        b = reference_beam_search(model, x, cfg.beam_size, cfg.length_bounds(len(x)))
        same += [(h.tokens, h.score) for h in a] == [(h.tokens, h.score) for h in b]
    elapsed = time.time() - t0
    ok = same == 20 and elapsed < 60
    record_criterion("diversity identity", ok, f"identical={same}/20 time={elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def reversal():
    """The noisy vocab-20 reversal task and a 2x64 attention model trained on it."""
    spec = SyntheticTaskSpec(20, "reversal", 4, 8, noise=0.1, seed=1)
    corpus = generate_synthetic_corpus(spec, 2000, stream=1)
    t0 = time.time()
    model = train(corpus, TrainConfig(epochs=20, halve_after=15, seed=0), DEEP).model
    return spec, model, time.time() - t0


def test_end_to_end_bleu(reversal, record_criterion):
    spec, model, train_time = reversal
    t0 = time.time()
    held = generate_synthetic_corpus(spec, 200, stream=3, noise=0.0)
    hyps = [greedy_decode(model, x).content for x in held.sources]
    bleu = corpus_bleu(hyps, [[t] for t in held.targets]).bleu
    elapsed = train_time + time.time() - t0
    ok = bleu >= 0.90 and elapsed <= 15 * 60
    record_criterion("synthetic end-to-end", ok, f"greedy_BLEU={bleu:.4f} epochs=20 time={elapsed:.0f}s")
    assert ok


def test_diversity_direction(reversal, record_criterion):
    # expected to fail on this task; the analysis lives with the project notes
    spec, model, _ = reversal
    t0 = time.time()
    dev = generate_synthetic_corpus(spec, 100, stream=5, noise=0.0)
    test = generate_synthetic_corpus(spec, 100, stream=4, noise=0.0)
    base = DecodeConfig(beam_size=50)
    gamma, trace = sweep_diversity(model, dev.sources, [[t] for t in dev.targets], [0.1, 0.5, 1.0, 2.0], base)
    assert gamma > 0
    stats = {}
    for g in (0.0, gamma):
        lists = [[h.content for h in beam_search(model, x, DecodeConfig(beam_size=50, diversity=g))]
                 for x in test.sources]
        stats[g] = (distinct_n(lists, 1), distinct_n(lists, 2))
    elapsed = time.time() - t0
    (d1_0, d2_0), (d1_g, d2_g) = stats[0.0], stats[gamma]
    ok = d1_g > d1_0 and d2_g > d2_0 and elapsed < 5 * 60
    record_criterion("diversity direction", ok,
                     f"gamma={gamma} distinct1 {d1_0:.5f}->{d1_g:.5f} distinct2 {d2_0:.5f}->{d2_g:.5f} "
                     f"dev_sweep={[(g, round(b, 4)) for g, b in trace]} time={elapsed:.0f}s")
    assert ok


def _rerank_repetition(seed, full=40):
    spec = SyntheticTaskSpec(20, "reversal", 4, 8, noise=0.1, seed=seed)
    corpus = generate_synthetic_corpus(spec, 2000, stream=1)
    mono = generate_synthetic_corpus(spec, 2000, stream=2)
    dev = generate_synthetic_corpus(spec, 100, stream=3, noise=0.0)
    test = generate_synthetic_corpus(spec, 100, stream=4, noise=0.0)
    fwd = train(corpus, TrainConfig(epochs=full // 4, halve_after=full - 8, seed=seed), DEEP).model
    bwd = train_backward(corpus, TrainConfig(epochs=full, halve_after=full - 8, seed=seed), DEEP).model
    lm = train_lm(mono.targets, len(mono.target_vocab),
                  TrainConfig(epochs=full // 2, halve_after=full // 2 - 4, seed=seed), hidden=64).model

    def prepare(c):
        out = []
        for x, y in c.pairs:
            cands = [h.content for h in beam_search(fwd, x, DecodeConfig(beam_size=50))]
            out.append(DevSentence.build(cands, extract_features_batch(x, cands, fwd, bwd, lm), [y]))
        return out

    dev_s, test_s = prepare(dev), prepare(test)
    tuned = mert_tune(dev_s, MertConfig(seed=seed))
    test_refs = [[t] for t in test.targets]

    def bleu(w):
        return corpus_bleu([s.candidates[rerank_order(s.features, w)[0]] for s in test_s], test_refs).bleu

    return tuned, bleu(RerankWeights()), bleu(tuned.weights)


def test_reranking_direction(record_criterion):
    t0 = time.time()
    rows = [_rerank_repetition(seed) for seed in (1, 2, 3)]
    elapsed = time.time() - t0
    never_worse = all(after >= before for _, before, after in rows)
    strict = sum(after > before for _, before, after in rows)
    dev_ok = all(t.bleu >= t.baseline_bleu for t, _, _ in rows)
    ok = never_worse and strict >= 2 and dev_ok and elapsed <= 20 * 60
    detail = " ".join(f"[{b:.3f}->{a:.3f}]" for _, b, a in rows)
    record_criterion("reranking direction", ok, f"test BLEU {detail} strict={strict}/3 time={elapsed:.0f}s")
    assert ok


def test_mert_correctness(record_criterion):
    t0 = time.time()
    dev = planted_dev()
    res = mert_tune(dev, MertConfig(restarts=8, seed=0))
    coarse = np.linspace(-3, 3, 25)
    grid_best = max(corpus_bleu_at(dev, np.array([l, g, e])) for l in coarse for g in coarse for e in coarse)
    planted_ok = 0.8 <= res.weights.lam <= 1.2 and res.bleu >= grid_best and res.bleu == 1.0
    # tuned never drops below zero weights, on random dev sets too
    baseline_ok = res.bleu >= res.baseline_bleu
    vocab = [f"v{i}" for i in range(6)]
    for seed in range(20):
        rng = np.random.default_rng(seed)
        rnd = []
        for _ in range(8):
            ref = list(rng.choice(vocab, size=5))
            cands = [list(rng.choice(vocab, size=int(rng.integers(3, 7)))) for _ in range(int(rng.integers(1, 6)))]
            F = np.column_stack([-np.sort(rng.exponential(size=len(cands))), -rng.exponential(size=len(cands)),
                                 -rng.exponential(size=len(cands)), [len(c) for c in cands]])
            rnd.append(DevSentence.build(cands, F, [ref]))
        r = mert_tune(rnd, MertConfig(restarts=3, seed=seed))
        baseline_ok &= r.bleu >= r.baseline_bleu
    elapsed = time.time() - t0
    ok = planted_ok and baseline_ok and elapsed < 60
    record_criterion("MERT correctness", ok, f"lambda={res.weights.lam:.4f} BLEU={res.bleu} grid_best={grid_best} "
                                             f"time={elapsed:.1f}s")
    assert ok


def test_bleu_oracle(record_criterion):
    r = corpus_bleu([["the", "the", "the"]], [[["the", "cat"]]])
    clip_ok = r.precisions[0] == 1 / 3
    refs = [["a", "b", "c", "d", "e"], ["x", "y", "z", "w", "v", "u"], list("pqrst")]
    ident_ok = corpus_bleu(refs, [[s] for s in refs]).bleu == 1.0
    rng = np.random.default_rng(0)
    cands = [["a", "b", "c", "x", "e"], ["x", "y", "q", "w", "v"], list("pqrsz")]
    base = corpus_bleu(cands, [[s] for s in refs]).bleu
    perm_ok = True
    for _ in range(10):
        order = rng.permutation(3)
        perm_ok &= corpus_bleu([cands[i] for i in order], [[refs[i]] for i in order]).bleu == pytest.approx(base,
                                                                                                              abs=1e-15)
    ok = clip_ok and ident_ok and perm_ok
    record_criterion("BLEU oracle", ok, f"p1={r.precisions[0]} identity={ident_ok} permutation={perm_ok}")
    assert ok


def test_unk_replacement(record_criterion):
    spec = SyntheticTaskSpec(20, "reversal", 4, 8, noise=0.0, seed=3)
    train_pairs = generate_text_pairs(spec, 2000, stream=1)
    test_pairs = generate_text_pairs(spec, 100, stream=4)
    sv = Vocabulary(RESERVED + tuple(spec.source_tokens))
    # a capped target vocabulary forces UNK into the decoder output
    tv = build_vocabulary([t for _, t in train_pairs], max_size=16)
    corpus = ParallelCorpus.from_text([" ".join(s) for s, _ in train_pairs], [" ".join(t) for _, t in train_pairs],
                                      sv, tv)
    model = train(corpus, TrainConfig(epochs=20, halve_after=15, seed=0), DEEP).model
    d = build_dictionary(extract_alignments(model, corpus.pairs), [s for s, _ in train_pairs],
                         [t for _, t in train_pairs])
    sub = spec.substitution()
    observed = {w for s, _ in train_pairs for w in s}
    dict_ok = set(d.as_dict()) == observed and all(d[s] == sub[s] for s in observed)
    unk_in = unk_out = 0
    for s, _ in test_pairs:
        x = encode(sv, s)
        y = greedy_decode(model, x).content
        toks = decode(tv, y)
        unk_in += toks.count(UNK)
        unk_out += replace_unk(toks, s, attention_trace(model, x, y), d).count(UNK)
    ok = dict_ok and unk_out == 0 and unk_in > 0
    record_criterion("UNK replacement", ok, f"dictionary_ok={dict_ok} entries={len(d)} unk_before={unk_in} "
                                            f"unk_after={unk_out}")
    assert ok


def _pipeline(d):
    small = ("--hidden", "16", "--layers", "1", "--epochs", "2", "--halve-after", "1")
    steps = [
        ["gen-data", "--out", d, "--vocab-size", "8", "--min-len", "3", "--max-len", "5", "--pairs", "300",
         "--dev", "15", "--test", "15", "--mono", "200", "--noise", "0.05"],
        ["train", "--src", f"{d}/train.src", "--tgt", f"{d}/train.tgt", "--out", f"{d}/fwd.npz", *small],
        ["train-backward", "--src", f"{d}/train.src", "--tgt", f"{d}/train.tgt", "--out", f"{d}/bwd.npz", *small],
        ["train-lm", "--text", f"{d}/mono.txt", "--vocab-from", f"{d}/fwd.npz", "--out", f"{d}/lm.npz",
         "--hidden", "8", "--epochs", "2"],
    ]
    for split in ("dev", "test"):
        steps += [
            ["decode", "--model", f"{d}/fwd.npz", "--input", f"{d}/{split}.src", "--out", f"{d}/{split}.nbest",
             "--beam", "5"],
            ["features", "--nbest", f"{d}/{split}.nbest", "--source", f"{d}/{split}.src", "--fwd", f"{d}/fwd.npz",
             "--bwd", f"{d}/bwd.npz", "--lm", f"{d}/lm.npz", "--out", f"{d}/{split}.feats"],
        ]
    steps += [
        ["tune", "--features", f"{d}/dev.feats", "--ref", f"{d}/dev.tgt", "--out", f"{d}/weights.txt",
         "--restarts", "3"],
        ["rerank", "--features", f"{d}/test.feats", "--weights", f"{d}/weights.txt", "--out", f"{d}/test.hyp",
         "--nbest-out", f"{d}/test.reranked"],
        ["eval", "--hyp", f"{d}/test.hyp", "--ref", f"{d}/test.tgt", "--nbest", f"{d}/test.nbest",
         "--out", f"{d}/report.txt"],
    ]
    for argv in steps:
        assert main(["--seed", "11", *argv]) == 0, argv


def test_pipeline_determinism(tmp_path, record_criterion):
    runs = [tmp_path / "a", tmp_path / "b"]
    for d in runs:
        _pipeline(str(d))
    names = sorted(p.name for p in runs[0].iterdir())
    assert names == sorted(p.name for p in runs[1].iterdir())
    differing = [n for n in names if (runs[0] / n).read_bytes() != (runs[1] / n).read_bytes()]
    ok = not differing and len(names) >= 20
    record_criterion("determinism", ok, f"artifacts={len(names)} differing={differing}")
    assert ok
