"""Command-line pipeline: gen-data, train, decode, features, tune, rerank, eval and UNK post-processing.

Every stochastic stage draws its seed from ``--seed`` and the stage name, so any stage can be
rerun alone. Options may also come from ``--config FILE`` (flat ``key=value`` lines, keys
spelled like the long flags); flags given on the command line win.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import core
from .core import (DataError, ParallelCorpus, SyntheticTaskSpec, Vocabulary, build_vocabulary, encode,
                   generate_text_pairs, read_lines, split_tokens, stage_seed, write_lines)
from .decoding import DecodeConfig, DecodeError, beam_search, read_nbest, sweep_diversity, write_nbest
from .metrics import corpus_bleu, diversity_report
from .neural import (ModelConfig, NumericalError, TrainConfig, load_model, save_model, train, train_lm)
from .postprocess import BilingualDictionary, attention_trace, build_dictionary, extract_alignments, replace_unk
from .rerank import (DevSentence, FeatureRecord, FeatureVector, MertConfig, RerankWeights,
                     extract_features_batch, mert_tune, read_features, rerank_order, write_features)

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3

log = logging.getLogger("mmi_nmt")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def read_config(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        values[key.strip().replace("-", "_")] = val.strip()
    return values


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {s!r}")


# --- gen-data ----------------------------------------------------------------

def cmd_gen_data(args):
    spec = SyntheticTaskSpec(args.vocab_size, args.rule, args.min_len, args.max_len, args.noise,
                             seed=stage_seed(args.seed, "gen-data"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def emit(name, n, stream, noise):
        pairs = generate_text_pairs(spec, n, stream=stream, noise=noise)
        write_lines(out / f"{name}.src", [" ".join(s) for s, _ in pairs])
        write_lines(out / f"{name}.tgt", [" ".join(t) for _, t in pairs])

    emit("train", args.pairs, 1, None)
    if args.dev:
        emit("dev", args.dev, 3, args.heldout_noise)
    if args.test:
        emit("test", args.test, 4, args.heldout_noise)
    if args.mono:
        mono = generate_text_pairs(spec, args.mono, stream=2)
        write_lines(out / "mono.txt", [" ".join(t) for _, t in mono])
    write_lines(out / "substitution.tsv", [f"{s}\t{t}" for s, t in spec.substitution().items()])
    (out / "task.json").write_text(json.dumps({
        "vocab_size": spec.vocab_size, "rule": spec.rule, "min_length": spec.min_length,
        "max_length": spec.max_length, "noise": spec.noise, "seed": spec.seed,
        "permutation": list(spec.permutation)}, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {args.pairs} training pairs to {out}")


# --- training ----------------------------------------------------------------

def _train_config(args, stage) -> TrainConfig:
    return TrainConfig(args.lr, args.clip, args.init_range, args.epochs, args.halve_after, args.batch_size,
                       stage_seed(args.seed, stage))


def _report_epoch(epoch, loss):
    print(f"epoch={epoch} loss={loss!r}", flush=True)


def _train_pair(args, src_path, tgt_path, direction):
    src, tgt = read_lines(src_path), read_lines(tgt_path)
    if len(src) != len(tgt):
        raise DataError(f"{src_path} has {len(src)} lines, {tgt_path} has {len(tgt)}")
    sv = build_vocabulary(src, args.src_vocab_size)
    tv = build_vocabulary(tgt, args.tgt_vocab_size)
    corpus = ParallelCorpus.from_text(src, tgt, sv, tv)
    mc = ModelConfig(args.hidden, args.layers, args.attention, args.reverse)
    # train and train-backward share the stage seed: backward == train on swapped files
    result = train(corpus, _train_config(args, "train"), mc, direction=direction, on_epoch=_report_epoch)
    save_model(result.model, args.out, sv, tv)
    print(f"initial_loss={result.initial_loss!r} final_loss={result.losses[-1] if result.losses else result.initial_loss!r}")


def cmd_train(args):
    _train_pair(args, args.src, args.tgt, "forward")


def cmd_train_backward(args):
    _train_pair(args, args.tgt, args.src, "backward")


def filter_by_unk_rate(sentences, vocab: Vocabulary, max_rate: float = 0.1):
    """Drop sentences whose share of out-of-vocabulary tokens exceeds ``max_rate``."""
    kept = []
    for s in sentences:
        toks = split_tokens(s)
        if toks and sum(t not in vocab for t in toks) / len(toks) <= max_rate:
            kept.append(s)
    return kept


def cmd_train_lm(args):
    text = [s for s in read_lines(args.text) if s.strip()]
    if args.vocab:
        vocab = Vocabulary.load(args.vocab)
    elif args.vocab_from:
        vocab = load_model(args.vocab_from).target_vocab
    else:
        vocab = None
    if vocab is not None:
        before = len(text)
        text = filter_by_unk_rate(text, vocab, args.max_unk_rate)
        print(f"filter kept={len(text)} of {before}")
    else:
        vocab = build_vocabulary(text, args.vocab_size)
    if not text:
        raise DataError("empty corpus")
    ids = [encode(vocab, s) for s in text]
    result = train_lm(ids, len(vocab), _train_config(args, "train-lm"), hidden=args.hidden,
                      on_epoch=_report_epoch)
    save_model(result.model, args.out, None, vocab)


# --- decode ------------------------------------------------------------------

def _decode_config(args) -> DecodeConfig:
    return DecodeConfig(args.beam, args.diversity, args.min_ratio, args.max_ratio, args.expansion)


def cmd_decode(args):
    loaded = load_model(args.model)
    if loaded.source_vocab is None or loaded.target_vocab is None:
        raise DataError(f"{args.model}: model file carries no vocabularies")
    cfg = _decode_config(args)
    lists, failures = [], 0
    for sent_id, line in enumerate(read_lines(args.input)):
        x = encode(loaded.source_vocab, line)
        try:
            if not x:
                raise DecodeError("empty source")
            lists.append((sent_id, beam_search(loaded.model, x, cfg)))
        except DecodeError as exc:
            failures += 1
            print(f"{args.input}:{sent_id + 1}: {exc}", file=sys.stderr)
    write_nbest(args.out, lists, loaded.target_vocab)
    if failures:
        raise DataError(f"{failures} sentence(s) failed to decode")


def cmd_sweep_diversity(args):
    """Pick the decoder diversity penalty with the best dev BLEU of the top-1 output."""
    loaded = load_model(args.model)
    src = read_lines(args.source)
    refs = _read_refs(args.ref, len(src))
    best, trace = sweep_diversity(loaded.model, [encode(loaded.source_vocab, s) for s in src], refs, args.grid,
                                  _decode_config(args), render=lambda ids: core.decode(loaded.target_vocab, ids))
    for gamma, bleu in trace:
        print(f"diversity={gamma!r} BLEU={bleu!r}")
    print(f"best_diversity={best!r}")


# --- features / tune / rerank / eval -----------------------------------------

def cmd_features(args):
    fwd, bwd, lm = load_model(args.fwd), load_model(args.bwd), load_model(args.lm)
    for name, m in (("--fwd", fwd), ("--bwd", bwd)):
        if m.source_vocab is None or m.target_vocab is None:
            raise DataError(f"{name}: model file carries no vocabularies")
    src = read_lines(args.source)
    nbest = read_nbest(args.nbest)
    records = []
    for sent_id in sorted(nbest):
        if not 0 <= sent_id < len(src):
            raise DataError(f"{args.nbest}: sentence id {sent_id} outside {args.source}")
        x_tokens = split_tokens(src[sent_id])
        cands = [r.tokens for r in nbest[sent_id]]
        feats = extract_features_batch(
            encode(fwd.source_vocab, x_tokens), [encode(fwd.target_vocab, c) for c in cands],
            fwd.model, bwd.model, lm.model,
            bwd_candidates=[encode(bwd.source_vocab, c) for c in cands],
            bwd_source=encode(bwd.target_vocab, x_tokens),
            lm_candidates=[encode(lm.target_vocab, c) for c in cands])
        records += [FeatureRecord(sent_id, c, FeatureVector(*f)) for c, f in zip(cands, feats)]
    write_features(args.out, records)


def _read_refs(paths, n):
    sets = [read_lines(p) for p in paths]
    for p, s in zip(paths, sets):
        if len(s) != n:
            raise DataError(f"{p} has {len(s)} lines, expected {n}")
    return [[split_tokens(s[i]) for s in sets] for i in range(n)]


def _load_feature_lists(path):
    feats = read_features(path)
    if not feats:
        raise DataError(f"{path}: no entries")
    ids = sorted(feats)
    if ids != list(range(len(ids))):
        raise DataError(f"{path}: sentence ids must be 0..{len(ids) - 1}")
    return [feats[i] for i in ids]


def cmd_tune(args):
    lists = _load_feature_lists(args.features)
    refs = _read_refs(args.ref, len(lists))
    dev = [DevSentence.build([r.tokens for r in recs], [r.features for r in recs], rs)
           for recs, rs in zip(lists, refs)]
    result = mert_tune(dev, MertConfig(args.restarts, stage_seed(args.seed, "tune"), args.init_scale))
    result.weights.save(args.out)
    print(f"baseline_BLEU={result.baseline_bleu!r}")
    print(f"BLEU={result.bleu!r}")


def _weights(spec) -> RerankWeights:
    return RerankWeights() if spec == "zero" else RerankWeights.load(spec)


def cmd_rerank(args):
    lists = _load_feature_lists(args.features)
    w = _weights(args.weights)
    best, reordered = [], []
    for sent_id, recs in enumerate(lists):
        order = rerank_order(np.array([r.features.as_array() for r in recs]), w)
        best.append(" ".join(recs[order[0]].tokens))
        reordered += [recs[i] for i in order]
    write_lines(args.out, best)
    if args.nbest_out:
        write_features(args.nbest_out, reordered)


def cmd_eval(args):
    hyps = [split_tokens(s) for s in read_lines(args.hyp)]
    refs = _read_refs(args.ref, len(hyps))
    lines = corpus_bleu(hyps, refs).lines()
    if args.nbest:
        try:
            groups = read_nbest(args.nbest)
            lists = [[r.tokens for r in groups[k]] for k in sorted(groups)]
        except DataError:
            groups = read_features(args.nbest)
            lists = [[r.tokens for r in groups[k]] for k in sorted(groups)]
        lines += diversity_report(lists).lines()
    text = "".join(line + "\n" for line in lines)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")


# --- UNK post-processing -------------------------------------------------------

def cmd_build_dict(args):
    loaded = load_model(args.model)
    src, tgt = read_lines(args.src), read_lines(args.tgt)
    if len(src) != len(tgt):
        raise DataError(f"{args.src} has {len(src)} lines, {args.tgt} has {len(tgt)}")
    pairs = [(encode(loaded.source_vocab, s), encode(loaded.target_vocab, t)) for s, t in zip(src, tgt)]
    alignments = extract_alignments(loaded.model, pairs)
    d = build_dictionary(alignments, [split_tokens(s) for s in src], [split_tokens(t) for t in tgt])
    d.save(args.out)
    print(f"dictionary entries={len(d)}")


def cmd_replace_unk(args):
    loaded = load_model(args.model)
    d = BilingualDictionary.load(args.dict)
    src, hyp = read_lines(args.source), read_lines(args.input)
    if len(src) != len(hyp):
        raise DataError(f"{args.source} has {len(src)} lines, {args.input} has {len(hyp)}")
    out = []
    for s, h in zip(src, hyp):
        s_toks, h_toks = split_tokens(s), split_tokens(h)
        if core.UNK not in h_toks:
            out.append(h)
            continue
        trace = attention_trace(loaded.model, encode(loaded.source_vocab, s_toks),
                                encode(loaded.target_vocab, h_toks))
        out.append(" ".join(replace_unk(h_toks, s_toks, trace, d)))
    write_lines(args.out, out)


# --- parser --------------------------------------------------------------------

def _add_train_flags(p, lm=False):
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--hidden", type=int, default=64, help="LSTM units per layer (= embedding size)")
    if not lm:
        p.add_argument("--layers", type=int, default=2, help="encoder and decoder depth")
        p.add_argument("--attention", type=_bool, default=True, help="general-score attention with input feeding")
        p.add_argument("--reverse", type=_bool, default=True, help="reverse source sentences")
        p.add_argument("--src-vocab-size", type=int, default=None, help="max source vocabulary incl. EOS/UNK")
        p.add_argument("--tgt-vocab-size", type=int, default=None, help="max target vocabulary incl. EOS/UNK")
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--halve-after", type=int, default=8, help="halve the learning rate each epoch after this one")
    p.add_argument("--lr", type=float, default=1.0, help="learning rate")
    p.add_argument("--clip", type=float, default=5.0, help="gradient norm threshold")
    p.add_argument("--init-range", type=float, default=0.1, help="uniform init half-range")
    p.add_argument("--batch-size", type=int, default=32)


def _add_decode_flags(p):
    p.add_argument("--beam", type=int, default=200, help="beam size K")
    p.add_argument("--diversity", type=float, default=0.0, help="intra-sibling rank penalty gamma")
    p.add_argument("--min-ratio", type=float, default=0.75, help="min target/source length ratio")
    p.add_argument("--max-ratio", type=float, default=1.5, help="max target/source length ratio")
    p.add_argument("--expansion", type=int, default=None, help="continuations per hypothesis (default K)")


def build_parser() -> argparse.ArgumentParser:
    ap = Parser(prog="mmi-nmt", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", help="key=value file supplying defaults for any flag")
    ap.add_argument("--seed", type=int, default=1, help="global seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("gen-data", help="write a synthetic parallel corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--vocab-size", type=int, default=20)
    p.add_argument("--rule", choices=core.REORDER_RULES, default="reversal")
    p.add_argument("--min-len", type=int, default=4)
    p.add_argument("--max-len", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.0, help="per-token target corruption rate")
    p.add_argument("--pairs", type=int, default=2000, help="training pairs")
    p.add_argument("--dev", type=int, default=0, help="dev pairs")
    p.add_argument("--test", type=int, default=0, help="test pairs")
    p.add_argument("--mono", type=int, default=0, help="monolingual target sentences")
    p.add_argument("--heldout-noise", type=float, default=0.0, help="noise rate for dev/test targets")
    p.set_defaults(func=cmd_gen_data)

    for name, func, helptext in (("train", cmd_train, "train p(y|x)"),
                                 ("train-backward", cmd_train_backward, "train p(x|y) on swapped pairs")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--src", required=True)
        p.add_argument("--tgt", required=True)
        _add_train_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("train-lm", help="train a single-layer LSTM language model")
    p.add_argument("--text", required=True, help="monolingual text, one sentence per line")
    p.add_argument("--vocab", help="vocabulary file; sentences above --max-unk-rate OOV are dropped")
    p.add_argument("--vocab-from", help="take the vocabulary (and filter) from this model's target side")
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--max-unk-rate", type=float, default=0.1)
    _add_train_flags(p, lm=True)
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("decode", help="beam search N-best lists")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="N-best file")
    _add_decode_flags(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("sweep-diversity", help="choose the diversity penalty by dev BLEU")
    p.add_argument("--model", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--ref", required=True, nargs="+")
    p.add_argument("--grid", type=float, nargs="+", default=[0.1, 0.5, 1.0, 2.0])
    _add_decode_flags(p)
    p.set_defaults(func=cmd_sweep_diversity)

    p = sub.add_parser("features", help="score N-best entries with forward, backward and LM models")
    p.add_argument("--nbest", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--fwd", required=True)
    p.add_argument("--bwd", required=True)
    p.add_argument("--lm", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("tune", help="MERT over (lambda, gamma_lm, eta)")
    p.add_argument("--features", required=True)
    p.add_argument("--ref", required=True, nargs="+", help="reference file(s)")
    p.add_argument("--out", required=True, help="weights file")
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--init-scale", type=float, default=1.0, help="random restart range")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("rerank", help="write the top-1 candidate per sentence under given weights")
    p.add_argument("--features", required=True)
    p.add_argument("--weights", required=True, help="weights file or 'zero'")
    p.add_argument("--out", required=True)
    p.add_argument("--nbest-out", help="also write the reordered features file")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("eval", help="BLEU (and distinct-n of an N-best file)")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True, nargs="+")
    p.add_argument("--nbest", help="N-best or features file for distinct-1/2")
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("build-dict", help="bilingual dictionary from attention alignments")
    p.add_argument("--model", required=True, help="attention model")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_dict)

    p = sub.add_parser("replace-unk", help="rewrite UNK tokens via attention and a dictionary")
    p.add_argument("--model", required=True, help="attention model used for forced decoding")
    p.add_argument("--source", required=True)
    p.add_argument("--input", required=True, help="translations")
    p.add_argument("--dict", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replace_unk)
    return ap


def _apply_config(parser, argv):
    """Install config-file values as defaults of the chosen subcommand, then parse."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    values = read_config(known.config)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((tok for tok in argv if tok in sub.choices), None)
    if command is None:
        return parser.parse_args(argv)
    subparser = sub.choices[command]
    scopes = ((parser, {a.dest: a for a in parser._actions}),
              (subparser, {a.dest: a for a in subparser._actions}))
    for key, raw in values.items():
        target = [(p, acts[key]) for p, acts in scopes if key in acts]
        if not target:
            raise UsageError(f"{known.config}: unknown option {key!r}")
        p, action = target[-1]
        conv = action.type or str
        value = [conv(v) for v in raw.split()] if action.nargs in ("+", "*") else conv(raw)
        action.required = False
        p.set_defaults(**{key: value})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        try:
            args = _apply_config(parser, argv)
        except SystemExit as exc:  # argparse errors and --help
            return int(exc.code or 0)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        print(f"mmi-nmt: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DecodeError, FileNotFoundError, ValueError) as exc:
        print(f"mmi-nmt: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"mmi-nmt: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
