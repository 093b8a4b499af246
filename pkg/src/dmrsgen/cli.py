"""``dmrsgen`` command line: preprocess, train, generate, evaluate, ablate, sample-errors."""

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

log = logging.getLogger("dmrsgen")

SPLIT_SUFFIXES = ("src", "tgt", "ref", "map.tsv", "domains")

# option defaults; a --config JSON file may set any of these, flags override it
DEFAULTS = {
    "preprocess": {"train": None, "silver": None, "dev": None, "test": None, "out": None,
                   "ablation": "all", "min_count": 2},
    "train": {"data": None, "gold": "train", "silver": None, "dev": None, "checkpoint": None,
              "log": None, "epochs": 30, "lr": 1e-3, "batch_size": 16, "hidden": 64,
              "symbol_dim": 64, "bundle_dim": 8, "layers": 2, "dropout": 0.3, "clip": 5.0,
              "no_copy": False, "large": False},
    "generate": {"checkpoint": None, "data": None, "split": "test", "output": None, "beam": 5,
                 "greedy": False, "no_copy": False, "max_len": 100},
    "evaluate": {"hyp": None, "ref": None, "domains": None, "buckets": None, "per_bucket": 33,
                 "output": None, "signature": False},
    "ablate": {"input": None, "spec": None, "output": None, "format": "linear"},
    "sample-errors": {"hyp": None, "ref": None, "buckets": "80-89,60-69,40-49", "per_bucket": 33,
                      "output": None},
}


class UsageError(Exception):
    pass


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_lines(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def _write_lines(path, lines) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def _need(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


def _existing(path, what="input"):
    if not Path(path).is_file():
        raise UsageError(f"{what} file not found: {path}")
    return path


# ---------------------------------------------------------------------------
# preprocess


def _load_examples(path, failures):
    from .preprocess import read_corpus

    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, item in read_corpus(fh):
            if isinstance(item, Exception):
                failures.append(f"{path}:{lineno}: {item}")
                log.error("%s:%d: %s", path, lineno, item)
            else:
                out.append(item)
    return out


def _write_split(out_dir: Path, name: str, split) -> dict:
    from .preprocess import write_maps

    _write_lines(out_dir / f"{name}.src", [p.source.to_text() for p in split.pairs])
    _write_lines(out_dir / f"{name}.tgt", [" ".join(p.target) for p in split.pairs])
    _write_lines(out_dir / f"{name}.ref", split.references)
    _write_lines(out_dir / f"{name}.domains", split.domains)
    with open(out_dir / f"{name}.map.tsv", "w", encoding="utf-8", newline="") as fh:
        write_maps(split.maps, fh)
    return {suffix: _sha256(out_dir / f"{name}.{suffix}") for suffix in SPLIT_SUFFIXES}


def cmd_preprocess(args) -> int:
    from .corpus import build_vocabulary
    from .dmrs import AblationSpec
    from .pipeline import PreparedSplit, prepare
    from .preprocess import dedup

    _need(args, "train", "out")
    for name in ("train", "silver", "dev", "test"):
        if getattr(args, name):
            _existing(getattr(args, name))
    spec = AblationSpec.parse(args.ablation)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    failures = []
    raw = {name: _load_examples(getattr(args, name), failures)
           for name in ("train", "silver", "dev", "test") if getattr(args, name)}
    removed = {}
    if "test" in raw:
        for name in ("train", "silver"):
            if name in raw:
                before = len(raw[name])
                raw[name] = dedup(raw[name], raw["test"])
                removed[name] = before - len(raw[name])

    # the unknown-word policy counts over all training data, gold and silver together
    training = [n for n in ("train", "silver") if n in raw]
    joint = prepare([ex for n in training for ex in raw[n]], ablation=spec, unknown_policy=True)
    splits = {}
    start = 0
    for name in training:
        end = start + len(raw[name])
        splits[name] = PreparedSplit(joint.pairs[start:end], joint.maps[start:end],
                                     joint.references[start:end], None, joint.domains[start:end])
        for i, p in enumerate(splits[name].pairs):
            p.index = i
        start = end
    for name in ("dev", "test"):
        if name in raw:
            splits[name] = prepare(raw[name], ablation=spec)

    train_pairs = [p for n in training for p in splits[n].pairs]
    if not train_pairs:
        raise UsageError("no usable training records")
    vocab = build_vocabulary(train_pairs, min_count=args.min_count)
    vocab.save(out_dir / "vocab")

    stats = {
        "ablation": str(spec),
        "records": {n: len(s.pairs) for n, s in splits.items()},
        "dedup_removed": removed,
        "failures": failures,
        "unknown_tokens": {"replaced": sum(joint.unknowns.replaced.values()),
                           "kept": sum(joint.unknowns.kept.values())},
        "vocab_sizes": {"source": len(vocab.source), "bundles": len(vocab.bundles),
                        "target": len(vocab.target)},
        "vocab_hash": vocab.content_hash(),
        "files": {n: _write_split(out_dir, n, s) for n, s in splits.items()},
        "reentrancy_convention": "predicate-copy",
    }
    (out_dir / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if not args.quiet:
        print(json.dumps({"records": stats["records"], "failures": len(failures)}))
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# train / generate


def _load_data_dir(data_dir: Path):
    from .corpus import Vocabulary

    stats_path = data_dir / "stats.json"
    if not stats_path.is_file():
        raise UsageError(f"{data_dir} is not a preprocessed directory (no stats.json)")
    stats = json.loads(stats_path.read_text(encoding="utf-8"))
    vocab = Vocabulary.load(data_dir / "vocab")
    if vocab.content_hash() != stats["vocab_hash"]:
        raise UsageError(f"{data_dir}: vocabulary hash does not match stats.json")
    return stats, vocab


def _load_split(data_dir: Path, stats: dict, name: str):
    from .corpus import ParallelExample
    from .linearize import LinearSequence

    recorded = stats["files"].get(name)
    if recorded is None:
        raise UsageError(f"split {name!r} not found in {data_dir}")
    for suffix, digest in recorded.items():
        if _sha256(data_dir / f"{name}.{suffix}") != digest:
            raise UsageError(f"{data_dir}/{name}.{suffix}: corpus hash mismatch")
    src = _read_lines(data_dir / f"{name}.src")
    tgt = _read_lines(data_dir / f"{name}.tgt")
    domains = _read_lines(data_dir / f"{name}.domains")
    return [ParallelExample(LinearSequence.from_text(s), t.split(), name, d, i)
            for i, (s, t, d) in enumerate(zip(src, tgt, domains))]


def cmd_train(args) -> int:
    from .corpus import mix_gold_silver
    from .model import Hyperparams, train

    _need(args, "data", "checkpoint")
    data_dir = Path(args.data)
    stats, vocab = _load_data_dir(data_dir)
    gold = _load_split(data_dir, stats, args.gold)
    meta = {"seed": args.seed, "gold": args.gold, "gold_examples": len(gold)}
    if args.silver:
        silver = _load_split(data_dir, stats, args.silver)
        for p in gold:
            p.provenance = "gold"
        for p in silver:
            p.provenance = "silver"
        data = mix_gold_silver(gold, silver, seed=args.seed)
        n_gold = sum(p.provenance == "gold" for p in data)
        n_silver = len(data) - n_gold
        meta.update(silver=args.silver, mixed_gold=n_gold, mixed_silver=n_silver,
                    ratio=f"1:{n_silver / n_gold:.2f}" if n_gold else "0:1")
        log.info("mixed corpus: %d gold-derived + %d silver (gold:silver = %s)",
                    n_gold, n_silver, meta["ratio"])
        if not args.quiet:
            print(f"gold:silver = {n_gold}:{n_silver} ({meta['ratio']})")
    else:
        data = gold
    dev_name = args.dev or ("dev" if "dev" in stats["files"] else None)
    dev = _load_split(data_dir, stats, dev_name) if dev_name else None

    base = Hyperparams.large if args.large else Hyperparams
    overrides = {} if args.large else dict(hidden=args.hidden, symbol_dim=args.symbol_dim,
                                                 bundle_dim=args.bundle_dim)
    hp = base(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, encoder_layers=args.layers,
              decoder_layers=args.layers, dropout=args.dropout, clip_norm=args.clip,
              copy=not args.no_copy, seed=args.seed, **overrides)
    log_path = args.log or f"{args.checkpoint}.log.jsonl"
    result = train(data, vocab, hp, dev_data=dev, log_path=log_path, checkpoint_path=args.checkpoint)
    meta.update(best_epoch=result.best_epoch, hyperparams=vars(hp), vocab_hash=vocab.content_hash())
    Path(f"{args.checkpoint}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if not args.quiet:
        last = result.log[-1]
        print(f"best epoch {result.best_epoch}; final dev perplexity {last['dev_ppl']:.3f}")
    return 0


def cmd_generate(args) -> int:
    from .linearize import LinearSequence
    from .model import CheckpointError, generate, load_checkpoint
    from .preprocess import read_maps

    _need(args, "checkpoint", "data", "output")
    _existing(args.checkpoint, "checkpoint")
    data_dir = Path(args.data)
    stats, vocab = _load_data_dir(data_dir)
    try:
        model = load_checkpoint(args.checkpoint, vocab)
    except CheckpointError as exc:
        raise UsageError(str(exc))
    src_path = _existing(data_dir / f"{args.split}.src")
    seqs = [LinearSequence.from_text(line) for line in _read_lines(src_path)]
    map_path = data_dir / f"{args.split}.map.tsv"
    maps = None
    if map_path.is_file():
        with open(map_path, encoding="utf-8") as fh:
            maps = read_maps(fh, count=len(seqs))
    outputs = generate(model, seqs, maps, width=args.beam, max_len=args.max_len,
                       use_copy=not args.no_copy, greedy=args.greedy)
    _write_lines(args.output, outputs)
    return 0


# ---------------------------------------------------------------------------
# evaluate / sample-errors / ablate


def cmd_evaluate(args) -> int:
    from .evaluation import bucket_sample, corpus_bleu, parse_buckets, signature

    if args.signature:
        print(json.dumps({"corpus": signature("none"), "sentence": signature("add-one")}))
        if args.hyp is None and args.ref is None:
            return 0
    _need(args, "hyp", "ref")
    hyps = _read_lines(_existing(args.hyp))
    refs = _read_lines(_existing(args.ref))
    if len(hyps) != len(refs):
        raise UsageError(f"{len(hyps)} hypotheses but {len(refs)} references")
    domains = _read_lines(_existing(args.domains)) if args.domains else None
    report = corpus_bleu(hyps, refs, domains).to_json()
    report["signature"] = signature("none")
    if args.buckets:
        report["samples"] = bucket_sample(list(zip(hyps, refs)), parse_buckets(args.buckets),
                                          args.per_bucket, seed=args.seed)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    if not args.quiet or not args.output:
        if args.output:
            print(f"BLEU {report['bleu']:.2f}  exact match {report['exact_match']:.2f}")
        else:
            sys.stdout.write(text)
    return 0


def cmd_sample_errors(args) -> int:
    from .evaluation import bucket_sample, parse_buckets

    _need(args, "hyp", "ref")
    hyps = _read_lines(_existing(args.hyp))
    refs = _read_lines(_existing(args.ref))
    if len(hyps) != len(refs):
        raise UsageError(f"{len(hyps)} hypotheses but {len(refs)} references")
    items = bucket_sample(list(zip(hyps, refs)), parse_buckets(args.buckets), args.per_bucket, seed=args.seed)
    lines = [json.dumps(item, ensure_ascii=False) for item in items]
    if args.output:
        _write_lines(args.output, lines)
    else:
        for line in lines:
            print(line)
    return 0


def cmd_ablate(args) -> int:
    from .dmrs import AblationSpec, ablate
    from .pipeline import prepare
    from .preprocess import write_corpus

    _need(args, "input", "spec", "output")
    _existing(args.input)
    spec = AblationSpec.parse(args.spec)
    failures = []
    examples = _load_examples(args.input, failures)
    if args.format == "jsonl":
        from dataclasses import replace
        with open(args.output, "w", encoding="utf-8") as fh:
            write_corpus([replace(ex, graph=ablate(ex.graph, spec)) for ex in examples], fh)
    else:
        split = prepare(examples, ablation=spec)
        _write_lines(args.output, [p.source.to_text() for p in split.pairs])
    return 1 if failures else 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS so a subcommand does not reset flags given before it
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON file of option defaults")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="dmrsgen", parents=[common],
                                     description="DMRS-to-text generation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="build linearized corpora and vocabulary")
    p.add_argument("--train", help="gold training corpus (JSON lines)")
    p.add_argument("--silver", help="silver training corpus (JSON lines)")
    p.add_argument("--dev")
    p.add_argument("--test", help="test corpus; training sentences equal to a test sentence are dropped")
    p.add_argument("--out", help="output directory")
    p.add_argument("--ablation", help="all | none | keep=k1,k2 | noedgeflavor")
    p.add_argument("--min-count", type=int)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="train a generator")
    p.add_argument("--data", help="preprocessed directory")
    p.add_argument("--gold", help="gold split name (default: train)")
    p.add_argument("--silver", help="silver split name; enables 1:2 gold:silver mixing")
    p.add_argument("--dev", help="dev split name (default: dev when present)")
    p.add_argument("--checkpoint")
    p.add_argument("--log", help="training log, JSON lines")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--symbol-dim", type=int)
    p.add_argument("--bundle-dim", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--no-copy", action="store_true", default=None)
    p.add_argument("--large", action="store_true", default=None,
                   help="500-dim symbols, 800 hidden per direction, 24-dim bundles")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="decode a preprocessed split")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--split")
    p.add_argument("--output")
    p.add_argument("--beam", type=int)
    p.add_argument("--greedy", action="store_true", default=None)
    p.add_argument("--no-copy", action="store_true", default=None)
    p.add_argument("--max-len", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", parents=[common], help="BLEU and exact match")
    p.add_argument("--hyp")
    p.add_argument("--ref")
    p.add_argument("--domains", help="one domain tag per line")
    p.add_argument("--buckets", help="sentence-BLEU ranges, e.g. 80-89,60-69,40-49")
    p.add_argument("--per-bucket", type=int)
    p.add_argument("--output")
    p.add_argument("--signature", action="store_true", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="ablate a corpus and re-linearize it")
    p.add_argument("--input")
    p.add_argument("--spec")
    p.add_argument("--output")
    p.add_argument("--format", choices=["linear", "jsonl"])
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sample-errors", parents=[common], help="sample items by sentence BLEU")
    p.add_argument("--hyp")
    p.add_argument("--ref")
    p.add_argument("--buckets")
    p.add_argument("--per-bucket", type=int)
    p.add_argument("--output")
    p.set_defaults(func=cmd_sample_errors)
    return parser


def resolve(args) -> argparse.Namespace:
    """Fill unset options from --config, then from DEFAULTS."""
    defaults = dict(DEFAULTS[args.command])
    config = {}
    if getattr(args, "config", None):
        config = json.loads(Path(_existing(args.config, "config")).read_text(encoding="utf-8"))
        if not isinstance(config, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(config) - set(defaults) - {"seed", "quiet"}
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    defaults.update(seed=0, quiet=False)
    for key, default in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, config.get(key, default))
    return args


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = resolve(args)
        logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", force=True)
        return args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"dmrsgen {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
