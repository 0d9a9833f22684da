"""Command-line pipeline: preprocess, train, eval, export, sample.

A run is reproducible from its artifacts alone: preprocess writes the
corpus matrices and split, train writes a checkpoint (which embeds the
vocabulary and its hash), and eval refuses a checkpoint whose vocabulary
hash does not match the corpus directory.  Config values come from an INI
file with sections mirroring the library's config objects; command-line
flags override file values, and nothing depends on wall-clock time, so
rerunning a command with the same inputs writes identical bytes.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

from . import boxes as bx
from . import cluster as cl
from . import corpus as cp
from . import metrics as mt
from . import model as md
from . import training as tr
from .stopwords import ENGLISH_STOPWORDS


def _read_config(path: str | None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    return parser


def _get(cfg: configparser.ConfigParser, section: str, key: str, cast, default):
    if cfg.has_option(section, key):
        if cast is bool:
            return cfg.getboolean(section, key)
        return cast(cfg.get(section, key))
    return default


def _train_config(cfg: configparser.ConfigParser, args) -> tr.TrainConfig:
    base = tr.TrainConfig()
    values = {}
    for name, cast in (
        ("embed_dim", int),
        ("depth", int),
        ("leaf_topics", int),
        ("learning_rate", float),
        ("hidden", int),
        ("margin", float),
        ("co_weight", float),
        ("ht_weight_max", float),
        ("cluster_stop_epoch", int),
        ("epochs", int),
        ("batch_size", int),
        ("co_batch_size", int),
        ("spectral_init", bool),
        ("seed", int),
    ):
        values[name] = _get(cfg, "train", name, cast, getattr(base, name))
    for flag, name in (
        ("epochs", "epochs"),
        ("k", "depth"),
        ("leaf_topics", "leaf_topics"),
        ("embed_dim", "embed_dim"),
        ("seed", "seed"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    return tr.TrainConfig(**values)


def _cluster_config(cfg: configparser.ConfigParser) -> cl.ClusterConfig:
    base = cl.ClusterConfig()
    return cl.ClusterConfig(
        damping=_get(cfg, "cluster", "damping", float, base.damping),
        max_iter=_get(cfg, "cluster", "max_iter", int, base.max_iter),
        convergence_window=_get(cfg, "cluster", "convergence_window", int, base.convergence_window),
        preference_mode=_get(cfg, "cluster", "preference_mode", str, base.preference_mode),
        n_expand=_get(cfg, "cluster", "n_expand", int, base.n_expand),
        top_threshold=_get(cfg, "cluster", "top_threshold", int, base.top_threshold),
        adaptive_depth=_get(cfg, "cluster", "adaptive_depth", bool, base.adaptive_depth),
    )


def _box_config(cfg: configparser.ConfigParser, embed_dim: int) -> bx.BoxAlgebraConfig:
    base = bx.BoxAlgebraConfig(dim=embed_dim)
    return bx.BoxAlgebraConfig(
        dim=embed_dim,
        vol_temp=_get(cfg, "boxes", "vol_temp", float, base.vol_temp),
        int_temp=_get(cfg, "boxes", "int_temp", float, base.int_temp),
        log_eps=_get(cfg, "boxes", "log_eps", float, base.log_eps),
    )


def _stopword_set(spec: str) -> frozenset[str]:
    if spec == "english":
        return ENGLISH_STOPWORDS
    if spec == "none":
        return frozenset()
    with open(spec, "r", encoding="utf-8") as f:
        return frozenset(w.strip() for w in f if w.strip())


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
        f.write("\n")


def cmd_preprocess(args) -> int:
    cfg = _read_config(args.config)
    seed = args.seed if args.seed is not None else _get(cfg, "corpus", "seed", int, 0)
    min_count = args.min_count if args.min_count is not None else _get(cfg, "corpus", "min_count", int, 5)
    max_vocab = args.max_vocab if args.max_vocab is not None else _get(cfg, "corpus", "max_vocab", int, 15000)
    window = args.window if args.window is not None else _get(cfg, "corpus", "window", int, 10)
    stop_spec = args.stopwords if args.stopwords is not None else _get(cfg, "corpus", "stopwords", str, "english")
    with open(args.input, "r", encoding="utf-8") as f:
        raw_docs = [line.rstrip("\n") for line in f]
    corpus = cp.build_corpus(
        raw_docs,
        stopwords=_stopword_set(stop_spec),
        min_count=min_count,
        max_vocab=max_vocab,
        window=window,
        seed=seed,
    )
    out_dir = Path(args.out_dir)
    config_echo = {
        "min_count": min_count,
        "max_vocab": max_vocab,
        "window": window,
        "stopwords": stop_spec,
        "seed": seed,
    }
    cp.save_corpus(corpus, out_dir, config=config_echo)
    s = corpus.summary()
    print(
        f"vocab {s['vocab_size']}  docs {s['n_docs']}  "
        f"splits {s['splits']['train']}/{s['splits']['valid']}/{s['splits']['test']}"
    )
    print(f"wrote corpus artifacts to {out_dir}")
    return 0


def cmd_train(args) -> int:
    corpus = cp.load_corpus(Path(args.corpus_dir))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resume_state = None
    start_epoch = 0
    if args.resume:
        with open(args.resume, "r", encoding="utf-8") as f:
            ckpt = json.load(f)
        if ckpt.get("vocab_hash") != corpus.vocab.content_hash:
            print("error: vocabulary mismatch", file=sys.stderr)
            return 1
        resume_state = md.state_from_dict(ckpt)
        start_epoch = int(ckpt.get("epoch", 0))
        stored = ckpt.get("config", {})
        cfg = tr.TrainConfig(**stored["train"])
        cluster_cfg = cl.ClusterConfig(**stored["cluster"])
        box_cfg = bx.BoxAlgebraConfig(**stored["boxes"])
        if args.epochs is not None:
            cfg = tr.TrainConfig(**{**stored["train"], "epochs": args.epochs})
    else:
        file_cfg = _read_config(args.config)
        cfg = _train_config(file_cfg, args)
        cluster_cfg = _cluster_config(file_cfg)
        box_cfg = _box_config(file_cfg, cfg.embed_dim)

    log_path = out_dir / "train_log.jsonl"
    with open(log_path, "a" if args.resume else "w", encoding="utf-8") as log_file:

        def log_fn(stats: dict) -> None:
            log_file.write(json.dumps(stats, sort_keys=True) + "\n")
            log_file.flush()

        result = tr.fit(
            corpus,
            cfg,
            cluster_cfg=cluster_cfg,
            box_cfg=box_cfg,
            log_fn=log_fn,
            resume_state=resume_state,
            start_epoch=start_epoch,
        )

    config_echo = tr.config_dict(cfg, cluster_cfg, box_cfg)
    checkpoint = md.state_to_dict(
        result.state,
        vocab_hash=corpus.vocab.content_hash,
        vocab=corpus.vocab.words,
        epoch=max(cfg.epochs, start_epoch),
        config=config_echo,
        best_epoch=result.best_epoch,
        best_val_elbo=result.best_val_elbo,
    )
    _write_json(out_dir / "checkpoint.json", checkpoint)
    _write_json(out_dir / "taxonomy.json", result.taxonomy)
    if result.aborted:
        print(f"error: training aborted: {result.abort_reason}", file=sys.stderr)
        print(f"last good state written to {out_dir / 'checkpoint.json'}", file=sys.stderr)
        return 1
    sizes = "/".join(str(s) for s in result.state.level_sizes)
    final = result.history[-1] if result.history else {}
    print(f"levels {sizes}  epochs {len(result.history)}  final loss {final.get('loss', float('nan')):.4f}")
    print(f"wrote checkpoint, taxonomy, log to {out_dir}")
    return 0


def _load_checkpoint(path: str) -> tuple[md.ModelState, dict]:
    with open(path, "r", encoding="utf-8") as f:
        ckpt = json.load(f)
    return md.state_from_dict(ckpt), ckpt


def cmd_eval(args) -> int:
    state, ckpt = _load_checkpoint(args.checkpoint)
    corpus = cp.load_corpus(Path(args.corpus_dir))
    if ckpt.get("vocab_hash") != corpus.vocab.content_hash:
        print("error: vocabulary mismatch", file=sys.stderr)
        return 1
    train_rows = corpus.split_indices(cp.TRAIN)
    ref = mt.ReferenceStats.from_counts(corpus.counts[train_rows])
    keywords = md.level_keyword_lists(state, top_n=15)
    rep = mt.report(
        keywords,
        state.parents,
        ref,
        reference_id=f"train-split:{corpus.vocab.content_hash[:12]}",
    )
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "metrics.json", rep.to_json_dict())
    with open(out_dir / "metrics.txt", "w", encoding="utf-8") as f:
        f.write(rep.to_text())
    print(rep.to_text(), end="")
    print(f"wrote metric reports to {out_dir}")
    return 0


def _text_taxonomy(tax: dict) -> str:
    levels = tax["levels"]
    children: dict[tuple[int, int], list[int]] = {}
    for k in range(len(levels) - 1):
        for topic in levels[k]:
            children.setdefault((k + 1, topic["parent"]), []).append(topic["id"])

    lines: list[str] = []

    def walk(k: int, i: int, indent: int) -> None:
        topic = levels[k][i]
        kw = " ".join(entry["word"] for entry in topic["keywords"][:5])
        lines.append("  " * indent + f"[L{k}] topic {i}: {kw}")
        for child in children.get((k, i), []):
            walk(k - 1, child, indent + 1)

    top = len(levels) - 1
    for topic in levels[top]:
        walk(top, topic["id"], 0)
    return "\n".join(lines) + "\n"


def cmd_export(args) -> int:
    state, ckpt = _load_checkpoint(args.checkpoint)
    words = ckpt.get("vocab")
    if words is None:
        print("error: checkpoint lacks an embedded vocabulary", file=sys.stderr)
        return 1
    tax = md.taxonomy_dict(
        state,
        words,
        config=ckpt.get("config", {}),
        vocab_hash=ckpt.get("vocab_hash", ""),
        top_n=args.top_n,
    )
    if args.format == "json":
        text = json.dumps(tax, sort_keys=True, indent=1) + "\n"
    elif args.format == "text":
        text = _text_taxonomy(tax)
    else:
        print(f"error: unknown format {args.format!r}", file=sys.stderr)
        return 1
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
        print(f"wrote taxonomy to {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_sample(args) -> int:
    state, ckpt = _load_checkpoint(args.checkpoint)
    words = ckpt.get("vocab")
    if words is None:
        print("error: checkpoint lacks an embedded vocabulary", file=sys.stderr)
        return 1
    for n in range(args.n_docs):
        ids = md.sample_document(state, args.length, seed=args.seed + n)
        print(" ".join(words[i] for i in ids))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boxtaxo",
        description="Topic taxonomies from box embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="tokenize a text file into corpus artifacts")
    p.add_argument("input", help="UTF-8 text file, one document per line")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--min-count", type=int)
    p.add_argument("--max-vocab", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--stopwords", help="'english', 'none', or a word-list file")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train on preprocessed artifacts")
    p.add_argument("corpus_dir")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--k", type=int, help="number of topic levels")
    p.add_argument("--leaf-topics", type=int, dest="leaf_topics")
    p.add_argument("--embed-dim", type=int, dest="embed_dim")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint's taxonomy")
    p.add_argument("checkpoint")
    p.add_argument("corpus_dir")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="emit the taxonomy as JSON or text")
    p.add_argument("checkpoint")
    p.add_argument("--format", default="json", choices=None)
    p.add_argument("--top-n", type=int, default=15, dest="top_n")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("sample", help="sample synthetic documents from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--length", type=int, default=20)
    p.add_argument("--n-docs", type=int, default=5, dest="n_docs")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
