"""Command-line entry point wiring every phase of the workflow.

Exit codes: 0 success, 2 validation error (bad config, missing inputs,
malformed data), 3 numeric-check failure (gradcheck).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import pipeline as P
from .catalog import CatalogSpec
from .checkpoint import CheckpointError, load_arrays, assign_params
from .classifier import attention_heatmap, normalize_heatmap, heatmap_text, \
    encode_batch
from .config import ConfigError, RunConfig, desk_profile, load_config, paper_profile
from .data import DataError, read_pairs, tokenize
from .metrics import MetricError, knn as knn_search
from .rng import RunRng
from .ved import beam_generate

log = logging.getLogger("quarts")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


def _run_dir(args) -> Path:
    if args.run_dir:
        return Path(args.run_dir)
    env = os.environ.get("QUARTS_RUN_DIR")
    if env:
        return Path(env)
    return Path("runs/default")


def _config(args) -> RunConfig:
    if getattr(args, "profile", None) == "paper":
        cfg = paper_profile()
    else:
        cfg = desk_profile()
    if getattr(args, "config", None):
        cfg = load_config(args.config, base=cfg)
    for key in ("seed", "p"):
        val = getattr(args, key, None)
        if val is not None:
            cfg = cfg.replace(**{key: val})
    return cfg


def _add_common(sub, data=True):
    sub.add_argument("--run-dir", help="run directory (or $QUARTS_RUN_DIR)")
    sub.add_argument("--config", help="key = value config file")
    sub.add_argument("--profile", choices=["desk", "paper"], default="desk")
    sub.add_argument("--seed", type=int)
    if data:
        sub.add_argument("--data-dir", required=True)


def cmd_gen_data(args) -> int:
    spec = CatalogSpec(items=args.items, labeled_pairs=args.labeled_pairs,
                       logs_pairs=args.logs_pairs,
                       positive_rate=args.positive_rate,
                       hard_fraction=args.hard_fraction,
                       seed=args.seed if args.seed is not None else 0)
    ratios = tuple(float(x) for x in args.split.split(","))
    if len(ratios) != 3:
        raise DataError("--split needs three comma-separated ratios")
    manifest = P.generate_data(spec, args.out, ratios)
    log.info("wrote corpus to %s: %s", args.out, json.dumps(manifest["counts"]))
    return EXIT_OK


def cmd_pretrain_classifier(args) -> int:
    cfg = _config(args)
    if args.epochs is not None:
        cfg = cfg.replace(clf_epochs=args.epochs)
    data = P.load_data(args.data_dir, cfg)
    run_dir = _run_dir(args)
    _, records = P.phase_pretrain_classifier(cfg, data, run_dir)
    cfg.save(run_dir / "config.cfg")
    log.info("classifier pretraining done: final val aupr=%.4f", records[-1].aupr)
    return EXIT_OK


def cmd_build_triples(args) -> int:
    cfg = _config(args)
    data = P.load_data(args.data_dir, cfg)
    triples = P.phase_build_triples(cfg, data, _run_dir(args))
    log.info("built %d triples", len(triples))
    return EXIT_OK


def cmd_pretrain_ved(args) -> int:
    cfg = _config(args)
    if args.epochs is not None:
        cfg = cfg.replace(ved_epochs=args.epochs)
    data = P.load_data(args.data_dir, cfg)
    _, records = P.phase_pretrain_ved(cfg, data, _run_dir(args))
    log.info("generator pretraining done: final loss=%.4f", records[-1].loss)
    return EXIT_OK


def cmd_train_e2e(args) -> int:
    cfg = _config(args)
    if args.epochs is not None:
        cfg = cfg.replace(e2e_epochs=args.epochs)
    data = P.load_data(args.data_dir, cfg)
    _, _, records = P.phase_train_e2e(cfg, data, _run_dir(args), p=args.p,
                                      freeze_generator=args.freeze_generator,
                                      resume=args.resume)
    log.info("end-to-end training done: final val aupr=%.4f s1=%.3f",
             records[-1].aupr, records[-1].s1_fraction)
    return EXIT_OK


def cmd_train_baseline(args) -> int:
    cfg = _config(args)
    data = P.load_data(args.data_dir, cfg)
    run_dir = _run_dir(args)
    if args.kind == "dssm":
        _, records = P.phase_train_dssm(cfg, data, run_dir)
    else:
        _, records = P.phase_naive_augment(cfg, data, run_dir,
                                           resume=args.resume,
                                           epochs=args.epochs)
    log.info("baseline %s done: final val aupr=%.4f", args.kind, records[-1].aupr)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    data = P.load_data(args.data_dir, cfg)
    report = P.evaluate_checkpoint(cfg, data, _run_dir(args), args.checkpoint,
                                   split=args.split,
                                   with_generation=args.generation,
                                   scores_out=args.scores_out)
    sys.stdout.write(report.to_text())
    out = _run_dir(args) / f"report_{Path(args.checkpoint).stem}_{args.split}.json"
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2)
    return EXIT_OK


def _load_eval_bundle(args, cfg, data):
    run_dir = _run_dir(args)
    ckpt = args.checkpoint or P.CKPT_E2E
    return P.load_bundle(cfg, data, run_dir, ckpt, need="train-e2e"), run_dir


def cmd_generate(args) -> int:
    cfg = _config(args)
    data = P.load_data(args.data_dir, cfg)
    (clf, ved), _ = _load_eval_bundle(args, cfg, data)
    if args.pairs:
        rows = [(p.title, p.query) for p in read_pairs(args.pairs) if p.label == 0]
    else:
        split = {"train": data.train, "val": data.val, "test": data.test}[args.split]
        rows = [(p.title, p.query) for p in split if p.label == 0]
    if args.limit:
        rows = rows[:args.limit]
    beam = args.beam or cfg.beam_size
    with open(args.out, "w", encoding="utf-8") as fh:
        for title, query in rows:
            item_ids = data.vocab_t.encode(tokenize(title)[:cfg.max_title_len])
            query_ids = data.vocab_q.encode(tokenize(query)[:cfg.max_query_len])
            out = beam_generate(item_ids, query_ids, clf, ved, beam=beam,
                                max_len=args.max_len or cfg.gen_max_len)
            if not out:
                continue
            tokens, score = out[0]
            gen = " ".join(data.vocab_q.decode(tokens))
            label = data.oracle.label(title, gen)
            fh.write(f"{title}\t{query}\t{gen}\t{score:.4f}\t"
                     f"{'?' if label is None else label}\n")
    log.info("wrote generations for %d pairs to %s", len(rows), args.out)
    return EXIT_OK


def cmd_heatmap(args) -> int:
    cfg = _config(args)
    data = P.load_data(args.data_dir, cfg)
    run_dir = _run_dir(args)
    ckpt = args.checkpoint or P.CKPT_E2E
    arrays = load_arrays(run_dir / ckpt)
    clf = P.new_classifier(cfg, data, RunRng(cfg.seed, "classifier"))
    assign_params(clf.named(), {k: v for k, v in arrays.items()
                                if k.startswith("clf.")})
    title_tokens = tokenize(args.title)[:cfg.max_title_len]
    query_tokens = tokenize(args.query)[:cfg.max_query_len]
    alpha = attention_heatmap(data.vocab_t.encode(title_tokens),
                              data.vocab_q.encode(query_tokens), clf)
    norm = normalize_heatmap(alpha)
    text = heatmap_text(norm, query_tokens, title_tokens)
    sys.stdout.write(text)
    if args.out:
        Path(args.out + ".txt").write_text(text, encoding="utf-8")
        with open(args.out + ".json", "w", encoding="utf-8") as fh:
            json.dump({"query_tokens": query_tokens,
                       "title_tokens": title_tokens,
                       "normalized": norm.tolist(),
                       "raw": alpha.tolist()}, fh, indent=2)
    return EXIT_OK


def cmd_knn(args) -> int:
    cfg = _config(args)
    data = P.load_data(args.data_dir, cfg)
    run_dir = _run_dir(args)
    ckpt = args.checkpoint or P.CKPT_E2E
    arrays = load_arrays(run_dir / ckpt)
    clf = P.new_classifier(cfg, data, RunRng(cfg.seed, "classifier"))
    assign_params(clf.named(), {k: v for k, v in arrays.items()
                                if k.startswith("clf.")})
    side = args.side
    vocab = data.vocab_q if side == "query" else data.vocab_t
    emb = clf.emb_q if side == "query" else clf.emb_t
    lstm = clf.lstm_q if side == "query" else clf.lstm_t
    texts = sorted({(p.query if side == "query" else p.title)
                    for p in data.test + data.val})
    if args.limit:
        texts = texts[:args.limit]

    def pooled(text: str) -> np.ndarray:
        ids = vocab.encode(tokenize(text)[:cfg.max_query_len if side == "query"
                                          else cfg.max_title_len])
        mat = np.asarray([ids], dtype=np.int64)
        states, _ = encode_batch(mat, np.array([len(ids)]), emb, lstm)
        return states.data[0, :len(ids)].mean(axis=0)

    corpus = np.stack([pooled(t) for t in texts])
    qv = pooled(args.text)
    exclude = texts.index(args.text) if args.text in texts else None
    hits = knn_search(qv, corpus, top_k=args.top, exclude=exclude)
    print(f"source: {args.text}")
    for idx, sim in hits:
        print(f"  {sim:.4f}  {texts[idx]}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite
    ok = run_suite(seed=args.seed if args.seed is not None else 0)
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="quarts",
        description="Query-item mismatch classification with adversarial "
                    "query generation")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize the product-search corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--items", type=int, default=5000)
    g.add_argument("--labeled-pairs", type=int, default=50000)
    g.add_argument("--logs-pairs", type=int, default=50000)
    g.add_argument("--positive-rate", type=float, default=0.15)
    g.add_argument("--hard-fraction", type=float, default=0.6)
    g.add_argument("--split", default="0.7,0.15,0.15")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("pretrain-classifier", help="phase 1: classifier")
    _add_common(s)
    s.add_argument("--epochs", type=int)
    s.set_defaults(fn=cmd_pretrain_classifier)

    s = sub.add_parser("build-triples", help="phase 2: generator training tuples")
    _add_common(s)
    s.set_defaults(fn=cmd_build_triples)

    s = sub.add_parser("pretrain-ved", help="phase 3: generator decoder")
    _add_common(s)
    s.add_argument("--epochs", type=int)
    s.set_defaults(fn=cmd_pretrain_ved)

    s = sub.add_parser("train-e2e", help="phases 4-5: switched training")
    _add_common(s)
    s.add_argument("--p", type=float, help="switch probability")
    s.add_argument("--epochs", type=int)
    s.add_argument("--freeze-generator", action="store_true")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.set_defaults(fn=cmd_train_e2e)

    s = sub.add_parser("train-baseline", help="dssm or naive-augment baseline")
    _add_common(s)
    s.add_argument("--kind", choices=["dssm", "augment"], required=True)
    s.add_argument("--resume", help="(augment) continue from a checkpoint "
                                    "using the end-to-end phase streams")
    s.add_argument("--epochs", type=int)
    s.set_defaults(fn=cmd_train_baseline)

    s = sub.add_parser("eval", help="metrics report for a checkpoint")
    _add_common(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", choices=["train", "val", "test"], default="test")
    s.add_argument("--generation", action="store_true",
                   help="also score beam-1 generations (BLEU, oracle accuracy)")
    s.add_argument("--scores-out", help="per-example score TSV")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("generate", help="beam-search queries for matched pairs")
    _add_common(s)
    s.add_argument("--checkpoint")
    s.add_argument("--pairs", help="TSV of pairs to rewrite (default: a split)")
    s.add_argument("--split", choices=["train", "val", "test"], default="test")
    s.add_argument("--beam", type=int)
    s.add_argument("--max-len", type=int)
    s.add_argument("--limit", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_generate)

    s = sub.add_parser("heatmap", help="attention grid for one pair")
    _add_common(s)
    s.add_argument("--checkpoint")
    s.add_argument("--title", required=True)
    s.add_argument("--query", required=True)
    s.add_argument("--out", help="path prefix for .txt/.json export")
    s.set_defaults(fn=cmd_heatmap)

    s = sub.add_parser("knn", help="nearest neighbors by pooled encoding")
    _add_common(s)
    s.add_argument("--checkpoint")
    s.add_argument("--text", required=True)
    s.add_argument("--side", choices=["query", "title"], default="query")
    s.add_argument("--top", type=int, default=3)
    s.add_argument("--limit", type=int)
    s.set_defaults(fn=cmd_knn)

    s = sub.add_parser("gradcheck", help="finite-difference suite")
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stdout)
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataError, CheckpointError, MetricError,
            P.PipelineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
