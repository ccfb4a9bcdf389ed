"""Phase orchestration: data synthesis through end-to-end training and eval.

The training schedule is: (1) pretrain the classifier on annotated data,
(2) build (item, matched, mismatched) triples, (3) pretrain the generator
decoder with the shared encoder frozen, (4) concatenate annotated and
logs data, (5) switched end-to-end training. Every phase writes a
checkpoint and a manifest entry; per-epoch metrics append to
``metrics.jsonl``, one JSON record per line.

Each phase derives fresh random substreams from (seed, phase), so a
later phase's draws never depend on how much randomness an earlier phase
consumed. The baseline trainer reuses the end-to-end phase streams when
resuming, which makes ``train-e2e --p 0`` and a resumed baseline run
bitwise comparable.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as M
from . import tensor as T
from .catalog import CatalogSpec, MatchOracle, generate_corpus
from .checkpoint import load_arrays, assign_params, save_params
from .classifier import ClassifierParams, DssmParams, init_classifier, init_dssm
from .config import RunConfig, RunManifest, file_sha256
from .data import (DataError, Example, RawPair, Vocabulary, build_vocab,
                   encode_pairs, read_pairs, split_pairs, tokenize, write_pairs)
from .rng import RunRng
from .train import (EpochRecord, TrainSettings, evaluate_dssm_probs,
                    evaluate_probs, train_classifier, train_dssm, train_e2e,
                    train_ved)
from .ved import VedParams, beam_generate, build_triples, encode_triples, init_ved

log = logging.getLogger(__name__)

LABELED_TSV = "labeled.tsv"
LOGS_TSV = "logs.tsv"
CATALOG_JSON = "catalog.json"
SPLITS = ("train", "val", "test")

CKPT_CLASSIFIER = "phase1_classifier.qrts"
CKPT_TRIPLES = "triples.tsv"
CKPT_VED = "phase3_ved.qrts"
CKPT_E2E = "phase5_e2e.qrts"
CKPT_DSSM = "baseline_dssm.qrts"
CKPT_AUGMENT = "baseline_augment.qrts"


class PipelineError(RuntimeError):
    """A phase is missing its prerequisites; the message names the fix."""


def set_precision(cfg: RunConfig) -> None:
    T.set_default_dtype(np.float64 if cfg.precision == "f64" else np.float32)


# --- data ------------------------------------------------------------------

def generate_data(spec: CatalogSpec, out_dir, ratios=(0.7, 0.15, 0.15)) -> dict:
    """Write labeled.tsv, logs.tsv, catalog.json, split files, and a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labeled, logs, _ = generate_corpus(spec)
    write_pairs(out / LABELED_TSV, labeled)
    write_pairs(out / LOGS_TSV, logs)
    spec.save(out / CATALOG_JSON)
    splits = split_pairs(labeled, tuple(ratios), spec.seed)
    for name, pairs in zip(SPLITS, splits):
        write_pairs(out / f"{name}.tsv", pairs)
    manifest = {
        "seed": spec.seed,
        "counts": {"labeled": len(labeled), "logs": len(logs),
                   **{name: len(p) for name, p in zip(SPLITS, splits)}},
        "positive_rate": spec.positive_rate,
        "files": {name: file_sha256(out / name)
                  for name in [LABELED_TSV, LOGS_TSV, CATALOG_JSON]
                  + [f"{s}.tsv" for s in SPLITS]},
    }
    with open(out / "data_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


@dataclass
class DataBundle:
    train: list[RawPair]
    val: list[RawPair]
    test: list[RawPair]
    logs: list[RawPair]
    oracle: MatchOracle
    vocab_q: Vocabulary
    vocab_t: Vocabulary
    train_ex: list[Example]
    val_ex: list[Example]
    test_ex: list[Example]
    merged_ex: list[Example]  # annotated train + logs, phase-4 data


def load_data(data_dir, cfg: RunConfig) -> DataBundle:
    d = Path(data_dir)
    for required in [CATALOG_JSON, LOGS_TSV] + [f"{s}.tsv" for s in SPLITS]:
        if not (d / required).exists():
            raise PipelineError(
                f"missing {required} under {d}; run `quarts gen-data` first")
    spec = CatalogSpec.load(d / CATALOG_JSON)
    oracle = MatchOracle(spec)
    train = read_pairs(d / "train.tsv")
    val = read_pairs(d / "val.tsv")
    test = read_pairs(d / "test.tsv")
    logs = read_pairs(d / LOGS_TSV)
    vocab_q = build_vocab((tokenize(p.query) for p in train), cfg.min_count)
    vocab_t = build_vocab((tokenize(p.title) for p in train), cfg.min_count)

    def enc(pairs):
        return encode_pairs(pairs, vocab_t, vocab_q,
                            cfg.max_title_len, cfg.max_query_len)

    train_ex, val_ex, test_ex = enc(train), enc(val), enc(test)
    merged_ex = train_ex + enc(logs)
    return DataBundle(train, val, test, logs, oracle, vocab_q, vocab_t,
                      train_ex, val_ex, test_ex, merged_ex)


# --- shared helpers ----------------------------------------------------------

def settings(cfg: RunConfig, finetune: bool = False) -> TrainSettings:
    lr = cfg.e2e_lr if (finetune and cfg.e2e_lr > 0) else cfg.lr
    return TrainSettings(batch_size=cfg.batch_size, lr=lr, beta=cfg.beta,
                         decay_factor=cfg.decay_factor, decay_every=cfg.decay_every)


def _append_metrics(run_dir, phase: str, records: list[EpochRecord]) -> None:
    path = Path(run_dir) / "metrics.jsonl"
    with open(path, "a", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"phase": phase, **r.to_json()}) + "\n")


def _manifest(run_dir, cfg: RunConfig) -> RunManifest:
    path = Path(run_dir) / "manifest.json"
    if path.exists():
        return RunManifest.load(path)
    return RunManifest.start(cfg)


def _finish_phase(run_dir, cfg, name: str, ckpt: str, seconds: float) -> None:
    man = _manifest(run_dir, cfg)
    man.record_phase(name, ckpt, seconds)
    man.save(Path(run_dir) / "manifest.json")


def new_classifier(cfg: RunConfig, data: DataBundle, rng: RunRng) -> ClassifierParams:
    return init_classifier(rng.init, len(data.vocab_q), len(data.vocab_t),
                           cfg.embed_dim, cfg.hidden_size, dropout=cfg.dropout)


def load_classifier(cfg: RunConfig, data: DataBundle, run_dir,
                    ckpt: str = CKPT_CLASSIFIER) -> ClassifierParams:
    path = Path(run_dir) / ckpt
    if not path.exists():
        raise PipelineError(
            f"missing checkpoint {path}; run `quarts pretrain-classifier` first")
    clf = new_classifier(cfg, data, RunRng(cfg.seed, "classifier"))
    assign_params(clf.named(), load_arrays(path), prefix="clf.")
    return clf


def new_ved(cfg: RunConfig, data: DataBundle, rng: RunRng) -> VedParams:
    return init_ved(rng.init, cfg.hidden_size, cfg.embed_dim, cfg.latent_dim,
                    len(data.vocab_q))


def load_bundle(cfg: RunConfig, data: DataBundle, run_dir, ckpt: str,
                need: str) -> tuple[ClassifierParams, VedParams]:
    path = Path(run_dir) / ckpt
    if not path.exists():
        raise PipelineError(f"missing checkpoint {path}; run `quarts {need}` first")
    arrays = load_arrays(path)
    clf = new_classifier(cfg, data, RunRng(cfg.seed, "classifier"))
    ved = new_ved(cfg, data, RunRng(cfg.seed, "ved"))
    assign_params(clf.named(), {k: v for k, v in arrays.items()
                                if k.startswith("clf.")})
    assign_params(ved.named(), {k: v for k, v in arrays.items()
                                if k.startswith("ved.")})
    return clf, ved


# --- phases ------------------------------------------------------------------

def phase_pretrain_classifier(cfg: RunConfig, data: DataBundle, run_dir,
                              ) -> tuple[ClassifierParams, list[EpochRecord]]:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    set_precision(cfg)
    rng = RunRng(cfg.seed, "classifier")
    clf = new_classifier(cfg, data, rng)
    t0 = time.perf_counter()
    records = train_classifier(clf, data.train_ex, data.val_ex, settings(cfg),
                               rng, cfg.clf_epochs)
    save_params(run_dir / CKPT_CLASSIFIER, clf.named())
    data.vocab_q.save(run_dir / "vocab_q.txt")
    data.vocab_t.save(run_dir / "vocab_t.txt")
    _append_metrics(run_dir, "classifier", records)
    _finish_phase(run_dir, cfg, "classifier", CKPT_CLASSIFIER,
                  time.perf_counter() - t0)
    return clf, records


def phase_build_triples(cfg: RunConfig, data: DataBundle, run_dir) -> list:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    text_triples = build_triples(data.train, cap=cfg.triple_cap)
    with open(run_dir / CKPT_TRIPLES, "w", encoding="utf-8") as fh:
        for title, q, qm in text_triples:
            fh.write(f"{title}\t{q}\t{qm}\n")
    _finish_phase(run_dir, cfg, "triples", CKPT_TRIPLES, 0.0)
    return text_triples


def read_triples(run_dir) -> list[tuple[str, str, str]]:
    path = Path(run_dir) / CKPT_TRIPLES
    if not path.exists():
        raise PipelineError(f"missing {path}; run `quarts build-triples` first")
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                title, q, qm = line.split("\t")
                out.append((title, q, qm))
    return out


def phase_pretrain_ved(cfg: RunConfig, data: DataBundle, run_dir,
                       clf: ClassifierParams | None = None):
    run_dir = Path(run_dir)
    set_precision(cfg)
    if clf is None:
        clf = load_classifier(cfg, data, run_dir)
    text_triples = read_triples(run_dir)
    triples = encode_triples(text_triples, data.vocab_t, data.vocab_q,
                             cfg.max_title_len, cfg.max_query_len)
    rng = RunRng(cfg.seed, "ved")
    ved = new_ved(cfg, data, rng)
    t0 = time.perf_counter()
    records = train_ved(clf, ved, triples, settings(cfg), rng, cfg.ved_epochs,
                        ved_lr=cfg.ved_lr, kl_anneal_epochs=cfg.kl_anneal_epochs)
    save_params(run_dir / CKPT_VED, {**clf.named(), **ved.named()})
    with open(run_dir / "ved_history.json", "w", encoding="utf-8") as fh:
        json.dump([dataclasses.asdict(r) for r in records], fh, indent=2)
    _finish_phase(run_dir, cfg, "ved", CKPT_VED, time.perf_counter() - t0)
    return ved, records


def phase_train_e2e(cfg: RunConfig, data: DataBundle, run_dir,
                    p: float | None = None, freeze_generator: bool = False,
                    resume: str | None = None, on_step=None,
                    ) -> tuple[ClassifierParams, VedParams, list[EpochRecord]]:
    run_dir = Path(run_dir)
    set_precision(cfg)
    clf, ved = load_bundle(cfg, data, run_dir, resume or CKPT_VED,
                           need="pretrain-ved")
    p = cfg.p if p is None else p
    rng = RunRng(cfg.seed, "finetune")
    t0 = time.perf_counter()
    records = train_e2e(clf, ved, data.merged_ex, data.val_ex,
                        settings(cfg, finetune=True),
                        rng, cfg.e2e_epochs, p,
                        freeze_generator=freeze_generator, on_step=on_step)
    save_params(run_dir / CKPT_E2E, {**clf.named(), **ved.named()})
    _append_metrics(run_dir, "e2e", records)
    _finish_phase(run_dir, cfg, "e2e", CKPT_E2E, time.perf_counter() - t0)
    return clf, ved, records


def phase_train_dssm(cfg: RunConfig, data: DataBundle, run_dir,
                     ) -> tuple[DssmParams, list[EpochRecord]]:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    set_precision(cfg)
    rng = RunRng(cfg.seed, "dssm")
    params = init_dssm(rng.init, len(data.vocab_q), len(data.vocab_t),
                       cfg.embed_dim, cfg.hidden_size)
    t0 = time.perf_counter()
    records = train_dssm(params, data.train_ex, data.val_ex, settings(cfg),
                         rng, cfg.clf_epochs)
    save_params(run_dir / CKPT_DSSM, params.named())
    _append_metrics(run_dir, "dssm", records)
    _finish_phase(run_dir, cfg, "dssm", CKPT_DSSM, time.perf_counter() - t0)
    return params, records


def phase_naive_augment(cfg: RunConfig, data: DataBundle, run_dir,
                        resume: str | None = None, epochs: int | None = None,
                        on_step=None,
                        ) -> tuple[ClassifierParams, list[EpochRecord]]:
    """Classifier on annotated + logs data; no generator, no switch.

    From scratch it mirrors classifier pretraining (same streams), so with
    an empty logs set it reproduces it exactly. With ``resume`` it
    continues from a checkpoint using the end-to-end phase streams, making
    it the exact reference for switched training at p=0.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    set_precision(cfg)
    finetune = resume is not None
    if finetune:
        clf = load_classifier(cfg, data, run_dir, ckpt=resume)
        rng = RunRng(cfg.seed, "finetune")
        epochs = cfg.e2e_epochs if epochs is None else epochs
    else:
        rng = RunRng(cfg.seed, "classifier")
        clf = new_classifier(cfg, data, rng)
        epochs = cfg.clf_epochs if epochs is None else epochs
    t0 = time.perf_counter()
    records = train_classifier(clf, data.merged_ex, data.val_ex,
                               settings(cfg, finetune=finetune),
                               rng, epochs, on_step=on_step)
    save_params(run_dir / CKPT_AUGMENT, clf.named())
    _append_metrics(run_dir, "augment", records)
    _finish_phase(run_dir, cfg, "augment", CKPT_AUGMENT, time.perf_counter() - t0)
    return clf, records


# --- evaluation --------------------------------------------------------------

@dataclass
class MetricsReport:
    aupr: float
    f1: float
    threshold: float
    pr_points: list = field(default_factory=list)
    bleu: list = field(default_factory=list)
    generation_accuracy: float | None = None
    unresolvable_rate: float | None = None
    counts: dict = field(default_factory=dict)
    seed: int = 0
    config_hash: str = ""

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = [f"aupr: {self.aupr:.6f}", f"f1: {self.f1:.6f}",
                 f"threshold: {self.threshold:.6f}"]
        for i, b in enumerate(self.bleu, 1):
            lines.append(f"bleu{i}: {b:.6f}")
        if self.generation_accuracy is not None:
            lines.append(f"generation_accuracy: {self.generation_accuracy:.6f}")
            lines.append(f"unresolvable_rate: {self.unresolvable_rate:.6f}")
        for k, v in self.counts.items():
            lines.append(f"count_{k}: {v}")
        lines.append(f"seed: {self.seed}")
        lines.append(f"config_hash: {self.config_hash}")
        return "\n".join(lines) + "\n"


def held_out_matched_with_mismatch(pairs: list[RawPair]) -> list[tuple[str, str, str]]:
    """(title, matched query, reference mismatched query) from a labeled split."""
    return build_triples(pairs, cap=1)


def evaluate_generation(cfg: RunConfig, data: DataBundle,
                        clf: ClassifierParams, ved: VedParams,
                        pairs: list[RawPair] | None = None,
                        ) -> tuple[M.BleuReport, M.GenerationAccuracy, int]:
    """Beam-1 generations from held-out matched pairs, scored by BLEU
    against the held-out mismatched reference and by the oracle."""
    triples = held_out_matched_with_mismatch(pairs or data.test)
    bleu_pairs = []
    acc_pairs = []
    for title, q, qm in triples:
        item_ids = data.vocab_t.encode(tokenize(title)[:cfg.max_title_len])
        query_ids = data.vocab_q.encode(tokenize(q)[:cfg.max_query_len])
        out = beam_generate(item_ids, query_ids, clf, ved, beam=1,
                            max_len=cfg.gen_max_len)
        gen_tokens = data.vocab_q.decode(out[0][0]) if out else []
        bleu_pairs.append((gen_tokens, tokenize(qm)))
        acc_pairs.append((title, " ".join(gen_tokens)))
    bleu = M.corpus_bleu(bleu_pairs) if bleu_pairs else M.BleuReport([0] * 4, [0] * 4, 0)
    acc = M.generation_accuracy(acc_pairs, data.oracle)
    return bleu, acc, len(triples)


def evaluate_checkpoint(cfg: RunConfig, data: DataBundle, run_dir, ckpt: str,
                        split: str = "test", with_generation: bool = False,
                        scores_out=None) -> MetricsReport:
    run_dir = Path(run_dir)
    set_precision(cfg)
    examples = {"train": data.train_ex, "val": data.val_ex,
                "test": data.test_ex}[split]
    path = Path(run_dir) / ckpt
    if not path.exists():
        raise PipelineError(f"missing checkpoint {path}; train a model first")
    arrays = load_arrays(path)
    if any(k.startswith("dssm.") for k in arrays):
        params = init_dssm(np.random.default_rng(0), len(data.vocab_q),
                           len(data.vocab_t), cfg.embed_dim, cfg.hidden_size)
        assign_params(params.named(), arrays)
        scores, labels = evaluate_dssm_probs(params, examples)
        clf = ved = None
    else:
        clf = new_classifier(cfg, data, RunRng(cfg.seed, "classifier"))
        assign_params(clf.named(), {k: v for k, v in arrays.items()
                                    if k.startswith("clf.")})
        ved = None
        if any(k.startswith("ved.") for k in arrays):
            ved = new_ved(cfg, data, RunRng(cfg.seed, "ved"))
            assign_params(ved.named(), {k: v for k, v in arrays.items()
                                        if k.startswith("ved.")})
        scores, labels = evaluate_probs(clf, examples)

    aupr = M.average_precision(scores, labels)
    f1, thr = M.f1_best(scores, labels)
    curve = M.pr_curve(scores, labels)
    report = MetricsReport(
        aupr=aupr, f1=f1, threshold=thr,
        pr_points=[list(pt) for pt in curve.points],
        counts={"examples": len(examples),
                "positives": int(labels.sum())},
        seed=cfg.seed, config_hash=cfg.hash())

    if with_generation:
        if ved is None:
            raise PipelineError(
                f"{ckpt} holds no generator parameters; evaluate a "
                "pretrain-ved or train-e2e checkpoint with --generation")
        split_pairs_ = {"train": data.train, "val": data.val, "test": data.test}[split]
        bleu, acc, n = evaluate_generation(cfg, data, clf, ved, split_pairs_)
        report.bleu = bleu.bleu
        report.generation_accuracy = acc.accuracy
        report.unresolvable_rate = acc.unresolvable_rate
        report.counts["generation_pairs"] = n
        report.counts["unresolvable"] = acc.unresolvable

    if scores_out is not None:
        with open(scores_out, "w", encoding="utf-8") as fh:
            for s, y in zip(scores, labels):
                fh.write(f"{s:.8f}\t{int(y)}\n")
    return report


def run_pipeline(cfg: RunConfig, data_dir, run_dir) -> MetricsReport:
    """All five phases in order, then a test-split evaluation."""
    data = load_data(data_dir, cfg)
    clf, _ = phase_pretrain_classifier(cfg, data, run_dir)
    phase_build_triples(cfg, data, run_dir)
    phase_pretrain_ved(cfg, data, run_dir, clf=clf)
    phase_train_e2e(cfg, data, run_dir)
    report = evaluate_checkpoint(cfg, data, run_dir, CKPT_E2E,
                                 with_generation=True)
    out = Path(run_dir) / "report.json"
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2)
    with open(Path(run_dir) / "report.txt", "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    return report
