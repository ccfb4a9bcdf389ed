"""Training loops for the classifier, the baseline, the generator, and the
switched end-to-end objective.

All loops are single-threaded and deterministic given a RunRng; gradient
reset is explicit and asserted before every backward pass.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import metrics as M
from .classifier import (ClassifierParams, DssmParams, batch_probs,
                         classifier_batch_loss, dssm_batch_loss, dssm_batch_probs)
from .data import Batch, Example, batches
from .e2e import e2e_batch_loss
from .optim import Adam, assert_grads_clear
from .rng import RunRng
from .tensor import Tape, Tensor
from .ved import TripleExample, VedParams, make_triple_batch, ved_loss_batch

log = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    split: str
    aupr: float
    f1: float
    loss: float
    s1_fraction: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class TrainSettings:
    """The knobs every loop shares."""
    batch_size: int = 32
    lr: float = 1e-4
    beta: float = 5.0
    decay_factor: float = 0.8
    decay_every: int = 10


def _maybe_decay(opt: Adam, st: TrainSettings, epoch: int) -> None:
    if epoch > 0 and st.decay_every > 0 and epoch % st.decay_every == 0:
        opt.decay_lr(st.decay_factor)


def evaluate_probs(clf: ClassifierParams, examples: list[Example],
                   batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode mismatch probabilities over a dataset (no rng consumed)."""
    scores, labels = [], []
    for b in batches(examples, batch_size):
        probs, _ = batch_probs(clf, b.item_ids, b.item_lens,
                               b.query_ids, b.query_lens, training=False)
        scores.append(probs.data)
        labels.append(b.labels)
    return np.concatenate(scores), np.concatenate(labels)


def evaluate_dssm_probs(params: DssmParams, examples: list[Example],
                        batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    scores, labels = [], []
    for b in batches(examples, batch_size):
        probs = dssm_batch_probs(params, b.item_ids, b.item_lens,
                                 b.query_ids, b.query_lens)
        scores.append(probs.data)
        labels.append(b.labels)
    return np.concatenate(scores), np.concatenate(labels)


def _val_record(epoch, scores, labels, mean_loss, s1_fraction=0.0) -> EpochRecord:
    aupr = M.average_precision(scores, labels)
    f1, _ = M.f1_best(scores, labels)
    return EpochRecord(epoch, "val", aupr, f1, mean_loss, s1_fraction)


def train_classifier(clf: ClassifierParams, train_ex: list[Example],
                     val_ex: list[Example], st: TrainSettings, rng: RunRng,
                     epochs: int,
                     on_step: Callable[[int, dict[str, Tensor]], None] | None = None,
                     ) -> list[EpochRecord]:
    """Weighted cross-entropy training of the classifier alone.

    Also the naive augmentation baseline when ``train_ex`` includes the
    logs pairs: no generator, no switch.
    """
    named = clf.named()
    opt = Adam(named, st.lr)
    records = []
    step = 0
    for epoch in range(epochs):
        _maybe_decay(opt, st, epoch)
        losses = []
        for batch in batches(train_ex, st.batch_size, rng.shuffle):
            assert_grads_clear(named)
            with Tape() as tape:
                loss = classifier_batch_loss(clf, batch, st.beta, rng.dropout,
                                             training=True)
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
            losses.append(loss.item())
            step += 1
            if on_step is not None:
                on_step(step, named)
        scores, labels = evaluate_probs(clf, val_ex)
        rec = _val_record(epoch, scores, labels, float(np.mean(losses)))
        records.append(rec)
        log.info("classifier epoch %d: val aupr=%.4f f1=%.4f loss=%.4f",
                 epoch, rec.aupr, rec.f1, rec.loss)
    return records


def train_dssm(params: DssmParams, train_ex: list[Example], val_ex: list[Example],
               st: TrainSettings, rng: RunRng, epochs: int) -> list[EpochRecord]:
    named = params.named()
    opt = Adam(named, st.lr)
    records = []
    for epoch in range(epochs):
        _maybe_decay(opt, st, epoch)
        losses = []
        for batch in batches(train_ex, st.batch_size, rng.shuffle):
            assert_grads_clear(named)
            with Tape() as tape:
                loss = dssm_batch_loss(params, batch, st.beta)
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
            losses.append(loss.item())
        scores, labels = evaluate_dssm_probs(params, val_ex)
        rec = _val_record(epoch, scores, labels, float(np.mean(losses)))
        records.append(rec)
        log.info("dssm epoch %d: val aupr=%.4f f1=%.4f loss=%.4f",
                 epoch, rec.aupr, rec.f1, rec.loss)
    return records


@dataclass
class VedEpoch:
    epoch: int
    loss: float
    nll: float
    kl: float
    kl_weight: float


def kl_weight_at(epoch: int, anneal_epochs: int) -> float:
    """Linear 0 -> 1 over the first ``anneal_epochs`` epochs."""
    if anneal_epochs <= 1:
        return 1.0
    return min(1.0, epoch / (anneal_epochs - 1))


def freeze(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.requires_grad = False


def unfreeze(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.requires_grad = True


def train_ved(clf: ClassifierParams, ved: VedParams,
              triples: list[TripleExample], st: TrainSettings, rng: RunRng,
              epochs: int, ved_lr: float, kl_anneal_epochs: int = 5,
              ) -> list[VedEpoch]:
    """Decoder/latent pretraining with the encoder frozen.

    The classifier tensors are not touched: they are marked untracked for
    the duration, so this phase leaves them bitwise unchanged.
    """
    named = ved.named()
    opt = Adam(named, ved_lr)
    clf_named = clf.named()
    freeze(clf_named)
    try:
        records = []
        for epoch in range(epochs):
            _maybe_decay(opt, st, epoch)
            w = kl_weight_at(epoch, kl_anneal_epochs)
            losses, nlls, kls = [], [], []
            order = rng.shuffle.permutation(len(triples))
            for start in range(0, len(triples), st.batch_size):
                chunk = [triples[i] for i in order[start:start + st.batch_size]]
                tb = make_triple_batch(chunk)
                assert_grads_clear(named)
                with Tape() as tape:
                    loss, nll, kl = ved_loss_batch(clf, ved, tb, w, rng=rng.latent)
                    tape.backward(loss)
                opt.step()
                opt.zero_grad()
                losses.append(loss.item())
                nlls.append(nll)
                kls.append(kl)
            rec = VedEpoch(epoch, float(np.mean(losses)), float(np.mean(nlls)),
                           float(np.mean(kls)), w)
            records.append(rec)
            log.info("ved epoch %d: loss=%.4f nll=%.4f kl=%.4f (w=%.2f)",
                     epoch, rec.loss, rec.nll, rec.kl, w)
        return records
    finally:
        unfreeze(clf_named)


def train_e2e(clf: ClassifierParams, ved: VedParams, train_ex: list[Example],
              val_ex: list[Example], st: TrainSettings, rng: RunRng,
              epochs: int, p: float, freeze_generator: bool = False,
              on_step: Callable[[int, dict[str, Tensor]], None] | None = None,
              ) -> list[EpochRecord]:
    """Switched training over the concatenated annotated + logs data.

    Updates classifier and generator parameters together unless the
    generator is frozen for ablation.
    """
    named = dict(clf.named())
    ved_named = ved.named()
    if freeze_generator:
        freeze(ved_named)
    else:
        named.update(ved_named)
    opt = Adam(named, st.lr)
    records = []
    step = 0
    try:
        for epoch in range(epochs):
            _maybe_decay(opt, st, epoch)
            losses = []
            s_total = 0
            n_total = 0
            for batch in batches(train_ex, st.batch_size, rng.shuffle):
                assert_grads_clear(named)
                with Tape() as tape:
                    loss, s = e2e_batch_loss(clf, ved, batch, p, st.beta, rng,
                                             training=True)
                    tape.backward(loss)
                opt.step()
                opt.zero_grad()
                losses.append(loss.item())
                s_total += int(s.sum())
                n_total += len(s)
                step += 1
                if on_step is not None:
                    on_step(step, named)
            scores, labels = evaluate_probs(clf, val_ex)
            rec = _val_record(epoch, scores, labels, float(np.mean(losses)),
                              s1_fraction=s_total / max(n_total, 1))
            records.append(rec)
            log.info("e2e epoch %d: val aupr=%.4f f1=%.4f loss=%.4f s1=%.3f",
                     epoch, rec.aupr, rec.f1, rec.loss, rec.s1_fraction)
        return records
    finally:
        if freeze_generator:
            unfreeze(ved_named)
