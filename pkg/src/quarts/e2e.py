"""End-to-end training objective with the Bernoulli switch.

Per example: draw z ~ Bernoulli(p) and set s = (1-y)z. With s=0 the
example contributes the usual weighted cross-entropy on the real pair;
with s=1 (only possible for matched pairs) the generator produces a
continuous query representation that replaces the encoded query, and the
example contributes the same loss with proxy label 1. A batch whose draws
are all zero reduces to the plain classifier batch loss, bitwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .classifier import ClassifierParams, batch_probs, classifier_batch_loss, \
    weighted_ce_loss
from .data import Batch
from .rng import RunRng
from .tensor import Tensor
from .ved import VedParams, encode_pair_batch, hgen_forward_batch


@dataclass
class SwitchDraw:
    z: int
    s: int
    p: float


def sample_switch(y: int, p: float, rng: np.random.Generator) -> SwitchDraw:
    """Draw the path selector for one example: s = (1-y) * z."""
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y}")
    z = int(rng.random() < p)
    return SwitchDraw(z=z, s=(1 - y) * z, p=p)


def sample_switches(labels: np.ndarray, p: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Vector of s values; one uniform is consumed per example regardless
    of label, keeping the stream aligned across label compositions."""
    z = (rng.random(len(labels)) < p).astype(np.int64)
    return (1 - labels.astype(np.int64)) * z


def merge(h_real: Tensor, h_gen: Tensor, s: int) -> Tensor:
    """Binary convex combination s*H_gen + (1-s)*H, i.e. selection.

    Implemented as selection so the two representations need not share a
    shape; the output is always exactly one of the inputs.
    """
    if s not in (0, 1):
        raise ValueError(f"switch must be binary, got {s}")
    return h_gen if s == 1 else h_real


def _subset(batch: Batch, idx: np.ndarray) -> Batch:
    return Batch(batch.item_ids[idx], batch.item_lens[idx],
                 batch.query_ids[idx], batch.query_lens[idx],
                 batch.labels[idx], [batch.sources[i] for i in idx])


def e2e_batch_loss(clf: ClassifierParams, ved: VedParams, batch: Batch,
                   p: float, beta: float, rng: RunRng, training: bool = True,
                   force_switch: int | None = None,
                   latent_eps: np.ndarray | None = None,
                   ) -> tuple[Tensor, np.ndarray]:
    """Mixed real/generated batch loss; returns (loss, s vector).

    ``force_switch`` pins every draw (testing); matched pairs still obey
    s = (1-y)z. With no s=1 examples this is exactly the classifier batch
    loss on the full batch.
    """
    if force_switch is None:
        s = sample_switches(batch.labels, p, rng.switch)
    else:
        z = np.full(len(batch), int(force_switch), dtype=np.int64)
        s = (1 - batch.labels.astype(np.int64)) * z
    idx1 = np.flatnonzero(s == 1)
    if idx1.size == 0:
        return classifier_batch_loss(clf, batch, beta, rng.dropout,
                                     training=training), s

    idx0 = np.flatnonzero(s == 0)
    probs_parts, label_parts = [], []
    if idx0.size:
        sub0 = _subset(batch, idx0)
        p0, _ = batch_probs(clf, sub0.item_ids, sub0.item_lens,
                            sub0.query_ids, sub0.query_lens,
                            rng=rng.dropout, training=training)
        probs_parts.append(p0)
        label_parts.append(sub0.labels)

    sub1 = _subset(batch, idx1)
    enc = encode_pair_batch(clf, sub1.item_ids, sub1.item_lens,
                            sub1.query_ids, sub1.query_lens)
    h_gen, gen_final, gen_lens = hgen_forward_batch(
        clf, ved, enc, sub1.query_lens, rng=rng.latent,
        deterministic=not training, eps=latent_eps)
    p1, _ = batch_probs(clf, sub1.item_ids, sub1.item_lens,
                        sub1.query_ids, sub1.query_lens,
                        rng=rng.dropout, training=training,
                        h_override=(h_gen, gen_final, gen_lens),
                        k_precomputed=enc.k_states)
    probs_parts.append(p1)
    label_parts.append(np.ones(idx1.size))  # proxy label z = 1

    probs = probs_parts[0] if len(probs_parts) == 1 else T.concat(probs_parts, axis=0)
    labels = np.concatenate(label_parts)
    return weighted_ce_loss(probs, labels, beta), s
