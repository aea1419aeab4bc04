"""Fully-shared transfer model: one DAM encoder, one softmax head per domain."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from . import dam
from .data import DOMAINS, PAD, PairBatch, SentencePair
from .numerics import (
    ParamStore,
    adam_step,
    check_finite,
    cross_entropy,
    glorot_uniform,
    per_example_nll,
    softmax_dim,
    softmax_xent_logit_grad,
)


def head_names(domain: str) -> tuple[str, str]:
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")
    return f"head.{domain}.W", f"head.{domain}.b"


@dataclass
class Forward:
    probs: np.ndarray
    enc: dam.PairEncoding


class TransferModel:
    def __init__(self, params: ParamStore, cfg: dam.DamConfig, trainable_embeddings: bool = True,
                 clip_norm: float | None = 5.0) -> None:
        self.params = params
        self.cfg = cfg
        self.trainable_embeddings = trainable_embeddings
        self.clip_norm = clip_norm

    @classmethod
    def create(
        cls,
        vocab_size: int,
        cfg: dam.DamConfig,
        rng: np.random.Generator,
        embeddings: np.ndarray | None = None,
        trainable_embeddings: bool = True,
        clip_norm: float | None = 5.0,
    ) -> "TransferModel":
        params = ParamStore()
        if embeddings is None:
            embeddings = rng.uniform(-0.05, 0.05, size=(vocab_size, cfg.embedding_dim))
            embeddings[PAD] = 0.0
        if embeddings.shape != (vocab_size, cfg.embedding_dim):
            raise ValueError(
                f"embedding table {embeddings.shape} does not match "
                f"({vocab_size}, {cfg.embedding_dim})"
            )
        params.add(dam.EMBEDDING, embeddings)
        dam.init_encoder(params, cfg, rng)
        for d in DOMAINS:
            w, b = head_names(d)
            params.add(w, glorot_uniform(rng, cfg.z_dim, 2))
            params.add(b, np.zeros(2))
        return cls(params, cfg, trainable_embeddings, clip_norm)

    def encoder_names(self) -> list[str]:
        names = self.params.names("encoder.")
        if self.trainable_embeddings:
            names.append(dam.EMBEDDING)
        return names

    def head_probs(self, z: np.ndarray, domain: str) -> np.ndarray:
        w, b = head_names(domain)
        return softmax_dim(z @ self.params[w] + self.params[b], -1)

    def forward(self, batch: PairBatch, domain: str) -> Forward:
        head_names(domain)
        enc = dam.encode(batch, self.params, self.cfg)
        return Forward(check_finite(self.head_probs(enc.z, domain), "head output"), enc)

    def classify(self, batch: PairBatch, domain: str) -> np.ndarray:
        return self.forward(batch, domain).probs

    def domain_loss(self, batch: PairBatch, domain: str) -> float:
        return cross_entropy(self.classify(batch, domain), batch.labels)

    def update_domain(self, batch: PairBatch, domain: str, lr: float) -> float:
        """One Adam step on the encoder and ``domain``'s head; returns the loss
        measured before the step."""
        if len(batch) == 0:
            raise ValueError("empty batch: skip the update instead")
        fwd = self.forward(batch, domain)
        loss = cross_entropy(fwd.probs, batch.labels)
        names = self.backward(fwd, batch.labels, domain)
        adam_step(self.params, names, lr, clip_norm=self.clip_norm)
        return loss

    def backward(self, fwd: Forward, labels: np.ndarray, domain: str) -> list[str]:
        """Populate grads of the mean cross-entropy; returns the touched names."""
        w, b = head_names(domain)
        d_logits = softmax_xent_logit_grad(fwd.probs, labels)
        self.params.grad(w)[...] += fwd.enc.z.T @ d_logits
        self.params.grad(b)[...] += d_logits.sum(axis=0)
        d_z = d_logits @ self.params[w].T
        dam.encode_backward(d_z, fwd.enc, self.params, self.cfg, self.trainable_embeddings)
        return self.encoder_names() + [w, b]

    def predict(self, pairs: Sequence[SentencePair], domain: str, chunk: int = 256) -> np.ndarray:
        """Class probabilities for ``pairs``, encoded in chunks."""
        out = [
            self.classify(PairBatch.from_pairs(pairs[s : s + chunk], domain), domain)
            for s in range(0, len(pairs), chunk)
        ]
        return np.concatenate(out, axis=0)

    def evaluate(self, pairs: Sequence[SentencePair], domain: str) -> tuple[float, float | None]:
        if not pairs:
            raise ValueError("cannot evaluate on an empty pair list")
        scores = self.predict(pairs, domain)[:, 1]
        labels = np.array([p.label for p in pairs])
        return accuracy(scores, labels), roc_auc(scores, labels)


def per_pair_loss(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return per_example_nll(probs, np.asarray(labels, dtype=np.int64))


def accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy of predicting 1 when the positive-class score exceeds 0.5."""
    pred = (np.asarray(scores) > 0.5).astype(np.int64)
    return float(np.mean(pred == np.asarray(labels)))


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Probability a random positive outscores a random negative (ties 0.5).

    ``None`` when one class is absent.
    """
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    u = float(np.sum(ranks[labels == 1])) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)
