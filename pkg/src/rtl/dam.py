"""Decomposable attention encoder: attend, compare, aggregate.

All functions work on padded batches: embeddings are ``[B, L, d]`` and masks
``[B, L]`` with 1 for real tokens. The pair representation ``z`` is
``sum(V1) ++ sum(V2) ++ max(V1) ++ max(V2)`` with pooling over real tokens.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import PAD, PairBatch
from .numerics import (
    FeedForwardSpec,
    FFCache,
    NumericError,
    ParamStore,
    feed_forward,
    feed_forward_backward,
    init_feed_forward,
)

EMBEDDING = "embedding"


@dataclass(frozen=True)
class DamConfig:
    hidden_size: int = 200
    embedding_dim: int = 300

    def __post_init__(self) -> None:
        if self.hidden_size < 1 or self.embedding_dim < 1:
            raise ValueError("hidden_size and embedding_dim must be positive")

    @property
    def f_spec(self) -> FeedForwardSpec:
        h = self.hidden_size
        return FeedForwardSpec((self.embedding_dim, h, h), "relu")

    @property
    def g_spec(self) -> FeedForwardSpec:
        h = self.hidden_size
        return FeedForwardSpec((2 * self.embedding_dim, h, h), "relu")

    @property
    def z_dim(self) -> int:
        return 4 * self.hidden_size


def init_encoder(params: ParamStore, cfg: DamConfig, rng: np.random.Generator) -> None:
    init_feed_forward(params, cfg.f_spec, "encoder.F", rng)
    init_feed_forward(params, cfg.g_spec, "encoder.G", rng)


def _check_masks(*masks: np.ndarray) -> None:
    for m in masks:
        if np.any(m.sum(axis=1) < 1):
            raise NumericError("sentence with no real tokens")


@dataclass
class AttendCache:
    f1: np.ndarray
    f2: np.ndarray
    c_f1: FFCache
    c_f2: FFCache
    p_row: np.ndarray
    p_col: np.ndarray


def attend(emb1, emb2, mask1, mask2, params: ParamStore, cfg: DamConfig):
    """Soft-align the two sentences; returns ``(eps2, eps1, cache)``.

    ``eps2[b, i]`` is the sentence-2 subphrase aligned to token ``i`` of
    sentence 1, ``eps1[b, j]`` the converse.
    """
    _check_masks(mask1, mask2)
    f1, c_f1 = feed_forward(emb1, cfg.f_spec, params, "encoder.F")
    f2, c_f2 = feed_forward(emb2, cfg.f_spec, params, "encoder.F")
    p_row, p_col, eps2, eps1 = kernels.attention_forward(f1, f2, emb1, emb2, mask1, mask2)
    return eps2, eps1, AttendCache(f1, f2, c_f1, c_f2, p_row, p_col)


def compare(emb1, eps2, emb2, eps1, params: ParamStore, cfg: DamConfig):
    """Returns ``(V1, V2, caches)`` with ``V1[b, i] = G(x1_i ++ eps2_i)``."""
    if emb1.shape != eps2.shape or emb2.shape != eps1.shape:
        raise NumericError("compare: embedding and alignment shapes differ")
    v1, c1 = feed_forward(np.concatenate([emb1, eps2], axis=-1), cfg.g_spec, params, "encoder.G")
    v2, c2 = feed_forward(np.concatenate([emb2, eps1], axis=-1), cfg.g_spec, params, "encoder.G")
    return v1, v2, (c1, c2)


def aggregate(v1, v2, mask1, mask2):
    """Returns ``(z, argmax1, argmax2)``."""
    _check_masks(mask1, mask2)
    s1, m1, a1 = kernels.pool_forward(v1, mask1)
    s2, m2, a2 = kernels.pool_forward(v2, mask2)
    return np.concatenate([s1, s2, m1, m2], axis=1), a1, a2


@dataclass
class PairEncoding:
    z: np.ndarray
    tokens1: np.ndarray
    tokens2: np.ndarray
    mask1: np.ndarray
    mask2: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    attend: AttendCache
    compare: tuple[FFCache, FFCache]
    argmax1: np.ndarray
    argmax2: np.ndarray


def encode(batch: PairBatch, params: ParamStore, cfg: DamConfig) -> PairEncoding:
    table = params[EMBEDDING]
    if batch.tokens1.max(initial=0) >= len(table) or batch.tokens2.max(initial=0) >= len(table):
        raise NumericError("token id outside the embedding table")
    x1 = table[batch.tokens1]
    x2 = table[batch.tokens2]
    eps2, eps1, att = attend(x1, x2, batch.mask1, batch.mask2, params, cfg)
    v1, v2, cmp_cache = compare(x1, eps2, x2, eps1, params, cfg)
    z, a1, a2 = aggregate(v1, v2, batch.mask1, batch.mask2)
    return PairEncoding(
        z, batch.tokens1, batch.tokens2, batch.mask1, batch.mask2, x1, x2, att, cmp_cache, a1, a2
    )


def encode_backward(
    d_z: np.ndarray, enc: PairEncoding, params: ParamStore, cfg: DamConfig, train_embedding: bool = True
) -> None:
    """Accumulate encoder (and optionally embedding) grads for ``d_z``."""
    h, d = cfg.hidden_size, cfg.embedding_dim
    d_s1, d_s2, d_m1, d_m2 = (d_z[:, k * h : (k + 1) * h] for k in range(4))
    d_v1 = kernels.pool_backward(d_s1, d_m1, enc.argmax1, enc.mask1)
    d_v2 = kernels.pool_backward(d_s2, d_m2, enc.argmax2, enc.mask2)

    c1, c2 = enc.compare
    g1 = feed_forward_backward(d_v1, c1, cfg.g_spec, params, "encoder.G")
    g2 = feed_forward_backward(d_v2, c2, cfg.g_spec, params, "encoder.G")
    d_x1, d_eps2 = g1[..., :d], g1[..., d:]
    d_x2, d_eps1 = g2[..., :d], g2[..., d:]

    att = enc.attend
    d_f1, d_f2, d_x1_att, d_x2_att = kernels.attention_backward(
        d_eps2, d_eps1, att.p_row, att.p_col, att.f1, att.f2, enc.x1, enc.x2
    )
    d_x1 = d_x1 + d_x1_att + feed_forward_backward(d_f1, att.c_f1, cfg.f_spec, params, "encoder.F")
    d_x2 = d_x2 + d_x2_att + feed_forward_backward(d_f2, att.c_f2, cfg.f_spec, params, "encoder.F")

    if train_embedding:
        g = params.grad(EMBEDDING)
        np.add.at(g, enc.tokens1, d_x1)
        np.add.at(g, enc.tokens2, d_x2)
        g[PAD] = 0.0
