"""Review-based feature learning: convolution, co-attention, abstraction, shared MLP.

All functions accept either a single example (``[n, t]`` documents) or a
batch with leading axes (``[B, n, t]``); reductions always act on the
trailing axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .corpus import PAD
from .errors import ConfigError, DataError, ShapeError


@dataclass
class ReviewTower:
    embeddings: ad.DiffArray  # [vocab+1, t], row PAD stays zero
    conv_user: ad.DiffArray  # [f, s*t]
    conv_item: ad.DiffArray  # [f, s*t]
    attention: ad.DiffArray  # [f, f]
    abstract_user: ad.DiffArray  # [f, s*f]
    abstract_item: ad.DiffArray  # [f, s*f]
    mlp_weight: ad.DiffArray  # [l, f]
    mlp_bias: ad.DiffArray  # [l]
    window: int = 3

    def parameters(self):
        return {
            "embeddings": self.embeddings,
            "conv_user": self.conv_user,
            "conv_item": self.conv_item,
            "attention": self.attention,
            "abstract_user": self.abstract_user,
            "abstract_item": self.abstract_item,
            "mlp_weight": self.mlp_weight,
            "mlp_bias": self.mlp_bias,
        }


@dataclass
class ReviewMode:
    attention: bool = True
    pooling: str = "mean"
    interaction: bool = True

    def __post_init__(self):
        if self.pooling not in ("mean", "max"):
            raise ConfigError(f"pooling must be 'mean' or 'max', got {self.pooling!r}")


@dataclass
class AttentionTrace:
    user_weights: ad.DiffArray
    item_weights: ad.DiffArray
    relatedness: ad.DiffArray | None = None


def init_review_tower(rng, vocab_size, emb_dim=300, filters=50, window=3, latent=15, pretrained=None):
    """Randomly initialised tower; ``pretrained`` optionally seeds the word vectors.

    ``vocab_size`` counts real words; one extra row is reserved for padding.
    """
    if window < 1:
        raise ConfigError(f"window size must be positive, got {window}")
    rows = vocab_size + 1
    emb = ad.glorot_uniform(rng, (rows, emb_dim))
    if pretrained is not None:
        pretrained = np.asarray(pretrained, dtype=np.float64)
        if pretrained.shape != (vocab_size, emb_dim):
            raise ShapeError("pretrained embeddings", (vocab_size, emb_dim), pretrained.shape)
        emb[1:] = pretrained
    emb[PAD] = 0.0
    conv_fan = window * emb_dim
    abs_fan = window * filters
    return ReviewTower(
        embeddings=ad.parameter(emb, "embeddings"),
        conv_user=ad.parameter(ad.glorot_uniform(rng, (filters, conv_fan)), "conv_user"),
        conv_item=ad.parameter(ad.glorot_uniform(rng, (filters, conv_fan)), "conv_item"),
        attention=ad.parameter(ad.glorot_uniform(rng, (filters, filters)), "attention"),
        abstract_user=ad.parameter(ad.glorot_uniform(rng, (filters, abs_fan)), "abstract_user"),
        abstract_item=ad.parameter(ad.glorot_uniform(rng, (filters, abs_fan)), "abstract_item"),
        mlp_weight=ad.parameter(ad.glorot_uniform(rng, (latent, filters)), "mlp_weight"),
        mlp_bias=ad.parameter(np.zeros(latent), "mlp_bias"),
        window=window,
    )


def embed(doc, embeddings):
    """Look up token ids (any shape) -> ``doc.shape + (t,)``; pad rows get no gradient."""
    doc = np.asarray(doc)
    rows = embeddings.shape[0]
    if doc.size and (doc.min() < 0 or doc.max() >= rows):
        raise DataError(f"token id out of range [0, {rows}) in review document")
    return ad.take(embeddings, doc.astype(np.int64), axis=0, frozen=(PAD,))


def contextual_features(doc_matrix, bank):
    return ad.relu(ad.slide_window_affine(doc_matrix, bank))


def coattend(user_feats, item_feats, attention, keep_relatedness=False):
    """Relatedness ``tanh(U T V^T)``, mean-pooled per row/column, softmax-normalised."""
    if user_feats.shape[-1] != attention.shape[0] or item_feats.shape[-1] != attention.shape[1]:
        raise ShapeError("coattend", user_feats.shape, attention.shape, item_feats.shape)
    rel = ad.tanh(ad.matmul(ad.matmul(user_feats, attention), ad.transpose(item_feats)))
    user_w = ad.softmax(ad.mean(rel, axis=-1), axis=-1)
    item_w = ad.softmax(ad.mean(rel, axis=-2), axis=-1)
    return AttentionTrace(user_w, item_w, rel if keep_relatedness else None)


def weight_features(feats, weights):
    """Scale row j of ``feats`` by ``weights[j]`` (i.e. ``diag(weights) @ feats``)."""
    weights = ad.as_array(weights)
    if weights.shape != feats.shape[:-1]:
        raise ShapeError("weight_features", feats.shape, weights.shape)
    return ad.mul(feats, ad.expand_dims(weights, -1))


def abstract(weighted, bank, pooling="mean"):
    """Second convolution + ReLU, pooled over positions -> one value per filter."""
    hidden = ad.relu(ad.slide_window_affine(weighted, bank))
    if pooling == "mean":
        return ad.mean(hidden, axis=-2)
    if pooling == "max":
        return ad.max_(hidden, axis=-2)
    raise ConfigError(f"unknown pooling {pooling!r}")


def project(h, weight, bias, dropout=0.0, training=False, rng=None):
    """Shared MLP layer ``relu(W h + b)`` followed by (inverted) dropout."""
    out = ad.relu(ad.add(ad.matmul(h if h.ndim > 1 else ad.expand_dims(h, 0), ad.transpose(weight)), bias))
    if h.ndim == 1:
        out = ad.reshape(out, (weight.shape[0],))
    return ad.dropout(out, dropout, training, rng)


def pair_vector(t_user, t_item, interaction=True):
    if t_user.shape != t_item.shape:
        raise ShapeError("pair_vector", t_user.shape, t_item.shape)
    parts = [t_user, t_item]
    if interaction:
        parts.insert(0, ad.mul(t_user, t_item))
    return ad.concat(parts, axis=-1)


def forward_review(
    user_docs,
    item_docs,
    tower,
    mode=None,
    training=False,
    rng=None,
    dropout=0.0,
    user_rows=None,
    item_rows=None,
    keep_relatedness=False,
):
    """Full review path for a pair (or a batch of pairs).

    ``user_docs``/``item_docs`` hold token ids. For batches, pass the
    *distinct* documents and map pairs onto them with ``user_rows`` and
    ``item_rows``; each document is then embedded and convolved once.
    Returns ``(z_review, AttentionTrace)``.
    """
    mode = mode or ReviewMode()
    user_feats = contextual_features(embed(user_docs, tower.embeddings), tower.conv_user)
    item_feats = contextual_features(embed(item_docs, tower.embeddings), tower.conv_item)
    if user_rows is not None:
        user_feats = ad.take(user_feats, np.asarray(user_rows, dtype=np.int64), axis=0)
    if item_rows is not None:
        item_feats = ad.take(item_feats, np.asarray(item_rows, dtype=np.int64), axis=0)

    if mode.attention:
        trace = coattend(user_feats, item_feats, tower.attention, keep_relatedness)
    else:
        trace = AttentionTrace(
            ad.DiffArray(np.ones(user_feats.shape[:-1])),
            ad.DiffArray(np.ones(item_feats.shape[:-1])),
        )
    user_w = weight_features(user_feats, trace.user_weights)
    item_w = weight_features(item_feats, trace.item_weights)

    h_user = abstract(user_w, tower.abstract_user, mode.pooling)
    h_item = abstract(item_w, tower.abstract_item, mode.pooling)
    t_user = project(h_user, tower.mlp_weight, tower.mlp_bias, dropout, training, rng)
    t_item = project(h_item, tower.mlp_weight, tower.mlp_bias, dropout, training, rng)
    return pair_vector(t_user, t_item, mode.interaction), trace
