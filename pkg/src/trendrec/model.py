"""The recommendation model.

A session of item IDs is embedded with item + position vectors; a causally
masked attention layer turns each position into an "instant interest"
summary of the session so far; a second attention pass, queried by the last
instant interest, integrates the whole interest trajectory into one session
representation; the catalog is scored by softmax over cosine similarities
between that representation and every item embedding.

Parameters are immutable during a forward pass, so concurrent inference
across threads is safe; training mutates them on one coordinator thread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import Batch
from .errors import ConfigError, DataError

LN_EPS = 1e-5


@dataclass
class ModelConfig:
    num_items: int
    embed_dim: int = 100
    max_len: int = 50
    dropout_rate: float = 0.2
    score_temperature: float = 1.0
    ffn_dim: Optional[int] = None

    def __post_init__(self):
        if self.ffn_dim is None:
            self.ffn_dim = self.embed_dim
        self.validate()

    def validate(self) -> None:
        if self.num_items < 1:
            raise ConfigError(f"num_items must be positive, got {self.num_items}")
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be positive, got {self.embed_dim}")
        if self.max_len < 1:
            raise ConfigError(f"max_len must be positive, got {self.max_len}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.score_temperature <= 0.0:
            raise ConfigError(f"score_temperature must be positive, got {self.score_temperature}")
        if self.ffn_dim is not None and self.ffn_dim < 1:
            raise ConfigError(f"ffn_dim must be positive, got {self.ffn_dim}")


@dataclass
class ModelParams:
    """All trainable tensors. Field order fixes initialization, optimizer,
    and serialization order."""

    item_embed: Tensor
    pos_embed: Tensor
    query_weight: Tensor
    query_bias: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln_gain: Tensor
    ln_bias: Tensor

    def named(self) -> list[tuple[str, Tensor]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]

    def clone(self) -> "ModelParams":
        return ModelParams(
            **{name: Tensor(t.data.copy(), requires_grad=t.requires_grad) for name, t in self.named()}
        )

    def zero_grads(self) -> None:
        for t in self.tensors():
            t.grad = None


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) for embeddings and weight matrices;
    zero biases; identity layer norm."""
    d, f = config.embed_dim, config.ffn_dim
    bound = 1.0 / math.sqrt(d)

    def weight(*shape):
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    return ModelParams(
        item_embed=weight(config.num_items, d),
        pos_embed=weight(config.max_len, d),
        query_weight=weight(d, d),
        query_bias=Tensor(np.zeros(d), requires_grad=True),
        ffn_w1=weight(d, f),
        ffn_b1=Tensor(np.zeros(f), requires_grad=True),
        ffn_w2=weight(f, d),
        ffn_b2=Tensor(np.zeros(d), requires_grad=True),
        ln_gain=Tensor(np.ones(d), requires_grad=True),
        ln_bias=Tensor(np.zeros(d), requires_grad=True),
    )


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Tensor shapes implied by a configuration, keyed by parameter name."""
    d, f = config.embed_dim, config.ffn_dim
    return {
        "item_embed": (config.num_items, d),
        "pos_embed": (config.max_len, d),
        "query_weight": (d, d),
        "query_bias": (d,),
        "ffn_w1": (d, f),
        "ffn_b1": (f,),
        "ffn_w2": (f, d),
        "ffn_b2": (d,),
        "ln_gain": (d,),
        "ln_bias": (d,),
    }


def param_count(config: ModelConfig) -> int:
    d, f = config.embed_dim, config.ffn_dim
    return (
        config.num_items * d
        + config.max_len * d
        + (d * d + d)
        + (d * f + f)
        + (f * d + d)
        + 2 * d
    )


@dataclass
class ForwardTrace:
    """Per-session intermediate states, for loss inspection and debugging."""

    embedded: np.ndarray
    interests: np.ndarray
    session_repr: np.ndarray
    scores: np.ndarray


# ---------------------------------------------------------------------------
# single-session path
# ---------------------------------------------------------------------------


def embed_session(items: Sequence[int], params: ModelParams, config: ModelConfig) -> Tensor:
    """Item + position embeddings for one session, keeping the most recent
    ``max_len`` items and re-indexing positions from zero."""
    if len(items) == 0:
        raise DataError("cannot embed an empty session")
    ids = np.asarray(items, dtype=np.int64)
    if ids.min() < 0 or ids.max() >= config.num_items:
        raise DataError(
            f"item IDs span [{ids.min()}, {ids.max()}] outside catalog of {config.num_items}"
        )
    if len(ids) > config.max_len:
        ids = ids[-config.max_len :]
    item_part = ag.gather_rows(params.item_embed, ids)
    pos_part = ag.gather_rows(params.pos_embed, np.arange(len(ids)))
    return ag.add(item_part, pos_part)


def attention(
    q: Tensor,
    keys: Tensor,
    values: Tensor,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Scaled dot-product attention.

    Scores are dot(q, k_j) / sqrt(d); the optional boolean keep-mask removes
    positions from the softmax entirely (zero weight, zero gradient).
    Accepts a single query vector or a stack of query rows.
    """
    single = q.ndim == 1
    if single:
        q = ag.reshape(q, (1, q.shape[0]))
        if mask is not None and np.asarray(mask).ndim == 1:
            mask = np.asarray(mask)[None, :]
    if q.ndim != 2 or keys.ndim != 2 or values.ndim != 2:
        raise ConfigError("attention expects 2-D query/key/value stacks")
    if q.shape[1] != keys.shape[1] or keys.shape[0] != values.shape[0]:
        raise ConfigError(
            f"attention shapes disagree: q {q.shape}, keys {keys.shape}, values {values.shape}"
        )
    d = q.shape[1]
    scores = ag.matmul(q, ag.transpose_last(keys)) * (1.0 / math.sqrt(d))
    weights = ag.softmax(scores, mask)
    out = ag.matmul(weights, values)
    if single:
        out = ag.reshape(out, (out.shape[1],))
    return out


def track_interests(
    x: Tensor,
    params: ModelParams,
    config: ModelConfig,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Instant interests for every position of one embedded session.

    Position t queries with relu(affine(x_t)) and attends over positions
    1..t only (causal mask), then a position-wise feed-forward block with
    dropout, residual connection, and layer normalization is applied.
    """
    m = x.shape[0]
    q = ag.relu(ag.add(ag.matmul(x, params.query_weight), params.query_bias))
    causal = np.tril(np.ones((m, m), dtype=bool))
    raw = attention(q, x, x, causal)
    hidden = ag.relu(ag.add(ag.matmul(raw, params.ffn_w1), params.ffn_b1))
    ffn = ag.add(ag.matmul(hidden, params.ffn_w2), params.ffn_b2)
    ffn = ag.dropout(ffn, config.dropout_rate, rng=rng, train=train)
    return ag.layer_norm(ag.add(raw, ffn), params.ln_gain, params.ln_bias, eps=LN_EPS)


def integrate_interests(interests: Tensor) -> Tensor:
    """Session representation: attention over the whole interest sequence,
    queried by the last instant interest. Parameter-free; the output is a
    convex combination of the interest rows."""
    m = interests.shape[0]
    stacked = ag.reshape(interests, (1,) + interests.shape)
    last = ag.select_rows(stacked, np.array([m - 1]))
    out = attention(ag.reshape(last, (last.shape[1],)), interests, interests)
    return out


def score_catalog(session_repr: Tensor, params: ModelParams, config: ModelConfig) -> Tensor:
    """Probability over the catalog: softmax of cosine similarity between
    the normalized session representation and every normalized item
    embedding, divided by the score temperature."""
    o = ag.l2_normalize(ag.reshape(session_repr, (1, session_repr.shape[0])))
    items = ag.l2_normalize(params.item_embed)
    logits = ag.matmul(o, ag.transpose_last(items)) * (1.0 / config.score_temperature)
    probs = ag.softmax(logits)
    return ag.reshape(probs, (probs.shape[1],))


def forward_session(
    items: Sequence[int],
    params: ModelParams,
    config: ModelConfig,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> ForwardTrace:
    x = embed_session(items, params, config)
    interests = track_interests(x, params, config, train=train, rng=rng)
    o = integrate_interests(interests)
    scores = score_catalog(o, params, config)
    return ForwardTrace(
        embedded=x.data.copy(),
        interests=interests.data.copy(),
        session_repr=o.data.copy(),
        scores=scores.data.copy(),
    )


# ---------------------------------------------------------------------------
# batched path
# ---------------------------------------------------------------------------


@dataclass
class BatchForward:
    """Graph outputs of a padded-batch forward pass.

    ``scores`` is the (batch, catalog) probability tensor used by the loss;
    the other tensors are kept for inspection and testing. ``traces()``
    unpacks the padded tensors back into per-session views.
    """

    embedded: Tensor
    interests: Tensor
    session_repr: Tensor
    scores: Tensor
    lengths: np.ndarray
    mask: np.ndarray

    def traces(self) -> list[ForwardTrace]:
        out = []
        for b, m in enumerate(self.lengths):
            out.append(
                ForwardTrace(
                    embedded=self.embedded.data[b, :m].copy(),
                    interests=self.interests.data[b, :m].copy(),
                    session_repr=self.session_repr.data[b].copy(),
                    scores=self.scores.data[b].copy(),
                )
            )
        return out


def forward_batch(
    batch: Batch,
    params: ModelParams,
    config: ModelConfig,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> BatchForward:
    """Padded-batch forward pass.

    Padding positions (sentinel IDs) contribute exactly zero attention
    weight everywhere and receive no gradient, so the result matches the
    per-session path bit-for-bit up to BLAS accumulation order.
    """
    if batch.num_items != config.num_items:
        raise DataError(
            f"batch catalog {batch.num_items} does not match model catalog {config.num_items}"
        )
    n, width = batch.ids.shape
    if width > config.max_len:
        raise DataError(
            f"batch width {width} exceeds max_len {config.max_len}; truncate sessions at load time"
        )
    d = config.embed_dim
    valid = batch.mask

    safe_ids = np.where(valid, batch.ids, 0)
    x = ag.gather_rows(params.item_embed, safe_ids)
    x = ag.add(x, ag.gather_rows(params.pos_embed, np.arange(width)))
    x = ag.mul(x, valid[:, :, None].astype(np.float64))

    flat = ag.reshape(x, (n * width, d))
    q = ag.relu(ag.add(ag.matmul(flat, params.query_weight), params.query_bias))
    q = ag.reshape(q, (n, width, d))

    scores = ag.bmm(q, ag.transpose_last(x)) * (1.0 / math.sqrt(d))
    causal = np.tril(np.ones((width, width), dtype=bool))
    attn_mask = causal[None, :, :] & valid[:, None, :]
    weights = ag.softmax(scores, attn_mask)
    raw = ag.bmm(weights, x)

    flat_raw = ag.reshape(raw, (n * width, d))
    hidden = ag.relu(ag.add(ag.matmul(flat_raw, params.ffn_w1), params.ffn_b1))
    ffn = ag.add(ag.matmul(hidden, params.ffn_w2), params.ffn_b2)
    ffn = ag.reshape(ffn, (n, width, d))
    ffn = ag.dropout(ffn, config.dropout_rate, rng=rng, train=train)
    interests = ag.layer_norm(ag.add(raw, ffn), params.ln_gain, params.ln_bias, eps=LN_EPS)

    last = ag.select_rows(interests, batch.lengths - 1)
    last = ag.reshape(last, (n, 1, d))
    trend_scores = ag.bmm(last, ag.transpose_last(interests)) * (1.0 / math.sqrt(d))
    trend_weights = ag.softmax(trend_scores, valid[:, None, :])
    session_repr = ag.reshape(ag.bmm(trend_weights, interests), (n, d))

    o_norm = ag.l2_normalize(session_repr)
    item_norm = ag.l2_normalize(params.item_embed)
    logits = ag.matmul(o_norm, ag.transpose_last(item_norm)) * (1.0 / config.score_temperature)
    probs = ag.softmax(logits)

    return BatchForward(
        embedded=x,
        interests=interests,
        session_repr=session_repr,
        scores=probs,
        lengths=batch.lengths.copy(),
        mask=valid.copy(),
    )
