"""Context-aware token encoding and fixed-size mention representations.

Per token: the pre-trained word vector is concatenated with a character
bi-LSTM summary (last forward state, first-position backward state); a
context bi-LSTM over those vectors yields the context-aware embeddings.
A mention combines its boundary context vectors with an attention-weighted
"soft head" over the word-character vectors and projects the concatenation
down to entity-embedding size with a single affine layer.

Dropout applies at two sites in training mode: on the word-character
vectors and on the context bi-LSTM output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .candidates import MentionSpan
from .corpus import Document
from .embeddings import CharTable, WordVectors


@dataclass
class EncoderDims:
    """Layer sizes; the defaults follow the full-scale configuration."""

    word_dim: int = 300
    char_dim: int = 50
    char_hidden: int = 50
    ctx_hidden: int = 150
    entity_dim: int = 300
    soft_head_space: str = "v"  # attend over word-char vectors ("v") or context vectors ("x")
    dropout_keep: float = 0.5
    max_tokens: int | None = None

    @property
    def v_dim(self) -> int:
        return self.word_dim + 2 * self.char_hidden

    @property
    def x_dim(self) -> int:
        return 2 * self.ctx_hidden

    @property
    def g_dim(self) -> int:
        head = self.v_dim if self.soft_head_space == "v" else self.x_dim
        return 2 * self.x_dim + head


@dataclass
class EncoderParams:
    char_fwd: ad.LstmWeights
    char_bwd: ad.LstmWeights
    ctx_fwd: ad.LstmWeights
    ctx_bwd: ad.LstmWeights
    attn_w: ad.Tensor  # scores context vectors for the soft head
    proj_w: ad.Tensor  # g -> mention representation
    proj_b: ad.Tensor


def init_encoder_params(dims: EncoderDims, rng: np.random.Generator) -> EncoderParams:
    if dims.soft_head_space not in ("v", "x"):
        raise ValueError(f"soft_head_space must be 'v' or 'x', got {dims.soft_head_space!r}")
    return EncoderParams(
        char_fwd=ad.init_lstm(dims.char_dim, dims.char_hidden, rng),
        char_bwd=ad.init_lstm(dims.char_dim, dims.char_hidden, rng),
        ctx_fwd=ad.init_lstm(dims.v_dim, dims.ctx_hidden, rng),
        ctx_bwd=ad.init_lstm(dims.v_dim, dims.ctx_hidden, rng),
        attn_w=ad.parameter(ad.glorot(rng, (dims.x_dim,))),
        proj_w=ad.parameter(ad.glorot(rng, (dims.entity_dim, dims.g_dim))),
        proj_b=ad.parameter(np.zeros(dims.entity_dim)),
    )


@dataclass
class EncodedDocument:
    """Per-token word-character vectors `v` and context-aware vectors `x`."""

    doc_id: str
    v: list[ad.Tensor]
    x: list[ad.Tensor]

    def __len__(self) -> int:
        return len(self.v)


def _run_lstm(inputs: list[ad.Tensor], weights: ad.LstmWeights,
              reverse: bool = False) -> list[ad.Tensor]:
    hidden = weights.hidden
    h = ad.constant(np.zeros(hidden))
    c = ad.constant(np.zeros(hidden))
    order = range(len(inputs) - 1, -1, -1) if reverse else range(len(inputs))
    out: list[ad.Tensor | None] = [None] * len(inputs)
    for t in order:
        h, c = ad.lstm_cell(inputs[t], h, c, weights)
        out[t] = h
    return out  # type: ignore[return-value]


def char_embed(word: str, table: CharTable, params: EncoderParams) -> ad.Tensor:
    """Bi-LSTM over the word's code points: [last forward; first backward]."""
    if not word:
        raise ValueError("char_embed: empty word")
    zs = [ad.row(table.rows, table.index(ch)) for ch in word]
    fwd = _run_lstm(zs, params.char_fwd)
    bwd = _run_lstm(zs, params.char_bwd, reverse=True)
    return ad.concat([fwd[-1], bwd[0]])


def encode_document(doc: Document, words: WordVectors, chars: CharTable,
                    params: EncoderParams, dims: EncoderDims, mode: str = "eval",
                    rng: np.random.Generator | None = None) -> EncodedDocument:
    """Build v_k = [word; char] and x_k = [ctx fwd; ctx bwd] for every token."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not doc.tokens:
        raise ValueError(f"document {doc.doc_id!r} is empty")
    if dims.max_tokens is not None and len(doc.tokens) > dims.max_tokens:
        raise ValueError(
            f"document {doc.doc_id!r} has {len(doc.tokens)} tokens, cap is {dims.max_tokens}")
    training = mode == "train"
    v = []
    char_cache: dict[str, ad.Tensor] = {}  # same token, same char graph; fan-out sums grads
    for token in doc.tokens:
        wv = ad.constant(np.asarray(words.lookup(token), dtype=ad.default_dtype()))
        ce = char_cache.get(token)
        if ce is None:
            ce = char_cache[token] = char_embed(token, chars, params)
        vk = ad.concat([wv, ce])
        v.append(ad.dropout(vk, dims.dropout_keep, training, rng))
    fwd = _run_lstm(v, params.ctx_fwd)
    bwd = _run_lstm(v, params.ctx_bwd, reverse=True)
    x = [ad.dropout(ad.concat([fwd[k], bwd[k]]), dims.dropout_keep, training, rng)
         for k in range(len(v))]
    return EncodedDocument(doc_id=doc.doc_id, v=v, x=x)


def soft_head(span: MentionSpan, enc: EncodedDocument, params: EncoderParams,
              dims: EncoderDims | None = None) -> ad.Tensor:
    """Attention-weighted sum over the span: logits from context vectors,
    values from the word-character vectors (or context vectors when
    configured)."""
    if not (0 <= span.start <= span.end < len(enc)):
        raise ValueError(f"span [{span.start}, {span.end}] outside document of {len(enc)} tokens")
    ks = range(span.start, span.end + 1)
    logits = ad.stack([ad.dot(params.attn_w, enc.x[k]) for k in ks])
    weights = ad.softmax(logits)
    space = dims.soft_head_space if dims is not None else "v"
    values = enc.v if space == "v" else enc.x
    return ad.weighted_sum([values[k] for k in ks], weights)


def mention_repr(span: MentionSpan, enc: EncodedDocument, params: EncoderParams,
                 dims: EncoderDims | None = None) -> ad.Tensor:
    """Project [x_start; x_end; soft head] down to entity-embedding size."""
    head = soft_head(span, enc, params, dims)
    g = ad.concat([enc.x[span.start], enc.x[span.end], head])
    if params.proj_w.shape[1] != g.shape[0]:
        raise ValueError(
            f"mention projection expects {params.proj_w.shape[1]}-d input, got {g.shape[0]}-d")
    return ad.affine(params.proj_w, g, params.proj_b)
