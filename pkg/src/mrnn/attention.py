"""Duplex attention: block-resolution selection, then document-aware matching.

Stage one (transform + conduct) scores each position's N block features by
their summed activations, runs the scores through a softmax block
(affine, PReLU, affine, softmax) and blends the N maps into one matrix
per text. Stage two (doc_aware_encode) matches every query position
against all document positions by dot product, turns the scores into
attention weights with a second softmax block, and measures how far each
query position sits from its attention-weighted document summary. The
sum of those per-position distances is the pair's distance.

A softmax block's perceptron width is a free choice; here the resolution
selector is N -> N -> N, while the document matcher applies a shared
scalar chain (1 -> hidden -> 1) to each score independently so the block
is well defined for any document length.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from mrnn import autodiff as ad
from mrnn.autodiff import Array, DomainError, ShapeError


@dataclass
class SoftmaxBlockParams:
    """Perceptron feeding a softmax: affine, PReLU, affine."""

    w1: Array
    b1: Array
    slopes: Array
    w2: Array
    b2: Array


def init_softmax_block(n_in: int, hidden: int, n_out: int, rng: np.random.Generator) -> SoftmaxBlockParams:
    def glorot(shape, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)

    return SoftmaxBlockParams(
        w1=ad.parameter(glorot((n_in, hidden), n_in, hidden)),
        b1=ad.parameter(np.zeros(hidden)),
        slopes=ad.parameter(np.full(hidden, 0.25)),
        w2=ad.parameter(glorot((hidden, n_out), hidden, n_out)),
        b2=ad.parameter(np.zeros(n_out)),
    )


def _perceptron(x: Array, params: SoftmaxBlockParams) -> Array:
    y = ad.affine(x, params.w1, params.b1)
    y = ad.prelu(y, params.slopes)
    return ad.affine(y, params.w2, params.b2)


@dataclass
class AttentionParams:
    """Both attention stages; conduct_d is conduct_q when sides are tied."""

    conduct_q: SoftmaxBlockParams
    conduct_d: SoftmaxBlockParams
    encode: SoftmaxBlockParams


def init_attention(
    n_blocks: int,
    rng: np.random.Generator,
    tied: bool = True,
    encode_hidden: int = 4,
) -> AttentionParams:
    conduct_q = init_softmax_block(n_blocks, n_blocks, n_blocks, rng)
    conduct_d = conduct_q if tied else init_softmax_block(n_blocks, n_blocks, n_blocks, rng)
    encode = init_softmax_block(1, encode_hidden, 1, rng)
    return AttentionParams(conduct_q=conduct_q, conduct_d=conduct_d, encode=encode)


@dataclass
class AttentionTrace:
    """Every attention weight fired for one query-document pass."""

    mr_weights_q: np.ndarray  # (N, h_q)
    mr_weights_d: np.ndarray  # (N, h_d)
    doc_aware_weights: np.ndarray  # (h_q, h_d)
    qe: np.ndarray  # (h_q,)
    dist: float


def transform(g_tensor: Array) -> Array:
    """Scalar adjusters: T[n, i] = sum of the s features of block n at i."""
    if g_tensor.data.ndim != 3:
        raise ShapeError("transform expects an (N, h, s) tensor")
    return ad.sum_reduce(g_tensor, axis=2)


def conduct(g_tensor: Array, t_matrix: Array, params: SoftmaxBlockParams) -> Tuple[Array, Array]:
    """Blend the N maps per position using softmax-block attention weights.

    Returns (mra, weights): mra is (h, s); weights (h, N) rows are convex.
    """
    n, h, _ = g_tensor.data.shape
    if t_matrix.data.shape != (n, h):
        raise ShapeError(f"conduct: adjusters {t_matrix.data.shape} vs maps {(n, h)}")
    scores = _perceptron(ad.transpose(t_matrix), params)  # (h, N)
    weights = ad.softmax_masked(scores)
    mra = ad.blend_blocks(g_tensor, weights)
    return mra, weights


def doc_aware_encode(
    mra_q: Array,
    mra_d: Array,
    params: SoftmaxBlockParams,
    doc_mask: Optional[np.ndarray] = None,
) -> Tuple[Array, Array]:
    """Per-query-position distance to the attention-weighted document summary.

    score[i, j] = mraq_i . mrad_j; the scores pass position-wise through
    the shared scalar chain, softmax over valid document positions gives
    the weights; qe_i = ||sum_j w_ij mrad_j - mraq_i||.
    Returns (qe (h_q,), weights (h_q, h_d)).
    """
    if mra_q.data.shape[-1] != mra_d.data.shape[-1]:
        raise ShapeError(
            f"doc_aware_encode: feature dims differ {mra_q.data.shape} vs {mra_d.data.shape}"
        )
    h_q = mra_q.data.shape[0]
    h_d = mra_d.data.shape[0]
    if h_d == 0 or (doc_mask is not None and not np.asarray(doc_mask, dtype=bool).any()):
        raise DomainError("doc_aware_encode: no valid document position")
    scores = ad.matmul(mra_q, ad.transpose(mra_d))  # (h_q, h_d)
    chained = ad.reshape(_perceptron(ad.reshape(scores, (h_q, h_d, 1)), params), (h_q, h_d))
    mask = None if doc_mask is None else np.broadcast_to(np.asarray(doc_mask, dtype=bool), (h_q, h_d))
    weights = ad.softmax_masked(chained, mask)
    summary = ad.matmul(weights, mra_d)  # (h_q, s)
    qe = ad.euclidean_distance(summary, mra_q)
    return qe, weights


def aggregate(qe: Array) -> Array:
    """Pair distance: the sum of the per-position encodings."""
    return ad.sum_reduce(qe)
