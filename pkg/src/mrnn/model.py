"""Full network assembly: embed, build maps, attend, score a pair."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from mrnn import autodiff as ad
from mrnn.autodiff import Array, BatchNormState, DomainError
from mrnn.attention import (
    AttentionParams,
    AttentionTrace,
    aggregate,
    conduct,
    doc_aware_encode,
    init_attention,
    transform,
)
from mrnn.embeddings import TextEmbedder
from mrnn.ngram import GramBlock, ModelConfig, init_blocks, multi_resolution_maps


@dataclass
class MRNNModel:
    """Parameters and state for one ranking network instance.

    Query and document sides share block and conduct parameters unless
    ``tied`` is false (siamese default; untying is an ablation knob).
    """

    config: ModelConfig
    input_dim: int
    blocks_q: List[GramBlock]
    blocks_d: List[GramBlock]
    attn: AttentionParams
    tied: bool = True
    embedder: Optional[TextEmbedder] = None
    seed: int = 0


def init_model(
    config: ModelConfig,
    input_dim: int,
    seed: int = 0,
    tied: bool = True,
    embedder: Optional[TextEmbedder] = None,
) -> MRNNModel:
    rng = np.random.default_rng(seed)
    blocks_q = init_blocks(config, input_dim, rng)
    blocks_d = blocks_q if tied else init_blocks(config, input_dim, rng)
    attn = init_attention(config.n_blocks, rng, tied=tied)
    return MRNNModel(
        config=config,
        input_dim=input_dim,
        blocks_q=blocks_q,
        blocks_d=blocks_d,
        attn=attn,
        tied=tied,
        embedder=embedder,
        seed=seed,
    )


def _block_entries(prefix: str, blocks: Sequence[GramBlock]):
    for n, block in enumerate(blocks, start=1):
        yield f"{prefix}{n}.kernels", block.kernels
        yield f"{prefix}{n}.bias", block.bias
        yield f"{prefix}{n}.gamma", block.gamma
        yield f"{prefix}{n}.beta", block.beta
        yield f"{prefix}{n}.slopes", block.slopes
        yield f"{prefix}{n}.scale", block.scale


def _softmax_block_entries(prefix: str, p):
    yield f"{prefix}.w1", p.w1
    yield f"{prefix}.b1", p.b1
    yield f"{prefix}.slopes", p.slopes
    yield f"{prefix}.w2", p.w2
    yield f"{prefix}.b2", p.b2


def named_parameters(model: MRNNModel) -> Dict[str, Array]:
    """All learnables in a stable declaration order (checkpoint order)."""
    entries = []
    if model.tied:
        entries.extend(_block_entries("gram", model.blocks_q))
        entries.extend(_softmax_block_entries("conduct", model.attn.conduct_q))
    else:
        entries.extend(_block_entries("gram_q", model.blocks_q))
        entries.extend(_block_entries("gram_d", model.blocks_d))
        entries.extend(_softmax_block_entries("conduct_q", model.attn.conduct_q))
        entries.extend(_softmax_block_entries("conduct_d", model.attn.conduct_d))
    entries.extend(_softmax_block_entries("encode", model.attn.encode))
    return dict(entries)


def named_bn_states(model: MRNNModel) -> Dict[str, BatchNormState]:
    entries = []
    if model.tied:
        entries.extend((f"gram{n}.bn", b.bn_state) for n, b in enumerate(model.blocks_q, 1))
    else:
        entries.extend((f"gram_q{n}.bn", b.bn_state) for n, b in enumerate(model.blocks_q, 1))
        entries.extend((f"gram_d{n}.bn", b.bn_state) for n, b in enumerate(model.blocks_d, 1))
    return dict(entries)


def attend_side(
    model: MRNNModel, e_matrix, side: str = "q", mode: str = "train"
) -> Tuple[Array, Array]:
    """Embedmatrix -> blended attention matrix for one side.

    Returns (mra (h, s), weights (h, N)).
    """
    blocks = model.blocks_q if side == "q" else model.blocks_d
    conduct_params = model.attn.conduct_q if side == "q" else model.attn.conduct_d
    e = e_matrix if isinstance(e_matrix, Array) else Array(e_matrix)
    g = multi_resolution_maps(e, blocks, model.config, mode=mode)
    t = transform(g)
    return conduct(g, t, conduct_params)


def score_pair(model: MRNNModel, e_query, e_doc, mode: str = "train") -> Tuple[Array, AttentionTrace]:
    """Distance between two embedded texts, with the full attention trace."""
    mra_q, w_q = attend_side(model, e_query, side="q", mode=mode)
    mra_d, w_d = attend_side(model, e_doc, side="d", mode=mode)
    qe, w_qd = doc_aware_encode(mra_q, mra_d, model.attn.encode)
    dist = aggregate(qe)
    trace = AttentionTrace(
        mr_weights_q=np.ascontiguousarray(w_q.data.T),
        mr_weights_d=np.ascontiguousarray(w_d.data.T),
        doc_aware_weights=w_qd.data.copy(),
        qe=qe.data.copy(),
        dist=float(dist.data),
    )
    return dist, trace


def forward_pair(
    model: MRNNModel,
    query_id: str,
    query_tokens: Sequence[str],
    doc_id: str,
    doc_tokens: Sequence[str],
    mode: str = "eval",
) -> Tuple[Array, AttentionTrace]:
    """Token-level entry point: embed both texts, then score the pair."""
    if model.embedder is None:
        raise DomainError("forward_pair requires a model with an embedder")
    if not query_tokens or not doc_tokens:
        raise DomainError("forward_pair: empty query or document")
    e_q = model.embedder.embed(query_id, query_tokens)
    e_d = model.embedder.embed(doc_id, doc_tokens)
    return score_pair(model, e_q, e_d, mode=mode)


def score_candidates(
    model: MRNNModel,
    query_id: str,
    query_tokens: Sequence[str],
    candidates: Sequence[Tuple[str, Sequence[str]]],
    mode: str = "score",
) -> List[float]:
    """Distances from one query to many documents, query side computed once.

    Runs without graph recording; use for mining, ranking and evaluation.
    """
    if model.embedder is None:
        raise DomainError("score_candidates requires a model with an embedder")
    if not query_tokens:
        raise DomainError("score_candidates: empty query")
    dists = []
    with ad.no_grad():
        e_q = model.embedder.embed(query_id, query_tokens)
        mra_q, _ = attend_side(model, e_q, side="q", mode=mode)
        for doc_id, doc_tokens in candidates:
            if not doc_tokens:
                raise DomainError(f"score_candidates: empty document {doc_id!r}")
            e_d = model.embedder.embed(doc_id, doc_tokens)
            mra_d, _ = attend_side(model, e_d, side="d", mode=mode)
            qe, _ = doc_aware_encode(mra_q, mra_d, model.attn.encode)
            dists.append(float(aggregate(qe).data))
    return dists
