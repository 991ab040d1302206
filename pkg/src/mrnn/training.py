"""Hard-mined triplet training with Adam, plus checkpoint serialization.

Per epoch, every query's candidates are scored with the current
parameters (batch statistics, running averages untouched) and the
farthest positive / nearest negative pair is mined. Mined triplets are
shuffled, batched and trained with the hinge loss
max(0, d_pos - d_neg + margin) on the network's distance output; a
``square_distance`` switch trains on squared distances instead.

Checkpoints are one file: a single-line JSON header (config, parameter
shapes, seed, epoch, optimizer scalars, RNG state) followed by raw
little-endian float64 blocks in declaration order (parameters, batch-norm
running stats, then Adam moments when present). Save/load round-trips
byte-identically.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from mrnn import autodiff as ad
from mrnn.autodiff import Array, ConfigError, DomainError, backward, grad_of, zero_grads
from mrnn.attention import aggregate, doc_aware_encode
from mrnn.data import QueryExample
from mrnn.embeddings import TextEmbedder
from mrnn.model import (
    MRNNModel,
    attend_side,
    init_model,
    named_bn_states,
    named_parameters,
    score_candidates,
)
from mrnn.ngram import ModelConfig

CHECKPOINT_FORMAT = "mrnn-checkpoint-v1"

# triplet margins used per benchmark dataset
DATASET_MARGINS = {
    "squad": 1.0,
    "quasar-t": 0.8,
    "wikiqa": 0.5,
    "trecqa": 0.5,
}


# ---------------------------------------------------------------------------
# mining


@dataclass
class MinedTriplet:
    query_id: str
    pos_id: str
    neg_id: str
    d_pos: float
    d_neg: float


@dataclass
class MiningStats:
    mined: int = 0
    skipped_no_positive: int = 0
    skipped_no_negative: int = 0


def mine_hard_triplets(
    candidates: Sequence[Tuple[str, int, float]],
) -> Optional[Tuple[str, str, float, float]]:
    """Farthest positive and nearest negative; ties go to the smaller doc id.

    ``candidates`` holds (doc_id, label, distance) rows. Returns
    (pos_id, neg_id, d_pos, d_neg), or None when either side is missing.
    """
    pos_id = neg_id = None
    d_pos = d_neg = 0.0
    for doc_id, label, dist in candidates:
        if label == 1:
            if pos_id is None or dist > d_pos or (dist == d_pos and doc_id < pos_id):
                pos_id, d_pos = doc_id, dist
        else:
            if neg_id is None or dist < d_neg or (dist == d_neg and doc_id < neg_id):
                neg_id, d_neg = doc_id, dist
    if pos_id is None or neg_id is None:
        return None
    return pos_id, neg_id, d_pos, d_neg


# ---------------------------------------------------------------------------
# loss


def triplet_loss(d_pos, d_neg, margin: float):
    """Hinge max(0, d_pos - d_neg + margin); zero gradient once satisfied.

    Accepts plain floats (returns a float) or graph Arrays (returns the
    loss node).
    """
    if margin <= 0:
        raise ConfigError(f"triplet margin must be > 0, got {margin}")
    if isinstance(d_pos, Array) or isinstance(d_neg, Array):
        return ad.relu(ad.as_array(d_pos) - ad.as_array(d_neg) + margin)
    return max(0.0, d_pos - d_neg + margin)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamHypers:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-3
    decoupled: bool = False  # True: decay applied to weights, not gradients


class AdamState:
    """Bias-corrected Adam with L2-on-gradient weight decay (default)."""

    def __init__(self, params: Dict[str, Array], hypers: AdamHypers):
        self.hypers = hypers
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


def adam_step(params: Dict[str, Array], state: AdamState) -> None:
    hp = state.hypers
    state.t += 1
    bc1 = 1.0 - hp.beta1**state.t
    bc2 = 1.0 - hp.beta2**state.t
    for name, p in params.items():
        g = grad_of(p)
        if hp.weight_decay and not hp.decoupled:
            g = g + hp.weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= hp.beta1
        m += (1.0 - hp.beta1) * g
        v *= hp.beta2
        v += (1.0 - hp.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + hp.eps)
        if hp.weight_decay and hp.decoupled:
            update = update + hp.weight_decay * p.data
        p.data -= hp.lr * update


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-3
    batch_size: int = 512
    margin: float = 1.0
    epochs: int = 10
    patience: int = 0  # 0 disables early stopping
    seed: int = 0
    square_distance: bool = False
    decoupled_weight_decay: bool = False
    remine_per_step: bool = False

    def __post_init__(self):
        if self.margin <= 0:
            raise ConfigError(f"triplet margin must be > 0, got {self.margin}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class EpochRow:
    epoch: int
    loss: float
    recall_at_1: Optional[float]
    seconds: float


@dataclass
class TrainResult:
    history: List[EpochRow] = field(default_factory=list)
    mining: MiningStats = field(default_factory=MiningStats)
    stopped_early: bool = False
    optimizer: Optional["AdamState"] = None
    rng: Optional[np.random.Generator] = None


def triplet_forward(model: MRNNModel, query: QueryExample, pos_id: str, neg_id: str, tc: TrainConfig):
    """Loss graph for one triplet; the query side is built once and shared."""
    docs = {c.doc_id: c for c in query.candidates}
    e_q = model.embedder.embed(query.query_id, query.tokens)
    mra_q, _ = attend_side(model, e_q, side="q", mode="train")
    dists = []
    for doc_id in (pos_id, neg_id):
        cand = docs[doc_id]
        e_d = model.embedder.embed(cand.doc_id, cand.tokens)
        mra_d, _ = attend_side(model, e_d, side="d", mode="train")
        qe, _ = doc_aware_encode(mra_q, mra_d, model.attn.encode)
        dists.append(aggregate(qe))
    d_pos, d_neg = dists
    if tc.square_distance:
        d_pos = d_pos * d_pos
        d_neg = d_neg * d_neg
    return triplet_loss(d_pos, d_neg, tc.margin)


def _mine_epoch(
    model: MRNNModel, examples: Sequence[QueryExample], stats: MiningStats
) -> List[Tuple[QueryExample, str, str]]:
    triplets = []
    for ex in examples:
        cands = [(c.doc_id, c.tokens) for c in ex.candidates]
        dists = score_candidates(model, ex.query_id, ex.tokens, cands, mode="score")
        mined = mine_hard_triplets(
            [(c.doc_id, c.label, d) for c, d in zip(ex.candidates, dists)]
        )
        if mined is None:
            if ex.positives():
                stats.skipped_no_negative += 1
            else:
                stats.skipped_no_positive += 1
            continue
        stats.mined += 1
        triplets.append((ex, mined[0], mined[1]))
    return triplets


def _recall_at_1(model: MRNNModel, examples: Sequence[QueryExample], mode: str = "eval") -> float:
    hits = 0
    total = 0
    for ex in examples:
        if not ex.positives():
            continue
        cands = [(c.doc_id, c.tokens) for c in ex.candidates]
        dists = score_candidates(model, ex.query_id, ex.tokens, cands, mode=mode)
        ranked = sorted(zip(dists, (c.doc_id for c in ex.candidates), ex.candidates))
        hits += int(ranked[0][2].label == 1)
        total += 1
    return hits / total if total else 0.0


def train(
    model: MRNNModel,
    train_set: Sequence[QueryExample],
    tc: TrainConfig,
    valid_set: Optional[Sequence[QueryExample]] = None,
    log=None,
) -> TrainResult:
    """Epochs of mine, batch, backprop, Adam; metrics row per epoch.

    Deterministic under (dataset, config, seed): mining order, shuffling
    and updates all derive from the config seed.
    """
    if not any(ex.positives() and ex.negatives() for ex in train_set):
        raise DomainError("train: no minable queries (need a positive and a negative)")
    params = named_parameters(model)
    opt = AdamState(
        params,
        AdamHypers(
            lr=tc.lr,
            weight_decay=tc.weight_decay,
            decoupled=tc.decoupled_weight_decay,
        ),
    )
    rng = np.random.default_rng(tc.seed)
    result = TrainResult(optimizer=opt, rng=rng)
    best_recall = -1.0
    since_best = 0
    for epoch in range(1, tc.epochs + 1):
        t0 = time.perf_counter()
        triplets = _mine_epoch(model, train_set, result.mining)
        order = rng.permutation(len(triplets))
        losses = []
        for start in range(0, len(order), tc.batch_size):
            batch_idx = order[start : start + tc.batch_size]
            batch = [triplets[i] for i in batch_idx]
            if tc.remine_per_step:
                fresh = _mine_epoch(model, [ex for ex, _, _ in batch], MiningStats())
                if fresh:
                    batch = fresh
            zero_grads(params.values())
            total = None
            for ex, pos_id, neg_id in batch:
                loss = triplet_forward(model, ex, pos_id, neg_id, tc)
                losses.append(float(loss.data))
                total = loss if total is None else total + loss
            mean_loss = total * (1.0 / len(batch))
            backward(mean_loss)
            adam_step(params, opt)
        epoch_loss = float(np.mean(losses)) if losses else 0.0
        recall = _recall_at_1(model, valid_set) if valid_set else None
        row = EpochRow(
            epoch=epoch,
            loss=epoch_loss,
            recall_at_1=recall,
            seconds=time.perf_counter() - t0,
        )
        result.history.append(row)
        if log:
            shown = "-" if recall is None else f"{recall:.4f}"
            log(f"epoch {epoch}: loss={epoch_loss:.6f} recall@1={shown} ({row.seconds:.1f}s)")
        if valid_set and tc.patience > 0:
            if recall > best_recall:
                best_recall = recall
                since_best = 0
            else:
                since_best += 1
                if since_best >= tc.patience:
                    result.stopped_early = True
                    break
    return result


def write_metrics_csv(path: str, history: Sequence[EpochRow]) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss,recall@1,seconds\n")
        for row in history:
            recall = "" if row.recall_at_1 is None else f"{row.recall_at_1:.6f}"
            fh.write(f"{row.epoch},{row.loss:.10g},{recall},{row.seconds:.3f}\n")


# ---------------------------------------------------------------------------
# checkpointing


def _rng_state(rng: Optional[np.random.Generator]):
    if rng is None:
        return None
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": {k: int(v) for k, v in state["state"].items()},
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def save_checkpoint(
    path: str,
    model: MRNNModel,
    epoch: int = 0,
    opt: Optional[AdamState] = None,
    rng: Optional[np.random.Generator] = None,
    extra_config: Optional[dict] = None,
) -> None:
    params = named_parameters(model)
    bn_states = named_bn_states(model)
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": {
            "n_blocks": model.config.n_blocks,
            "window": model.config.window,
            "feat_dim": model.config.feat_dim,
            "pool_width": model.config.pool_width,
        },
        "input_dim": model.input_dim,
        "tied": model.tied,
        "seed": model.seed,
        "epoch": epoch,
        "params": [[name, list(p.data.shape)] for name, p in params.items()],
        "bn": [[name, st.mean.shape[0], bool(st.initialized)] for name, st in bn_states.items()],
        "optimizer": None
        if opt is None
        else {
            "t": opt.t,
            "lr": opt.hypers.lr,
            "beta1": opt.hypers.beta1,
            "beta2": opt.hypers.beta2,
            "eps": opt.hypers.eps,
            "weight_decay": opt.hypers.weight_decay,
            "decoupled": opt.hypers.decoupled,
        },
        "rng_state": _rng_state(rng),
        "extra": extra_config or {},
    }
    blobs = [p.data for p in params.values()]
    for st in bn_states.values():
        blobs.append(st.mean)
        blobs.append(st.var)
    if opt is not None:
        blobs.extend(opt.m[name] for name in params)
        blobs.extend(opt.v[name] for name in params)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
        fh.write(b"\n")
        for blob in blobs:
            fh.write(np.ascontiguousarray(blob, dtype="<f8").tobytes())


def load_checkpoint(path: str, embedder: Optional[TextEmbedder] = None):
    """Rebuild (model, epoch, opt, rng) from a checkpoint file."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    header = json.loads(header_line)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise DomainError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    cfg = ModelConfig(**header["config"])
    model = init_model(
        cfg,
        input_dim=header["input_dim"],
        seed=header["seed"],
        tied=header["tied"],
        embedder=embedder,
    )
    params = named_parameters(model)
    bn_states = named_bn_states(model)
    offset = 0

    def take(shape) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        return arr.reshape(shape).copy()

    for name, shape in header["params"]:
        params[name].data = take(tuple(shape))
    for name, channels, initialized in header["bn"]:
        bn_states[name].mean = take((channels,))
        bn_states[name].var = take((channels,))
        bn_states[name].initialized = initialized
    opt = None
    if header["optimizer"] is not None:
        meta = header["optimizer"]
        opt = AdamState(
            params,
            AdamHypers(
                lr=meta["lr"],
                beta1=meta["beta1"],
                beta2=meta["beta2"],
                eps=meta["eps"],
                weight_decay=meta["weight_decay"],
                decoupled=meta["decoupled"],
            ),
        )
        opt.t = meta["t"]
        for name in params:
            opt.m[name] = take(params[name].data.shape)
        for name in params:
            opt.v[name] = take(params[name].data.shape)
    rng = None
    if header["rng_state"] is not None:
        rng = np.random.default_rng()
        rng.bit_generator.state = header["rng_state"]
    return model, header["epoch"], opt, rng
