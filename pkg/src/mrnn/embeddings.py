"""Input-matrix assembly from precomputed embedding sources.

A text becomes an (h, w) matrix with one row per token. Each configured
source contributes a per-token vector through a layer *mixture* (weights
``m`` over the source's layers, combined by sum or concat, optionally
idf-scaled); the per-source vectors are then combined by a weighted
*ensemble* (weights ``u``, sum or concat).

On-disk formats consumed here:

* embedding bundle: a directory with ``meta.json`` (source name, layer
  count, dimension, tokenizer note, synthetic flag) and ``records.jsonl``
  with one record per (example id, token position) holding the layer
  vectors. Contextual sources key by position because equal token strings
  may embed differently.
* static table: text lines ``token v1 v2 ... vd``; an ``<unk>`` row is the
  required out-of-vocabulary fallback.
* idf table: a ``# documents N`` header line, then ``token idf`` lines.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from mrnn.autodiff import ConfigError, DomainError, ShapeError

UNK_TOKEN = "<unk>"


class DataError(ValueError):
    """A data file or record violates its schema."""


# ---------------------------------------------------------------------------
# sources


@dataclass
class BundleMeta:
    source: str
    layers: int
    dim: int
    tokenizer: str = "whitespace"
    synthetic: bool = False


class EmbeddingBundle:
    """Per-(example, position) layer vectors produced offline."""

    def __init__(self, meta: BundleMeta, records: Dict[Tuple[str, int], np.ndarray]):
        self.meta = meta
        self.records = records
        for key, vecs in records.items():
            if vecs.shape != (meta.layers, meta.dim):
                raise DataError(
                    f"bundle record {key}: expected {(meta.layers, meta.dim)}, got {vecs.shape}"
                )

    @property
    def layer_count(self) -> int:
        return self.meta.layers

    @property
    def dim(self) -> int:
        return self.meta.dim

    def lookup(self, example_id: str, position: int, token: str) -> np.ndarray:
        try:
            return self.records[(example_id, position)]
        except KeyError:
            raise DataError(
                f"bundle {self.meta.source!r} has no record for example "
                f"{example_id!r} position {position}"
            ) from None


def save_bundle(bundle: EmbeddingBundle, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    meta = {
        "source": bundle.meta.source,
        "layers": bundle.meta.layers,
        "dim": bundle.meta.dim,
        "tokenizer": bundle.meta.tokenizer,
        "synthetic": bundle.meta.synthetic,
    }
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "records.jsonl"), "w") as fh:
        for (example_id, position) in sorted(bundle.records):
            vecs = bundle.records[(example_id, position)]
            rec = {
                "example": example_id,
                "position": position,
                "layers": [[float(v) for v in layer] for layer in vecs],
            }
            fh.write(json.dumps(rec) + "\n")


def load_bundle(bundle_dir: str) -> EmbeddingBundle:
    meta_path = os.path.join(bundle_dir, "meta.json")
    try:
        with open(meta_path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read bundle meta {meta_path}: {exc}") from exc
    for key in ("source", "layers", "dim"):
        if key not in raw:
            raise DataError(f"bundle meta {meta_path} missing field {key!r}")
    meta = BundleMeta(
        source=raw["source"],
        layers=int(raw["layers"]),
        dim=int(raw["dim"]),
        tokenizer=raw.get("tokenizer", "unknown"),
        synthetic=bool(raw.get("synthetic", False)),
    )
    records: Dict[Tuple[str, int], np.ndarray] = {}
    rec_path = os.path.join(bundle_dir, "records.jsonl")
    with open(rec_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                key = (str(rec["example"]), int(rec["position"]))
                vecs = np.asarray(rec["layers"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{rec_path}:{lineno}: bad record ({exc})") from exc
            if vecs.shape != (meta.layers, meta.dim):
                raise DataError(
                    f"{rec_path}:{lineno}: expected {(meta.layers, meta.dim)} layer "
                    f"vectors, got {vecs.shape}"
                )
            records[key] = vecs
    return EmbeddingBundle(meta, records)


class StaticTable:
    """token -> single fixed-dimension vector, with an OOV fallback."""

    def __init__(self, vectors: Dict[str, np.ndarray], fallback: np.ndarray, name: str = "static"):
        dims = {v.shape for v in vectors.values()} | {fallback.shape}
        if len(dims) != 1:
            raise DataError(f"static table {name!r}: mixed vector dimensions {dims}")
        self.vectors = vectors
        self.fallback = fallback
        self.name = name

    @property
    def layer_count(self) -> int:
        return 1

    @property
    def dim(self) -> int:
        return self.fallback.shape[0]

    def lookup(self, example_id: str, position: int, token: str) -> np.ndarray:
        vec = self.vectors.get(token, self.fallback)
        return vec[None, :]


def load_static_table(path: str, name: str = "static") -> StaticTable:
    vectors: Dict[str, np.ndarray] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            try:
                vectors[parts[0]] = np.array([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad vector ({exc})") from exc
    if UNK_TOKEN not in vectors:
        raise DataError(f"static table {path} lacks the {UNK_TOKEN!r} fallback row")
    fallback = vectors.pop(UNK_TOKEN)
    return StaticTable(vectors, fallback, name=name)


def save_static_table(table: StaticTable, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(UNK_TOKEN + " " + " ".join(repr(v) for v in table.fallback) + "\n")
        for token in sorted(table.vectors):
            fh.write(token + " " + " ".join(repr(v) for v in table.vectors[token]) + "\n")


class SyntheticSource:
    """Deterministic unit-norm pseudo-embeddings derived from token strings.

    Stands in for real extracted bundles at desk scale; the same token
    always maps to the same vectors under a fixed seed.
    """

    def __init__(self, dim: int, seed: int = 0, layers: int = 1, name: str = "synthetic"):
        self.dim = dim
        self.seed = seed
        self.layers = layers
        self.name = name

    @property
    def layer_count(self) -> int:
        return self.layers

    def token_vectors(self, token: str) -> np.ndarray:
        out = np.empty((self.layers, self.dim))
        for layer in range(self.layers):
            digest = hashlib.sha256(f"{self.seed}:{layer}:{token}".encode()).digest()
            rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
            v = rng.normal(size=self.dim)
            out[layer] = v / np.linalg.norm(v)
        return out

    def lookup(self, example_id: str, position: int, token: str) -> np.ndarray:
        return self.token_vectors(token)


def generate_synthetic_bundle(
    texts: Dict[str, Sequence[str]],
    dim: int,
    seed: int = 0,
    layers: int = 1,
    name: str = "synthetic",
) -> EmbeddingBundle:
    """Materialize a synthetic source as a real bundle (flagged synthetic)."""
    src = SyntheticSource(dim, seed=seed, layers=layers, name=name)
    records = {}
    for example_id, tokens in texts.items():
        for pos, token in enumerate(tokens):
            records[(example_id, pos)] = src.token_vectors(token)
    meta = BundleMeta(source=name, layers=layers, dim=dim, tokenizer="whitespace", synthetic=True)
    return EmbeddingBundle(meta, records)


# ---------------------------------------------------------------------------
# idf


class IdfTable:
    """Smoothed inverse document frequencies: ln((1+|D|)/(1+df)) + 1."""

    def __init__(self, weights: Dict[str, float], n_documents: int):
        self.weights = weights
        self.n_documents = n_documents

    def weight(self, token: str) -> float:
        try:
            return self.weights[token]
        except KeyError:
            return math.log((1 + self.n_documents) / 1.0) + 1.0


def compute_idf(corpus: Iterable[Sequence[str]]) -> IdfTable:
    df: Dict[str, int] = {}
    n_docs = 0
    for doc in corpus:
        n_docs += 1
        for token in set(doc):
            df[token] = df.get(token, 0) + 1
    if n_docs == 0:
        raise DomainError("compute_idf: empty corpus")
    weights = {t: math.log((1 + n_docs) / (1 + c)) + 1.0 for t, c in df.items()}
    return IdfTable(weights, n_docs)


def save_idf_table(table: IdfTable, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"# documents {table.n_documents}\n")
        for token in sorted(table.weights):
            fh.write(f"{token} {table.weights[token]!r}\n")


def load_idf_table(path: str) -> IdfTable:
    weights: Dict[str, float] = {}
    n_documents = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "documents":
                    n_documents = int(parts[1])
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'token idf'")
            weights[parts[0]] = float(parts[1])
    if n_documents is None:
        raise DataError(f"idf table {path} lacks the '# documents N' header")
    return IdfTable(weights, n_documents)


# ---------------------------------------------------------------------------
# mixture / ensemble


@dataclass
class MixtureSourceSpec:
    """How one source's layers fold into a per-token vector."""

    source: str
    m: List[float]
    idf: bool = False
    op: str = "sum"  # sum | concat

    def __post_init__(self):
        if self.op not in ("sum", "concat"):
            raise ConfigError(f"mixture op must be sum or concat, got {self.op!r}")


@dataclass
class MixtureSpec:
    """Full input assembly: per-source mixtures plus the ensemble combine."""

    sources: List[MixtureSourceSpec]
    u: List[float] = field(default_factory=list)
    ensemble_op: str = "concat"  # sum | concat

    def __post_init__(self):
        if self.ensemble_op not in ("sum", "concat"):
            raise ConfigError(f"ensemble op must be sum or concat, got {self.ensemble_op!r}")
        if not self.u:
            self.u = [1.0] * len(self.sources)
        if len(self.u) != len(self.sources):
            raise ConfigError(
                f"ensemble weights ({len(self.u)}) must match source count ({len(self.sources)})"
            )


def mixture(layers: Sequence[np.ndarray], spec: MixtureSourceSpec, idf_weight: float = 1.0) -> np.ndarray:
    """Combine one token's layer vectors per the source spec.

    sum: sum_i m_i * layer_i; concat: concatenation of m_i * layer_i over
    the nonzero-weighted layers. The result is idf-scaled when
    ``spec.idf`` is set.
    """
    layers = [np.asarray(v, dtype=np.float64) for v in layers]
    if len(spec.m) != len(layers):
        raise ShapeError(
            f"mixture weights for {spec.source!r}: {len(spec.m)} weights vs {len(layers)} layers"
        )
    scale = idf_weight if spec.idf else 1.0
    if spec.op == "sum":
        dims = {v.shape for v in layers}
        if len(dims) != 1:
            raise ShapeError(f"mixture sum for {spec.source!r}: unequal layer dims {dims}")
        out = np.zeros_like(layers[0])
        for w, v in zip(spec.m, layers):
            out += w * v
    else:
        kept = [w * v for w, v in zip(spec.m, layers) if w != 0.0]
        if not kept:
            raise ConfigError(f"mixture concat for {spec.source!r}: all layer weights are zero")
        out = np.concatenate(kept)
    return scale * out


def ensemble(parts: Sequence[np.ndarray], u: Sequence[float], op: str = "concat") -> np.ndarray:
    """Combine per-source token vectors with weights u by sum or concat."""
    parts = [np.asarray(p, dtype=np.float64) for p in parts]
    if len(u) != len(parts):
        raise ShapeError(f"ensemble: {len(u)} weights vs {len(parts)} parts")
    if op == "sum":
        dims = {p.shape for p in parts}
        if len(dims) != 1:
            raise ShapeError(f"ensemble sum: unequal part dims {dims}")
        out = np.zeros_like(parts[0])
        for w, p in zip(u, parts):
            out += w * p
        return out
    if op == "concat":
        return np.concatenate([w * p for w, p in zip(u, parts)])
    raise ConfigError(f"ensemble op must be sum or concat, got {op!r}")


def mixture_output_dim(spec: MixtureSourceSpec, source_dim: int) -> int:
    if spec.op == "sum":
        return source_dim
    return source_dim * sum(1 for w in spec.m if w != 0.0)


def embed_text(
    example_id: str,
    tokens: Sequence[str],
    sources: Dict[str, object],
    spec: MixtureSpec,
    idf: Optional[IdfTable] = None,
) -> np.ndarray:
    """Assemble the (h, w) token matrix for one text.

    Every token must resolve in every configured source: bundles by
    (example id, position), static tables by token string (fallback row
    covers OOV).
    """
    rows = []
    for pos, token in enumerate(tokens):
        parts = []
        for entry in spec.sources:
            source = sources[entry.source]
            layers = source.lookup(example_id, pos, token)
            if entry.idf:
                if idf is None:
                    raise ConfigError(f"source {entry.source!r} wants idf but no idf table given")
                w_idf = idf.weight(token)
            else:
                w_idf = 1.0
            parts.append(mixture(list(layers), entry, w_idf))
        rows.append(ensemble(parts, spec.u, spec.ensemble_op))
    return np.stack(rows)


class TextEmbedder:
    """Caching facade over embed_text with an upfront dimension check."""

    def __init__(
        self,
        sources: Dict[str, object],
        spec: MixtureSpec,
        idf: Optional[IdfTable] = None,
    ):
        for entry in spec.sources:
            if entry.source not in sources:
                raise ConfigError(f"mixture references unknown source {entry.source!r}")
            source = sources[entry.source]
            if len(entry.m) != source.layer_count:
                raise ConfigError(
                    f"source {entry.source!r}: {len(entry.m)} layer weights for "
                    f"{source.layer_count} layers"
                )
            if entry.idf and idf is None:
                raise ConfigError(f"source {entry.source!r} wants idf but no idf table given")
        self.sources = sources
        self.spec = spec
        self.idf = idf
        self._cache: Dict[str, np.ndarray] = {}

    @property
    def output_dim(self) -> int:
        dims = [
            mixture_output_dim(entry, self.sources[entry.source].dim)
            for entry in self.spec.sources
        ]
        if self.spec.ensemble_op == "sum":
            if len(set(dims)) != 1:
                raise ShapeError(f"ensemble sum over unequal mixture dims {dims}")
            return dims[0]
        return sum(dims)

    def embed(self, example_id: str, tokens: Sequence[str]) -> np.ndarray:
        cached = self._cache.get(example_id)
        if cached is None:
            cached = embed_text(example_id, tokens, self.sources, self.spec, self.idf)
            self._cache[example_id] = cached
        return cached
