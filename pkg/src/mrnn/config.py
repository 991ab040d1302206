"""Run configuration in a flat key = value text format.

Lines are ``key = value`` with optional ``[section]`` headers that prefix
the keys that follow (equivalent to writing ``section.key``). Values are
booleans (true/false), ints, floats, quoted strings, ``[a, b, c]`` lists
or bare strings. Full-line ``#`` comments and blank lines are skipped.
Unknown keys are rejected up front.

Defaults mirror the reference training configuration (6 blocks, window 3,
feature dim 1024, lr 1e-4, weight decay 1e-3, batch 512); example configs
for desk-scale runs override them explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from mrnn.autodiff import ConfigError
from mrnn.embeddings import (
    IdfTable,
    MixtureSourceSpec,
    MixtureSpec,
    SyntheticSource,
    TextEmbedder,
    load_bundle,
    load_idf_table,
    load_static_table,
)
from mrnn.ngram import ModelConfig
from mrnn.training import TrainConfig


@dataclass
class SourceConfig:
    name: str
    kind: str  # bundle | static
    path: str = ""
    m: List[float] = field(default_factory=lambda: [1.0])
    idf: bool = False
    op: str = "sum"


@dataclass
class EmbeddingConfig:
    kind: str = "synthetic"  # synthetic | files
    dim: int = 32
    seed: int = 0
    layers: int = 1
    idf_path: Optional[str] = None
    sources: List[SourceConfig] = field(default_factory=list)
    ensemble_u: List[float] = field(default_factory=list)
    ensemble_op: str = "concat"


@dataclass
class PathsConfig:
    train: Optional[str] = None
    valid: Optional[str] = None
    test: Optional[str] = None
    out: str = "."


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    tied: bool = True
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    eval_ks: Tuple[int, ...] = (1, 3, 5)

    def header_lines(self) -> List[str]:
        m, t, e = self.model, self.training, self.embedding
        return [
            f"model: n_blocks={m.n_blocks} window={m.window} feat_dim={m.feat_dim} "
            f"pool_width={m.pool_width} tied={self.tied}",
            f"training: lr={t.lr} weight_decay={t.weight_decay} batch_size={t.batch_size} "
            f"margin={t.margin} epochs={t.epochs} patience={t.patience} seed={t.seed}",
            f"embedding: kind={e.kind} dim={e.dim} seed={e.seed}",
        ]


def parse_value(text: str):
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [parse_value(part) for part in inner.split(",")]
    if text.lower() == "true":
        return True
    if text.lower() == "false":
        return False
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text: str, where: str = "<config>") -> Dict[str, object]:
    mapping: Dict[str, object] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        full_key = f"{section}.{key}" if section else key
        if full_key in mapping:
            raise ConfigError(f"{where}:{lineno}: duplicate key {full_key!r}")
        mapping[full_key] = parse_value(value)
    return mapping


_SCALAR_KEYS = {
    "model.n_blocks": ("model", "n_blocks", int),
    "model.window": ("model", "window", int),
    "model.feat_dim": ("model", "feat_dim", int),
    "model.pool_width": ("model", "pool_width", int),
    "model.tied": (None, "tied", bool),
    "embedding.kind": ("embedding", "kind", str),
    "embedding.dim": ("embedding", "dim", int),
    "embedding.seed": ("embedding", "seed", int),
    "embedding.layers": ("embedding", "layers", int),
    "embedding.idf_path": ("embedding", "idf_path", str),
    "embedding.ensemble.u": ("embedding", "ensemble_u", list),
    "embedding.ensemble.op": ("embedding", "ensemble_op", str),
    "training.lr": ("training", "lr", float),
    "training.weight_decay": ("training", "weight_decay", float),
    "training.batch_size": ("training", "batch_size", int),
    "training.margin": ("training", "margin", float),
    "training.epochs": ("training", "epochs", int),
    "training.patience": ("training", "patience", int),
    "training.seed": ("training", "seed", int),
    "training.square_distance": ("training", "square_distance", bool),
    "training.decoupled_weight_decay": ("training", "decoupled_weight_decay", bool),
    "training.remine_per_step": ("training", "remine_per_step", bool),
    "paths.train": ("paths", "train", str),
    "paths.valid": ("paths", "valid", str),
    "paths.test": ("paths", "test", str),
    "paths.out": ("paths", "out", str),
    "eval.ks": (None, "eval_ks", list),
}

_SOURCE_FIELDS = {"kind", "path", "m", "idf", "op"}


def config_from_mapping(mapping: Dict[str, object], where: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    source_order: List[str] = []
    sources: Dict[str, SourceConfig] = {}
    for key, value in mapping.items():
        if key in _SCALAR_KEYS:
            group, attr, typ = _SCALAR_KEYS[key]
            if typ is bool:
                if not isinstance(value, bool):
                    raise ConfigError(f"{where}: key {key!r} expects true/false")
            elif typ is int:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"{where}: key {key!r} expects an integer")
            elif typ is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{where}: key {key!r} expects a number")
                value = float(value)
            elif typ is str:
                value = str(value)
            elif typ is list:
                if not isinstance(value, list):
                    raise ConfigError(f"{where}: key {key!r} expects a [list]")
            target = cfg if group is None else getattr(cfg, group)
            if attr == "eval_ks":
                value = tuple(int(v) for v in value)
            setattr(target, attr, value)
            continue
        parts = key.split(".")
        if len(parts) == 4 and parts[0] == "embedding" and parts[1] == "source":
            _, _, name, attr2 = parts
            if attr2 not in _SOURCE_FIELDS:
                raise ConfigError(f"{where}: unknown source field {key!r}")
            if name not in sources:
                sources[name] = SourceConfig(name=name, kind="bundle")
                source_order.append(name)
            if attr2 == "m":
                sources[name].m = [float(v) for v in value]
            elif attr2 == "idf":
                sources[name].idf = bool(value)
            else:
                setattr(sources[name], attr2, str(value))
            continue
        raise ConfigError(f"{where}: unknown configuration key {key!r}")
    cfg.embedding.sources = [sources[n] for n in source_order]
    # rebuild the validated dataclasses so invariants run on final values
    cfg.model = ModelConfig(
        n_blocks=cfg.model.n_blocks,
        window=cfg.model.window,
        feat_dim=cfg.model.feat_dim,
        pool_width=cfg.model.pool_width,
    )
    cfg.training = TrainConfig(**vars(cfg.training))
    return cfg


def load_run_config(path: str) -> RunConfig:
    with open(path) as fh:
        mapping = parse_config_text(fh.read(), where=path)
    return config_from_mapping(mapping, where=path)


def build_embedder(embedding: EmbeddingConfig) -> TextEmbedder:
    """Construct the text embedder described by the embedding section."""
    if embedding.kind == "synthetic":
        layers = max(1, embedding.layers)
        source = SyntheticSource(dim=embedding.dim, seed=embedding.seed, layers=layers)
        m = [1.0] if layers == 1 else [1.0 / layers] * layers
        spec = MixtureSpec(
            sources=[MixtureSourceSpec("synthetic", m=m, idf=False, op="sum")],
            u=[1.0],
            ensemble_op="concat",
        )
        return TextEmbedder({"synthetic": source}, spec)
    if embedding.kind != "files":
        raise ConfigError(f"embedding.kind must be synthetic or files, got {embedding.kind!r}")
    if not embedding.sources:
        raise ConfigError("embedding.kind = files needs at least one embedding.source.*")
    sources = {}
    specs = []
    for sc in embedding.sources:
        if sc.kind == "bundle":
            sources[sc.name] = load_bundle(sc.path)
        elif sc.kind == "static":
            sources[sc.name] = load_static_table(sc.path, name=sc.name)
        else:
            raise ConfigError(f"source {sc.name!r}: kind must be bundle or static, got {sc.kind!r}")
        specs.append(MixtureSourceSpec(sc.name, m=sc.m, idf=sc.idf, op=sc.op))
    idf: Optional[IdfTable] = None
    if embedding.idf_path:
        idf = load_idf_table(embedding.idf_path)
    u = embedding.ensemble_u or [1.0 / len(specs)] * len(specs)
    spec = MixtureSpec(sources=specs, u=[float(v) for v in u], ensemble_op=embedding.ensemble_op)
    return TextEmbedder(sources, spec, idf)
