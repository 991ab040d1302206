"""Command-line surface: ingest, train, evaluate, rank, export-attention, gradcheck."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import List, Optional

import numpy as np

from mrnn import autodiff as ad
from mrnn.autodiff import ConfigError, DomainError, ShapeError, StateError
from mrnn.config import RunConfig, build_embedder, load_run_config
from mrnn.data import INGEST_FORMATS, ingest, read_dataset, write_dataset
from mrnn.embeddings import DataError
from mrnn.evalrank import build_report, rank_all
from mrnn.gradcheck import CheckError, finite_diff_check
from mrnn.model import forward_pair, init_model, named_parameters, score_pair
from mrnn.ngram import ModelConfig
from mrnn.training import load_checkpoint, save_checkpoint, train, write_metrics_csv


def _require(value, name: str):
    if not value:
        raise ConfigError(f"missing required setting {name!r}")
    return value


def _read_dataset_checked(path: str, name: str):
    if not os.path.exists(path):
        raise DataError(f"{name} dataset not found: {path}")
    return read_dataset(path)


def cmd_ingest(args) -> int:
    examples, stats = ingest(args.input, args.format)
    write_dataset(args.out, examples)
    print(
        f"ingested {stats.kept} queries -> {args.out} "
        f"(dropped {stats.dropped_no_positive} without positives, "
        f"{stats.dropped_no_negative} without negatives)"
    )
    return 0


def _print_run_header(cfg: RunConfig, config_path: str) -> None:
    print(f"mrnn train (config: {config_path})")
    for line in cfg.header_lines():
        print("  " + line)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg.training.seed = args.seed
    out_dir = args.out or cfg.paths.out
    os.makedirs(out_dir, exist_ok=True)
    _print_run_header(cfg, args.config)
    train_set = _read_dataset_checked(_require(cfg.paths.train, "paths.train"), "train")
    valid_set = None
    if cfg.paths.valid:
        valid_set = _read_dataset_checked(cfg.paths.valid, "valid")
    embedder = build_embedder(cfg.embedding)
    model = init_model(
        cfg.model,
        input_dim=embedder.output_dim,
        seed=cfg.training.seed,
        tied=cfg.tied,
        embedder=embedder,
    )
    print(f"  data: {len(train_set)} train queries" + (f", {len(valid_set)} valid" if valid_set else ""))
    result = train(model, train_set, cfg.training, valid_set=valid_set, log=lambda s: print("  " + s))
    ckpt_path = os.path.join(out_dir, "checkpoint.mrnn")
    save_checkpoint(
        ckpt_path,
        model,
        epoch=len(result.history),
        opt=result.optimizer,
        rng=result.rng,
        extra_config={"embedding_kind": cfg.embedding.kind, "embedding_dim": cfg.embedding.dim},
    )
    metrics_path = os.path.join(out_dir, "metrics.csv")
    write_metrics_csv(metrics_path, result.history)
    print(f"wrote {ckpt_path} and {metrics_path}")
    return 0


def _load_model(cfg: RunConfig, checkpoint: str):
    embedder = build_embedder(cfg.embedding)
    model, epoch, _, _ = load_checkpoint(checkpoint, embedder=embedder)
    return model, epoch


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args.config)
    model, _ = _load_model(cfg, args.checkpoint)
    test_set = _read_dataset_checked(_require(cfg.paths.test, "paths.test"), "test")
    lists = rank_all(model, test_set, mode="eval")
    report = build_report(lists, cfg.eval_ks)
    out_dir = args.out or cfg.paths.out
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, "report.json")
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name, value in sorted(report["metrics"].items()):
        print(f"{name}: {value:.4f}")
    print(f"excluded queries without relevant candidates: {report['excluded_no_relevant']}")
    print(f"wrote {report_path}")
    return 0


def cmd_rank(args) -> int:
    cfg = load_run_config(args.config)
    model, _ = _load_model(cfg, args.checkpoint)
    test_set = _read_dataset_checked(_require(cfg.paths.test, "paths.test"), "test")
    lists = rank_all(model, test_set, mode="eval")
    out_dir = args.out or cfg.paths.out
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "rankings.jsonl")
    with open(out_path, "w") as fh:
        for rl in lists:
            fh.write(
                json.dumps(
                    {
                        "query_id": rl.query_id,
                        "ranking": rl.ranking,
                        "distances": {d: rl.distances[d] for d in rl.ranking},
                        "labels": {d: rl.labels[d] for d in rl.ranking},
                    }
                )
                + "\n"
            )
    print(f"wrote {out_path} ({len(lists)} queries)")
    return 0


def _write_weight_csv(path: str, matrix: np.ndarray, row_labels: List[str], col_labels: List[str], corner: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([corner] + col_labels)
        for label, row in zip(row_labels, matrix):
            writer.writerow([label] + [repr(float(v)) for v in row])


def _write_pgm(path: str, matrix: np.ndarray) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    lo, hi = float(m.min()), float(m.max())
    if hi > lo:
        pixels = np.rint((m - lo) / (hi - lo) * 255).astype(int)
    else:
        pixels = np.zeros(m.shape, dtype=int)
    with open(path, "w") as fh:
        fh.write("P2\n")
        fh.write(f"{m.shape[1]} {m.shape[0]}\n255\n")
        for row in pixels:
            fh.write(" ".join(str(v) for v in row) + "\n")


def cmd_export_attention(args) -> int:
    cfg = load_run_config(args.config)
    model, _ = _load_model(cfg, args.checkpoint)
    example = None
    for path in (cfg.paths.train, cfg.paths.valid, cfg.paths.test):
        if not path or not os.path.exists(path):
            continue
        for ex in read_dataset(path):
            if ex.query_id == args.query_id:
                example = ex
                break
        if example:
            break
    if example is None:
        raise DataError(f"query id {args.query_id!r} not found in the configured datasets")
    cand = next((c for c in example.candidates if c.doc_id == args.doc_id), None)
    if cand is None:
        raise DataError(f"doc id {args.doc_id!r} is not a candidate of query {args.query_id!r}")
    _, trace = forward_pair(model, example.query_id, example.tokens, cand.doc_id, cand.tokens, mode="eval")
    os.makedirs(args.out, exist_ok=True)
    n = model.config.n_blocks
    block_labels = [f"block{i}" for i in range(1, n + 1)]
    _write_weight_csv(
        os.path.join(args.out, "mr_weights_q.csv"),
        trace.mr_weights_q,
        block_labels,
        list(example.tokens),
        "block",
    )
    _write_weight_csv(
        os.path.join(args.out, "mr_weights_d.csv"),
        trace.mr_weights_d,
        block_labels,
        list(cand.tokens),
        "block",
    )
    _write_weight_csv(
        os.path.join(args.out, "doc_aware.csv"),
        trace.doc_aware_weights,
        list(example.tokens),
        list(cand.tokens),
        "token",
    )
    for name, matrix in (
        ("mr_weights_q", trace.mr_weights_q),
        ("mr_weights_d", trace.mr_weights_d),
        ("doc_aware", trace.doc_aware_weights),
    ):
        _write_pgm(os.path.join(args.out, f"{name}.pgm"), matrix)
    print(f"wrote attention matrices for ({args.query_id}, {args.doc_id}) to {args.out}")
    print(f"pair distance: {trace.dist:.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    # tiny end-to-end configuration; eval-mode statistics frozen before checking
    cfg = ModelConfig(n_blocks=2, window=3, feat_dim=8, pool_width=1)
    model = init_model(cfg, input_dim=6, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    e_q = rng.normal(size=(4, 6))
    e_d = rng.normal(size=(6, 6))
    score_pair(model, rng.normal(size=(5, 6)), rng.normal(size=(7, 6)), mode="train")

    def forward():
        dist, _ = score_pair(model, e_q, e_d, mode="eval")
        return dist

    report = finite_diff_check(forward, named_parameters(model), step=args.step)
    print(report.summary())
    if report.passed(args.tol):
        print(f"PASS (worst relative error {report.worst_rel:.3e} <= {args.tol:g})")
        return 0
    print(f"FAIL (worst relative error {report.worst_rel:.3e} > {args.tol:g})")
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrnn",
        description="Multi-resolution neural ranking engine with duplex attention",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a raw dataset to canonical JSONL")
    p.add_argument("--input", required=True)
    p.add_argument("--format", required=True, choices=INGEST_FORMATS)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="compute retrieval metrics on the test set")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("rank", help="write per-query ranked candidate lists")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_rank)

    p = sub.add_parser("export-attention", help="export attention heatmaps for one pair")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query-id", required=True)
    p.add_argument("--doc-id", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_attention)

    p = sub.add_parser("gradcheck", help="finite-difference check of the tiny end-to-end model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataError, DomainError, ShapeError, StateError, CheckError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
