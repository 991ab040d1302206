"""Dataset files: canonical JSONL format, converters, synthetic task.

Canonical format is JSON lines, one query per line:

    {"query_id": "...", "query_tokens": [...],
     "candidates": [{"doc_id": "...", "tokens": [...], "label": 0 or 1}, ...]}

Queries lacking a positive or a negative candidate cannot be mined and
are dropped at ingest time with counts reported. Converters exist for
WikiQA-style TSV (header row: QuestionID, Question, DocumentID,
DocumentTitle, SentenceID, Sentence, Label) and a headerless 5-column
TSV (question id, question, doc id, sentence, label) used for
TrecQA-style dumps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from mrnn.embeddings import DataError


@dataclass
class Candidate:
    doc_id: str
    tokens: List[str]
    label: int


@dataclass
class QueryExample:
    query_id: str
    tokens: List[str]
    candidates: List[Candidate]

    def positives(self) -> List[Candidate]:
        return [c for c in self.candidates if c.label == 1]

    def negatives(self) -> List[Candidate]:
        return [c for c in self.candidates if c.label == 0]


@dataclass
class IngestStats:
    kept: int = 0
    dropped_no_positive: int = 0
    dropped_no_negative: int = 0

    def dropped(self) -> int:
        return self.dropped_no_positive + self.dropped_no_negative


def _check_example(ex: QueryExample, seen_docs: Dict[str, List[str]], where: str) -> None:
    if not ex.tokens:
        raise DataError(f"{where}: query {ex.query_id!r} has no tokens")
    if not ex.candidates:
        raise DataError(f"{where}: query {ex.query_id!r} has no candidates")
    for cand in ex.candidates:
        if cand.label not in (0, 1):
            raise DataError(f"{where}: candidate {cand.doc_id!r} has non-binary label {cand.label!r}")
        if not cand.tokens:
            raise DataError(f"{where}: candidate {cand.doc_id!r} has no tokens")
        prev = seen_docs.get(cand.doc_id)
        if prev is None:
            seen_docs[cand.doc_id] = cand.tokens
        elif prev != cand.tokens:
            raise DataError(f"{where}: doc id {cand.doc_id!r} reused with different tokens")


def read_dataset(path: str) -> List[QueryExample]:
    examples: List[QueryExample] = []
    seen_queries = set()
    seen_docs: Dict[str, List[str]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                raw = json.loads(line)
                ex = QueryExample(
                    query_id=str(raw["query_id"]),
                    tokens=[str(t) for t in raw["query_tokens"]],
                    candidates=[
                        Candidate(str(c["doc_id"]), [str(t) for t in c["tokens"]], int(c["label"]))
                        for c in raw["candidates"]
                    ],
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{where}: malformed dataset line ({exc})") from exc
            if ex.query_id in seen_queries:
                raise DataError(f"{where}: duplicate query id {ex.query_id!r}")
            seen_queries.add(ex.query_id)
            _check_example(ex, seen_docs, where)
            examples.append(ex)
    return examples


def write_dataset(path: str, examples: Sequence[QueryExample]) -> None:
    with open(path, "w") as fh:
        for ex in examples:
            rec = {
                "query_id": ex.query_id,
                "query_tokens": ex.tokens,
                "candidates": [
                    {"doc_id": c.doc_id, "tokens": c.tokens, "label": c.label}
                    for c in ex.candidates
                ],
            }
            fh.write(json.dumps(rec) + "\n")


def filter_minable(examples: Iterable[QueryExample]) -> Tuple[List[QueryExample], IngestStats]:
    """Drop queries that cannot form a triplet; count the reasons."""
    stats = IngestStats()
    kept = []
    for ex in examples:
        if not ex.positives():
            stats.dropped_no_positive += 1
        elif not ex.negatives():
            stats.dropped_no_negative += 1
        else:
            kept.append(ex)
    stats.kept = len(kept)
    return kept, stats


def _group_rows(rows: Iterable[Tuple[str, str, str, str, int]], source: str) -> List[QueryExample]:
    by_query: Dict[str, QueryExample] = {}
    order: List[str] = []
    for qid, qtext, did, dtext, label in rows:
        if qid not in by_query:
            by_query[qid] = QueryExample(qid, qtext.split(), [])
            order.append(qid)
        by_query[qid].candidates.append(Candidate(did, dtext.split(), label))
    seen_docs: Dict[str, List[str]] = {}
    for qid in order:
        _check_example(by_query[qid], seen_docs, source)
    return [by_query[qid] for qid in order]


def _parse_label(text: str, where: str) -> int:
    try:
        label = int(text)
    except ValueError as exc:
        raise DataError(f"{where}: bad label {text!r}") from exc
    if label not in (0, 1):
        raise DataError(f"{where}: bad label {text!r}")
    return label


def read_wikiqa_tsv(path: str) -> List[QueryExample]:
    """Header TSV with QuestionID/Question/.../SentenceID/Sentence/Label columns."""
    rows = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        try:
            iq = header.index("QuestionID")
            iqt = header.index("Question")
            isd = header.index("SentenceID")
            ist = header.index("Sentence")
            il = header.index("Label")
        except ValueError as exc:
            raise DataError(f"{path}:1: missing WikiQA column ({exc})") from exc
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} columns, got {len(parts)}")
            rows.append(
                (parts[iq], parts[iqt], parts[isd], parts[ist], _parse_label(parts[il], f"{path}:{lineno}"))
            )
    return _group_rows(rows, path)


def read_plain_tsv(path: str) -> List[QueryExample]:
    """Headerless 5-column TSV: qid, question, doc id, sentence, label."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 columns, got {len(parts)}")
            rows.append((parts[0], parts[1], parts[2], parts[3], _parse_label(parts[4], f"{path}:{lineno}")))
    return _group_rows(rows, path)


INGEST_FORMATS = ("jsonl", "wikiqa", "trecqa")


def ingest(path: str, fmt: str) -> Tuple[List[QueryExample], IngestStats]:
    """Convert a raw dataset to canonical examples, dropping unminable queries."""
    if fmt == "jsonl":
        examples = read_dataset(path)
    elif fmt == "wikiqa":
        examples = read_wikiqa_tsv(path)
    elif fmt == "trecqa":
        examples = read_plain_tsv(path)
    else:
        raise DataError(f"unknown ingest format {fmt!r}; expected one of {INGEST_FORMATS}")
    return filter_minable(examples)


def all_texts(examples: Iterable[QueryExample]) -> Dict[str, List[str]]:
    """Every distinct text in the dataset, keyed by its example id."""
    texts: Dict[str, List[str]] = {}
    for ex in examples:
        texts[ex.query_id] = ex.tokens
        for cand in ex.candidates:
            texts[cand.doc_id] = cand.tokens
    return texts


def generate_synthetic_dataset(
    n_queries: int,
    seed: int = 0,
    split: str = "train",
    n_distractors: int = 7,
    key_len: int = 3,
    vocab_size: int = 300,
) -> List[QueryExample]:
    """Seeded retrieval task: the positive document shares the query's key phrase.

    Each query owns a fresh key phrase of ``key_len`` tokens; the positive
    candidate embeds that phrase among filler tokens while the distractors
    are filler-only. Key tokens never collide with filler vocabulary, so
    the task is solvable purely by matching token embeddings across texts.
    """
    rng = np.random.default_rng(seed)
    vocab = [f"w{i:03d}" for i in range(vocab_size)]
    examples = []
    for qi in range(n_queries):
        key = [f"key-{split}-{qi}-{j}" for j in range(key_len)]
        q_fill = [vocab[i] for i in rng.integers(0, vocab_size, size=2)]
        q_at = int(rng.integers(0, len(q_fill) + 1))
        q_tokens = q_fill[:q_at] + key + q_fill[q_at:]
        candidates = []
        d_fill = [vocab[i] for i in rng.integers(0, vocab_size, size=5)]
        d_at = int(rng.integers(0, len(d_fill) + 1))
        candidates.append(
            Candidate(f"{split}-q{qi}-d0", d_fill[:d_at] + key + d_fill[d_at:], 1)
        )
        for dj in range(1, n_distractors + 1):
            toks = [vocab[i] for i in rng.integers(0, vocab_size, size=key_len + 5)]
            candidates.append(Candidate(f"{split}-q{qi}-d{dj}", toks, 0))
        examples.append(QueryExample(f"{split}-q{qi}", q_tokens, candidates))
    return examples
