"""Retrieval evaluation: exact dense search, BM25 baseline search, and
metric computation (nDCG@k, qrels Recall@k, answer-containment Recall@k).

Conventions, echoed into every report because toolkits differ: nDCG gain is
2^rel - 1 with a log2(rank + 1) discount; unjudged retrieved documents
count as grade 0; queries with no positive grade are skipped and counted,
not scored as zero.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import _util
from .corpus import Document, Vocab, tokenize
from .encoder import EncoderParams, encode
from .errors import DimMismatch, NoRelevanceInfo
from .lexical import Bm25Index, bm25_search

log = logging.getLogger(__name__)

GAIN_CONVENTION = "ndcg: gain 2^rel-1, discount log2(rank+1); unjudged = 0"


@dataclass
class Query:
    qid: str
    text: str
    answers: list[str] = field(default_factory=list)

    @classmethod
    def from_record(cls, rec: dict) -> "Query":
        return cls(
            qid=str(rec["qid"]),
            text=rec["text"],
            answers=list(rec.get("answers") or []),
        )


@dataclass
class RankedList:
    qid: str
    items: list[tuple[str, float]]  # (doc_id, score), non-increasing scores


Qrels = dict[str, dict[str, int]]


def read_queries(path: str) -> list[Query]:
    return [Query.from_record(rec) for rec in _util.read_jsonl(path)]


def read_qrels(path: str) -> Qrels:
    """4-column TREC text format: qid 0 docid grade, whitespace separated."""
    qrels: Qrels = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ValueError(f"{path}:{line_no}: expected 4 columns, got {len(parts)}")
            qid, _, doc_id, grade = parts
            qrels.setdefault(qid, {})[doc_id] = int(grade)
    return qrels


def exact_search(
    doc_matrix: np.ndarray, doc_ids: list[str], query_vec: np.ndarray, k: int
) -> list[tuple[str, float]]:
    """Exhaustive inner products; top-k with ascending-doc-id tiebreak."""
    if doc_matrix.shape[1] != query_vec.shape[0]:
        raise DimMismatch(f"{doc_matrix.shape} vs {query_vec.shape}")
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = doc_matrix @ query_vec
    order = sorted(range(len(doc_ids)), key=lambda i: (-scores[i], doc_ids[i]))[:k]
    return [(doc_ids[i], float(scores[i])) for i in order]


def ndcg_at_k(ranking: RankedList, qrels: Qrels, k: int) -> float:
    grades = qrels.get(ranking.qid)
    if not grades or max(grades.values()) <= 0:
        raise NoRelevanceInfo(ranking.qid)
    dcg = 0.0
    for i, (doc_id, _) in enumerate(ranking.items[:k], start=1):
        rel = grades.get(doc_id, 0)
        dcg += (2.0**rel - 1.0) / math.log2(i + 1)
    ideal = sorted(grades.values(), reverse=True)[:k]
    idcg = sum((2.0**rel - 1.0) / math.log2(i + 1) for i, rel in enumerate(ideal, start=1))
    return dcg / idcg


def recall_at_k(ranking: RankedList, qrels: Qrels, k: int) -> float:
    grades = qrels.get(ranking.qid)
    if not grades or max(grades.values()) <= 0:
        raise NoRelevanceInfo(ranking.qid)
    relevant = {d for d, g in grades.items() if g > 0}
    hits = sum(1 for doc_id, _ in ranking.items[:k] if doc_id in relevant)
    return hits / len(relevant)


_PUNCT_RE = re.compile(r"[^\w\s]+", re.UNICODE)


def normalize_answer_text(text: str) -> str:
    return " ".join(_PUNCT_RE.sub(" ", text.lower()).split())


def answer_recall_at_k(
    ranked_texts: list[str], answers: list[str], k: int
) -> int:
    """1 iff any of the top-k passages contains any gold answer string
    after normalization (containment is per passage)."""
    if not answers:
        raise ValueError("answers must be non-empty")
    norm_answers = [normalize_answer_text(a) for a in answers]
    for text in ranked_texts[:k]:
        hay = normalize_answer_text(text)
        if any(a and a in hay for a in norm_answers):
            return 1
    return 0


@dataclass
class DenseSystem:
    params: EncoderParams
    vocab: Vocab
    name: str = "dense"


@dataclass
class Bm25System:
    index: Bm25Index
    name: str = "bm25"


def evaluate_run(
    system,
    docs: list[Document],
    queries: list[Query],
    qrels: Qrels | None,
    metrics: list[str],
    ks: list[int],
    threads: int = 1,
    config: dict | None = None,
) -> dict:
    """Encode the corpus once (dense) or search the index (bm25), run all
    queries, and macro-average the requested metrics at each cutoff."""
    if not docs or not queries:
        raise ValueError("need at least one document and one query")
    unknown = [m for m in metrics if m not in ("ndcg", "recall", "answer_recall")]
    if unknown:
        raise ValueError(f"unknown metrics: {unknown}")
    max_k = max(ks)
    doc_ids = [d.id for d in docs]
    text_by_id = {d.id: d.text for d in docs}

    if isinstance(system, DenseSystem):
        def embed_doc(doc: Document) -> np.ndarray:
            seq = tokenize(doc.text, system.vocab)
            if len(seq) == 0:
                return np.zeros(system.params.dim)
            return encode(system.params, seq)

        doc_matrix = np.stack(_util.parallel_map(embed_doc, docs, threads))

        def run_query(query: Query) -> RankedList:
            seq = tokenize(query.text, system.vocab)
            if len(seq) == 0:
                vec = np.zeros(system.params.dim)
            else:
                vec = encode(system.params, seq)
            return RankedList(query.qid, exact_search(doc_matrix, doc_ids, vec, max_k))

    elif isinstance(system, Bm25System):
        def run_query(query: Query) -> RankedList:
            return RankedList(query.qid, bm25_search(system.index, tokenize(query.text), max_k))

    else:
        raise ValueError(f"unknown system {system!r}")

    rankings = _util.parallel_map(run_query, queries, threads)

    per_query: dict[str, dict[str, float]] = {}
    skipped = 0
    for query, ranking in zip(queries, rankings):
        values: dict[str, float] = {}
        for metric in metrics:
            for k in ks:
                key = f"{metric}@{k}"
                try:
                    if metric == "ndcg":
                        values[key] = ndcg_at_k(ranking, qrels or {}, k)
                    elif metric == "recall":
                        values[key] = recall_at_k(ranking, qrels or {}, k)
                    else:
                        if not query.answers:
                            raise NoRelevanceInfo(query.qid)
                        texts = [text_by_id[d] for d, _ in ranking.items]
                        values[key] = float(answer_recall_at_k(texts, query.answers, k))
                except NoRelevanceInfo:
                    continue
        if values:
            per_query[query.qid] = values
        else:
            skipped += 1
    if skipped:
        log.warning("skipped %d query(ies) with no relevance information", skipped)

    macro: dict[str, float] = {}
    for metric in metrics:
        for k in ks:
            key = f"{metric}@{k}"
            vals = [v[key] for v in per_query.values() if key in v]
            if vals:
                macro[key] = sum(vals) / len(vals)

    echo = dict(config or {})
    echo.update(
        {
            "system": getattr(system, "name", "unknown"),
            "metrics": metrics,
            "ks": ks,
            "convention": GAIN_CONVENTION,
            "skipped_queries": skipped,
            "evaluated_queries": len(per_query),
        }
    )
    return {"metrics": macro, "per_query": per_query, "config": echo}
