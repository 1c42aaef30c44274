"""BM25 statistics, scoring, and top-k search over an inverted index.

Serves two roles: span-salience scoring (a span scored as a query against
its own source document, with corpus-level IDF) and the lexical retrieval
baseline. IDF uses the non-negative ln(1 + (N - df + 0.5)/(df + 0.5)) form
so very common terms can never contribute negative score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from . import _util
from .corpus import Document, TokenSeq, tokenize
from .errors import DuplicateDocId, EmptyCorpus, UnknownDoc

INDEX_MAGIC = b"ABIX"
INDEX_VERSION = 1


@dataclass
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")


class Bm25Index:
    """Immutable after build; concurrent read-only search is safe."""

    def __init__(self, params: Bm25Params):
        self.params = params
        self.n_docs = 0
        self.avg_len = 0.0
        self.doc_len: dict[str, int] = {}
        self.df: dict[str, int] = {}
        # postings lists sorted by doc id; _tf mirrors them for O(1) lookup
        self.postings: dict[str, list[tuple[str, int]]] = {}
        self._tf: dict[str, dict[str, int]] = {}

    def idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        if df == 0:
            return 0.0
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))

    def doc_ids(self) -> list[str]:
        return sorted(self.doc_len)


def build_bm25_index(docs: Iterable[Document], params: Bm25Params | None = None) -> Bm25Index:
    index = Bm25Index(params or Bm25Params())
    tf_by_term: dict[str, dict[str, int]] = {}
    total_len = 0
    for doc in docs:
        if doc.id in index.doc_len:
            raise DuplicateDocId(doc.id)
        terms = tokenize(doc.text).surface
        index.doc_len[doc.id] = len(terms)
        total_len += len(terms)
        counts: dict[str, int] = {}
        for t in terms:
            counts[t] = counts.get(t, 0) + 1
        for t, c in counts.items():
            tf_by_term.setdefault(t, {})[doc.id] = c
    index.n_docs = len(index.doc_len)
    if index.n_docs == 0:
        raise EmptyCorpus("cannot build an index over zero documents")
    index.avg_len = total_len / index.n_docs
    for term in sorted(tf_by_term):
        per_doc = tf_by_term[term]
        index.df[term] = len(per_doc)
        index.postings[term] = sorted(per_doc.items())
        index._tf[term] = per_doc
    return index


def bm25_score(index: Bm25Index, query: TokenSeq, doc_id: str) -> float:
    """Sum over query token occurrences (repeats count once per occurrence)."""
    if doc_id not in index.doc_len:
        raise UnknownDoc(doc_id)
    k1, b = index.params.k1, index.params.b
    dl = index.doc_len[doc_id]
    norm = k1 * (1.0 - b + b * dl / index.avg_len)
    score = 0.0
    for term in query.surface:
        tf = index._tf.get(term, {}).get(doc_id, 0)
        if tf == 0:
            continue
        score += index.idf(term) * tf * (k1 + 1.0) / (tf + norm)
    return score


def bm25_search(index: Bm25Index, query: TokenSeq, k: int) -> list[tuple[str, float]]:
    """Top-k by descending score, ties by ascending doc id.

    Only positive-score documents rank; if fewer than k exist, remaining
    slots are filled by ascending doc id at score 0.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    k1, b = index.params.k1, index.params.b
    accum: dict[str, float] = {}
    counts: dict[str, int] = {}
    for t in query.surface:
        counts[t] = counts.get(t, 0) + 1
    for term, q_occ in counts.items():
        posting = index.postings.get(term)
        if not posting:
            continue
        idf = index.idf(term)
        for doc_id, tf in posting:
            dl = index.doc_len[doc_id]
            norm = k1 * (1.0 - b + b * dl / index.avg_len)
            contrib = idf * tf * (k1 + 1.0) / (tf + norm)
            accum[doc_id] = accum.get(doc_id, 0.0) + q_occ * contrib
    hits = sorted(
        ((d, s) for d, s in accum.items() if s > 0.0),
        key=lambda item: (-item[1], item[0]),
    )[:k]
    if len(hits) < k:
        have = {d for d, _ in hits}
        for doc_id in index.doc_ids():
            if len(hits) >= k:
                break
            if doc_id not in have:
                hits.append((doc_id, 0.0))
    return hits


def save_index(index: Bm25Index, path: str, config: dict | None = None) -> None:
    """Versioned binary format: magic, version, config blob, statistics."""
    doc_ids = index.doc_ids()
    doc_pos = {d: i for i, d in enumerate(doc_ids)}
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        _util.write_u32(fh, INDEX_VERSION)
        blob = dict(config or {})
        blob.update({"k1": index.params.k1, "b": index.params.b})
        _util.write_str(fh, _util.dumps(blob))
        _util.write_u32(fh, index.n_docs)
        _util.write_f64(fh, index.avg_len)
        for doc_id in doc_ids:
            _util.write_str(fh, doc_id)
            _util.write_u32(fh, index.doc_len[doc_id])
        _util.write_u32(fh, len(index.postings))
        for term in sorted(index.postings):
            _util.write_str(fh, term)
            posting = index.postings[term]
            _util.write_u32(fh, len(posting))
            for doc_id, tf in posting:
                _util.write_u32(fh, doc_pos[doc_id])
                _util.write_u32(fh, tf)


def load_index(path: str) -> Bm25Index:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != INDEX_MAGIC:
            raise ValueError(f"not an index file: bad magic {magic!r}")
        version = _util.read_u32(fh)
        if version != INDEX_VERSION:
            raise ValueError(f"unsupported index version {version}")
        import json

        blob = json.loads(_util.read_str(fh))
        index = Bm25Index(Bm25Params(k1=blob["k1"], b=blob["b"]))
        index.n_docs = _util.read_u32(fh)
        index.avg_len = _util.read_f64(fh)
        doc_ids = []
        for _ in range(index.n_docs):
            doc_id = _util.read_str(fh)
            index.doc_len[doc_id] = _util.read_u32(fh)
            doc_ids.append(doc_id)
        n_terms = _util.read_u32(fh)
        for _ in range(n_terms):
            term = _util.read_str(fh)
            n = _util.read_u32(fh)
            posting = []
            for _ in range(n):
                pos = _util.read_u32(fh)
                tf = _util.read_u32(fh)
                posting.append((doc_ids[pos], tf))
            posting.sort()
            index.postings[term] = posting
            index.df[term] = len(posting)
            index._tf[term] = dict(posting)
    return index
