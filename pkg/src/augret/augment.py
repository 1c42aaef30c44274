"""Pseudo query-document pair production.

Strategies:

* ``randomcrop``  - two independently drawn contiguous spans of a document;
  the first is the query, the second (or the whole document) the positive.
* ``doc-title`` / ``doc-anchor``  - structural heuristics.
* ``qext-bm25`` / ``qext-plm`` / ``qext-self``  - sample 16 random spans of
  4..16 words, score their salience, keep the best as the query. Selected
  spans are never masked out: the positive text always contains the query
  span verbatim.
* ``tqgen-*``  - prompted generation, delegated to :mod:`augret.tqgen`.
* ``external``  - pre-generated pairs ingested from a pair file.

Every random choice is derived from (seed, doc.id, purpose), so the stage
is a pure function of (corpus bytes, config, seed) and is safe to run as a
parallel map over documents.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from . import _util
from .corpus import Document, tokenize
from .encoder import EncoderParams, encode, similarity
from .errors import (
    BadPairFile,
    BadSpec,
    EmptyGeneration,
    EmptyInput,
    GenUnavailable,
    NoAnchor,
    NoTitle,
    TooShort,
)
from .lexical import Bm25Index, bm25_score
from .ngram import NgramLm

log = logging.getLogger(__name__)

HIGHER_IS_BETTER = "higher_is_better"
LOWER_IS_BETTER = "lower_is_better"

STRATEGIES = (
    "randomcrop",
    "doc-title",
    "doc-anchor",
    "qext-bm25",
    "qext-plm",
    "qext-self",
    "tqgen-topic",
    "tqgen-title",
    "tqgen-absum",
    "tqgen-exsum",
    "external",
)

SPAN_COUNT = 16
SPAN_MIN_WORDS = 4
SPAN_MAX_WORDS = 16

CROP_MIN_WORDS = 4
CROP_MAX_WORDS = 128
CROP_MIN_FRAC = 0.1
CROP_MAX_FRAC = 0.5


@dataclass
class SpanCandidate:
    start: int
    length: int
    text: str


@dataclass
class ScoredSpan:
    span: SpanCandidate
    score: float
    polarity: str


@dataclass
class TrainingPair:
    qid: str
    query: str
    doc_id: str
    doc_text: str
    strategy: str
    neg_doc_id: Optional[str] = None
    neg_doc_text: Optional[str] = None
    # in-memory only, not serialized: word offsets of the crop spans
    query_span: Optional[tuple[int, int]] = None
    pos_span: Optional[tuple[int, int]] = None

    def to_record(self) -> dict:
        rec = {
            "qid": self.qid,
            "query": self.query,
            "doc_id": self.doc_id,
            "doc": self.doc_text,
            "strategy": self.strategy,
        }
        if self.neg_doc_id is not None:
            rec["neg_doc_id"] = self.neg_doc_id
            rec["neg_doc"] = self.neg_doc_text
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "TrainingPair":
        try:
            pair = cls(
                qid=str(rec["qid"]),
                query=rec["query"],
                doc_id=str(rec["doc_id"]),
                doc_text=rec["doc"],
                strategy=rec.get("strategy", "external"),
                neg_doc_id=rec.get("neg_doc_id"),
                neg_doc_text=rec.get("neg_doc"),
            )
        except KeyError as exc:
            raise BadPairFile(f"pair record missing field {exc}") from exc
        if not pair.query:
            raise BadPairFile(f"pair {pair.qid} has an empty query")
        if pair.strategy not in STRATEGIES:
            raise BadPairFile(f"pair {pair.qid} has unknown strategy {pair.strategy!r}")
        return pair


@dataclass
class MixSpec:
    """Strategy proportions; must sum to 1 within 1e-9."""

    entries: list[tuple[str, float]]

    def __post_init__(self):
        for name, p in self.entries:
            if name not in STRATEGIES:
                raise BadSpec(f"unknown strategy {name!r}")
            if not 0.0 <= p <= 1.0:
                raise BadSpec(f"proportion for {name} out of [0,1]: {p}")
        total = sum(p for _, p in self.entries)
        if abs(total - 1.0) > 1e-9:
            raise BadSpec(f"proportions sum to {total}, expected 1")

    @classmethod
    def single(cls, strategy: str) -> "MixSpec":
        return cls([(strategy, 1.0)])

    @classmethod
    def mix50(cls, strategy: str) -> "MixSpec":
        return cls([("randomcrop", 0.5), (strategy, 0.5)])

    @classmethod
    def hybrid_all(cls) -> "MixSpec":
        return cls(
            [
                ("randomcrop", 0.2),
                ("qext-plm", 0.1),
                ("doc-title", 0.14),
                ("tqgen-topic", 0.14),
                ("tqgen-title", 0.14),
                ("tqgen-absum", 0.14),
                ("tqgen-exsum", 0.14),
            ]
        )

    @classmethod
    def hybrid_tqgen(cls) -> "MixSpec":
        return cls(
            [
                ("randomcrop", 0.2),
                ("tqgen-topic", 0.2),
                ("tqgen-title", 0.2),
                ("tqgen-absum", 0.2),
                ("tqgen-exsum", 0.2),
            ]
        )

    @classmethod
    def named(cls, name: str) -> "MixSpec":
        if name == "hybrid-all":
            return cls.hybrid_all()
        if name == "hybrid-tqgen":
            return cls.hybrid_tqgen()
        if name.startswith("mix50:"):
            return cls.mix50(name.split(":", 1)[1])
        if name in STRATEGIES:
            return cls.single(name)
        raise BadSpec(f"unknown mix spec {name!r}")


def sample_spans(
    doc: Document,
    n: int = SPAN_COUNT,
    min_len: int = SPAN_MIN_WORDS,
    max_len: int = SPAN_MAX_WORDS,
    rng_seed: int = 0,
) -> list[SpanCandidate]:
    """Up to n distinct (start, length) spans; lengths uniform over
    [min_len, max_len] clamped to the document, starts uniform over valid
    positions. A document shorter than min_len words yields exactly one
    candidate covering the whole document. Collisions are redrawn so a
    long document reliably yields n candidates."""
    words = doc.text.split()
    total = len(words)
    if total == 0:
        raise EmptyInput(f"document {doc.id} has no words")
    if total < min_len:
        return [SpanCandidate(0, total, " ".join(words))]
    rng = _util.derive_rng(rng_seed, "spans", doc.id)
    seen: set[tuple[int, int]] = set()
    out: list[SpanCandidate] = []
    attempts = 0
    while len(out) < n and attempts < 10 * n:
        attempts += 1
        length = min(rng.randint(min_len, max_len), total)
        start = rng.randint(0, total - length)
        if (start, length) in seen:
            continue
        seen.add((start, length))
        out.append(SpanCandidate(start, length, " ".join(words[start : start + length])))
    return out


def random_crop_pair(
    doc: Document,
    rng_seed: int = 0,
    positive_side: str = "span",
) -> TrainingPair:
    """Two independently drawn contiguous spans; the first becomes the
    query. Span lengths are uniform over [max(4, ceil(0.1 T)),
    min(128, ceil(0.5 T))] for a T-word document (the lower bound is
    clamped down when T exceeds 1280 and the interval would invert).
    ``positive_side`` picks the positive text: the second span (default)
    or the whole document."""
    words = doc.text.split()
    total = len(words)
    if total < 2 * CROP_MIN_WORDS:
        raise TooShort(f"document {doc.id} has {total} words, need {2 * CROP_MIN_WORDS}")
    if positive_side not in ("span", "document"):
        raise ValueError("positive_side must be 'span' or 'document'")
    low = max(CROP_MIN_WORDS, -(-total // 10))
    high = min(CROP_MAX_WORDS, -(-total // 2))
    low = min(low, high)
    rng = _util.derive_rng(rng_seed, "crop", doc.id)

    def draw() -> tuple[int, int]:
        length = rng.randint(low, high)
        return rng.randint(0, total - length), length

    q_start, q_len = draw()
    p_start, p_len = draw()
    query = " ".join(words[q_start : q_start + q_len])
    positive = " ".join(words[p_start : p_start + p_len]) if positive_side == "span" else doc.text
    return TrainingPair(
        qid=f"randomcrop:{doc.id}",
        query=query,
        doc_id=doc.id,
        doc_text=positive,
        strategy="randomcrop",
        query_span=(q_start, q_len),
        pos_span=(p_start, p_len),
    )


# ---------------------------------------------------------------------------
# Span salience scorers


class Bm25SpanScorer:
    """Span as query against its own source document, corpus-level IDF."""

    polarity = HIGHER_IS_BETTER

    def __init__(self, index: Bm25Index):
        self.index = index

    def score(self, doc: Document, span: SpanCandidate) -> float:
        return bm25_score(self.index, tokenize(span.text), doc.id)


class LmSpanScorer:
    """Total NLL of the span given the document as prefix; lower wins."""

    polarity = LOWER_IS_BETTER

    def __init__(self, lm: NgramLm):
        self.lm = lm

    def score(self, doc: Document, span: SpanCandidate) -> float:
        return self.lm.span_nll(doc.text, span.text)


class ExternalLmSpanScorer:
    """Like LmSpanScorer but asks a generation service /score endpoint."""

    polarity = LOWER_IS_BETTER

    def __init__(self, client):
        self.client = client

    def score(self, doc: Document, span: SpanCandidate) -> float:
        return self.client.score(doc.text, span.text)


class SelfSpanScorer:
    """Inner product of encoder(span) and encoder(doc) under a parameter
    snapshot; pass ``live=True`` machinery (a fresh scorer per step) for
    on-the-fly selection during training."""

    polarity = HIGHER_IS_BETTER

    def __init__(self, params: EncoderParams, vocab):
        self.params = params
        self.vocab = vocab
        self._doc_cache: dict[str, object] = {}

    def score(self, doc: Document, span: SpanCandidate) -> float:
        doc_vec = self._doc_cache.get(doc.id)
        if doc_vec is None:
            doc_vec = encode(self.params, tokenize(doc.text, self.vocab))
            self._doc_cache[doc.id] = doc_vec
        span_vec = encode(self.params, tokenize(span.text, self.vocab))
        return similarity(span_vec, doc_vec)


def score_spans(scorer, doc: Document, spans: Sequence[SpanCandidate]) -> list[ScoredSpan]:
    if not spans:
        raise EmptyInput("no spans to score")
    return [ScoredSpan(span=s, score=scorer.score(doc, s), polarity=scorer.polarity) for s in spans]


def lm_span_nll(lm: NgramLm, doc: Document, span: SpanCandidate) -> float:
    return lm.span_nll(doc.text, span.text)


def select_query(scored: Sequence[ScoredSpan]) -> SpanCandidate:
    """Arg-best under the (uniform) polarity; ties go to the smallest
    start, then the smallest length."""
    if not scored:
        raise EmptyInput("no scored spans")
    polarities = {s.polarity for s in scored}
    if len(polarities) > 1:
        raise ValueError(f"mixed polarities: {sorted(polarities)}")
    sign = -1.0 if polarities.pop() == HIGHER_IS_BETTER else 1.0
    best = min(scored, key=lambda s: (sign * s.score, s.span.start, s.span.length))
    return best.span


def qext_pair(
    doc: Document,
    scorer,
    strategy: str,
    rng_seed: int = 0,
    n: int = SPAN_COUNT,
) -> TrainingPair:
    spans = sample_spans(doc, n=n, rng_seed=rng_seed)
    best = select_query(score_spans(scorer, doc, spans))
    return TrainingPair(
        qid=f"{strategy}:{doc.id}",
        query=best.text,
        doc_id=doc.id,
        doc_text=doc.text,
        strategy=strategy,
        query_span=(best.start, best.length),
    )


def title_query(doc: Document) -> TrainingPair:
    if not doc.title or not doc.title.strip():
        raise NoTitle(doc.id)
    return TrainingPair(
        qid=f"doc-title:{doc.id}",
        query=doc.title.strip(),
        doc_id=doc.id,
        doc_text=doc.text,
        strategy="doc-title",
    )


def anchor_query(doc: Document, rng_seed: int = 0) -> TrainingPair:
    anchors = [a for a in doc.anchors if a.strip()]
    if not anchors:
        raise NoAnchor(doc.id)
    rng = _util.derive_rng(rng_seed, "anchor", doc.id)
    return TrainingPair(
        qid=f"doc-anchor:{doc.id}",
        query=anchors[rng.randrange(len(anchors))],
        doc_id=doc.id,
        doc_text=doc.text,
        strategy="doc-anchor",
    )


# ---------------------------------------------------------------------------
# Strategy mixing


@dataclass
class PairBackends:
    """Everything the strategy dispatcher might need. Only the backends of
    strategies actually named in the mix have to be present."""

    bm25_index: Optional[Bm25Index] = None
    lm: Optional[NgramLm] = None
    self_params: Optional[EncoderParams] = None
    self_vocab: Optional[object] = None
    gen_client: Optional[object] = None
    sampling: Optional[object] = None
    crop_positive_side: str = "span"
    external_score_client: Optional[object] = None


def make_pair(doc: Document, strategy: str, rng_seed: int, backends: PairBackends) -> TrainingPair:
    if strategy == "randomcrop":
        return random_crop_pair(doc, rng_seed, positive_side=backends.crop_positive_side)
    if strategy == "doc-title":
        return title_query(doc)
    if strategy == "doc-anchor":
        return anchor_query(doc, rng_seed)
    if strategy == "qext-bm25":
        if backends.bm25_index is None:
            raise BadSpec("qext-bm25 requires a bm25 index backend")
        return qext_pair(doc, Bm25SpanScorer(backends.bm25_index), strategy, rng_seed)
    if strategy == "qext-plm":
        if backends.external_score_client is not None:
            scorer = ExternalLmSpanScorer(backends.external_score_client)
        elif backends.lm is not None:
            scorer = LmSpanScorer(backends.lm)
        else:
            raise BadSpec("qext-plm requires an lm backend or score client")
        return qext_pair(doc, scorer, strategy, rng_seed)
    if strategy == "qext-self":
        if backends.self_params is None:
            raise BadSpec("qext-self requires an encoder snapshot backend")
        scorer = SelfSpanScorer(backends.self_params, backends.self_vocab)
        return qext_pair(doc, scorer, strategy, rng_seed)
    if strategy.startswith("tqgen-"):
        from . import tqgen

        if backends.gen_client is None:
            raise BadSpec(f"{strategy} requires a generation client")
        task = strategy.split("-", 1)[1]
        return tqgen.generate_query(
            backends.gen_client, doc, task, backends.sampling, rng_seed
        )
    raise BadSpec(f"no producer for strategy {strategy!r}")


def assign_strategy(seed: int, doc_id: str, spec: MixSpec) -> str:
    """Hash (seed, doc id) to u in [0,1) against cumulative proportions so
    assignment is deterministic under any parallelism or arrival order."""
    u = _util.derive_unit(seed, "mix", doc_id)
    cum = 0.0
    for name, p in spec.entries:
        cum += p
        if u < cum:
            return name
    return spec.entries[-1][0]


SKIPPABLE = (NoTitle, NoAnchor, TooShort, EmptyGeneration, GenUnavailable, EmptyInput)


def mix_strategies(
    docs: Iterable[Document],
    spec: MixSpec,
    rng_seed: int,
    backends: PairBackends,
    skip_counter: Optional[Counter] = None,
    threads: int = 1,
) -> list[TrainingPair]:
    """One pair per document under the hashed strategy assignment.
    Documents whose assigned strategy errors are skipped and counted."""
    docs = list(docs)
    counter = skip_counter if skip_counter is not None else Counter()

    def produce(doc: Document):
        strategy = assign_strategy(rng_seed, doc.id, spec)
        try:
            return make_pair(doc, strategy, rng_seed, backends), None
        except SKIPPABLE as exc:
            return None, f"skipped:{strategy}:{type(exc).__name__}"

    pairs = []
    for pair, skip_key in _util.parallel_map(produce, docs, threads):
        if pair is not None:
            pairs.append(pair)
        else:
            counter[skip_key] += 1
    if counter:
        log.warning("mix skipped documents: %s", dict(counter))
    return pairs


# ---------------------------------------------------------------------------
# Pair file IO. First line may be a {"_meta": {...}} record carrying the
# producing config and seed; readers skip it, so externally generated files
# without one parse the same way.


def write_pairs(path: str, pairs: Iterable[TrainingPair], meta: Optional[dict] = None) -> int:
    ordered = sorted(pairs, key=lambda p: (p.doc_id, p.qid))
    records: list[dict] = []
    if meta is not None:
        records.append({"_meta": meta})
    records.extend(p.to_record() for p in ordered)
    n = _util.write_jsonl(path, records)
    return n - (1 if meta is not None else 0)


def read_pairs(path: str) -> list[TrainingPair]:
    pairs = []
    for rec in _util.read_jsonl(path):
        if "_meta" in rec:
            continue
        pairs.append(TrainingPair.from_record(rec))
    return pairs
