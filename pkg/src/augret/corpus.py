"""Corpus ingestion: record parsing with structural heuristics, word-level
tokenization, and vocabulary construction.

Documents are exchanged as newline-delimited JSON objects
``{"id", "title"?, "text", "anchors"?, "source"?}`` (UTF-8). Web-crawl
records get their first non-empty line promoted to a title (capped at 64
words, removed from the body); encyclopedia-style records are split into one
document per paragraph, each inheriting the page title and the anchor
strings that occur inside it.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from . import _util
from .errors import EmptyDocument

log = logging.getLogger(__name__)

SOURCES = ("wiki", "cc", "generic")

TITLE_MAX_WORDS = 64

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


@dataclass
class Document:
    """One corpus record. `text` is the body with any title line removed."""

    id: str
    text: str
    title: Optional[str] = None
    anchors: list[str] = field(default_factory=list)
    source: str = "generic"

    def to_record(self) -> dict:
        rec: dict = {"id": self.id, "text": self.text, "source": self.source}
        if self.title is not None:
            rec["title"] = self.title
        if self.anchors:
            rec["anchors"] = list(self.anchors)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Document":
        return cls(
            id=str(rec["id"]),
            text=rec["text"],
            title=rec.get("title"),
            anchors=list(rec.get("anchors") or []),
            source=rec.get("source", "generic"),
        )


@dataclass
class TokenSeq:
    """Parallel token ids and surface forms; id 0 is reserved for UNK."""

    tokens: list[int]
    surface: list[str]

    def __len__(self) -> int:
        return len(self.tokens)


class Vocab:
    """Bijective term <-> id map for ids >= 1; id 0 is UNK."""

    def __init__(self, terms: list[str], min_freq: int = 1):
        self.min_freq = min_freq
        self.id_to_term = ["<unk>"] + list(terms)
        self.term_to_id = {t: i for i, t in enumerate(self.id_to_term) if i > 0}

    def __len__(self) -> int:
        return len(self.id_to_term)

    def lookup(self, term: str) -> int:
        return self.term_to_id.get(term, 0)

    def save(self, path: str) -> None:
        _util.write_jsonl(path, [{"min_freq": self.min_freq, "terms": self.id_to_term[1:]}])

    @classmethod
    def load(cls, path: str) -> "Vocab":
        rec = next(_util.read_jsonl(path))
        return cls(rec["terms"], min_freq=rec["min_freq"])


def parse_cc_record(raw: str, doc_id: str = "") -> Document:
    """Promote the first non-empty line to a title of at most 64 words.

    Words beyond the 64-word cap stay at the front of the body so that the
    title plus body together preserve the record's word multiset.
    """
    lines = raw.splitlines()
    first = next((i for i, ln in enumerate(lines) if ln.strip()), None)
    if first is None:
        raise EmptyDocument("record has no non-empty line")
    words = lines[first].split()
    title = " ".join(words[:TITLE_MAX_WORDS])
    overflow = " ".join(words[TITLE_MAX_WORDS:])
    rest = "\n".join(lines[first + 1 :]).strip()
    text = (overflow + "\n" + rest).strip() if overflow else rest
    if not text:
        raise EmptyDocument("record is title-only")
    return Document(id=doc_id, text=text, title=title, anchors=[], source="cc")


def parse_wiki_record(rec: dict) -> list[Document]:
    """Split a page into per-paragraph documents sharing the page title.

    Paragraphs are line-break separated; each document keeps the anchor
    strings that occur verbatim inside its paragraph. Ids are
    ``pageId#paragraphOrdinal`` over non-empty paragraphs.
    """
    page_id = str(rec["id"])
    title = rec.get("title")
    anchors = [a for a in (rec.get("anchors") or []) if a]
    paragraphs = [p.strip() for p in rec.get("text", "").split("\n")]
    paragraphs = [p for p in paragraphs if p]
    if not paragraphs:
        raise EmptyDocument(f"page {page_id} has no non-empty paragraph")
    docs = []
    for i, para in enumerate(paragraphs):
        docs.append(
            Document(
                id=f"{page_id}#{i}",
                text=para,
                title=title,
                anchors=[a for a in anchors if a in para],
                source="wiki",
            )
        )
    return docs


def tokenize(text: str, vocab: Optional[Vocab] = None) -> TokenSeq:
    """Lowercase word tokenization; punctuation-only tokens never appear.

    Without a vocab every id is 0; with one, unknown terms map to 0.
    """
    surface = [m.group(0).lower() for m in _TOKEN_RE.finditer(text)]
    if vocab is None:
        ids = [0] * len(surface)
    else:
        ids = [vocab.lookup(t) for t in surface]
    return TokenSeq(tokens=ids, surface=surface)


def build_vocab(texts: Iterable[str], min_freq: int = 1) -> Vocab:
    """Count terms over the stream; ids by descending frequency, ties
    broken lexicographically, so two builds over the same multiset of
    documents are identical."""
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(tokenize(text).surface)
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    return Vocab(kept, min_freq=min_freq)


def read_documents(path: str) -> list[Document]:
    return [Document.from_record(rec) for rec in _util.read_jsonl(path)]


def write_documents(path: str, docs: Iterable[Document]) -> int:
    return _util.write_jsonl(path, (d.to_record() for d in docs))


def ingest_records(records: Iterable[dict], fmt: str) -> Iterator[Document]:
    """Normalize raw records into canonical documents.

    Degenerate records are skipped with a counted warning rather than
    aborting the run.
    """
    skipped = 0
    for rec in records:
        try:
            if fmt == "cc":
                yield parse_cc_record(rec.get("text", ""), doc_id=str(rec["id"]))
            elif fmt == "wiki":
                yield from parse_wiki_record(rec)
            else:
                doc = Document.from_record(rec)
                doc.text = doc.text.strip()
                if not doc.text:
                    raise EmptyDocument(f"record {doc.id} has empty text")
                yield doc
        except EmptyDocument as exc:
            skipped += 1
            log.warning("skipping degenerate record: %s", exc)
    if skipped:
        log.warning("ingest skipped %d degenerate record(s)", skipped)
