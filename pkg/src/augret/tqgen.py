"""Transferred query generation: prompt construction for the four
generation tasks, an HTTP client for an external generation service, and a
deterministic offline stub so the whole pipeline runs with no model.

The wire protocol:

    POST /generate {"prompt", "top_p", "top_k", "temperature",
                    "max_new_tokens", "seed"}      -> 200 {"text", "model_id"}
    POST /score    {"context", "continuation"}     -> 200 {"nll"}

503 responses are retried (bounded), 400 is fatal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

from . import _util
from .corpus import Document, tokenize
from .errors import EmptyGeneration, EmptyInput, GenUnavailable

log = logging.getLogger(__name__)

TASKS = ("topic", "title", "absum", "exsum")

PROMPTS = {
    "topic": "What is the main topic of the text above?",
    "title": "Please write a title of the text above",
    "absum": "Please write a short summary of the text above",
    "exsum": "Please use a sentence from the above text to summarize its content",
}

PROMPT_DOC_MAX_WORDS = 512
DEFAULT_RETRIES = 3

STUB_TITLE_WORDS = 8
STUB_ABSUM_WORDS = 25
STUB_EXSUM_MAX_WORDS = 40
STUB_TOPIC_SCAN_WORDS = 100


@dataclass
class SamplingParams:
    top_p: float = 0.9
    top_k: int = 0
    max_new_tokens: int = 64
    temperature: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be in (0, 1]")
        if self.top_k < 0:
            raise ValueError("top_k must be >= 0")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be > 0")


def build_prompt(doc: Document, task: str, max_doc_words: int = PROMPT_DOC_MAX_WORDS) -> str:
    """Document first (truncated), two newlines, then the task prompt, so
    the instruction's "text above" points at the document."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if not doc.text.strip():
        raise EmptyInput(f"document {doc.id} has no text")
    words = doc.text.split()
    body = " ".join(words[:max_doc_words]) if len(words) > max_doc_words else doc.text
    return f"{body}\n\n{PROMPTS[task]}"


def gen_request_body(prompt: str, sampling: SamplingParams, seed: int) -> dict:
    return {
        "prompt": prompt,
        "top_p": sampling.top_p,
        "top_k": sampling.top_k,
        "temperature": sampling.temperature,
        "max_new_tokens": sampling.max_new_tokens,
        "seed": seed,
    }


def stub_generate(doc: Document, task: str, seed: int = 0, index=None) -> str:
    """Deterministic extractive surrogate for each task.

    topic: the 2 rarest content words of the first 100 words, rarest by
    corpus IDF when an index is supplied, otherwise by within-document
    frequency; title: first 8 words; absum: first 25 words; exsum: first
    sentence (up to the first period, capped at 40 words).
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    words = doc.text.split()
    if not words:
        raise EmptyInput(f"document {doc.id} has no text")
    if task == "title":
        return " ".join(words[:STUB_TITLE_WORDS])
    if task == "absum":
        return " ".join(words[:STUB_ABSUM_WORDS])
    if task == "exsum":
        sentence = doc.text.split(".", 1)[0].strip()
        sent_words = sentence.split() if sentence else words
        return " ".join(sent_words[:STUB_EXSUM_MAX_WORDS])
    # topic
    head = tokenize(" ".join(words[:STUB_TOPIC_SCAN_WORDS])).surface
    if not head:
        return " ".join(words[:2])
    first_at = {}
    for i, term in enumerate(head):
        first_at.setdefault(term, i)
    if index is not None:
        ranked = sorted(set(head), key=lambda t: (-index.idf(t), t))
    else:
        doc_counts: dict[str, int] = {}
        for term in tokenize(doc.text).surface:
            doc_counts[term] = doc_counts.get(term, 0) + 1
        ranked = sorted(set(head), key=lambda t: (doc_counts[t], t))
    chosen = sorted(ranked[:2], key=lambda t: first_at[t])
    return " ".join(chosen)


class StubClient:
    """Offline generation backend with the same surface as GenClient."""

    model_id = "stub"

    def __init__(self, index=None):
        self.index = index

    def generate_for(self, doc: Document, task: str, sampling: SamplingParams, seed: int) -> str:
        return stub_generate(doc, task, seed, index=self.index)

    def score(self, context: str, continuation: str) -> float:
        raise NotImplementedError("stub client does not score; use the n-gram lm backend")


class GenClient:
    """HTTP client for the generation service."""

    def __init__(self, endpoint: str, retries: int = DEFAULT_RETRIES, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.retries = retries
        self.timeout = timeout
        import requests

        self._session = requests.Session()
        self.model_id = "unknown"

    def _post(self, path: str, body: dict) -> dict:
        import requests

        last_error: Exception | None = None
        for _ in range(self.retries):
            try:
                resp = self._session.post(
                    f"{self.endpoint}{path}", json=body, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code == 503:
                last_error = GenUnavailable(f"{path} over capacity")
                continue
            if resp.status_code != 200:
                raise GenUnavailable(f"{path} returned {resp.status_code}: {resp.text[:200]}")
            return resp.json()
        raise GenUnavailable(f"{path} failed after {self.retries} attempts: {last_error}")

    def generate_for(self, doc: Document, task: str, sampling: SamplingParams, seed: int) -> str:
        prompt = build_prompt(doc, task)
        payload = self._post("/generate", gen_request_body(prompt, sampling, seed))
        self.model_id = payload.get("model_id", "unknown")
        return payload.get("text", "")

    def score(self, context: str, continuation: str) -> float:
        payload = self._post("/score", {"context": context, "continuation": continuation})
        return float(payload["nll"])


def generate_query(
    client,
    doc: Document,
    task: str,
    sampling: Optional[SamplingParams] = None,
    seed: int = 0,
):
    """One pair per document; the generated text is stripped and must be
    non-empty. Transport failures surface as GenUnavailable after the
    client's retries; callers skip and count such documents."""
    from .augment import TrainingPair

    sampling = sampling or SamplingParams()
    per_doc_seed = _util.derive_int(seed, "tqgen", task, doc.id)
    text = client.generate_for(doc, task, sampling, per_doc_seed).strip()
    if not text:
        raise EmptyGeneration(f"empty generation for document {doc.id} task {task}")
    strategy = f"tqgen-{task}"
    return TrainingPair(
        qid=f"{strategy}:{doc.id}",
        query=text,
        doc_id=doc.id,
        doc_text=doc.text,
        strategy=strategy,
    )
