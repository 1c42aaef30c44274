import json
import pathlib

import pytest

from augret.corpus import Document
from augret.errors import EmptyGeneration, GenUnavailable
from augret.lexical import build_bm25_index
from augret.tqgen import (
    PROMPTS,
    SamplingParams,
    StubClient,
    build_prompt,
    gen_request_body,
    generate_query,
    stub_generate,
)

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "fixtures" / "genservice"


def test_prompt_suffixes():
    doc = Document(id="d", text="X")
    assert build_prompt(doc, "topic") == "X\n\nWhat is the main topic of the text above?"
    assert build_prompt(doc, "title").endswith("Please write a title of the text above")
    assert build_prompt(doc, "absum").endswith("Please write a short summary of the text above")
    assert build_prompt(doc, "exsum").endswith(
        "Please use a sentence from the above text to summarize its content"
    )


def test_prompt_document_comes_first():
    doc = Document(id="d", text="the document body")
    for task in PROMPTS:
        prompt = build_prompt(doc, task)
        assert prompt.startswith("the document body\n\n")


def test_prompt_injective_in_task():
    doc = Document(id="d", text="same doc")
    prompts = {build_prompt(doc, task) for task in PROMPTS}
    assert len(prompts) == 4


def test_prompt_truncates_long_documents():
    doc = Document(id="d", text=" ".join(f"w{i}" for i in range(600)))
    prompt = build_prompt(doc, "topic")
    body = prompt.split("\n\n")[0]
    assert len(body.split()) == 512


def test_sampling_defaults_match_protocol():
    sp = SamplingParams()
    assert (sp.top_p, sp.top_k) == (0.9, 0)
    assert sp.max_new_tokens == 64 and sp.temperature == 1.0


def test_sampling_validation():
    with pytest.raises(ValueError):
        SamplingParams(top_p=0.0)
    with pytest.raises(ValueError):
        SamplingParams(top_k=-1)
    with pytest.raises(ValueError):
        SamplingParams(temperature=0.0)


def test_request_body_matches_golden_fixtures():
    # the client must serialize exactly what the service fixtures expect
    doc_text = json.loads((FIXTURES / "generate-topic.json").read_text())["request"]["prompt"]
    doc_text = doc_text.split("\n\n")[0]
    doc = Document(id="fx1", text=doc_text)
    for task, seed in (("topic", 13), ("title", 14), ("absum", 15), ("exsum", 16)):
        fixture = json.loads((FIXTURES / f"generate-{task}.json").read_text())
        body = gen_request_body(build_prompt(doc, task), SamplingParams(), seed)
        assert body == fixture["request"]


def test_stub_exsum_first_sentence():
    doc = Document(id="d", text="Alpha beta gamma. More text.")
    assert stub_generate(doc, "exsum", 1) == "Alpha beta gamma"


def test_stub_title_first_eight_words():
    doc = Document(id="d", text=" ".join(f"w{i}" for i in range(20)))
    assert stub_generate(doc, "title", 1) == " ".join(f"w{i}" for i in range(8))


def test_stub_absum_first_25_words():
    doc = Document(id="d", text=" ".join(f"w{i}" for i in range(40)))
    assert stub_generate(doc, "absum", 1).split() == [f"w{i}" for i in range(25)]


def test_stub_topic_prefers_rare_words():
    text = "common common common common unique1 common common unique2 common"
    doc = Document(id="d", text=text)
    assert stub_generate(doc, "topic", 1) == "unique1 unique2"


def test_stub_topic_uses_index_idf_when_given():
    docs = [
        Document(id="d0", text="shared words shared words distinct0 marker0"),
        Document(id="d1", text="shared words shared words distinct1 marker1"),
        Document(id="d2", text="shared words shared words distinct2 marker2"),
    ]
    index = build_bm25_index(docs)
    out = stub_generate(docs[0], "topic", 1, index=index)
    assert out == "distinct0 marker0"


def test_stub_deterministic():
    doc = Document(id="d", text="some stable words repeated here")
    for task in PROMPTS:
        assert stub_generate(doc, task, 7) == stub_generate(doc, task, 7)


def test_generate_query_with_stub():
    doc = Document(id="d9", text="First sentence here. Second sentence there.")
    pair = generate_query(StubClient(), doc, "exsum", seed=3)
    assert pair.strategy == "tqgen-exsum"
    assert pair.query == "First sentence here"
    assert pair.doc_id == "d9"
    assert pair.doc_text == doc.text


class FixedClient:
    def __init__(self, text):
        self.text = text

    def generate_for(self, doc, task, sampling, seed):
        return self.text


def test_generated_text_stripped():
    doc = Document(id="d", text="body words")
    pair = generate_query(FixedClient("  Sumerian \n"), doc, "topic", seed=1)
    assert pair.query == "Sumerian"
    assert pair.strategy == "tqgen-topic"


def test_empty_generation_rejected():
    doc = Document(id="d", text="body words")
    with pytest.raises(EmptyGeneration):
        generate_query(FixedClient("   "), doc, "topic", seed=1)


def test_transport_errors_retried_then_fatal(monkeypatch):
    import requests

    from augret import tqgen

    attempts = []

    class FailingSession:
        def post(self, url, json=None, timeout=None):
            attempts.append(url)
            raise requests.ConnectionError("refused")

    client = tqgen.GenClient("http://localhost:1")
    client._session = FailingSession()
    doc = Document(id="d", text="body words")
    with pytest.raises(GenUnavailable):
        generate_query(client, doc, "topic", seed=1)
    assert len(attempts) == 3


def test_503_is_retried(monkeypatch):
    from augret import tqgen

    calls = []

    class Resp:
        def __init__(self, code, payload=None):
            self.status_code = code
            self._payload = payload or {}
            self.text = ""

        def json(self):
            return self._payload

    class FlakySession:
        def post(self, url, json=None, timeout=None):
            calls.append(url)
            if len(calls) < 3:
                return Resp(503)
            return Resp(200, {"text": "a query", "model_id": "m"})

    client = tqgen.GenClient("http://localhost:1")
    client._session = FlakySession()
    doc = Document(id="d", text="body words")
    pair = generate_query(client, doc, "topic", seed=1)
    assert pair.query == "a query"
    assert len(calls) == 3
