import pytest
from fastapi.testclient import TestClient

from genservice.app import create_app
from genservice.config import ServiceConfig


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(ServiceConfig()))


PROMPT = (
    "A volunteer group restored the old canal towpath this spring. "
    "Crews cleared brush, rebuilt two footbridges, and repainted the mile markers."
    "\n\nWhat is the main topic of the text above?"
)


def test_healthz(client):
    resp = client.get("/healthz")
    assert resp.status_code == 200
    assert resp.json() == {"status": "ok"}


def test_generate_returns_text_and_model_id(client):
    resp = client.post("/generate", json={"prompt": PROMPT, "seed": 5})
    assert resp.status_code == 200
    payload = resp.json()
    assert payload["text"].strip()
    assert payload["model_id"] == "context-ngram"


def test_generate_defaults_match_protocol(client):
    # top_p / top_k defaults live server-side too
    body = {"prompt": PROMPT, "top_p": 0.9, "top_k": 0, "temperature": 1.0,
            "max_new_tokens": 16, "seed": 11}
    resp = client.post("/generate", json=body)
    assert resp.status_code == 200
    assert len(resp.json()["text"].split()) == 16


def test_generate_seeding_determinism(client):
    body = {"prompt": PROMPT, "top_p": 0.9, "top_k": 0, "seed": 21, "max_new_tokens": 12}
    first = client.post("/generate", json=body).json()["text"]
    second = client.post("/generate", json=body).json()["text"]
    assert first == second
    other = client.post("/generate", json=dict(body, seed=22)).json()["text"]
    third = client.post("/generate", json=dict(body, seed=23)).json()["text"]
    assert other != first or third != first


def test_generate_malformed_body_is_400(client):
    assert client.post("/generate", json={"prompt": ""}).status_code == 400
    assert client.post("/generate", json={"top_p": 0.9}).status_code == 400
    assert client.post("/generate", json={"prompt": PROMPT, "top_p": 7}).status_code == 400
    resp = client.post(
        "/generate", content=b"{not json", headers={"content-type": "application/json"}
    )
    assert resp.status_code == 400


def test_score_basic(client):
    body = {"context": "the blue heron nested by the reservoir", "continuation": "blue heron"}
    resp = client.post("/score", json=body)
    assert resp.status_code == 200
    nll = resp.json()["nll"]
    assert nll >= 0


def test_score_deterministic(client):
    body = {"context": "granite boulders lined the trail", "continuation": "granite boulders"}
    a = client.post("/score", json=body).json()["nll"]
    b = client.post("/score", json=body).json()["nll"]
    assert a == b


def test_score_empty_continuation_is_400(client):
    resp = client.post("/score", json={"context": "something", "continuation": ""})
    assert resp.status_code == 400
    # punctuation-only continuation carries no words either
    resp = client.post("/score", json={"context": "something", "continuation": "!!!"})
    assert resp.status_code == 400


def test_over_capacity_returns_503():
    app = create_app(ServiceConfig(max_concurrent=1))
    local = TestClient(app)
    app.state.capacity.acquire()
    try:
        resp = local.post("/generate", json={"prompt": PROMPT})
        assert resp.status_code == 503
        resp = local.post("/score", json={"context": "a b", "continuation": "a"})
        assert resp.status_code == 503
    finally:
        app.state.capacity.release()
    assert local.post("/generate", json={"prompt": PROMPT}).status_code == 200


# --- acceptance -------------------------------------------------------------


def test_acceptance_secondary(client):
    """/generate honors top_p=0.9 / top_k=0 with seeding determinism;
    /score ranks a verbatim-repeated continuation below a shuffled one."""
    body = {"prompt": PROMPT, "top_p": 0.9, "top_k": 0, "seed": 3, "max_new_tokens": 10}
    first = client.post("/generate", json=body)
    second = client.post("/generate", json=body)
    assert first.status_code == second.status_code == 200
    assert first.json() == second.json()
    assert first.json()["text"].strip()

    phrase = "tidal gauge calibration"
    context = (" ".join([phrase] * 5)
               + " assorted service records from the harbour master archive")
    verbatim = client.post(
        "/score", json={"context": context, "continuation": phrase}
    ).json()["nll"]
    shuffled = client.post(
        "/score", json={"context": context, "continuation": "calibration tidal gauge"}
    ).json()["nll"]
    assert verbatim < shuffled
    print("[PASS] secondary protocol (nucleus params honored, seeded, nll ordering)")
